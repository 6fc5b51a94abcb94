use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dan_core::error::{Error, Result};
use dan_core::experiment::{self, ExperimentConfig, KValue};

#[derive(Parser)]
#[command(name = "dan", version, about = "Train and evaluate discriminative adversarial networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and save its predictor checkpoint.
    Train(ExperimentArgs),
    /// Score a saved predictor on a TSV dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the metric report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (k, seed) pair and aggregate.
    Sweep(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ranking or classification.
    #[arg(long)]
    task: Option<String>,
    /// dan, dan_unlab, hinge_baseline or nll_baseline.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated labeled-set sizes; "full" uses the whole training set.
    #[arg(long)]
    k: Option<String>,
    /// `N` for runs 0..N, `a..b`, or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seeds {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    if s.contains(',') {
        return s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect();
    }
    let n: u64 = s.trim().parse().map_err(|_| bad())?;
    Ok((0..n).collect())
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(t) = &self.task {
            config.task = experiment::parse_task(t)?;
        }
        if let Some(m) = &self.model {
            config.model = m.parse()?;
        }
        if let Some(k) = &self.k {
            config.k = k.split(',').map(|x| x.trim().parse::<KValue>()).collect::<Result<_>>()?;
        }
        if let Some(s) = &self.seeds {
            config.seeds = parse_seeds(s)?;
        }
        if let Some(j) = self.jobs {
            config.jobs = j;
        }
        if let Some(o) = &self.out {
            config.out = o.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = args.resolve()?;
            let summary = experiment::train_single(&config)?;
            warn_all(&summary.warnings);
            println!("{}", serde_json::to_string_pretty(&summary.record)?);
            eprintln!("checkpoint written to {}", summary.checkpoint.display());
        }
        Command::Evaluate { checkpoint, data, out } => {
            let report = experiment::evaluate_checkpoint(&checkpoint, &data)?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(path) = out {
                std::fs::write(&path, &text).map_err(|e| Error::Io { path, source: e })?;
            }
            println!("{text}");
        }
        Command::Sweep(args) => {
            let config = args.resolve()?;
            let summary = experiment::sweep(&config)?;
            warn_all(&summary.warnings);
            for a in &summary.aggregates {
                let line: Vec<String> = a
                    .metrics
                    .iter()
                    .map(|(name, agg)| format!("{name} {:.4} ± {:.4}", agg.mean, agg.std))
                    .collect();
                println!("k={}: {}", a.k, line.join(", "));
            }
            eprintln!("results written to {}", config.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
