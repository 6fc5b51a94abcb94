//! A labeled-set-size sweep over WikiQA-format TSV files.
//!
//! Writes a small synthetic corpus in the canonical ranking format
//! (`question_id \t question \t answer \t label`), then runs the hinge
//! baseline for two values of k and three seeds. Point `data` at real
//! converted WikiQA files to run the same sweep on them.
//!
//! ```bash
//! cargo run --release --example wikiqa_sweep
//! ```

use std::fs;

use dan_core::data::{write_qa_tsv, RankingSynth};
use dan_core::experiment::{self, ArchConfig, DataSource, ExperimentConfig, KValue, ModelKind};
use dan_core::train::TaskKind;

fn main() -> dan_core::Result<()> {
    let dir = std::env::temp_dir().join("dan-wikiqa-sweep");
    fs::create_dir_all(&dir).map_err(|e| dan_core::Error::Io { path: dir.clone(), source: e })?;

    let all = RankingSynth::new(300, 4, 60).generate(11)?;
    let (train, dev, test) = (dir.join("train.tsv"), dir.join("dev.tsv"), dir.join("test.tsv"));
    write_qa_tsv(&train, &all[..200])?;
    write_qa_tsv(&dev, &all[200..250])?;
    write_qa_tsv(&test, &all[250..])?;

    let config = ExperimentConfig {
        task: TaskKind::Ranking,
        model: ModelKind::HingeBaseline,
        data: DataSource::Files { train, dev, test },
        k: vec![KValue::Count(20), KValue::Full],
        seeds: vec![0, 1, 2],
        arch: ArchConfig {
            emb_dim: 16,
            proj_dim: 16,
            filters: 32,
            ..ArchConfig::default()
        },
        out: dir.join("out"),
        ..ExperimentConfig::default()
    };
    let summary = experiment::sweep(&config)?;
    for a in &summary.aggregates {
        let map = &a.metrics["map"];
        println!("k={:>3}: MAP {:.3} ± {:.3}", a.k, map.mean, map.std);
    }
    println!("\nper-run rows, aggregate.json and curve.csv are in {}", config.out.display());
    let runs = fs::read_to_string(config.out.join("runs.csv")).unwrap_or_default();
    for line in runs.lines().skip(1).take(3) {
        println!("{line}");
    }
    Ok(())
}
