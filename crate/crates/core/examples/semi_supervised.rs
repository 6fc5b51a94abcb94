//! Ten labeled sentences plus 990 unlabeled ones: the cross-entropy baseline
//! can only use the ten, the adversarial predictor is also trained on the
//! rest through the judge.
//!
//! ```bash
//! cargo run --release --example semi_supervised
//! ```

use dan_core::experiment::{self, ArchConfig, ExperimentConfig, KValue, ModelKind};
use dan_core::train::TaskKind;

fn main() -> dan_core::Result<()> {
    let base = ExperimentConfig {
        task: TaskKind::Classification,
        arch: ArchConfig {
            emb_dim: 32,
            proj_dim: 32,
            filters: 64,
            hidden: 16,
            ..ArchConfig::default()
        },
        k: vec![KValue::Count(10)],
        ..ExperimentConfig::default()
    };
    for model in [ModelKind::NllBaseline, ModelKind::DanUnlab] {
        let config = ExperimentConfig { model, ..base.clone() };
        let prepared = experiment::prepare(&config)?;
        let mut accs = Vec::new();
        for seed in 0..3 {
            let run = experiment::run_one(&config, &prepared, 10, seed)?;
            accs.push(run.record.metrics["accuracy"]);
        }
        let agg = dan_core::metrics::aggregate_runs(&accs)?;
        println!(
            "{:<14} k=10: accuracy {:.3} ± {:.3} over {} seeds",
            model.name(),
            agg.mean,
            agg.std,
            accs.len()
        );
    }
    Ok(())
}
