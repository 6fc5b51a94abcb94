//! Train one classifier run, save the predictor, reload it and score a TSV
//! file with it.
//!
//! ```bash
//! cargo run --release --example checkpoint_evaluate
//! ```

use dan_core::data::{write_cls_tsv, ClassSynth};
use dan_core::experiment::{self, ArchConfig, DataSource, ExperimentConfig, KValue, ModelKind, SyntheticData};
use dan_core::train::TaskKind;

fn main() -> dan_core::Result<()> {
    let dir = std::env::temp_dir().join("dan-checkpoint");
    let config = ExperimentConfig {
        task: TaskKind::Classification,
        model: ModelKind::Dan,
        data: DataSource::Synthetic(SyntheticData {
            train: 300,
            dev: 100,
            test: 100,
            ..SyntheticData::default()
        }),
        k: vec![KValue::Full],
        seeds: vec![0],
        arch: ArchConfig {
            emb_dim: 16,
            proj_dim: 16,
            filters: 32,
            hidden: 16,
            ..ArchConfig::default()
        },
        out: dir.clone(),
        ..ExperimentConfig::default()
    };
    let summary = experiment::train_single(&config)?;
    println!(
        "trained {} epochs, test accuracy {:.3}, saved to {}",
        summary.record.epochs,
        summary.record.metrics["accuracy"],
        summary.checkpoint.display()
    );

    // Fresh sentences from a different generator seed.
    let held_out = dir.join("held_out.tsv");
    write_cls_tsv(&held_out, &ClassSynth::new(200, 2, 60).generate(99)?)?;
    let report = experiment::evaluate_checkpoint(&summary.checkpoint, &held_out)?;
    println!("reloaded checkpoint on {}: {:.3}", held_out.display(), report["accuracy"].mean);
    Ok(())
}
