//! MAP, MRR and NDCG on hand-written ranked lists, and mean ± std
//! aggregation across runs.
//!
//! ```bash
//! cargo run --example ranking_metrics
//! ```

use dan_core::metrics::{aggregate_runs, ranking_metrics, RankedResult};

fn main() -> dan_core::Result<()> {
    let lists = vec![
        // Relevant answer ranked first.
        RankedResult::new(vec![0.9, 0.2, 0.1], vec![1, 0, 0])?,
        // Two relevant answers at ranks 2 and 3.
        RankedResult::new(vec![0.8, 0.7, 0.6, 0.1], vec![0, 1, 1, 0])?,
        // Tied scores keep their input order.
        RankedResult::new(vec![0.5, 0.5], vec![0, 1])?,
    ];
    for (name, value) in ranking_metrics(&lists)? {
        println!("{name:>5}: {value:.4}");
    }

    let agg = aggregate_runs(&[0.61, 0.64, 0.59, 0.66])?;
    println!("\nMAP over 4 seeds: {:.4} ± {:.4}", agg.mean, agg.std);
    Ok(())
}
