//! Answer selection on a planted-keyword synthetic task: the pairwise hinge
//! baseline against a full-data adversarial run.
//!
//! ```bash
//! cargo run --release --example rank_synthetic
//! ```

use dan_core::data::{ranking_vocabulary, RankingSynth};
use dan_core::encoder::EncoderConfig;
use dan_core::models::{RankJudge, RankModelConfig, RankPredictor};
use dan_core::train::{train_dan, train_hinge_baseline, GameConfig, Ranking, TaskKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dan_core::Result<()> {
    let all = RankingSynth::new(1400, 4, 100).generate(0)?;
    let vocab = ranking_vocabulary(&all[..1000]);
    let indexed: Vec<_> = all.iter().map(|x| x.index(&vocab)).collect();
    let (train, rest) = indexed.split_at(1000);
    let (dev, test) = rest.split_at(200);
    println!("{} questions, {} tokens, 4 candidates each", train.len(), vocab.len());

    let config = RankModelConfig {
        encoder: EncoderConfig {
            vocab_size: vocab.len(),
            emb_dim: 32,
            proj_dim: 32,
            filters: 128,
            window: 3,
            ..EncoderConfig::default()
        },
    };
    let game = GameConfig::full_data(TaskKind::Ranking);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = RankPredictor::new(config.clone(), &mut rng)?;
    let hinge = train_hinge_baseline(p, train, dev, &game, &mut rng)?;
    let m = Ranking.evaluate(&hinge.predictor, test)?;
    println!(
        "hinge: MAP {:.3} MRR {:.3} NDCG {:.3} (best epoch {})",
        m["map"], m["mrr"], m["ndcg"], hinge.best_epoch
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = RankPredictor::new(config.clone(), &mut rng)?;
    let j = RankJudge::new(config, &mut rng)?;
    let dan = train_dan(&Ranking, p, j, train, &[], dev, &game, &mut rng)?;
    let m = Ranking.evaluate(&dan.predictor, test)?;
    println!(
        "dan:   MAP {:.3} MRR {:.3} NDCG {:.3} (best epoch {})",
        m["map"], m["mrr"], m["ndcg"], dan.best_epoch
    );
    println!("\nepoch  V        loss_P   dev MAP");
    for e in &dan.history.epochs {
        println!(
            "{:>5}  {:>7.4}  {:>7.4}  {:.3}",
            e.epoch,
            e.v_estimate.unwrap_or(f64::NAN),
            e.loss_p,
            e.validation
        );
    }
    Ok(())
}
