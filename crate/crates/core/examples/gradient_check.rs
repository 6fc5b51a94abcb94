//! Checks tape gradients of the judge objective against central differences,
//! for the ranking judge and for the predictor through a frozen judge.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use dan_core::data::RankingInstance;
use dan_core::encoder::{EncoderConfig, ForwardCtx};
use dan_core::gradcheck::check_gradients;
use dan_core::models::{Model, RankJudge, RankModelConfig, RankPredictor};
use dan_core::train::{build_judge_loss, build_predictor_loss, PredictorLoss, Ranking};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dan_core::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = RankModelConfig {
        encoder: EncoderConfig {
            vocab_size: 20,
            emb_dim: 8,
            proj_dim: 4,
            filters: 4,
            window: 3,
            ..EncoderConfig::default()
        },
    };
    let p = RankPredictor::new(config.clone(), &mut rng)?;
    let j = RankJudge::new(config, &mut rng)?;

    let q = RankingInstance::new(
        "q1",
        vec![2u32, 5, 9, 11],
        vec![vec![5, 9, 3], vec![14, 15, 16, 17], vec![4, 9]],
        Some(vec![1, 0, 0]),
    )?;
    let batch = [&q];
    let eps = 1e-4;

    // Judge parameters, predictor held fixed.
    let judge = check_gradients(j.params(), eps, 1e-8, |tape, jb| {
        let pb = p.params().bind_owned(tape);
        let terms = build_judge_loss(&Ranking, tape, &p, &pb, &j, jb, &batch, &batch, &mut ForwardCtx::eval())?;
        Ok(terms.loss_j)
    })?;
    println!(
        "judge:     {} entries, max relative error {:.2e} at {:?}",
        judge.checked, judge.max_rel_error, judge.worst
    );

    // Predictor parameters, gradient flowing through the judge.
    let predictor = check_gradients(p.params(), eps, 1e-8, |tape, pb| {
        let jb = j.params().bind_owned(tape);
        build_predictor_loss(&Ranking, tape, &p, pb, &j, &jb, &batch, PredictorLoss::NonSaturating, &mut ForwardCtx::eval())
    })?;
    println!(
        "predictor: {} entries, max relative error {:.2e} at {:?}",
        predictor.checked, predictor.max_rel_error, predictor.worst
    );
    Ok(())
}
