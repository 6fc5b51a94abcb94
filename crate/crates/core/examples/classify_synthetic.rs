//! Sentence classification on a planted-marker synthetic task: the
//! cross-entropy baseline against a full-data adversarial run.
//!
//! ```bash
//! cargo run --release --example classify_synthetic
//! ```

use dan_core::data::{classification_vocabulary, ClassSynth};
use dan_core::encoder::EncoderConfig;
use dan_core::models::{ClassJudge, ClassModelConfig, ClassPredictor};
use dan_core::train::{train_dan, train_nll_baseline, Classification, GameConfig, TaskKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dan_core::Result<()> {
    let all = ClassSynth::new(1400, 2, 60).generate(0)?;
    let vocab = classification_vocabulary(&all[..1000]);
    let indexed: Vec<_> = all.iter().map(|x| x.index(&vocab)).collect();
    let (train, rest) = indexed.split_at(1000);
    let (dev, test) = rest.split_at(200);

    let task = Classification { n_classes: 2 };
    let config = ClassModelConfig {
        encoder: EncoderConfig {
            vocab_size: vocab.len(),
            emb_dim: 32,
            proj_dim: 32,
            filters: 64,
            window: 5,
            ..EncoderConfig::default()
        },
        hidden: 16,
        n_classes: 2,
    };
    let game = GameConfig::full_data(TaskKind::Classification);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = ClassPredictor::new(config.clone(), &mut rng)?;
    let nll = train_nll_baseline(&task, p, train, dev, &game, &mut rng)?;
    println!("nll: test accuracy {:.3}", task.accuracy(&nll.predictor, test)?);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = ClassPredictor::new(config.clone(), &mut rng)?;
    let j = ClassJudge::new(config, &mut rng)?;
    let dan = train_dan(&task, p, j, train, &[], dev, &game, &mut rng)?;
    println!("dan: test accuracy {:.3}", task.accuracy(&dan.predictor, test)?);

    let x = &test[0];
    let words: Vec<&str> = x.tokens.iter().filter_map(|&t| vocab.token(t)).collect();
    println!(
        "\n\"{}\" (label {:?}) -> {:?}",
        words.join(" "),
        x.label(),
        dan.predictor.predict(&x.tokens)?
    );
    Ok(())
}
