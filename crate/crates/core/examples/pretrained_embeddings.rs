//! Initialize an encoder from word2vec text-format vectors. Tokens missing
//! from the file keep a random initialization.
//!
//! ```bash
//! cargo run --example pretrained_embeddings
//! ```

use dan_core::encoder::{load_pretrained, EncoderConfig, TextEncoder, Vocabulary};
use dan_core::params::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dan_core::Result<()> {
    let path = std::env::temp_dir().join("dan-vectors.txt");
    let text = "3 4\nwhat 0.1 0.2 0.3 0.4\nis -0.5 0.0 0.5 1.0\nriver 1 1 1 1\n";
    std::fs::write(&path, text).map_err(|e| dan_core::Error::Io { path: path.clone(), source: e })?;

    let vocab = Vocabulary::build(["what", "is", "a", "river", "delta"]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let table = load_pretrained(&path, &vocab, &mut rng)?;

    let mut store = ParamStore::new();
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        emb_dim: 4,
        proj_dim: 3,
        filters: 5,
        window: 2,
        ..EncoderConfig::default()
    };
    let encoder = TextEncoder::init(&mut store, "enc", config, &mut rng)?;
    encoder.set_embeddings(&mut store, table)?;

    for token in ["river", "delta"] {
        let id = vocab.id(token) as usize;
        let emb = store.find("enc.embedding").map(|p| store.get(p).row(id).to_vec());
        println!("{token:>6}: {:?}", emb.unwrap_or_default());
    }
    let rep = encoder.encode(&store, &vocab.ids(&["what", "is", "a", "river"]))?;
    println!("sentence representation: {:?}", rep.data());
    Ok(())
}
