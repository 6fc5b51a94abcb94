//! Sentence encoder: embedding lookup, linear projection, 1-D convolution
//! with tanh, and max-over-time pooling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Half-width of the uniform range used for embeddings without a
/// pretrained vector.
pub const EMBEDDING_INIT_RANGE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Self::new();
        for t in tokens {
            v.insert(&t);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only the reserved tokens.
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// Ids follow first appearance, after the reserved entries.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    /// Id of `token`, or [`UNK`] if absent.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub proj_dim: usize,
    pub filters: usize,
    pub window: usize,
    pub freeze_embeddings: bool,
    /// Dropout on the pooled representation during training.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2,
            emb_dim: 400,
            proj_dim: 200,
            filters: 400,
            window: 3,
            freeze_embeddings: false,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("vocabulary must hold PAD and UNK".into()));
        }
        if self.emb_dim == 0 || self.proj_dim == 0 || self.filters == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("convolution window must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Per-call switches for the encoder forward pass.
pub struct ForwardCtx<'r> {
    /// Source of dropout masks; `None` disables dropout (evaluation).
    pub rng: Option<&'r mut dyn RngCore>,
}

impl ForwardCtx<'_> {
    pub fn eval() -> Self {
        Self { rng: None }
    }
}

impl<'r> ForwardCtx<'r> {
    pub fn train(rng: &'r mut dyn RngCore) -> Self {
        Self { rng: Some(rng) }
    }
}

/// Location of the encoder weights inside a model's [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    pub embedding: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
}

impl TextEncoder {
    /// Registers freshly initialized encoder weights under `prefix`.
    pub fn init(store: &mut ParamStore, prefix: &str, config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut table = Tensor::uniform(
            &[config.vocab_size, config.emb_dim],
            -EMBEDDING_INIT_RANGE,
            EMBEDDING_INIT_RANGE,
            rng,
        );
        table.row_mut(PAD as usize).fill(0.0);
        let embedding = store.add(format!("{prefix}.embedding"), table);
        let proj_w = store.add(format!("{prefix}.proj.w"), Tensor::glorot(config.emb_dim, config.proj_dim, rng));
        let proj_b = store.add(format!("{prefix}.proj.b"), Tensor::zeros(&[config.proj_dim]));
        let conv_w = store.add(
            format!("{prefix}.conv.w"),
            Tensor::glorot(config.window * config.proj_dim, config.filters, rng),
        );
        let conv_b = store.add(format!("{prefix}.conv.b"), Tensor::zeros(&[config.filters]));
        store.set_frozen(embedding, config.freeze_embeddings);
        Ok(Self {
            config,
            embedding,
            proj_w,
            proj_b,
            conv_w,
            conv_b,
        })
    }

    /// Replaces the embedding table, e.g. with pretrained vectors.
    pub fn set_embeddings(&self, store: &mut ParamStore, table: Tensor) -> Result<()> {
        let expected = [self.config.vocab_size, self.config.emb_dim];
        if table.shape() != expected {
            return Err(Error::shape(
                "set_embeddings",
                format!("expected {expected:?}, got {:?}", table.shape()),
            ));
        }
        *store.get_mut(self.embedding) = table;
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.config.filters
    }

    /// Fixed-length representation of `tokens` on the tape.
    pub fn forward<'p>(&self, tape: &mut Tape<'p>, bound: &Bound, tokens: &[u32], ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::contract("cannot encode an empty token sequence"));
        }
        let ids = padded_ids(tokens, self.config.window);
        let emb = tape.embedding_lookup(bound.var(self.embedding), &ids)?;
        let proj = tape.affine(emb, bound.var(self.proj_w), bound.var(self.proj_b))?;
        let conv = tape.conv1d_seq(proj, bound.var(self.conv_w), bound.var(self.conv_b), self.config.window)?;
        let act = tape.tanh(conv)?;
        let pooled = tape.max_over_time(act)?;
        match ctx.rng.as_deref_mut() {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let mask: Vec<f64> = (0..self.config.filters)
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = tape.constant(Tensor::vector(mask));
                tape.mul(pooled, mask)
            }
            _ => Ok(pooled),
        }
    }

    /// Evaluation-mode encoding outside any training tape.
    pub fn encode(&self, store: &ParamStore, tokens: &[u32]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, tokens, &mut ForwardCtx::eval())?;
        Ok(tape.tensor(out))
    }
}

/// Right-pads with PAD up to `window` tokens.
pub fn padded_ids(tokens: &[u32], window: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    if ids.len() < window {
        ids.resize(window, PAD as usize);
    }
    ids
}

/// Reads word2vec text-format vectors and lays them out by `vocab` id.
///
/// Tokens missing from the file get rows drawn uniformly from
/// `[-0.25, 0.25]`; the PAD row is zero.
pub fn load_pretrained(path: &Path, vocab: &Vocabulary, rng: &mut impl Rng) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_word2vec_text(BufReader::new(file), &path.display().to_string(), vocab, rng)
}

pub fn read_word2vec_text(reader: impl BufRead, source: &str, vocab: &Vocabulary, rng: &mut impl Rng) -> Result<Tensor> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_owned(),
        line,
        message,
    };
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?
        .map_err(|e| parse_err(1, e.to_string()))?;
    let mut fields = header.split_whitespace();
    let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
        (Some(c), Some(d), None) => (
            c.parse::<usize>().map_err(|e| parse_err(1, format!("bad count: {e}")))?,
            d.parse::<usize>().map_err(|e| parse_err(1, format!("bad dimension: {e}")))?,
        ),
        _ => return Err(parse_err(1, format!("expected \"count dim\" header, got {header:?}"))),
    };
    if dim == 0 {
        return Err(parse_err(1, "dimension must be positive".into()));
    }

    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line");
        let values = parts
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(line_no, format!("bad value {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(parse_err(
                line_no,
                format!("token {token:?} has {} values, header says {dim}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line_no, "non-finite value".into()));
        }
        seen += 1;
        if let Some(id) = vocab.get(token) {
            if id != PAD {
                rows[id as usize] = Some(values);
            }
        }
    }
    if seen != count {
        return Err(parse_err(
            seen + 1,
            format!("header declares {count} vectors, file has {seen}"),
        ));
    }

    let mut table = Tensor::zeros(&[vocab.len(), dim]);
    for (id, row) in rows.into_iter().enumerate() {
        let dst = table.row_mut(id);
        match row {
            Some(v) => dst.copy_from_slice(&v),
            None if id == PAD as usize => {}
            None => dst
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-EMBEDDING_INIT_RANGE..=EMBEDDING_INIT_RANGE)),
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny_config(vocab: usize, window: usize, filters: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: vocab,
            emb_dim: 4,
            proj_dim: 3,
            filters,
            window,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn reserved_ids() {
        let v = Vocabulary::build(["the", "cat", "the"]);
        assert_eq!(v.id(PAD_TOKEN), PAD);
        assert_eq!(v.id(UNK_TOKEN), UNK);
        assert_eq!(v.id("the"), 2);
        assert_eq!(v.id("cat"), 3);
        assert_eq!(v.id("dog"), UNK);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn vocabulary_serializes_as_token_list() {
        let v = Vocabulary::build(["a", "b"]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["<pad>","<unk>","a","b"]"#);
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn zero_filters_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = TextEncoder::init(&mut store, "enc", tiny_config(10, 3, 5), &mut rng).unwrap();
        store.get_mut(enc.conv_w).data_mut().fill(0.0);
        let out = enc.encode(&store, &[2, 3, 4, 5, 6, 7]).unwrap();
        assert_eq!(out.data(), &[0.0; 5]);
    }

    #[test]
    fn short_sequences_are_padded_to_window() {
        assert_eq!(padded_ids(&[4], 3), vec![4, 0, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let enc = TextEncoder::init(&mut store, "enc", tiny_config(10, 5, 2), &mut rng).unwrap();
        let out = enc.encode(&store, &[3]).unwrap();
        assert_eq!(out.shape(), &[2]);
    }

    #[test]
    fn empty_sequence_is_a_contract_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = TextEncoder::init(&mut store, "enc", tiny_config(10, 3, 2), &mut rng).unwrap();
        assert!(matches!(enc.encode(&store, &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn output_length_is_filter_count_for_all_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let enc = TextEncoder::init(&mut store, "enc", tiny_config(20, 3, 7), &mut rng).unwrap();
        for len in 1..15 {
            let tokens: Vec<u32> = (0..len).map(|i| 2 + (i % 18) as u32).collect();
            assert_eq!(enc.encode(&store, &tokens).unwrap().shape(), &[7]);
        }
    }

    #[test]
    fn encoding_depends_on_token_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let enc = TextEncoder::init(&mut store, "enc", tiny_config(20, 3, 6), &mut rng).unwrap();
        let a = enc.encode(&store, &[2, 3, 4, 5, 6]).unwrap();
        let b = enc.encode(&store, &[6, 4, 2, 5, 3]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn pad_row_starts_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let enc = TextEncoder::init(&mut store, "enc", tiny_config(8, 3, 2), &mut rng).unwrap();
        assert!(store.get(enc.embedding).row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn frozen_embeddings_bind_as_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig {
            freeze_embeddings: true,
            ..tiny_config(8, 3, 2)
        };
        let enc = TextEncoder::init(&mut store, "enc", cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, true);
        assert!(!tape.requires_grad(bound.var(enc.embedding)));
    }

    #[test]
    fn word2vec_rows_land_at_vocab_ids() {
        let vocab = Vocabulary::build(["cat", "dog"]);
        let text = "2 3\ndog 1 2 3\ncat 4 5 6\n";
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = read_word2vec_text(text.as_bytes(), "fixture", &vocab, &mut rng).unwrap();
        assert_eq!(t.shape(), &[4, 3]);
        assert_eq!(t.row(2), &[4.0, 5.0, 6.0]);
        assert_eq!(t.row(3), &[1.0, 2.0, 3.0]);
        assert_eq!(t.row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn word2vec_missing_tokens_are_uniform_and_seeded() {
        let tokens: Vec<String> = (0..1000).map(|i| format!("t{i}")).collect();
        let vocab = Vocabulary::build(tokens.iter().map(String::as_str));
        let text = "1 2\nt0 0.5 0.5\n";
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            read_word2vec_text(text.as_bytes(), "f", &vocab, &mut rng).unwrap()
        };
        let t = draw(9);
        let sampled: Vec<f64> = (3..vocab.len()).flat_map(|i| t.row(i).to_vec()).collect();
        assert!(sampled.len() >= 1000);
        assert!(sampled.iter().all(|x| (-0.25..=0.25).contains(x)));
        // the draws should spread over the range, not sit at one value
        let mean = sampled.iter().sum::<f64>() / sampled.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!(sampled.iter().any(|&x| x > 0.2) && sampled.iter().any(|&x| x < -0.2));
        assert_eq!(draw(9), t);
    }

    #[test]
    fn word2vec_dimension_mismatch_names_the_line() {
        let vocab = Vocabulary::new();
        let mut text = String::from("1 300\nbad");
        for _ in 0..299 {
            text.push_str(" 0.1");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = read_word2vec_text(text.as_bytes(), "vec.txt", &vocab, &mut rng).unwrap_err();
        match err {
            Error::Parse { line, ref message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("299"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }
}
