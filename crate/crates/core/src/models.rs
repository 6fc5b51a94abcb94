//! Predictor and judge networks for classification and answer ranking.
//!
//! Both judges score a pair `(x, y)` with a bilinear difference: the input
//! representation is compared against a "positive" and a "negative" summary
//! of `y` and the difference of the two similarities goes through a sigmoid.
//! Judges expose that pre-sigmoid logit so the adversarial losses can be
//! computed in log-space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoder::{EncoderConfig, ForwardCtx, TextEncoder};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Anything that owns a trainable [`ParamStore`].
pub trait Model {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

macro_rules! impl_model {
    ($($t:ty),*) => {$(
        impl Model for $t {
            fn params(&self) -> &ParamStore { &self.params }
            fn params_mut(&mut self) -> &mut ParamStore { &mut self.params }
        }
    )*};
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassModelConfig {
    pub encoder: EncoderConfig,
    /// Width of the tanh hidden layer of the predictor head.
    pub hidden: usize,
    pub n_classes: usize,
}

impl Default for ClassModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig {
                window: 5,
                ..EncoderConfig::default()
            },
            hidden: 200,
            n_classes: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankModelConfig {
    pub encoder: EncoderConfig,
}

fn check_classes(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n}")));
    }
    Ok(())
}

/// CNN text classifier: encoder, one tanh hidden layer, softmax over classes.
#[derive(Clone, Debug)]
pub struct ClassPredictor {
    pub config: ClassModelConfig,
    pub params: ParamStore,
    pub encoder: TextEncoder,
    hidden_w: ParamId,
    hidden_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl ClassPredictor {
    pub fn new(config: ClassModelConfig, rng: &mut impl Rng) -> Result<Self> {
        check_classes(config.n_classes)?;
        if config.hidden == 0 {
            return Err(Error::Config("hidden layer width must be positive".into()));
        }
        let mut params = ParamStore::new();
        let encoder = TextEncoder::init(&mut params, "predictor.encoder", config.encoder.clone(), rng)?;
        let d = encoder.output_dim();
        let hidden_w = params.add("predictor.hidden.w", Tensor::glorot(d, config.hidden, rng));
        let hidden_b = params.add("predictor.hidden.b", Tensor::zeros(&[config.hidden]));
        let out_w = params.add("predictor.out.w", Tensor::glorot(config.hidden, config.n_classes, rng));
        let out_b = params.add("predictor.out.b", Tensor::zeros(&[config.n_classes]));
        Ok(Self {
            config,
            params,
            encoder,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
        })
    }

    pub fn out_weights(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    pub fn hidden_weights(&self) -> (ParamId, ParamId) {
        (self.hidden_w, self.hidden_b)
    }

    /// Class distribution for `tokens` on the tape.
    pub fn forward<'p>(&self, tape: &mut Tape<'p>, bound: &Bound, tokens: &[u32], ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let r = self.encoder.forward(tape, bound, tokens, ctx)?;
        let h = tape.affine(r, bound.var(self.hidden_w), bound.var(self.hidden_b))?;
        let h = tape.tanh(h)?;
        let logits = tape.affine(h, bound.var(self.out_w), bound.var(self.out_b))?;
        tape.softmax(logits)
    }

    pub fn predict(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let y = self.forward(&mut tape, &bound, tokens, &mut ForwardCtx::eval())?;
        Ok(tape.value(y).to_vec())
    }
}

/// Ranker scoring each candidate as `sigmoid(r_q^T W r_a)` with one shared
/// encoder for the question and all candidates.
#[derive(Clone, Debug)]
pub struct RankPredictor {
    pub config: RankModelConfig,
    pub params: ParamStore,
    pub encoder: TextEncoder,
    bilinear: ParamId,
}

impl RankPredictor {
    pub fn new(config: RankModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let encoder = TextEncoder::init(&mut params, "predictor.encoder", config.encoder.clone(), rng)?;
        let d = encoder.output_dim();
        let bilinear = params.add("predictor.bilinear", Tensor::glorot(d, d, rng));
        Ok(Self {
            config,
            params,
            encoder,
            bilinear,
        })
    }

    pub fn bilinear(&self) -> ParamId {
        self.bilinear
    }

    /// Candidate scores in (0, 1), shape `[M]`.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        bound: &Bound,
        question: &[u32],
        candidates: &[Vec<u32>],
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        let logits = self.logits(tape, bound, question, candidates, ctx)?;
        tape.sigmoid(logits)
    }

    /// Pre-sigmoid scores `r_q^T W r_a`, shape `[M]`.
    pub fn logits<'p>(
        &self,
        tape: &mut Tape<'p>,
        bound: &Bound,
        question: &[u32],
        candidates: &[Vec<u32>],
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        if candidates.is_empty() {
            return Err(Error::contract("ranking needs at least one candidate"));
        }
        let rq = self.encoder.forward(tape, bound, question, ctx)?;
        let reps = candidates
            .iter()
            .map(|c| self.encoder.forward(tape, bound, c, ctx))
            .collect::<Result<Vec<_>>>()?;
        let d = self.encoder.output_dim();
        let answers = tape.stack(&reps)?;
        let answers = tape.reshape(answers, &[candidates.len(), d])?;
        let qw = tape.matmul(rq, bound.var(self.bilinear))?;
        let qw = tape.reshape(qw, &[d, 1])?;
        let s = tape.matmul(answers, qw)?;
        tape.reshape(s, &[candidates.len()])
    }

    pub fn predict(&self, question: &[u32], candidates: &[Vec<u32>]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let s = self.forward(&mut tape, &bound, question, candidates, &mut ForwardCtx::eval())?;
        Ok(tape.value(s).to_vec())
    }
}

/// Score-weighted summaries of candidate representations:
/// `r_pos = sum_i s_i r_i` and `r_neg = sum_i (1 - s_i) r_i`.
///
/// `reps` is `[M, d]` and `scores` is `[M]`.
pub fn aggregate<'p>(tape: &mut Tape<'p>, reps: Var, scores: Var) -> Result<(Var, Var)> {
    let m = tape.shape(reps)[0];
    if tape.shape(scores) != [m] {
        return Err(Error::contract(format!(
            "{m} candidate representations but scores of shape {:?}",
            tape.shape(scores)
        )));
    }
    let pos = tape.matmul(scores, reps)?;
    let complement = tape.scale_shift(scores, -1.0, 1.0)?;
    let neg = tape.matmul(complement, reps)?;
    Ok((pos, neg))
}

/// Plain-value form of [`aggregate`].
pub fn aggregate_pos_neg(reps: &[Vec<f64>], scores: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if reps.len() != scores.len() {
        return Err(Error::contract(format!(
            "{} representations but {} scores",
            reps.len(),
            scores.len()
        )));
    }
    check_unit_interval(scores, "scores")?;
    let mut tape = Tape::new();
    let r = tape.constant(Tensor::from_rows(reps)?);
    let s = tape.constant(Tensor::vector(scores.to_vec()));
    let (pos, neg) = aggregate(&mut tape, r, s)?;
    Ok((tape.value(pos).to_vec(), tape.value(neg).to_vec()))
}

fn check_unit_interval(values: &[f64], what: &str) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract(format!("{what} must lie in [0, 1], found {v}")));
    }
    Ok(())
}

/// Listwise judge: `sigmoid(r'_q^T U r_pos - r'_q^T U r_neg)`.
#[derive(Clone, Debug)]
pub struct RankJudge {
    pub config: RankModelConfig,
    pub params: ParamStore,
    pub encoder: TextEncoder,
    bilinear: ParamId,
}

impl RankJudge {
    pub fn new(config: RankModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let encoder = TextEncoder::init(&mut params, "judge.encoder", config.encoder.clone(), rng)?;
        let d = encoder.output_dim();
        let bilinear = params.add("judge.bilinear", Tensor::glorot(d, d, rng));
        Ok(Self {
            config,
            params,
            encoder,
            bilinear,
        })
    }

    pub fn bilinear(&self) -> ParamId {
        self.bilinear
    }

    /// Judge logit for a candidate list with the given scores (`[M]` on the tape).
    pub fn logit<'p>(
        &self,
        tape: &mut Tape<'p>,
        bound: &Bound,
        question: &[u32],
        candidates: &[Vec<u32>],
        scores: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        if candidates.is_empty() {
            return Err(Error::contract("ranking needs at least one candidate"));
        }
        let rq = self.encoder.forward(tape, bound, question, ctx)?;
        let reps = candidates
            .iter()
            .map(|c| self.encoder.forward(tape, bound, c, ctx))
            .collect::<Result<Vec<_>>>()?;
        let answers = tape.stack(&reps)?;
        let answers = tape.reshape(answers, &[candidates.len(), self.encoder.output_dim()])?;
        let (pos, neg) = aggregate(tape, answers, scores)?;
        let qu = tape.matmul(rq, bound.var(self.bilinear))?;
        let diff = tape.sub(pos, neg)?;
        tape.dot(qu, diff)
    }

    /// Probability that `scores` is a human labeling of the list.
    pub fn judge(&self, question: &[u32], candidates: &[Vec<u32>], scores: &[f64]) -> Result<f64> {
        if scores.len() != candidates.len() {
            return Err(Error::contract(format!(
                "{} candidates but {} scores",
                candidates.len(),
                scores.len()
            )));
        }
        check_unit_interval(scores, "scores")?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let s = tape.constant(Tensor::vector(scores.to_vec()));
        let z = self.logit(&mut tape, &bound, question, candidates, s, &mut ForwardCtx::eval())?;
        let p = tape.sigmoid(z)?;
        Ok(tape.scalar(p))
    }
}

/// Classification judge comparing the sentence against the embedding of the
/// labeled class and the mean embedding of the other classes.
///
/// For a soft label `y`, `r_pos = W_lab^T y` and
/// `r_neg = W_lab^T (1 - y) / (N - 1)`.
#[derive(Clone, Debug)]
pub struct ClassJudge {
    pub config: ClassModelConfig,
    pub params: ParamStore,
    pub encoder: TextEncoder,
    label_embedding: ParamId,
    bilinear: ParamId,
}

impl ClassJudge {
    pub fn new(config: ClassModelConfig, rng: &mut impl Rng) -> Result<Self> {
        check_classes(config.n_classes)?;
        let mut params = ParamStore::new();
        let encoder = TextEncoder::init(&mut params, "judge.encoder", config.encoder.clone(), rng)?;
        let d = encoder.output_dim();
        let label_embedding = params.add("judge.labels", Tensor::glorot(config.n_classes, d, rng));
        let bilinear = params.add("judge.bilinear", Tensor::glorot(d, d, rng));
        Ok(Self {
            config,
            params,
            encoder,
            label_embedding,
            bilinear,
        })
    }

    pub fn label_embedding(&self) -> ParamId {
        self.label_embedding
    }

    pub fn bilinear(&self) -> ParamId {
        self.bilinear
    }

    /// `(r_pos, r_neg)` for a label vector `y` of shape `[N]`.
    pub fn label_summaries<'p>(&self, tape: &mut Tape<'p>, bound: &Bound, y: Var) -> Result<(Var, Var)> {
        let n = self.config.n_classes;
        if tape.shape(y) != [n] {
            return Err(Error::contract(format!(
                "label vector must have length {n}, got shape {:?}",
                tape.shape(y)
            )));
        }
        let table = bound.var(self.label_embedding);
        let pos = tape.matmul(y, table)?;
        let inv = 1.0 / (n - 1) as f64;
        let rest = tape.scale_shift(y, -inv, inv)?;
        let neg = tape.matmul(rest, table)?;
        Ok((pos, neg))
    }

    /// `r_pos - r_neg` for a label vector on the simplex, computed as
    /// `W_lab^T c` with `c_i = sum_j (y_i - y_j) / (N - 1)` so that a uniform
    /// `y` gives an exactly zero difference.
    pub fn label_difference<'p>(&self, tape: &mut Tape<'p>, bound: &Bound, y: Var) -> Result<Var> {
        let n = self.config.n_classes;
        if tape.shape(y) != [n] {
            return Err(Error::contract(format!(
                "label vector must have length {n}, got shape {:?}",
                tape.shape(y)
            )));
        }
        let ys = (0..n).map(|i| tape.pick(y, i)).collect::<Result<Vec<_>>>()?;
        let mut coef = Vec::with_capacity(n);
        for i in 0..n {
            let diffs = (0..n)
                .filter(|&j| j != i)
                .map(|j| tape.sub(ys[i], ys[j]))
                .collect::<Result<Vec<_>>>()?;
            let stacked = tape.stack(&diffs)?;
            let total = tape.sum(stacked)?;
            coef.push(tape.scale(total, 1.0 / (n - 1) as f64)?);
        }
        let c = tape.stack(&coef)?;
        tape.matmul(c, bound.var(self.label_embedding))
    }

    pub fn logit<'p>(&self, tape: &mut Tape<'p>, bound: &Bound, tokens: &[u32], y: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let diff = self.label_difference(tape, bound, y)?;
        let rs = self.encoder.forward(tape, bound, tokens, ctx)?;
        let su = tape.matmul(rs, bound.var(self.bilinear))?;
        tape.dot(su, diff)
    }

    /// Probability that `y` is the human label of `tokens`.
    pub fn judge(&self, tokens: &[u32], y: &[f64]) -> Result<f64> {
        check_unit_interval(y, "label vector")?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let yv = tape.constant(Tensor::vector(y.to_vec()));
        let z = self.logit(&mut tape, &bound, tokens, yv, &mut ForwardCtx::eval())?;
        let p = tape.sigmoid(z)?;
        Ok(tape.scalar(p))
    }
}

impl_model!(ClassPredictor, RankPredictor, RankJudge, ClassJudge);
