use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::data::{ClassificationInstance, Labeled, RankingInstance};
use crate::encoder::ForwardCtx;
use crate::error::{Error, Result};
use crate::metrics::{self, RankedResult};
use crate::models::{ClassJudge, ClassPredictor, Model, RankJudge, RankPredictor};
use crate::params::Bound;
use crate::tensor::Tensor;

/// Glue between a predictor/judge pair and the generic training loops.
pub trait Task: Sync {
    type Input: Labeled + Sync;
    type Predictor: Model + Clone + Send + Sync;
    type Judge: Model + Clone + Send + Sync;

    /// Predictor output `y_hat` for `x`.
    fn predict<'p>(
        &self,
        p: &Self::Predictor,
        tape: &mut Tape<'p>,
        bound: &Bound,
        x: &Self::Input,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var>;

    /// Judge logit for the pair `(x, y)`.
    fn judge_logit<'p>(
        &self,
        j: &Self::Judge,
        tape: &mut Tape<'p>,
        bound: &Bound,
        x: &Self::Input,
        y: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var>;

    /// The human label of `x` in the predictor's output space.
    fn label_target(&self, x: &Self::Input) -> Result<Tensor>;

    /// Higher-is-better model-selection metric.
    fn validation_metric(&self, p: &Self::Predictor, data: &[Self::Input]) -> Result<f64>;
}

/// Answer selection: outputs are per-candidate scores.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ranking;

impl Ranking {
    /// MAP, MRR and NDCG of `p` on `data`.
    pub fn evaluate(&self, p: &RankPredictor, data: &[RankingInstance<u32>]) -> Result<BTreeMap<String, f64>> {
        let results = data
            .par_iter()
            .map(|x| {
                let rel = x
                    .relevance()
                    .ok_or_else(|| Error::contract(format!("question {} has no labels to evaluate against", x.id)))?;
                RankedResult::new(p.predict(&x.question, &x.candidates)?, rel.to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        metrics::ranking_metrics(&results)
    }
}

impl Task for Ranking {
    type Input = RankingInstance<u32>;
    type Predictor = RankPredictor;
    type Judge = RankJudge;

    fn predict<'p>(
        &self,
        p: &RankPredictor,
        tape: &mut Tape<'p>,
        bound: &Bound,
        x: &Self::Input,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        p.forward(tape, bound, &x.question, &x.candidates, ctx)
    }

    fn judge_logit<'p>(
        &self,
        j: &RankJudge,
        tape: &mut Tape<'p>,
        bound: &Bound,
        x: &Self::Input,
        y: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        j.logit(tape, bound, &x.question, &x.candidates, y, ctx)
    }

    fn label_target(&self, x: &Self::Input) -> Result<Tensor> {
        let rel = x
            .relevance()
            .ok_or_else(|| Error::contract(format!("question {} is unlabeled", x.id)))?;
        Ok(Tensor::vector(rel.iter().map(|&r| f64::from(r)).collect()))
    }

    fn validation_metric(&self, p: &RankPredictor, data: &[Self::Input]) -> Result<f64> {
        Ok(self.evaluate(p, data)?["map"])
    }
}

/// Sentence classification: outputs are class distributions.
#[derive(Clone, Copy, Debug)]
pub struct Classification {
    pub n_classes: usize,
}

impl Classification {
    pub fn accuracy(&self, p: &ClassPredictor, data: &[ClassificationInstance<u32>]) -> Result<f64> {
        let pairs = data
            .par_iter()
            .map(|x| {
                let label = x.label().ok_or_else(|| Error::contract("unlabeled sentence in evaluation set"))?;
                Ok((metrics::argmax(&p.predict(&x.tokens)?), label))
            })
            .collect::<Result<Vec<_>>>()?;
        let (pred, gold): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        metrics::accuracy(&pred, &gold)
    }
}

impl Task for Classification {
    type Input = ClassificationInstance<u32>;
    type Predictor = ClassPredictor;
    type Judge = ClassJudge;

    fn predict<'p>(
        &self,
        p: &ClassPredictor,
        tape: &mut Tape<'p>,
        bound: &Bound,
        x: &Self::Input,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        p.forward(tape, bound, &x.tokens, ctx)
    }

    fn judge_logit<'p>(
        &self,
        j: &ClassJudge,
        tape: &mut Tape<'p>,
        bound: &Bound,
        x: &Self::Input,
        y: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        j.logit(tape, bound, &x.tokens, y, ctx)
    }

    fn label_target(&self, x: &Self::Input) -> Result<Tensor> {
        let label = x.label().ok_or_else(|| Error::contract("sentence is unlabeled"))?;
        if label >= self.n_classes {
            return Err(Error::contract(format!("label {label} outside {} classes", self.n_classes)));
        }
        let mut y = vec![0.0; self.n_classes];
        y[label] = 1.0;
        Ok(Tensor::vector(y))
    }

    fn validation_metric(&self, p: &ClassPredictor, data: &[Self::Input]) -> Result<f64> {
        self.accuracy(p, data)
    }
}
