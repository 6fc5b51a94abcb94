use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use super::task::{Classification, Ranking, Task};
use super::{EarlyStopping, EpochRecord, GameConfig, History, StopDecision};
use crate::autodiff::{Tape, Var};
use crate::data::{ClassificationInstance, RankingInstance};
use crate::encoder::ForwardCtx;
use crate::error::{Error, Result};
use crate::models::{ClassPredictor, Model, RankPredictor};
use crate::optim::{Adam, AdamState};
use crate::params::Bound;

/// Probability floor inside the log of the NLL loss.
pub const NLL_FLOOR: f64 = 1e-12;

/// `max(0, margin - s_pos + s_neg)`.
pub fn hinge_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin - s_pos + s_neg).max(0.0)
}

/// `-log p[label]` with the probability floored at [`NLL_FLOOR`].
pub fn nll_loss(distribution: &[f64], label: usize) -> Result<f64> {
    let p = distribution
        .get(label)
        .ok_or_else(|| Error::contract(format!("label {label} outside {} classes", distribution.len())))?;
    Ok(-p.max(NLL_FLOOR).ln())
}

/// Result of a supervised baseline run, restored to the best epoch.
#[derive(Clone, Debug)]
pub struct BaselineOutcome<P> {
    pub predictor: P,
    pub history: History,
    pub best_validation: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Training instances that could not contribute a loss term.
    pub skipped: usize,
}

type BatchLoss<'f, P, X> = dyn Fn(&P, &mut Tape<'_>, &Bound, &[&X], &mut dyn RngCore) -> Result<Option<Var>> + 'f;

fn supervised<P: Model + Clone, X>(
    predictor: P,
    train: &[&X],
    validation: &[X],
    config: &GameConfig,
    rng: &mut dyn RngCore,
    batch_loss: &BatchLoss<'_, P, X>,
    metric: &dyn Fn(&P, &[X]) -> Result<f64>,
) -> Result<(P, History, EarlyStopping, usize)> {
    config.validate()?;
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut p = predictor;
    let adam = Adam {
        clip_norm: config.clip_norm,
        ..Adam::new(config.lr_predictor)
    };
    let mut state = AdamState::new(p.params());
    let mut order = train.to_vec();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = History::default();
    let mut best = p.clone();
    let mut epochs_run = 0;
    let mut step = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let out = {
                let mut tape = Tape::new();
                let bound = p.params().bind(&mut tape, true);
                match batch_loss(&p, &mut tape, &bound, batch, rng)? {
                    Some(l) => {
                        let g = tape.backward(l)?;
                        Some((bound.gradients(&tape, &g), tape.scalar(l)))
                    }
                    None => None,
                }
            };
            let Some((grads, loss)) = out else { continue };
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("supervised loss is {loss}"),
                });
            }
            adam.step(p.params_mut(), &grads, &mut state)?;
            loss_sum += loss;
            batches += 1;
        }
        let m = metric(&p, validation)?;
        epochs_run = epoch;
        history.epochs.push(EpochRecord {
            epoch,
            v_estimate: None,
            loss_p: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            loss_j: None,
            validation: m,
        });
        match stopper.observe(epoch, m) {
            StopDecision::Improved => best = p.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    Ok((best, history, stopper, epochs_run))
}

fn has_pair(x: &RankingInstance<u32>) -> bool {
    x.relevance()
        .is_some_and(|r| r.contains(&1) && r.contains(&0))
}

/// Pairwise hinge ranking baseline.
///
/// Each visit to a question samples one relevant and one irrelevant
/// candidate. Questions lacking either kind are skipped and counted.
pub fn train_hinge_baseline(
    predictor: RankPredictor,
    train: &[RankingInstance<u32>],
    validation: &[RankingInstance<u32>],
    config: &GameConfig,
    rng: &mut dyn RngCore,
) -> Result<BaselineOutcome<RankPredictor>> {
    let usable: Vec<&RankingInstance<u32>> = train.iter().filter(|x| has_pair(x)).collect();
    let skipped = train.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Config(
            "no training question has both a relevant and an irrelevant candidate".into(),
        ));
    }
    let margin = config.margin;
    let loss = move |p: &RankPredictor,
                     tape: &mut Tape<'_>,
                     bound: &Bound,
                     batch: &[&RankingInstance<u32>],
                     rng: &mut dyn RngCore|
          -> Result<Option<Var>> {
        let mut terms = Vec::with_capacity(batch.len());
        for x in batch {
            let rel = x.relevance().expect("filtered to labeled questions");
            let pos: Vec<usize> = (0..rel.len()).filter(|&i| rel[i] == 1).collect();
            let neg: Vec<usize> = (0..rel.len()).filter(|&i| rel[i] == 0).collect();
            let a = pos[rng.gen_range(0..pos.len())];
            let b = neg[rng.gen_range(0..neg.len())];
            let pair = [x.candidates[a].clone(), x.candidates[b].clone()];
            let s = p.forward(tape, bound, &x.question, &pair, &mut ForwardCtx::train(rng))?;
            let s_pos = tape.pick(s, 0)?;
            let s_neg = tape.pick(s, 1)?;
            let d = tape.sub(s_neg, s_pos)?;
            let t = tape.scale_shift(d, 1.0, margin)?;
            terms.push(tape.relu(t)?);
        }
        let all = tape.stack(&terms)?;
        Ok(Some(tape.mean(all)?))
    };
    let metric = |p: &RankPredictor, v: &[RankingInstance<u32>]| Ranking.validation_metric(p, v);
    let (predictor, history, stopper, epochs_run) =
        supervised(predictor, &usable, validation, config, rng, &loss, &metric)?;
    Ok(BaselineOutcome {
        predictor,
        history,
        best_validation: stopper.best().unwrap_or(f64::NAN),
        best_epoch: stopper.best_epoch(),
        epochs_run,
        skipped,
    })
}

/// Cross-entropy classification baseline on the labeled sentences of `train`.
pub fn train_nll_baseline(
    task: &Classification,
    predictor: ClassPredictor,
    train: &[ClassificationInstance<u32>],
    validation: &[ClassificationInstance<u32>],
    config: &GameConfig,
    rng: &mut dyn RngCore,
) -> Result<BaselineOutcome<ClassPredictor>> {
    let usable: Vec<&ClassificationInstance<u32>> = train.iter().filter(|x| x.label().is_some()).collect();
    let skipped = train.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Config("no labeled training sentence".into()));
    }
    for x in &usable {
        task.label_target(x)?;
    }
    let loss = |p: &ClassPredictor,
                tape: &mut Tape<'_>,
                bound: &Bound,
                batch: &[&ClassificationInstance<u32>],
                rng: &mut dyn RngCore|
     -> Result<Option<Var>> {
        let mut terms = Vec::with_capacity(batch.len());
        for x in batch {
            let y = p.forward(tape, bound, &x.tokens, &mut ForwardCtx::train(rng))?;
            let py = tape.pick(y, x.label().expect("filtered to labeled sentences"))?;
            let l = tape.log_floor(py, NLL_FLOOR)?;
            terms.push(tape.scale(l, -1.0)?);
        }
        let all = tape.stack(&terms)?;
        Ok(Some(tape.mean(all)?))
    };
    let metric = |p: &ClassPredictor, v: &[ClassificationInstance<u32>]| task.validation_metric(p, v);
    let (predictor, history, stopper, epochs_run) =
        supervised(predictor, &usable, validation, config, rng, &loss, &metric)?;
    Ok(BaselineOutcome {
        predictor,
        history,
        best_validation: stopper.best().unwrap_or(f64::NAN),
        best_epoch: stopper.best_epoch(),
        epochs_run,
        skipped,
    })
}
