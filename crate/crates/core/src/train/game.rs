use rand::seq::SliceRandom;
use rand::RngCore;

use super::task::Task;
use super::{EarlyStopping, EpochRecord, GameConfig, History, PredictorLoss, StepCounters, StopDecision, TrainState};
use crate::autodiff::{Tape, Var};
use crate::data::Labeled;
use crate::encoder::ForwardCtx;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::optim::{Adam, AdamState};
use crate::params::Bound;

/// Tape nodes of the judge objective.
#[derive(Clone, Copy, Debug)]
pub struct GameTerms {
    /// `-V`.
    pub loss_j: Var,
    /// `mean log J(x, y)` over the labeled batch.
    pub real_term: Var,
    /// `mean log(1 - J(x, P(x)))` over the predictor batch.
    pub fake_term: Var,
}

/// Value-function estimate on fixed batches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameValue {
    pub value: f64,
    pub loss_j: f64,
    pub loss_p: f64,
}

/// Builds `loss_J = -(mean log J(x, y) + mean log(1 - J(x, P(x))))`.
///
/// Whether gradients reach either model depends on how its parameters were
/// bound on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn build_judge_loss<'p, T: Task>(
    task: &T,
    tape: &mut Tape<'p>,
    p: &T::Predictor,
    p_bound: &Bound,
    j: &T::Judge,
    j_bound: &Bound,
    real: &[&T::Input],
    fake: &[&T::Input],
    ctx: &mut ForwardCtx<'_>,
) -> Result<GameTerms> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::contract("judge loss needs non-empty labeled and predicted batches"));
    }
    let mut real_logs = Vec::with_capacity(real.len());
    for x in real {
        let y = tape.constant(task.label_target(x)?);
        let z = task.judge_logit(j, tape, j_bound, x, y, ctx)?;
        real_logs.push(tape.log_sigmoid(z)?);
    }
    let mut fake_logs = Vec::with_capacity(fake.len());
    for x in fake {
        let y = task.predict(p, tape, p_bound, x, ctx)?;
        let z = task.judge_logit(j, tape, j_bound, x, y, ctx)?;
        let neg = tape.scale(z, -1.0)?;
        fake_logs.push(tape.log_sigmoid(neg)?);
    }
    let real_all = tape.stack(&real_logs)?;
    let real_term = tape.mean(real_all)?;
    let fake_all = tape.stack(&fake_logs)?;
    let fake_term = tape.mean(fake_all)?;
    let value = tape.add(real_term, fake_term)?;
    let loss_j = tape.scale(value, -1.0)?;
    Ok(GameTerms {
        loss_j,
        real_term,
        fake_term,
    })
}

/// Builds the predictor loss on `batch` with the judge as a learned loss.
#[allow(clippy::too_many_arguments)]
pub fn build_predictor_loss<'p, T: Task>(
    task: &T,
    tape: &mut Tape<'p>,
    p: &T::Predictor,
    p_bound: &Bound,
    j: &T::Judge,
    j_bound: &Bound,
    batch: &[&T::Input],
    kind: PredictorLoss,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::contract("predictor loss of an empty batch"));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for x in batch {
        let y = task.predict(p, tape, p_bound, x, ctx)?;
        let z = task.judge_logit(j, tape, j_bound, x, y, ctx)?;
        let t = match kind {
            PredictorLoss::NonSaturating => {
                let l = tape.log_sigmoid(z)?;
                tape.scale(l, -1.0)?
            }
            PredictorLoss::Minimax => {
                let neg = tape.scale(z, -1.0)?;
                tape.log_sigmoid(neg)?
            }
        };
        terms.push(t);
    }
    let all = tape.stack(&terms)?;
    tape.mean(all)
}

/// `V(J, P)` and both losses on fixed batches, without dropout.
pub fn dan_value<T: Task>(
    task: &T,
    p: &T::Predictor,
    j: &T::Judge,
    labeled: &[&T::Input],
    predicted: &[&T::Input],
    kind: PredictorLoss,
) -> Result<GameValue> {
    let mut tape = Tape::new();
    let pb = p.params().bind(&mut tape, false);
    let jb = j.params().bind(&mut tape, false);
    let mut ctx = ForwardCtx::eval();
    let terms = build_judge_loss(task, &mut tape, p, &pb, j, &jb, labeled, predicted, &mut ctx)?;
    let loss_p = build_predictor_loss(task, &mut tape, p, &pb, j, &jb, predicted, kind, &mut ctx)?;
    let loss_j = tape.scalar(terms.loss_j);
    Ok(GameValue {
        value: -loss_j,
        loss_j,
        loss_p: tape.scalar(loss_p),
    })
}

/// Cycles through the labeled set in reshuffled passes.
struct Cursor<'a, X> {
    items: Vec<&'a X>,
    pos: usize,
}

impl<'a, X> Cursor<'a, X> {
    fn new(items: &'a [X], rng: &mut dyn RngCore) -> Self {
        let mut items: Vec<&X> = items.iter().collect();
        items.shuffle(rng);
        Self { items, pos: 0 }
    }

    fn next_batch(&mut self, size: usize, rng: &mut dyn RngCore) -> Vec<&'a X> {
        let size = size.min(self.items.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.items.len() {
                self.items.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.items[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn diverged(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NumericFault { .. } => Error::Diverged {
            epoch,
            step,
            detail: e.to_string(),
        },
        other => other,
    }
}

fn check_finite(x: f64, what: &str, epoch: usize, step: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            step,
            detail: format!("{what} is {x}"),
        })
    }
}

/// Adversarial training of `predictor` against `judge`.
///
/// An epoch is one shuffled pass over `labeled` and `unlabeled` together in
/// batches of `batch_size`. A judge step precedes every
/// `p_updates_per_j_update`-th predictor step. With no unlabeled data the
/// judge sees the current batch both with its labels and with the predictor's
/// outputs; otherwise its labeled half is drawn from a reshuffled cycle over
/// `labeled`. The returned models are the ones from the best validation
/// epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_dan<T: Task>(
    task: &T,
    predictor: T::Predictor,
    judge: T::Judge,
    labeled: &[T::Input],
    unlabeled: &[T::Input],
    validation: &[T::Input],
    config: &GameConfig,
    rng: &mut dyn RngCore,
) -> Result<TrainState<T::Predictor, T::Judge>> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::Config("adversarial training needs at least one labeled instance".into()));
    }
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if let Some(x) = labeled.iter().find(|x| !x.is_labeled()) {
        task.label_target(x)?;
    }

    let mut p = predictor;
    let mut j = judge;
    let adam_p = Adam {
        clip_norm: config.clip_norm,
        ..Adam::new(config.lr_predictor)
    };
    let adam_j = Adam {
        clip_norm: config.clip_norm,
        ..Adam::new(config.lr_judge)
    };
    let mut p_state = AdamState::new(p.params());
    let mut j_state = AdamState::new(j.params());

    let semi = !unlabeled.is_empty();
    let mut cursor = Cursor::new(labeled, rng);
    let mut pool: Vec<&T::Input> = labeled.iter().chain(unlabeled).collect();

    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = History::default();
    let mut counters = StepCounters::default();
    let mut best = (p.clone(), j.clone());
    let mut epochs_run = 0;
    let mut step = 0;

    for epoch in 1..=config.max_epochs {
        pool.shuffle(rng);
        let mut v_sum = 0.0;
        let mut lj_sum = 0.0;
        let mut lp_sum = 0.0;
        let mut j_batches = 0usize;
        let mut p_batches = 0usize;

        for (b, batch) in pool.chunks(config.batch_size).enumerate() {
            step += 1;
            let wrap = diverged(epoch, step);
            if b % config.p_updates_per_j_update == 0 {
                let real = if semi { cursor.next_batch(config.batch_size, rng) } else { batch.to_vec() };
                let (grads, loss) = {
                    let mut tape = Tape::new();
                    let pb = p.params().bind(&mut tape, false);
                    let jb = j.params().bind(&mut tape, true);
                    let mut ctx = ForwardCtx::train(rng);
                    let terms = build_judge_loss(task, &mut tape, &p, &pb, &j, &jb, &real, batch, &mut ctx).map_err(&wrap)?;
                    let g = tape.backward(terms.loss_j).map_err(&wrap)?;
                    (jb.gradients(&tape, &g), tape.scalar(terms.loss_j))
                };
                check_finite(loss, "judge loss", epoch, step)?;
                adam_j.step(j.params_mut(), &grads, &mut j_state)?;
                counters.judge_steps += 1;
                v_sum -= loss;
                lj_sum += loss;
                j_batches += 1;
            }

            let (grads, loss) = {
                let mut tape = Tape::new();
                let pb = p.params().bind(&mut tape, true);
                let jb = j.params().bind(&mut tape, false);
                let mut ctx = ForwardCtx::train(rng);
                let l = build_predictor_loss(task, &mut tape, &p, &pb, &j, &jb, batch, config.predictor_loss, &mut ctx)
                    .map_err(&wrap)?;
                let g = tape.backward(l).map_err(&wrap)?;
                (pb.gradients(&tape, &g), tape.scalar(l))
            };
            check_finite(loss, "predictor loss", epoch, step)?;
            adam_p.step(p.params_mut(), &grads, &mut p_state)?;
            counters.predictor_steps += 1;
            lp_sum += loss;
            p_batches += 1;
        }

        let metric = task.validation_metric(&p, validation)?;
        epochs_run = epoch;
        history.epochs.push(EpochRecord {
            epoch,
            v_estimate: (j_batches > 0).then(|| v_sum / j_batches as f64),
            loss_p: lp_sum / p_batches.max(1) as f64,
            loss_j: (j_batches > 0).then(|| lj_sum / j_batches as f64),
            validation: metric,
        });
        match stopper.observe(epoch, metric) {
            StopDecision::Improved => best = (p.clone(), j.clone()),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    Ok(TrainState {
        predictor: best.0,
        judge: best.1,
        history,
        best_validation: stopper.best().unwrap_or(f64::NAN),
        best_epoch: stopper.best_epoch(),
        epochs_run,
        counters,
    })
}
