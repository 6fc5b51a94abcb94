//! Adversarial predictor/judge training and supervised baselines.

mod baselines;
mod game;
mod task;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baselines::{hinge_loss, nll_loss, train_hinge_baseline, train_nll_baseline, BaselineOutcome};
pub use game::{build_judge_loss, build_predictor_loss, dan_value, train_dan, GameTerms, GameValue};
pub use task::{Classification, Ranking, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Ranking,
    Classification,
}

/// How the predictor turns the judge's verdict into a loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorLoss {
    /// Minimize `E[log(1 - J(x, P(x)))]`, the literal min-max objective.
    Minimax,
    /// Minimize `-E[log J(x, P(x))]`; same fixed point, stronger early gradients.
    #[default]
    NonSaturating,
}

/// Learning rates used when every training instance is labeled.
pub fn full_data_rate(task: TaskKind) -> f64 {
    match task {
        TaskKind::Ranking => 0.0005,
        TaskKind::Classification => 0.0001,
    }
}

pub const SEMI_SUP_PREDICTOR_RATE: f64 = 0.00005;
pub const SEMI_SUP_JUDGE_RATE: f64 = 0.0001;
pub const SEMI_SUP_P_PER_J: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameConfig {
    /// Predictor steps taken after each judge step.
    pub p_updates_per_j_update: usize,
    pub lr_predictor: f64,
    pub lr_judge: f64,
    pub predictor_loss: PredictorLoss,
    /// Instances per batch; a ranking instance is a whole candidate list.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Margin of the pairwise hinge baseline.
    pub margin: f64,
    pub clip_norm: Option<f64>,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self::full_data(TaskKind::Ranking)
    }
}

impl GameConfig {
    /// Alternating 1:1 updates at the full-data rate for `task`.
    pub fn full_data(task: TaskKind) -> Self {
        let lr = full_data_rate(task);
        Self {
            p_updates_per_j_update: 1,
            lr_predictor: lr,
            lr_judge: lr,
            predictor_loss: PredictorLoss::NonSaturating,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            margin: 1.0,
            clip_norm: None,
        }
    }

    /// Ten predictor steps per judge step at the reduced rates.
    pub fn semi_supervised() -> Self {
        Self {
            p_updates_per_j_update: SEMI_SUP_P_PER_J,
            lr_predictor: SEMI_SUP_PREDICTOR_RATE,
            lr_judge: SEMI_SUP_JUDGE_RATE,
            ..Self::full_data(TaskKind::Ranking)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_updates_per_j_update < 1 {
            return Err(Error::Config("p_updates_per_j_update must be at least 1".into()));
        }
        if !(self.lr_predictor > 0.0 && self.lr_judge > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config("margin must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean value-function estimate over the epoch's judge batches.
    pub v_estimate: Option<f64>,
    pub loss_p: f64,
    pub loss_j: Option<f64>,
    pub validation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,v_estimate,loss_p,loss_j,validation";

    /// CSV with the header row; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                opt(r.v_estimate),
                r.loss_p,
                opt(r.loss_j),
                r.validation
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a higher-is-better metric.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Instrumented step counts of one training run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounters {
    pub judge_steps: usize,
    pub predictor_steps: usize,
}

/// Result of an adversarial run. Models are restored to the best
/// validation epoch.
#[derive(Clone, Debug)]
pub struct TrainState<P, J> {
    pub predictor: P,
    pub judge: J,
    pub history: History,
    pub best_validation: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub counters: StepCounters,
}
