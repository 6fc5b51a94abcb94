//! Experiment configuration, labeled-set-size sweeps and checkpoint
//! evaluation.
//!
//! A sweep runs every `(k, seed)` pair of an [`ExperimentConfig`]: split the
//! training set into `k` labeled instances and an unlabeled remainder, train,
//! early-stop on the dev set and evaluate on the test set. Each run writes its
//! own files under `runs/`; the merged `runs.csv`, `aggregate.json` and
//! `curve.csv` are written once all runs have finished (or failed).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::json;

use crate::data::{self, ClassSynth, ClassificationInstance, RankingInstance, RankingSynth};
use crate::encoder::{self, EncoderConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};
use crate::models::{ClassJudge, ClassModelConfig, ClassPredictor, Model, RankJudge, RankModelConfig, RankPredictor};
use crate::params::Checkpoint;
use crate::tensor::Tensor;
use crate::train::{self, Classification, GameConfig, History, PredictorLoss, Ranking, StepCounters, TaskKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Adversarial training on the labeled instances only.
    Dan,
    /// Adversarial training that also feeds the unlabeled remainder to the predictor.
    DanUnlab,
    HingeBaseline,
    NllBaseline,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dan => "dan",
            ModelKind::DanUnlab => "dan_unlab",
            ModelKind::HingeBaseline => "hinge_baseline",
            ModelKind::NllBaseline => "nll_baseline",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(json!(s)).map_err(|_| {
            Error::Config(format!(
                "unknown model {s:?}; expected dan, dan_unlab, hinge_baseline or nll_baseline"
            ))
        })
    }
}

pub fn task_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Ranking => "ranking",
        TaskKind::Classification => "classification",
    }
}

pub fn parse_task(s: &str) -> Result<TaskKind> {
    serde_json::from_value(json!(s))
        .map_err(|_| Error::Config(format!("unknown task {s:?}; expected ranking or classification")))
}

/// Labeled-set size: a count, or the whole training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KValue {
    Count(usize),
    Full,
}

impl KValue {
    pub fn resolve(self, train_size: usize) -> usize {
        match self {
            KValue::Count(n) => n,
            KValue::Full => train_size,
        }
    }
}

impl fmt::Display for KValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KValue::Count(n) => write!(f, "{n}"),
            KValue::Full => f.write_str("full"),
        }
    }
}

impl FromStr for KValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(KValue::Full);
        }
        s.parse()
            .map(KValue::Count)
            .map_err(|_| Error::Config(format!("bad k value {s:?}; expected a count or \"full\"")))
    }
}

impl Serialize for KValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KValue::Count(n) => s.serialize_u64(*n as u64),
            KValue::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for KValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(usize),
            S(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(n) => Ok(KValue::Count(n)),
            Repr::S(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

/// Generated planted-token data, split by position into train/dev/test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticData {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Candidates per question (ranking).
    pub candidates: usize,
    /// Classes (classification).
    pub n_classes: usize,
    /// Defaults to 100 for ranking and 60 for classification.
    pub vocab_size: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            train: 1000,
            dev: 200,
            test: 200,
            candidates: 4,
            n_classes: 2,
            vocab_size: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// TSV files; see [`data::load_qa_tsv`] and [`data::load_cls_tsv`].
    Files { train: PathBuf, dev: PathBuf, test: PathBuf },
    Synthetic(SyntheticData),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticData::default())
    }
}

/// Network sizes shared by predictor and judge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub emb_dim: usize,
    pub proj_dim: usize,
    pub filters: usize,
    /// Defaults to 3 for ranking and 5 for classification.
    pub window: Option<usize>,
    /// Classification head width.
    pub hidden: usize,
    pub dropout: f64,
    pub freeze_embeddings: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            emb_dim: 400,
            proj_dim: 200,
            filters: 400,
            window: None,
            hidden: 200,
            dropout: 0.0,
            freeze_embeddings: false,
        }
    }
}

impl ArchConfig {
    pub fn window_for(&self, task: TaskKind) -> usize {
        self.window.unwrap_or(match task {
            TaskKind::Ranking => 3,
            TaskKind::Classification => 5,
        })
    }

    pub fn encoder(&self, task: TaskKind, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            emb_dim: self.emb_dim,
            proj_dim: self.proj_dim,
            filters: self.filters,
            window: self.window_for(task),
            freeze_embeddings: self.freeze_embeddings,
            dropout: self.dropout,
        }
    }
}

/// Optional changes to the schedule implied by task and model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameOverrides {
    pub p_updates_per_j_update: Option<usize>,
    pub lr_predictor: Option<f64>,
    pub lr_judge: Option<f64>,
    /// Multiplies both learning rates after the other overrides.
    pub lr_scale: f64,
    pub predictor_loss: Option<PredictorLoss>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub margin: Option<f64>,
    pub clip_norm: Option<f64>,
}

impl Default for GameOverrides {
    fn default() -> Self {
        Self {
            p_updates_per_j_update: None,
            lr_predictor: None,
            lr_judge: None,
            lr_scale: 1.0,
            predictor_loss: None,
            batch_size: None,
            max_epochs: None,
            patience: None,
            margin: None,
            clip_norm: None,
        }
    }
}

/// One experiment: a task, a model and the `(k, seed)` grid to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub model: ModelKind,
    pub data: DataSource,
    /// word2vec text-format vectors used to initialize both encoders.
    pub embeddings: Option<PathBuf>,
    /// Inferred from the largest label when absent.
    pub n_classes: Option<usize>,
    pub k: Vec<KValue>,
    /// Run indices; each run's stream is derived from `(global_seed, k, seed)`.
    pub seeds: Vec<u64>,
    pub global_seed: u64,
    pub arch: ArchConfig,
    pub game: GameOverrides,
    /// Parallel runs in a sweep.
    pub jobs: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Ranking,
            model: ModelKind::Dan,
            data: DataSource::default(),
            embeddings: None,
            n_classes: None,
            k: vec![
                KValue::Count(10),
                KValue::Count(50),
                KValue::Count(100),
                KValue::Count(500),
                KValue::Full,
            ],
            seeds: (0..10).collect(),
            global_seed: 0,
            arch: ArchConfig::default(),
            game: GameOverrides::default(),
            jobs: 1,
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The schedule for this task and model with overrides applied.
    pub fn resolved_game(&self) -> GameConfig {
        let mut g = match self.model {
            ModelKind::DanUnlab => GameConfig::semi_supervised(),
            _ => GameConfig::full_data(self.task),
        };
        let o = &self.game;
        if let Some(v) = o.p_updates_per_j_update {
            g.p_updates_per_j_update = v;
        }
        if let Some(v) = o.lr_predictor {
            g.lr_predictor = v;
        }
        if let Some(v) = o.lr_judge {
            g.lr_judge = v;
        }
        g.lr_predictor *= o.lr_scale;
        g.lr_judge *= o.lr_scale;
        if let Some(v) = o.predictor_loss {
            g.predictor_loss = v;
        }
        if let Some(v) = o.batch_size {
            g.batch_size = v;
        }
        if let Some(v) = o.max_epochs {
            g.max_epochs = v;
        }
        if let Some(v) = o.patience {
            g.patience = v;
        }
        if let Some(v) = o.margin {
            g.margin = v;
        }
        if o.clip_norm.is_some() {
            g.clip_norm = o.clip_norm;
        }
        g
    }

    /// Checks that need no data; run before anything is loaded or trained.
    pub fn validate(&self) -> Result<()> {
        match (self.task, self.model) {
            (TaskKind::Classification, ModelKind::HingeBaseline) => {
                return Err(Error::Config("hinge_baseline is a ranking model".into()))
            }
            (TaskKind::Ranking, ModelKind::NllBaseline) => {
                return Err(Error::Config("nll_baseline is a classification model".into()))
            }
            _ => {}
        }
        if self.k.is_empty() {
            return Err(Error::Config("no k values".into()));
        }
        if self.k.contains(&KValue::Count(0)) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.model == ModelKind::DanUnlab && self.k.contains(&KValue::Full) {
            return Err(Error::Config("dan_unlab needs unlabeled data, so k cannot be \"full\"".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if !(self.game.lr_scale.is_finite() && self.game.lr_scale > 0.0) {
            return Err(Error::Config("lr_scale must be positive".into()));
        }
        if let Some(n) = self.n_classes {
            if n < 2 {
                return Err(Error::Config("n_classes must be at least 2".into()));
            }
        }
        self.arch.encoder(self.task, 2).validate()?;
        if self.arch.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        self.resolved_game().validate()?;
        match &self.data {
            DataSource::Files { train, dev, test } => {
                for p in [train, dev, test] {
                    if !p.is_file() {
                        return Err(Error::Config(format!("data file {} does not exist", p.display())));
                    }
                }
            }
            DataSource::Synthetic(s) => {
                if s.train == 0 || s.dev == 0 || s.test == 0 {
                    return Err(Error::Config("synthetic splits must be non-empty".into()));
                }
            }
        }
        if let Some(p) = &self.embeddings {
            if !p.is_file() {
                return Err(Error::Config(format!("embedding file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// Splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the random stream for one run. Depends only on its own
/// arguments, so adding k values or seeds leaves existing runs unchanged.
pub fn derive_seed(global_seed: u64, k: usize, run: u64) -> u64 {
    mix(mix(mix(global_seed) ^ k as u64) ^ run)
}

#[derive(Clone, Debug)]
pub enum Splits {
    Ranking {
        train: Vec<RankingInstance<u32>>,
        dev: Vec<RankingInstance<u32>>,
        test: Vec<RankingInstance<u32>>,
    },
    Classification {
        n_classes: usize,
        train: Vec<ClassificationInstance<u32>>,
        dev: Vec<ClassificationInstance<u32>>,
        test: Vec<ClassificationInstance<u32>>,
    },
}

/// Indexed datasets, vocabulary and optional pretrained embeddings.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub splits: Splits,
    pub embeddings: Option<Tensor>,
    pub warnings: Vec<String>,
}

impl Prepared {
    pub fn train_size(&self) -> usize {
        match &self.splits {
            Splits::Ranking { train, .. } => train.len(),
            Splits::Classification { train, .. } => train.len(),
        }
    }
}

fn with_warnings<T>(label: &str, loaded: data::Loaded<T>, warnings: &mut Vec<String>) -> Vec<T> {
    warnings.extend(loaded.warnings.into_iter().map(|w| format!("{label}: {w}")));
    loaded.instances
}

/// Loads or generates the data and builds the training vocabulary.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let mut warnings = Vec::new();
    let (vocab, splits) = match config.task {
        TaskKind::Ranking => {
            let (train, dev, test) = match &config.data {
                DataSource::Files { train, dev, test } => (
                    with_warnings("train", data::load_qa_tsv(train)?, &mut warnings),
                    with_warnings("dev", data::load_qa_tsv(dev)?, &mut warnings),
                    with_warnings("test", data::load_qa_tsv(test)?, &mut warnings),
                ),
                DataSource::Synthetic(s) => {
                    let gen = RankingSynth::new(s.train + s.dev + s.test, s.candidates, s.vocab_size.unwrap_or(100));
                    let mut all = gen.generate(s.seed)?;
                    let test = all.split_off(s.train + s.dev);
                    let dev = all.split_off(s.train);
                    (all, dev, test)
                }
            };
            let vocab = data::ranking_vocabulary(&train);
            let index = |v: &[RankingInstance]| v.iter().map(|x| x.index(&vocab)).collect::<Vec<_>>();
            let splits = Splits::Ranking {
                train: index(&train),
                dev: index(&dev),
                test: index(&test),
            };
            (vocab, splits)
        }
        TaskKind::Classification => {
            let (train, dev, test) = match &config.data {
                DataSource::Files { train, dev, test } => (
                    with_warnings("train", data::load_cls_tsv(train)?, &mut warnings),
                    with_warnings("dev", data::load_cls_tsv(dev)?, &mut warnings),
                    with_warnings("test", data::load_cls_tsv(test)?, &mut warnings),
                ),
                DataSource::Synthetic(s) => {
                    let gen = ClassSynth::new(s.train + s.dev + s.test, s.n_classes, s.vocab_size.unwrap_or(60));
                    let mut all = gen.generate(s.seed)?;
                    let test = all.split_off(s.train + s.dev);
                    let dev = all.split_off(s.train);
                    (all, dev, test)
                }
            };
            let inferred = [&train, &dev, &test]
                .iter()
                .map(|d| data::infer_num_classes(d))
                .max()
                .unwrap_or(0)
                .max(2);
            let n_classes = match config.n_classes {
                Some(n) if n < inferred => {
                    return Err(Error::Config(format!("n_classes is {n} but the data has labels up to {}", inferred - 1)))
                }
                Some(n) => n,
                None => inferred,
            };
            let vocab = data::classification_vocabulary(&train);
            let index = |v: &[ClassificationInstance]| v.iter().map(|x| x.index(&vocab)).collect::<Vec<_>>();
            let splits = Splits::Classification {
                n_classes,
                train: index(&train),
                dev: index(&dev),
                test: index(&test),
            };
            (vocab, splits)
        }
    };
    let embeddings = match &config.embeddings {
        Some(path) => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(config.global_seed));
            let table = encoder::load_pretrained(path, &vocab, &mut rng)?;
            if table.cols() != config.arch.emb_dim {
                return Err(Error::Config(format!(
                    "embedding file has dimension {} but emb_dim is {}",
                    table.cols(),
                    config.arch.emb_dim
                )));
            }
            Some(table)
        }
        None => None,
    };
    let prepared = Prepared {
        vocab,
        splits,
        embeddings,
        warnings,
    };
    let n = prepared.train_size();
    if n == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    for k in &config.k {
        let k = k.resolve(n);
        if k > n {
            return Err(Error::Config(format!("k = {k} exceeds the {n} training instances")));
        }
        if config.model == ModelKind::DanUnlab && k >= n {
            return Err(Error::Config(format!(
                "dan_unlab needs k < |train| = {n}, got k = {k}"
            )));
        }
    }
    Ok(prepared)
}

/// A trained predictor of either task.
#[derive(Clone, Debug)]
pub enum TrainedPredictor {
    Ranking(RankPredictor),
    Classification(ClassPredictor),
}

pub const CHECKPOINT_FORMAT: &str = "dan-predictor";

impl TrainedPredictor {
    pub fn task(&self) -> TaskKind {
        match self {
            TrainedPredictor::Ranking(_) => TaskKind::Ranking,
            TrainedPredictor::Classification(_) => TaskKind::Classification,
        }
    }

    /// Predictor weights plus everything needed to rebuild and feed it.
    pub fn to_checkpoint(&self, vocab: &Vocabulary, echo: &serde_json::Value) -> Checkpoint {
        let (model, params) = match self {
            TrainedPredictor::Ranking(p) => (serde_json::to_value(&p.config), p.params().clone()),
            TrainedPredictor::Classification(p) => (serde_json::to_value(&p.config), p.params().clone()),
        };
        Checkpoint {
            meta: json!({
                "format": CHECKPOINT_FORMAT,
                "task": self.task(),
                "model": model.expect("model configs serialize"),
                "vocab": vocab,
                "config": echo,
            }),
            params,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Vocabulary)> {
        let meta = &ckpt.meta;
        if meta["format"] != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint("not a predictor checkpoint".into()));
        }
        let field = |name: &str| {
            meta.get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {name:?}")))
        };
        let bad = |e: serde_json::Error| Error::Checkpoint(format!("bad metadata: {e}"));
        let task: TaskKind = serde_json::from_value(field("task")?).map_err(bad)?;
        let vocab: Vocabulary = serde_json::from_value(field("vocab")?).map_err(bad)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let predictor = match task {
            TaskKind::Ranking => {
                let config: RankModelConfig = serde_json::from_value(field("model")?).map_err(bad)?;
                check_vocab(&config.encoder, &vocab)?;
                let mut p = RankPredictor::new(config, &mut rng)?;
                p.params_mut().load_values(&ckpt.params)?;
                TrainedPredictor::Ranking(p)
            }
            TaskKind::Classification => {
                let config: ClassModelConfig = serde_json::from_value(field("model")?).map_err(bad)?;
                check_vocab(&config.encoder, &vocab)?;
                let mut p = ClassPredictor::new(config, &mut rng)?;
                p.params_mut().load_values(&ckpt.params)?;
                TrainedPredictor::Classification(p)
            }
        };
        Ok((predictor, vocab))
    }

    /// MAP/MRR/NDCG for ranking, accuracy for classification.
    pub fn evaluate(&self, split: &Splits) -> Result<BTreeMap<String, f64>> {
        match (self, split) {
            (TrainedPredictor::Ranking(p), Splits::Ranking { test, .. }) => {
                nonempty(test.len())?;
                Ranking.evaluate(p, test)
            }
            (TrainedPredictor::Classification(p), Splits::Classification { test, .. }) => {
                nonempty(test.len())?;
                let task = Classification {
                    n_classes: p.config.n_classes,
                };
                Ok(BTreeMap::from([("accuracy".to_owned(), task.accuracy(p, test)?)]))
            }
            _ => Err(Error::contract("predictor and dataset are for different tasks")),
        }
    }
}

fn check_vocab(encoder: &EncoderConfig, vocab: &Vocabulary) -> Result<()> {
    if encoder.vocab_size != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens but the embedding table has {} rows",
            vocab.len(),
            encoder.vocab_size
        )));
    }
    Ok(())
}

fn nonempty(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::contract("evaluation dataset is empty"));
    }
    Ok(())
}

/// Summary of one `(k, seed)` run; one row of `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: TaskKind,
    pub model: ModelKind,
    pub k: usize,
    pub seed: u64,
    pub stream_seed: u64,
    /// Test-set metrics of the best-validation model.
    pub metrics: BTreeMap<String, f64>,
    pub best_validation: f64,
    pub best_epoch: usize,
    pub epochs: usize,
    pub counters: StepCounters,
    /// Training instances that could not contribute to the loss.
    pub skipped: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub history: History,
    pub predictor: TrainedPredictor,
}

fn init_encoders(params: &mut crate::params::ParamStore, enc: &encoder::TextEncoder, table: &Option<Tensor>) -> Result<()> {
    if let Some(t) = table {
        enc.set_embeddings(params, t.clone())?;
    }
    Ok(())
}

/// Split, train and test one `(k, seed)` pair.
pub fn run_one(config: &ExperimentConfig, prepared: &Prepared, k: usize, seed: u64) -> Result<RunOutcome> {
    let start = Instant::now();
    let game = config.resolved_game();
    let stream_seed = derive_seed(config.global_seed, k, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let encoder = config.arch.encoder(config.task, prepared.vocab.len());
    let semi = config.model == ModelKind::DanUnlab;

    struct Trained {
        predictor: TrainedPredictor,
        history: History,
        best_validation: f64,
        best_epoch: usize,
        epochs: usize,
        counters: StepCounters,
        skipped: usize,
    }

    let trained = match &prepared.splits {
        Splits::Ranking { train, dev, .. } => {
            let split = data::split_semisup(train, k, stream_seed)?;
            let unlabeled: &[RankingInstance<u32>] = if semi { &split.unlabeled } else { &[] };
            let mc = RankModelConfig { encoder };
            let mut p = RankPredictor::new(mc.clone(), &mut rng)?;
            init_encoders(&mut p.params, &p.encoder.clone(), &prepared.embeddings)?;
            match config.model {
                ModelKind::HingeBaseline => {
                    let o = train::train_hinge_baseline(p, &split.labeled, dev, &game, &mut rng)?;
                    Trained {
                        predictor: TrainedPredictor::Ranking(o.predictor),
                        history: o.history,
                        best_validation: o.best_validation,
                        best_epoch: o.best_epoch,
                        epochs: o.epochs_run,
                        counters: StepCounters::default(),
                        skipped: o.skipped,
                    }
                }
                _ => {
                    let mut j = RankJudge::new(mc, &mut rng)?;
                    init_encoders(&mut j.params, &j.encoder.clone(), &prepared.embeddings)?;
                    let s = train::train_dan(&Ranking, p, j, &split.labeled, unlabeled, dev, &game, &mut rng)?;
                    Trained {
                        predictor: TrainedPredictor::Ranking(s.predictor),
                        history: s.history,
                        best_validation: s.best_validation,
                        best_epoch: s.best_epoch,
                        epochs: s.epochs_run,
                        counters: s.counters,
                        skipped: 0,
                    }
                }
            }
        }
        Splits::Classification {
            n_classes, train, dev, ..
        } => {
            let split = data::split_semisup(train, k, stream_seed)?;
            let unlabeled: &[ClassificationInstance<u32>] = if semi { &split.unlabeled } else { &[] };
            let task = Classification { n_classes: *n_classes };
            let mc = ClassModelConfig {
                encoder,
                hidden: config.arch.hidden,
                n_classes: *n_classes,
            };
            let mut p = ClassPredictor::new(mc.clone(), &mut rng)?;
            init_encoders(&mut p.params, &p.encoder.clone(), &prepared.embeddings)?;
            match config.model {
                ModelKind::NllBaseline => {
                    let o = train::train_nll_baseline(&task, p, &split.labeled, dev, &game, &mut rng)?;
                    Trained {
                        predictor: TrainedPredictor::Classification(o.predictor),
                        history: o.history,
                        best_validation: o.best_validation,
                        best_epoch: o.best_epoch,
                        epochs: o.epochs_run,
                        counters: StepCounters::default(),
                        skipped: o.skipped,
                    }
                }
                _ => {
                    let mut j = ClassJudge::new(mc, &mut rng)?;
                    init_encoders(&mut j.params, &j.encoder.clone(), &prepared.embeddings)?;
                    let s = train::train_dan(&task, p, j, &split.labeled, unlabeled, dev, &game, &mut rng)?;
                    Trained {
                        predictor: TrainedPredictor::Classification(s.predictor),
                        history: s.history,
                        best_validation: s.best_validation,
                        best_epoch: s.best_epoch,
                        epochs: s.epochs_run,
                        counters: s.counters,
                        skipped: 0,
                    }
                }
            }
        }
    };

    let metrics = trained.predictor.evaluate(&prepared.splits)?;
    Ok(RunOutcome {
        record: RunRecord {
            task: config.task,
            model: config.model,
            k,
            seed,
            stream_seed,
            metrics,
            best_validation: trained.best_validation,
            best_epoch: trained.best_epoch,
            epochs: trained.epochs,
            counters: trained.counters,
            skipped: trained.skipped,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        history: trained.history,
        predictor: trained.predictor,
    })
}

/// The configuration as written into every output file.
pub fn config_echo(config: &ExperimentConfig) -> serde_json::Value {
    json!({
        "experiment": config,
        "resolved_game": config.resolved_game(),
        "resolved_window": config.arch.window_for(config.task),
    })
}

fn comment_line(echo: &serde_json::Value) -> String {
    format!("# config: {echo}\n")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn history_csv(echo: &serde_json::Value, history: &History) -> String {
    comment_line(echo) + &history.to_csv()
}

/// Output of [`train_single`].
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub record: RunRecord,
    pub checkpoint: PathBuf,
    pub warnings: Vec<String>,
}

/// Trains the first `(k, seed)` pair of `config` and saves its predictor.
///
/// Writes `checkpoint.bin`, `history.csv` and `run.json` into `config.out`.
pub fn train_single(config: &ExperimentConfig) -> Result<TrainSummary> {
    config.validate()?;
    let prepared = prepare(config)?;
    let k = config.k[0].resolve(prepared.train_size());
    let outcome = run_one(config, &prepared, k, config.seeds[0])?;
    let echo = config_echo(config);
    create_dir(&config.out)?;
    let checkpoint = config.out.join("checkpoint.bin");
    outcome.predictor.to_checkpoint(&prepared.vocab, &echo).save(&checkpoint)?;
    write(&config.out.join("history.csv"), history_csv(&echo, &outcome.history))?;
    let run = json!({ "config": echo, "run": outcome.record });
    write(&config.out.join("run.json"), serde_json::to_string_pretty(&run)?)?;
    Ok(TrainSummary {
        record: outcome.record,
        checkpoint,
        warnings: prepared.warnings,
    })
}

/// Metrics of a saved predictor on a TSV dataset of its task.
pub fn evaluate_checkpoint(checkpoint: &Path, dataset: &Path) -> Result<MetricReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (predictor, vocab) = TrainedPredictor::from_checkpoint(&ckpt)?;
    let split = match &predictor {
        TrainedPredictor::Ranking(_) => Splits::Ranking {
            train: Vec::new(),
            dev: Vec::new(),
            test: data::load_qa_tsv(dataset)?.instances.iter().map(|x| x.index(&vocab)).collect(),
        },
        TrainedPredictor::Classification(p) => {
            let loaded = data::load_cls_tsv(dataset)?.instances;
            if data::infer_num_classes(&loaded) > p.config.n_classes {
                return Err(Error::contract(format!(
                    "dataset has labels beyond the model's {} classes",
                    p.config.n_classes
                )));
            }
            Splits::Classification {
                n_classes: p.config.n_classes,
                train: Vec::new(),
                dev: Vec::new(),
                test: loaded.iter().map(|x| x.index(&vocab)).collect(),
            }
        }
    };
    single_report(&predictor.evaluate(&split)?)
}

fn single_report(values: &BTreeMap<String, f64>) -> Result<MetricReport> {
    values
        .iter()
        .map(|(name, &v)| Ok((name.clone(), metrics::aggregate_runs(&[v])?)))
        .collect()
}

/// Metrics aggregated over seeds for one labeled-set size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KAggregate {
    pub k: usize,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<KAggregate>,
    pub warnings: Vec<String>,
}

pub const RUNS_HEADER_PREFIX: &str = "task,model,k,seed";
pub const RUNS_HEADER_SUFFIX: &str = "best_validation,best_epoch,epochs,judge_steps,predictor_steps,skipped,wall_time_s";

/// `runs.csv` contents, rows in `(k, seed)` order of `records`.
pub fn runs_csv(echo: &serde_json::Value, records: &[RunRecord]) -> String {
    let metric_names: Vec<&String> = records.first().map(|r| r.metrics.keys().collect()).unwrap_or_default();
    let mut out = comment_line(echo);
    out.push_str(RUNS_HEADER_PREFIX);
    for m in &metric_names {
        out.push(',');
        out.push_str(m);
    }
    out.push(',');
    out.push_str(RUNS_HEADER_SUFFIX);
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{},{}", task_name(r.task), r.model.name(), r.k, r.seed));
        for m in &metric_names {
            out.push_str(&format!(",{}", r.metrics[*m]));
        }
        out.push_str(&format!(
            ",{},{},{},{},{},{},{:.3}\n",
            r.best_validation,
            r.best_epoch,
            r.epochs,
            r.counters.judge_steps,
            r.counters.predictor_steps,
            r.skipped,
            r.wall_time_s
        ));
    }
    out
}

/// Mean and sample std of every metric per `k`, in first-appearance order.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<KAggregate>> {
    let mut ks: Vec<usize> = Vec::new();
    for r in records {
        if !ks.contains(&r.k) {
            ks.push(r.k);
        }
    }
    ks.into_iter()
        .map(|k| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.k == k).collect();
            let metrics = runs[0]
                .metrics
                .keys()
                .map(|name| {
                    let samples: Vec<f64> = runs.iter().map(|r| r.metrics[name]).collect();
                    Ok((name.clone(), metrics::aggregate_runs(&samples)?))
                })
                .collect::<Result<MetricReport>>()?;
            Ok(KAggregate { k, metrics })
        })
        .collect()
}

/// Plot-ready `k,metric,mean,std,n` rows.
pub fn curve_csv(echo: &serde_json::Value, aggregates: &[KAggregate]) -> String {
    let mut out = comment_line(echo);
    out.push_str("k,metric,mean,std,n\n");
    for a in aggregates {
        for (name, agg) in &a.metrics {
            out.push_str(&format!("{},{},{},{},{}\n", a.k, name, agg.mean, agg.std, agg.samples.len()));
        }
    }
    out
}

/// Runs every `(k, seed)` pair, `config.jobs` at a time.
///
/// Each finished run writes `runs/k{k}_s{seed}.json` and its history. The
/// merged files cover every run that finished, even when others failed; the
/// first failure is then returned.
pub fn sweep(config: &ExperimentConfig) -> Result<SweepSummary> {
    config.validate()?;
    let prepared = prepare(config)?;
    let echo = config_echo(config);
    let runs_dir = config.out.join("runs");
    create_dir(&runs_dir)?;

    let n = prepared.train_size();
    let grid: Vec<(usize, u64)> = config
        .k
        .iter()
        .flat_map(|k| config.seeds.iter().map(move |&s| (k.resolve(n), s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| {
        grid.par_iter()
            .map(|&(k, seed)| {
                let outcome = run_one(config, &prepared, k, seed)?;
                let stem = format!("k{k}_s{seed}");
                let run = json!({ "config": echo, "run": outcome.record });
                write(&runs_dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&run)?)?;
                write(
                    &runs_dir.join(format!("{stem}_history.csv")),
                    history_csv(&echo, &outcome.history),
                )?;
                Ok(outcome.record)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut first_error = None;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let aggregates = aggregate(&records)?;
    write(&config.out.join("runs.csv"), runs_csv(&echo, &records))?;
    let agg_json = json!({ "config": echo, "results": aggregates });
    write(&config.out.join("aggregate.json"), serde_json::to_string_pretty(&agg_json)?)?;
    write(&config.out.join("curve.csv"), curve_csv(&echo, &aggregates))?;
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(SweepSummary {
        records,
        aggregates,
        warnings: prepared.warnings,
    })
}
