//! Training runs: configuration, the epoch loop, validation-based model
//! selection, persisted run records and multi-seed comparison.

mod compare;
mod optim;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::data::LabeledDataset;
use crate::distill::{self, DistillConfig, LossTerms, Pair};
use crate::dosco::{DomainSplit, Role};
use crate::error::{bail, Error, Result};
use crate::nets::{ModelChoice, Network};
use crate::oodgen::Augmentor;
use crate::rng;
use crate::tensor::Graph;

pub use compare::{compare, mean_std, Comparison, GroupSummary, Stat};
pub use optim::{adam_step, cosine_lr, sgd_momentum_step, AdamMoments, Optimizer, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Kd,
    KdAug,
    Okd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Erm, Method::Kd, Method::KdAug, Method::Okd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Kd => "kd",
            Method::KdAug => "kd_aug",
            Method::Okd => "okd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match Self::ALL.iter().find(|m| m.name() == s) {
            Some(m) => Ok(*m),
            None => bail!(Config, "unknown method {s:?}"),
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != Method::Erm
    }

    fn uses_aug(self) -> bool {
        matches!(self, Method::KdAug | Method::Okd)
    }
}

/// How a distillation run obtains its teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherSource {
    /// Directory written by [`Network::save`].
    Checkpoint(PathBuf),
    /// Train one from scratch on the source split with the run's seed.
    Train(TeacherConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub model: ModelChoice,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::Preset("teacher2d".into()),
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            max_epochs: 40,
            weight_decay: 0.0,
        }
    }
}

impl TeacherConfig {
    /// The equivalent ERM run configuration.
    pub fn as_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            name: None,
            method: Method::Erm,
            student: self.model.clone(),
            teacher: None,
            optimizer: self.optimizer.clone(),
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            distill: DistillConfig::default(),
            aug: Augmentor::default(),
            seed,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Record name; defaults to the method, suffixed by the augmentor.
    pub name: Option<String>,
    pub method: Method,
    pub student: ModelChoice,
    pub teacher: Option<TeacherSource>,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub distill: DistillConfig,
    pub aug: Augmentor,
    pub seed: u64,
    /// L2 penalty added to every gradient; zero unless configured.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            name: None,
            method: Method::Erm,
            student: ModelChoice::Preset("student2d".into()),
            teacher: None,
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            max_epochs: 40,
            distill: DistillConfig::default(),
            aug: Augmentor::default(),
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.method.needs_teacher(), &self.teacher) {
            (true, None) => bail!(Config, "method {} needs a teacher checkpoint or teacher training config", self.method.name()),
            (false, Some(_)) => bail!(Config, "method erm does not take a teacher"),
            _ => {}
        }
        if let Some(TeacherSource::Train(t)) = &self.teacher {
            t.as_train_config(self.seed).validate()?;
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            bail!(Config, "batch_size and max_epochs must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bail!(Config, "weight_decay must be non-negative, got {}", self.weight_decay);
        }
        self.optimizer.validate()?;
        self.distill.validate()?;
        self.aug.validate()
    }

    pub fn run_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        if self.method.uses_aug() {
            format!("{}-{}", self.method.name(), self.aug.kind.name())
        } else {
            self.method.name().to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunRole {
    Student,
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { epoch: usize, step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub role: RunRole,
    pub method: Method,
    pub seed: u64,
    pub config: TrainConfig,
    pub param_count: usize,
    pub epochs: Vec<EpochLog>,
    pub selected_epoch: Option<usize>,
    #[serde(rename = "final")]
    pub final_metrics: Option<Metrics>,
    /// The teacher's accuracies on the same roles, for gap reporting.
    pub teacher: Option<Metrics>,
    pub status: RunStatus,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// `root/<name>/<seed>.json`.
    pub fn path_in(&self, root: impl AsRef<Path>) -> PathBuf {
        root.as_ref().join(&self.name).join(format!("{}.json", self.seed))
    }

    /// `root/<name>/<seed>/ckpt/`.
    pub fn checkpoint_dir_in(&self, root: impl AsRef<Path>) -> PathBuf {
        root.as_ref().join(&self.name).join(self.seed.to_string()).join("ckpt")
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<PathBuf> {
        let path = self.path_in(root);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, self.to_json()?)?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Earliest index of the maximum; `None` for an empty sequence.
pub fn select_epoch(val_accuracy: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in val_accuracy.iter().enumerate() {
        if best.is_none_or(|b| v > val_accuracy[b]) {
            best = Some(i);
        }
    }
    best
}

/// What a finished run hands back: its record and the selected checkpoint.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: Network,
}

/// Per-step information passed to a training observer.
#[derive(Debug)]
pub struct StepInfo<'a> {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub terms: &'a LossTerms,
    pub graph: &'a Graph,
}

pub fn train(cfg: &TrainConfig, data: &LabeledDataset, split: &DomainSplit, teacher: Option<&Network>) -> Result<TrainOutcome> {
    train_observed(cfg, data, split, teacher, &mut |_| {})
}

/// [`train`] with a callback after every optimizer step.
pub fn train_observed(
    cfg: &TrainConfig,
    data: &LabeledDataset,
    split: &DomainSplit,
    teacher: Option<&Network>,
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    run(cfg, RunRole::Student, data, split, teacher, observer)
}

/// ERM training of a teacher architecture on the source split.
pub fn train_teacher(tcfg: &TeacherConfig, seed: u64, data: &LabeledDataset, split: &DomainSplit) -> Result<TrainOutcome> {
    let mut cfg = tcfg.as_train_config(seed);
    cfg.name = Some("teacher".into());
    cfg.validate()?;
    run(&cfg, RunRole::Teacher, data, split, None, &mut |_| {})
}

/// Loads or trains the teacher named by `cfg.teacher`. A trained teacher
/// comes back with its own record.
pub fn resolve_teacher(cfg: &TrainConfig, data: &LabeledDataset, split: &DomainSplit) -> Result<Option<(Network, Option<RunRecord>)>> {
    match &cfg.teacher {
        None => Ok(None),
        Some(TeacherSource::Checkpoint(dir)) => Ok(Some((Network::load(dir)?, None))),
        Some(TeacherSource::Train(t)) => {
            let out = train_teacher(t, cfg.seed, data, split)?;
            if !out.record.is_completed() {
                bail!(Data, "teacher training aborted: {:?}", out.record.status);
            }
            Ok(Some((out.model, Some(out.record))))
        }
    }
}

fn check_compatible(net: &Network, data: &LabeledDataset, what: &str) -> Result<()> {
    let spec = net.spec();
    if spec.num_classes != data.num_classes || spec.input_shape != data.input_shape() {
        bail!(
            Config,
            "{what} expects input {:?} with {} classes, data has {:?} with {}",
            spec.input_shape,
            spec.num_classes,
            data.input_shape(),
            data.num_classes
        );
    }
    Ok(())
}

fn run(
    cfg: &TrainConfig,
    role: RunRole,
    data: &LabeledDataset,
    split: &DomainSplit,
    teacher: Option<&Network>,
    observer: &mut dyn FnMut(&StepInfo),
) -> Result<TrainOutcome> {
    let started = Instant::now();
    let teacher = match (cfg.method.needs_teacher(), teacher) {
        (true, None) => bail!(Config, "method {} was given no teacher network", cfg.method.name()),
        (false, Some(_)) => bail!(Config, "method erm does not take a teacher"),
        (_, t) => t,
    };
    let train_rows = data.role_rows(split, Role::Train);
    if train_rows.is_empty() {
        bail!(Data, "split has no train examples for this dataset");
    }
    let val = data.role_subset(split, Role::Val)?;
    let test = data.role_subset(split, Role::Test)?;

    let spec = cfg.student.resolve(data.input_shape(), data.num_classes, cfg.seed)?;
    let mut net = Network::build(spec)?;
    let teacher_cache = match teacher {
        Some(t) => {
            check_compatible(t, data, "teacher")?;
            // the teacher is frozen, so its clean-input logits never change
            Some(t.logits(&data.inputs.select(&train_rows)?)?)
        }
        None => None,
    };
    let teacher_metrics = match teacher {
        Some(t) => Some(Metrics { id_accuracy: t.accuracy(&val.x, &val.y)?, ood_accuracy: t.accuracy(&test.x, &test.y)? }),
        None => None,
    };

    let lens: Vec<usize> = net.params().iter().map(|(_, t)| t.numel()).collect();
    let mut opt = cfg.optimizer.init(&lens);
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, Network)> = None;
    let mut status = RunStatus::Completed;

    'epochs: for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(epoch, cfg.max_epochs, cfg.optimizer.lr0())?;
        let mut order: Vec<usize> = (0..train_rows.len()).collect();
        order.shuffle(&mut rng::substream(cfg.seed, rng::SHUFFLE, epoch as u64));
        let mut aug_rng = rng::substream(cfg.seed, rng::AUG, epoch as u64);
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let rows: Vec<usize> = chunk.iter().map(|&p| train_rows[p]).collect();
            let x = data.inputs.select(&rows)?;
            let y: Vec<usize> = rows.iter().map(|&r| data.labels[r]).collect();
            let t_logits = match &teacher_cache {
                Some(c) => Some(c.select(chunk)?),
                None => None,
            };
            let mut g = Graph::new();
            let params = net.bind(&mut g, true);
            let stepped = (|| -> Result<(LossTerms, f64)> {
                let terms = match (cfg.method, teacher, &t_logits) {
                    (Method::Erm, _, _) => distill::erm_loss(&mut g, &net, &params, &x, &y, &cfg.distill)?,
                    (m, Some(t), Some(tl)) => {
                        let pair = Pair { student: &net, params: &params, teacher: t };
                        match m {
                            Method::Kd => distill::kd_loss_with_teacher(&mut g, &pair, &x, tl, &y, &cfg.distill)?,
                            Method::Okd => {
                                distill::okd_loss_with_teacher(&mut g, &pair, &x, tl, &y, &cfg.aug, &cfg.distill, &mut aug_rng)?
                            }
                            Method::KdAug => {
                                distill::kd_aug_loss_with_teacher(&mut g, &pair, &x, tl, &y, &cfg.aug, &cfg.distill, &mut aug_rng)?
                            }
                            Method::Erm => unreachable!(),
                        }
                    }
                    _ => unreachable!("teacher presence checked above"),
                };
                let loss = g.value(terms.total).item()?;
                g.backward(terms.total)?;
                Ok((terms, loss))
            })();
            let (terms, loss) = match stepped {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    let reason = format!("non-finite value produced by {what}");
                    warn!(epoch, step, %reason, "aborting run");
                    status = RunStatus::Aborted { epoch, step, reason };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            for (i, (p, v)) in net.params_mut().zip(&params).enumerate() {
                let grad = g.grad(*v).ok_or_else(|| Error::Usage("parameter received no gradient".into()))?;
                if cfg.weight_decay > 0.0 {
                    let decayed: Vec<f64> = grad.iter().zip(p.data()).map(|(g, w)| g + cfg.weight_decay * w).collect();
                    opt.step(i, p.data_mut(), &decayed, lr);
                } else {
                    opt.step(i, p.data_mut(), grad, lr);
                }
            }
            observer(&StepInfo { epoch, step, loss, terms: &terms, graph: &g });
            loss_sum += loss * chunk.len() as f64;
        }
        let val_accuracy = match net.accuracy(&val.x, &val.y) {
            Ok(a) => a,
            Err(Error::NonFinite(what)) => {
                status = RunStatus::Aborted { epoch, step: usize::MAX, reason: format!("non-finite value produced by {what}") };
                break;
            }
            Err(e) => return Err(e),
        };
        let train_loss = loss_sum / train_rows.len() as f64;
        info!(run = %cfg.run_name(), epoch, train_loss, val_accuracy, lr, "epoch");
        epochs.push(EpochLog { epoch, train_loss, val_accuracy, lr });
        if best.as_ref().is_none_or(|(b, _)| val_accuracy > epochs[*b].val_accuracy) {
            best = Some((epoch, net.clone()));
        }
    }

    let (selected_epoch, final_metrics, model) = match best {
        Some((e, m)) => {
            let ood = m.accuracy(&test.x, &test.y)?;
            (Some(e), Some(Metrics { id_accuracy: epochs[e].val_accuracy, ood_accuracy: ood }), m)
        }
        None => (None, None, net),
    };
    debug_assert_eq!(selected_epoch, select_epoch(&epochs.iter().map(|e| e.val_accuracy).collect::<Vec<_>>()));
    let record = RunRecord {
        name: match role {
            RunRole::Teacher => cfg.name.clone().unwrap_or_else(|| "teacher".into()),
            RunRole::Student => cfg.run_name(),
        },
        role,
        method: cfg.method,
        seed: cfg.seed,
        config: cfg.clone(),
        param_count: model.param_count(),
        epochs,
        selected_epoch,
        final_metrics,
        teacher: teacher_metrics,
        status,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { record, model })
}

/// Accuracy of `net` on each role of `split`.
pub fn evaluate(net: &Network, data: &LabeledDataset, split: &DomainSplit) -> Result<Vec<(Role, usize, f64)>> {
    check_compatible(net, data, "checkpoint")?;
    let mut out = Vec::new();
    for role in [Role::Train, Role::Val, Role::Test] {
        let rows = data.role_rows(split, role);
        if rows.is_empty() {
            continue;
        }
        let s = data.subset(&rows)?;
        out.push((role, rows.len(), net.accuracy(&s.x, &s.y)?));
    }
    Ok(out)
}

/// Hex SHA-256 over every parameter's `ODT1` bytes.
pub fn params_digest(net: &Network) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (name, t) in net.params() {
        h.update(name.as_bytes());
        h.update(t.to_odt1_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
