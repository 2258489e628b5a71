use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use okd_core::data::LabeledDataset;
use okd_core::dosco::{generate_synthetic, DomainSplit, SyntheticDGSpec};
use okd_core::harness::{train, train_teacher, Method, OptimizerConfig, RunRecord, TeacherConfig, TeacherSource, TrainConfig};
use okd_core::nets::Network;
use okd_core::oodgen::{AugKind, Augmentor};

use crate::Outcome;

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// The benchmark protocol shared by every directional criterion.
pub struct Protocol {
    pub epochs: usize,
    pub batch_size: usize,
    pub teacher_lr: f64,
    pub erm_lr: f64,
    pub distill_lr: f64,
}

pub const PROTOCOL: Protocol = Protocol { epochs: 30, batch_size: 32, teacher_lr: 0.05, erm_lr: 0.2, distill_lr: 0.3 };

fn sgd(lr0: f64) -> OptimizerConfig {
    OptimizerConfig::SgdMomentum { lr0, momentum: 0.9 }
}

pub fn teacher_config() -> TeacherConfig {
    TeacherConfig { max_epochs: PROTOCOL.epochs, batch_size: PROTOCOL.batch_size, optimizer: sgd(PROTOCOL.teacher_lr), ..TeacherConfig::default() }
}

/// A student run of `method` with augmentor `kind` (jigsaw patch count `k`).
pub fn student_config(method: Method, kind: AugKind, k: usize, seed: u64) -> TrainConfig {
    let lr = if method == Method::Erm { PROTOCOL.erm_lr } else { PROTOCOL.distill_lr };
    TrainConfig {
        method,
        seed,
        max_epochs: PROTOCOL.epochs,
        batch_size: PROTOCOL.batch_size,
        optimizer: sgd(lr),
        teacher: method.needs_teacher().then(|| TeacherSource::Train(teacher_config())),
        aug: Augmentor { k, ..Augmentor::new(kind) },
        ..TrainConfig::default()
    }
}

/// Arms of the benchmark, keyed by run name.
fn arms() -> Vec<(&'static str, Method, AugKind, usize)> {
    vec![
        ("erm", Method::Erm, AugKind::Identity, 4),
        ("kd", Method::Kd, AugKind::Identity, 4),
        ("okd_cutmix_mixup", Method::Okd, AugKind::CutmixMixup, 4),
        ("kd_aug_cutmix_mixup", Method::KdAug, AugKind::CutmixMixup, 4),
        ("okd_jigsaw_4", Method::Okd, AugKind::Jigsaw, 4),
        ("okd_jigsaw_16", Method::Okd, AugKind::Jigsaw, 16),
        ("okd_jigsaw_64", Method::Okd, AugKind::Jigsaw, 64),
    ]
}

/// Arms whose cost counts towards the main comparison's time budget.
const MAIN_ARMS: [&str; 4] = ["teacher", "erm", "kd", "okd_cutmix_mixup"];
const MAIN_BUDGET_SECS: f64 = 20.0 * 60.0;

#[derive(Default)]
pub struct Bench {
    /// Per arm, per seed: (id, ood) accuracy.
    acc: BTreeMap<String, Vec<(f64, f64)>>,
    secs: BTreeMap<String, f64>,
    errors: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean with the n − 1 sample deviation.
fn std_err(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
    (var / xs.len() as f64).sqrt()
}

impl Bench {
    fn push(&mut self, arm: &str, record: &RunRecord, secs: f64) {
        *self.secs.entry(arm.into()).or_default() += secs;
        match record.final_metrics.filter(|_| record.is_completed()) {
            Some(m) => self.acc.entry(arm.into()).or_default().push((m.id_accuracy, m.ood_accuracy)),
            None => self.errors.push(format!("{arm} seed {}: {:?}", record.seed, record.status)),
        }
    }

    fn complete(&self, arm: &str) -> Option<&[(f64, f64)]> {
        self.acc.get(arm).map(Vec::as_slice).filter(|v| v.len() == SEEDS.len())
    }

    fn ood(&self, arm: &str) -> Option<Vec<f64>> {
        self.complete(arm).map(|v| v.iter().map(|p| p.1).collect())
    }

    fn id(&self, arm: &str) -> Option<Vec<f64>> {
        self.complete(arm).map(|v| v.iter().map(|p| p.0).collect())
    }

    pub fn run() -> Self {
        let mut bench = Bench::default();
        for seed in SEEDS {
            if let Err(e) = bench.run_seed(seed) {
                bench.errors.push(format!("seed {seed}: {e}"));
            }
        }
        bench
    }

    fn run_seed(&mut self, seed: u64) -> okd_core::Result<()> {
        let (data, split) = generate_synthetic(&SyntheticDGSpec { seed, ..SyntheticDGSpec::default() })?;
        let t0 = Instant::now();
        let teacher = train_teacher(&teacher_config(), seed, &data, &split)?;
        self.push("teacher", &teacher.record, t0.elapsed().as_secs_f64());
        for (arm, method, kind, k) in arms() {
            self.run_arm(arm, &student_config(method, kind, k, seed), &data, &split, &teacher.model)?;
        }
        Ok(())
    }

    fn run_arm(&mut self, arm: &str, cfg: &TrainConfig, data: &LabeledDataset, split: &DomainSplit, teacher: &Network) -> okd_core::Result<()> {
        let t0 = Instant::now();
        let out = train(cfg, data, split, cfg.method.needs_teacher().then_some(teacher))?;
        self.push(arm, &out.record, t0.elapsed().as_secs_f64());
        Ok(())
    }

    /// Mean ID and OOD accuracy per arm, for the log.
    pub fn table(&self) -> String {
        let mut s = String::new();
        for (arm, v) in &self.acc {
            let (id, ood): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            s += &format!(
                "      {arm:<22} n={} id {:.4} ood {:.4} (se {:.4})  {:.0}s  per seed ood [{}]\n",
                v.len(),
                mean(&id),
                mean(&ood),
                if v.len() > 1 { std_err(&ood) } else { f64::NAN },
                self.secs[arm],
                ood.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ")
            );
        }
        for e in &self.errors {
            s += &format!("      error: {e}\n");
        }
        s
    }

    fn missing(&self, arms: &[&str]) -> Option<Outcome> {
        let absent: Vec<&str> = arms.iter().copied().filter(|a| self.complete(a).is_none()).collect();
        (!absent.is_empty()).then(|| Outcome::fail(format!("runs missing for {absent:?}: {:?}", self.errors)))
    }

    pub fn ordering(&self) -> Outcome {
        if let Some(o) = self.missing(&MAIN_ARMS) {
            return o;
        }
        let (erm, kd, okd) = (mean(&self.ood("erm").unwrap()), mean(&self.ood("kd").unwrap()), mean(&self.ood("okd_cutmix_mixup").unwrap()));
        let secs: f64 = MAIN_ARMS.iter().map(|a| self.secs[*a]).sum();
        let detail = format!(
            "mean OOD okd {:.2} / kd {:.2} / erm {:.2}; margins {:+.2} and {:+.2} points (need >= 1); {secs:.0}s (budget {MAIN_BUDGET_SECS:.0}s)",
            100.0 * okd,
            100.0 * kd,
            100.0 * erm,
            100.0 * (okd - kd),
            100.0 * (kd - erm)
        );
        let pass = okd - kd >= 0.01 && kd - erm >= 0.01 && secs < MAIN_BUDGET_SECS;
        Outcome::new(pass, detail)
    }

    pub fn gaps(&self) -> Outcome {
        if let Some(o) = self.missing(&["teacher", "erm", "kd"]) {
            return o;
        }
        let (t_id, t_ood) = (mean(&self.id("teacher").unwrap()), mean(&self.ood("teacher").unwrap()));
        let mut pass = true;
        let mut parts = Vec::new();
        for arm in ["erm", "kd"] {
            let (id_gap, ood_gap) = (t_id - mean(&self.id(arm).unwrap()), t_ood - mean(&self.ood(arm).unwrap()));
            pass &= ood_gap > id_gap;
            parts.push(format!("{arm}: OOD gap {:.2} vs ID gap {:.2} points", 100.0 * ood_gap, 100.0 * id_gap));
        }
        Outcome::new(pass, parts.join("; "))
    }

    pub fn kd_aug_control(&self) -> Outcome {
        if let Some(o) = self.missing(&["kd", "kd_aug_cutmix_mixup", "okd_cutmix_mixup"]) {
            return o;
        }
        let aug = self.ood("kd_aug_cutmix_mixup").unwrap();
        let (kd, mid, okd, se) = (mean(&self.ood("kd").unwrap()), mean(&aug), mean(&self.ood("okd_cutmix_mixup").unwrap()), std_err(&aug));
        let between = kd - se <= mid && mid <= okd + se;
        let detail = format!(
            "mean OOD okd {:.2} / kd_aug {:.2} (se {:.2}) / kd {:.2}; okd {} kd; kd_aug {} within one standard error",
            100.0 * okd,
            100.0 * mid,
            100.0 * se,
            100.0 * kd,
            if okd > kd { "above" } else { "not above (hard)" },
            if between { "sits between" } else { "does not sit between (soft)" }
        );
        Outcome::new(okd > kd, detail)
    }

    pub fn jigsaw(&self) -> Outcome {
        let arms = ["okd_jigsaw_4", "okd_jigsaw_16", "okd_jigsaw_64"];
        if let Some(o) = self.missing(&arms) {
            return o;
        }
        let [k4, k16, k64] = arms.map(|a| mean(&self.ood(a).unwrap()));
        let monotone = k4 >= k16 && k16 >= k64;
        let detail = format!(
            "mean OOD k=4 {:.2} / k=16 {:.2} / k=64 {:.2}; {}",
            100.0 * k4,
            100.0 * k16,
            100.0 * k64,
            if monotone { "non-increasing" } else { "not monotone (soft)" }
        );
        Outcome::new(k64 <= k4, detail)
    }
}

/// Record text with the wall-clock line removed.
fn record_without_clock(path: &Path) -> std::io::Result<String> {
    Ok(fs::read_to_string(path)?.lines().filter(|l| !l.trim_start().starts_with("\"wall_clock_secs\"")).collect::<Vec<_>>().join("\n"))
}

fn forge(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_okd-forge")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("okd-forge {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

pub fn determinism() -> Outcome {
    match repeated_train() {
        Ok(detail) => Outcome::pass(detail),
        Err(e) => Outcome::fail(e),
    }
}

fn repeated_train() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let synth = SyntheticDGSpec { samples_per_cell: 8, image_side: 16, ..SyntheticDGSpec::default() };
    let teacher = TeacherConfig { max_epochs: 2, ..teacher_config() };
    let train = TrainConfig { max_epochs: 2, teacher: Some(TeacherSource::Train(teacher)), ..TrainConfig::default() };
    let config = serde_json::json!({ "synth": synth, "train": train });
    let config_path = root.join("config.json");
    fs::write(&config_path, config.to_string()).map_err(|e| e.to_string())?;
    let (config_arg, data) = (config_path.to_str().unwrap(), root.join("data"));
    let data_arg = data.to_str().unwrap();
    forge(&["synth", "--config", config_arg, "--out", data_arg])?;

    let runs = [("erm", "identity"), ("kd", "identity"), ("kd_aug", "cutmix_mixup"), ("okd", "cutmix_mixup"), ("okd", "adv_gradient")];
    let mut compared = 0;
    for (i, (method, aug)) in runs.iter().enumerate() {
        let seed = (7 + i).to_string();
        let name = format!("{method}_{aug}");
        let outs = [root.join("a"), root.join("b")];
        for out in &outs {
            let args = ["train", "--config", config_arg, "--data", data_arg, "--method", method, "--aug", aug, "--name", &name, "--seed", &seed, "--out"];
            forge(&[&args[..], &[out.to_str().unwrap()]].concat())?;
        }
        let mut files = vec![format!("{name}/{seed}.json")];
        if *method != "erm" {
            files.push(format!("teacher/{seed}.json"));
        }
        for f in files {
            let [a, b] = [&outs[0], &outs[1]].map(|o| record_without_clock(&o.join(&f)));
            let (a, b) = (a.map_err(|e| format!("{f}: {e}"))?, b.map_err(|e| format!("{f}: {e}"))?);
            if a != b {
                return Err(format!("{f} differs between repeated runs"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} run records byte-identical across repeated `train` invocations (wall clock excluded)"))
}
