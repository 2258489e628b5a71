use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use okd_core::data::LabeledDataset;
use okd_core::dosco::{self, DomainSplit, FeatureTable, Role};
use okd_core::harness::{self, compare as summarize, Method, RunRecord, TeacherConfig, TeacherSource, TrainConfig};
use okd_core::nets::Network;
use okd_core::oodgen::AugKind;
use okd_core::rng;
use serde::Serialize;
use tracing::info;

use crate::config::{parse_seeds, CliConfig};
use crate::{CompareArgs, DoscoArgs, EvalArgs, SynthArgs, TrainArgs};

/// Environment variable capping how many seeds train concurrently.
pub const THREADS_ENV: &str = "OKD_FORGE_THREADS";

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec = CliConfig::load(a.config.as_deref())?.synth;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if spec.num_domains == 1 {
        bail!("num_domains=1 leaves every class with one domain in both train and test roles; a 50/50 domain split needs at least 2 domains");
    }
    let (ds, split) = dosco::generate_synthetic(&spec)?;
    ds.save(&a.out, Some(&split))?;
    fs::write(a.out.join("synth.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
    println!(
        "{}: {} examples, train {} / val {} / test {}",
        a.out.display(),
        ds.len(),
        split.count(Role::Train),
        split.count(Role::Val),
        split.count(Role::Test)
    );
    Ok(())
}

pub fn dosco(a: &DoscoArgs) -> Result<()> {
    let defaults = CliConfig::load(a.config.as_deref())?.dosco;
    let k = a.k.unwrap_or(defaults.k);
    let seed = a.seed.unwrap_or(defaults.seed);
    let mut table = FeatureTable::load(&a.features).with_context(|| format!("loading features {}", a.features.display()))?;
    if a.l2_normalize || defaults.l2_normalize {
        table = table.l2_normalized();
    }
    let mut split = dosco::build_domain_splits(&table, k, seed)?;
    if a.two_k || defaults.two_k {
        split = dosco::subsample_2k(&split, &mut rng::stream(seed, rng::SUBSAMPLE))?;
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    split.write_csv_path(&a.out)?;
    println!(
        "{}: K={k}, train {} / val {} / test {}",
        a.out.display(),
        split.count(Role::Train),
        split.count(Role::Val),
        split.count(Role::Test)
    );
    Ok(())
}

fn load_data(dir: &Path) -> Result<(LabeledDataset, DomainSplit)> {
    let (ds, split) = LabeledDataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    let Some(split) = split else { bail!("dataset {} has no split CSV", dir.display()) };
    Ok((ds, split))
}

fn thread_cap(jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// Runs `job` over `items` on at most `threads` workers, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, job: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new(items.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = job(item);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Trains the teacher for `seed` under `root/teacher/`, or reuses the
/// checkpoint a previous invocation left there for the same configuration.
fn teacher_for(tcfg: &TeacherConfig, seed: u64, data: &LabeledDataset, split: &DomainSplit, root: &Path) -> Result<(RunRecord, Network)> {
    let mut want = tcfg.as_train_config(seed);
    want.name = Some("teacher".into());
    let path = root.join("teacher").join(format!("{seed}.json"));
    if let Ok(rec) = RunRecord::load(&path) {
        if rec.config == want && rec.is_completed() {
            if let Ok(net) = Network::load(rec.checkpoint_dir_in(root)) {
                info!(seed, "reusing teacher checkpoint");
                return Ok((rec, net));
            }
        }
    }
    let out = harness::train_teacher(tcfg, seed, data, split)?;
    out.record.save(root)?;
    if !out.record.is_completed() {
        bail!("teacher training for seed {seed} aborted: {:?}", out.record.status);
    }
    out.model.save(out.record.checkpoint_dir_in(root))?;
    Ok((out.record, out.model))
}

fn run_seed(base: &TrainConfig, teacher_only: bool, seed: u64, data: &LabeledDataset, split: &DomainSplit, root: &Path) -> Result<(PathBuf, RunRecord)> {
    if teacher_only {
        let tcfg = match &base.teacher {
            Some(TeacherSource::Train(t)) => t.clone(),
            _ => TeacherConfig::default(),
        };
        let (rec, _) = teacher_for(&tcfg, seed, data, split, root)?;
        return Ok((rec.path_in(root), rec));
    }
    let cfg = TrainConfig { seed, ..base.clone() };
    cfg.validate()?;
    let teacher = match &cfg.teacher {
        None => None,
        Some(TeacherSource::Checkpoint(dir)) => Some(Network::load(dir).with_context(|| format!("loading teacher {}", dir.display()))?),
        Some(TeacherSource::Train(t)) => Some(teacher_for(t, seed, data, split, root)?.1),
    };
    let out = harness::train(&cfg, data, split, teacher.as_ref())?;
    let path = out.record.save(root)?;
    if out.record.is_completed() {
        out.model.save(out.record.checkpoint_dir_in(root))?;
    }
    Ok((path, out.record))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut base = CliConfig::load(a.config.as_deref())?.train;
    let teacher_only = a.method.as_deref() == Some("teacher");
    if let (Some(m), false) = (&a.method, teacher_only) {
        base.method = Method::parse(m)?;
    }
    if let Some(kind) = &a.aug {
        base.aug.kind = AugKind::parse(kind)?;
    }
    if let Some(k) = a.k {
        base.aug.k = k;
    }
    if a.name.is_some() {
        base.name = a.name.clone();
    }
    if let Some(dir) = &a.teacher {
        base.teacher = Some(TeacherSource::Checkpoint(dir.clone()));
    }
    if base.method == Method::Erm && !teacher_only && a.teacher.is_none() {
        // one config file serves every method; ERM ignores its teacher
        base.teacher = None;
    }
    let seeds = match (&a.seeds, a.seed) {
        (Some(s), _) => parse_seeds(s)?,
        (None, Some(s)) => vec![s],
        (None, None) => vec![base.seed],
    };
    let (data, split) = load_data(&a.data)?;
    let threads = thread_cap(seeds.len());
    let results = parallel_map(&seeds, threads, |&seed| run_seed(&base, teacher_only, seed, &data, &split, &a.out));

    let mut failed = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        let (path, rec) = r.with_context(|| format!("seed {seed}"))?;
        match rec.final_metrics.filter(|_| rec.is_completed()) {
            Some(m) => println!("{}: id {:.4} ood {:.4} (epoch {:?})", path.display(), m.id_accuracy, m.ood_accuracy, rec.selected_epoch),
            None => {
                eprintln!("{}: run aborted: {:?}", path.display(), rec.status);
                failed.push(*seed);
            }
        }
    }
    if !failed.is_empty() {
        bail!("{} run(s) aborted (seeds {failed:?}); see their records for the diagnostic", failed.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct RoleReport {
    role: Role,
    examples: usize,
    accuracy: f64,
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    param_count: usize,
    digest: String,
    roles: Vec<RoleReport>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let net = Network::load(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let (data, own_split) = LabeledDataset::load(&a.data).with_context(|| format!("loading dataset {}", a.data.display()))?;
    let split = match (&a.split, own_split) {
        (Some(p), _) => DomainSplit::read_csv_path(p)?,
        (None, Some(s)) => s,
        (None, None) => bail!("dataset {} has no split CSV; pass --split", a.data.display()),
    };
    let roles = harness::evaluate(&net, &data, &split)?
        .into_iter()
        .map(|(role, examples, accuracy)| RoleReport { role, examples, accuracy })
        .collect();
    let report = EvalReport { checkpoint: a.checkpoint.clone(), param_count: net.param_count(), digest: harness::params_digest(&net), roles };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(out) = &a.out {
        fs::write(out, &json)?;
    }
    print!("{json}");
    Ok(())
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let mut paths: Vec<PathBuf> = glob::glob(&a.runs).with_context(|| format!("bad glob {:?}", a.runs))?.collect::<Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no run records match {:?}", a.runs);
    }
    let records = paths
        .iter()
        .map(|p| RunRecord::load(p).with_context(|| format!("reading run record {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let report = summarize(&records)?;
    print!("{}\n{}", report.table(), report.gap_table());
    if let Some(out) = &a.out {
        fs::write(out, report.to_csv()?)?;
    }
    Ok(())
}
