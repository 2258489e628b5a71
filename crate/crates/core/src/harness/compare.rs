use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use tracing::warn;

use super::RunRecord;
use crate::error::{bail, Result};

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> Stat {
    let n = xs.len();
    if n == 0 {
        return Stat { mean: f64::NAN, std: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    Stat { mean, std }
}

/// One run name aggregated over seeds. Gaps are teacher minus student,
/// matched within each record, and present only when every record has a
/// teacher.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub name: String,
    pub runs: usize,
    pub id: Stat,
    pub ood: Stat,
    pub id_gap: Option<Stat>,
    pub ood_gap: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub groups: Vec<GroupSummary>,
}

/// Groups completed records by name. Aborted runs are skipped with a warning.
pub fn compare(records: &[RunRecord]) -> Result<Comparison> {
    let mut by: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert((r.name.as_str(), r.seed)) {
            bail!(Data, "two records for run {:?} seed {}", r.name, r.seed);
        }
        if r.final_metrics.is_none() || !r.is_completed() {
            warn!(name = %r.name, seed = r.seed, "skipping incomplete run");
            continue;
        }
        by.entry(&r.name).or_default().push(r);
    }
    if by.is_empty() {
        bail!(Data, "no completed run records to compare");
    }
    let groups = by
        .into_iter()
        .map(|(name, rs)| {
            let fin = |f: fn(&super::Metrics) -> f64| rs.iter().map(|r| f(r.final_metrics.as_ref().expect("filtered"))).collect::<Vec<_>>();
            let gap = |f: fn(&super::Metrics) -> f64| -> Option<Stat> {
                let v: Option<Vec<f64>> = rs.iter().map(|r| Some(f(r.teacher.as_ref()?) - f(r.final_metrics.as_ref()?))).collect();
                v.map(|v| mean_std(&v))
            };
            GroupSummary {
                name: name.to_string(),
                runs: rs.len(),
                id: mean_std(&fin(|m| m.id_accuracy)),
                ood: mean_std(&fin(|m| m.ood_accuracy)),
                id_gap: gap(|m| m.id_accuracy),
                ood_gap: gap(|m| m.ood_accuracy),
            }
        })
        .collect();
    Ok(Comparison { groups })
}

fn opt(s: Option<Stat>) -> (String, String) {
    match s {
        Some(s) => (format!("{:.6}", s.mean), format!("{:.6}", s.std)),
        None => (String::new(), String::new()),
    }
}

fn pct(s: Stat) -> String {
    format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std)
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

impl Comparison {
    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "name", "runs", "id_mean", "id_std", "ood_mean", "ood_std", "id_gap_mean", "id_gap_std", "ood_gap_mean", "ood_gap_std",
        ])?;
        for g in &self.groups {
            let (igm, igs) = opt(g.id_gap);
            let (ogm, ogs) = opt(g.ood_gap);
            w.write_record([
                g.name.clone(),
                g.runs.to_string(),
                format!("{:.6}", g.id.mean),
                format!("{:.6}", g.id.std),
                format!("{:.6}", g.ood.mean),
                format!("{:.6}", g.ood.std),
                igm,
                igs,
                ogm,
                ogs,
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Accuracies in percent, mean ± std over seeds.
    pub fn table(&self) -> String {
        let mut rows = vec![vec!["run".to_string(), "seeds".into(), "ID acc (%)".into(), "OOD acc (%)".into()]];
        rows.extend(self.groups.iter().map(|g| vec![g.name.clone(), g.runs.to_string(), pct(g.id), pct(g.ood)]));
        align(&rows)
    }

    /// Teacher − student gaps in percent for runs that had a teacher.
    pub fn gap_table(&self) -> String {
        let mut rows = vec![vec!["run".to_string(), "ID gap (%)".into(), "OOD gap (%)".into(), "OOD − ID (%)".into()]];
        for g in &self.groups {
            if let (Some(i), Some(o)) = (g.id_gap, g.ood_gap) {
                rows.push(vec![g.name.clone(), pct(i), pct(o), format!("{:.2}", 100.0 * (o.mean - i.mean))]);
            }
        }
        align(&rows)
    }
}
