//! Domain-shifted split synthesis.
//!
//! Domains are discovered by clustering per-class context embeddings; half
//! of each class's domains become the training source and the other half is
//! held out as the unseen (OOD) test target.

mod kmeans;
mod split;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub use kmeans::{kmeans, kmeans_with, lloyd, partition_cost, plus_plus_seed, KMeans, KMeansOptions};
pub use split::{build_domain_splits, build_domain_splits_with, subsample_2k, FeatureTable, VAL_FRACTION, TWO_K_TRAIN, TWO_K_VAL};
pub use synth::{example_id, generate_synthetic, Modality, SyntheticDGSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub class: usize,
    pub domain: usize,
    pub role: Role,
}

#[derive(Serialize, Deserialize)]
struct Row {
    id: String,
    class: usize,
    domain: usize,
    role: Role,
}

/// Example id → (class, domain, role), ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSplit {
    pub k: usize,
    pub split_seed: u64,
    entries: BTreeMap<String, Entry>,
}

impl DomainSplit {
    pub fn new(k: usize, split_seed: u64) -> Self {
        Self { k, split_seed, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: impl Into<String>, entry: Entry) -> Result<()> {
        let id = id.into();
        if entry.domain >= self.k {
            bail!(Data, "example {id:?}: domain {} outside [0, {})", entry.domain, self.k);
        }
        if self.entries.insert(id.clone(), entry).is_some() {
            bail!(Data, "duplicate example id {id:?} in split");
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Entry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn count(&self, role: Role) -> usize {
        self.entries.values().filter(|e| e.role == role).count()
    }

    pub fn ids_with(&self, role: Role) -> Vec<&str> {
        self.iter().filter(|(_, e)| e.role == role).map(|(id, _)| id).collect()
    }

    /// Domains holding at least one example of `class` in `role`.
    pub fn domains_of(&self, class: usize, role: Role) -> Vec<usize> {
        let mut d: Vec<usize> = self.entries.values().filter(|e| e.class == class && e.role == role).map(|e| e.domain).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.entries.values().map(|e| e.class).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Checks that train/val domains and test domains never overlap within a class.
    pub fn check_disjoint(&self) -> Result<()> {
        for c in self.classes() {
            let test = self.domains_of(c, Role::Test);
            for role in [Role::Train, Role::Val] {
                if let Some(d) = self.domains_of(c, role).into_iter().find(|d| test.binary_search(d).is_ok()) {
                    bail!(Data, "class {c}: domain {d} is in both {role} and test roles");
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (id, e) in &self.entries {
            out.serialize(Row { id: id.clone(), class: e.class, domain: e.domain, role: e.role })?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the `id,class,domain,role` CSV. The CSV does not carry the split
    /// seed, so it comes back as 0; `k` is one past the largest domain id.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rows = Vec::new();
        let mut rdr = csv::Reader::from_reader(r);
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["id", "class", "domain", "role"] {
            bail!(Format, "split CSV header must be id,class,domain,role");
        }
        for row in rdr.deserialize() {
            let row: Row = row?;
            rows.push(row);
        }
        let k = rows.iter().map(|r| r.domain + 1).max().unwrap_or(0);
        let mut split = Self::new(k, 0);
        for r in rows {
            split.insert(r.id, Entry { class: r.class, domain: r.domain, role: r.role })?;
        }
        Ok(split)
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub(crate) fn retain(&mut self, mut keep: impl FnMut(&str, &Entry) -> bool) {
        self.entries.retain(|id, e| keep(id, e));
    }

    pub(crate) fn set_role(&mut self, id: &str, role: Role) {
        if let Some(e) = self.entries.get_mut(id) {
            e.role = role;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
    pub gap: f64,
}

/// ID accuracy on the val role, OOD accuracy on the test role.
pub fn evaluate_split_report(split: &DomainSplit, predictions: &HashMap<String, usize>) -> Result<SplitReport> {
    let acc = |role: Role| -> Result<f64> {
        let (mut hit, mut n) = (0usize, 0usize);
        for (id, e) in split.iter().filter(|(_, e)| e.role == role) {
            let Some(&p) = predictions.get(id) else { bail!(Data, "no prediction for {role} example {id:?}") };
            hit += usize::from(p == e.class);
            n += 1;
        }
        if n == 0 {
            bail!(Data, "split has no {role} examples");
        }
        Ok(hit as f64 / n as f64)
    };
    let (id_accuracy, ood_accuracy) = (acc(Role::Val)?, acc(Role::Test)?);
    Ok(SplitReport { id_accuracy, ood_accuracy, gap: id_accuracy - ood_accuracy })
}
