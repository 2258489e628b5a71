//! Labeled example collections and their on-disk directory layout.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dosco::{DomainSplit, Role};
use crate::error::{bail, Result};
use crate::nets::InputKind;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";
pub const INPUTS: &str = "inputs.odt";
pub const SPLIT: &str = "split.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub kind: InputKind,
    pub ids: Vec<String>,
    /// `[N x ...]` inputs, one row per id.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub domains: Option<Vec<usize>>,
    pub num_classes: usize,
}

/// Inputs and labels of one role, in dataset order.
#[derive(Debug, Clone)]
pub struct Subset {
    pub ids: Vec<String>,
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: InputKind,
    num_classes: usize,
    ids: Vec<String>,
    class_labels: Vec<usize>,
    #[serde(default)]
    domain_labels: Option<Vec<usize>>,
    input_file: String,
    #[serde(default)]
    split_file: Option<String>,
}

impl LabeledDataset {
    pub fn new(
        kind: InputKind,
        ids: Vec<String>,
        inputs: Tensor,
        labels: Vec<usize>,
        domains: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = ids.len();
        if inputs.rank() < 2 || inputs.batch_len() != n || labels.len() != n {
            bail!(Data, "dataset rows disagree: {n} ids, inputs {:?}, {} labels", inputs.shape(), labels.len());
        }
        if domains.as_ref().is_some_and(|d| d.len() != n) {
            bail!(Data, "domain labels do not cover every example");
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            bail!(Data, "label {bad} out of range for {num_classes} classes");
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            bail!(Data, "duplicate example id {dup:?}");
        }
        Ok(Self { kind, ids, inputs, labels, domains, num_classes })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Per-example input shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Subset> {
        if rows.is_empty() {
            bail!(Data, "empty subset");
        }
        Ok(Subset {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            x: self.inputs.select(rows)?,
            y: rows.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Rows assigned to `role` by `split`, in dataset order.
    pub fn role_rows(&self, split: &DomainSplit, role: Role) -> Vec<usize> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(_, id)| split.get(id).is_some_and(|e| e.role == role))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn role_subset(&self, split: &DomainSplit, role: Role) -> Result<Subset> {
        let rows = self.role_rows(split, role);
        if rows.is_empty() {
            bail!(Data, "split has no {role} examples for this dataset");
        }
        self.subset(&rows)
    }

    pub fn row_of(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Writes manifest, `ODT1` inputs and (optionally) the split CSV into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, split: Option<&DomainSplit>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.inputs.save(dir.join(INPUTS))?;
        if let Some(split) = split {
            split.write_csv_path(dir.join(SPLIT))?;
        }
        let manifest = Manifest {
            kind: self.kind,
            num_classes: self.num_classes,
            ids: self.ids.clone(),
            class_labels: self.labels.clone(),
            domain_labels: self.domains.clone(),
            input_file: INPUTS.into(),
            split_file: split.map(|_| SPLIT.into()),
        };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, Option<DomainSplit>)> {
        let dir = dir.as_ref();
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
        let inputs = Tensor::load(dir.join(&m.input_file))?;
        let ds = Self::new(m.kind, m.ids, inputs, m.class_labels, m.domain_labels, m.num_classes)?;
        let split = match m.split_file {
            Some(f) => Some(DomainSplit::read_csv_path(dir.join(f))?),
            None => None,
        };
        Ok((ds, split))
    }
}
