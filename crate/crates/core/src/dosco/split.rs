use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::Deserialize;
use tracing::info;

use super::kmeans::{kmeans_with, KMeansOptions};
use super::{DomainSplit, Entry, Role};
use crate::error::{bail, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Share of train-role examples held out for validation (the 2:8 ratio).
pub const VAL_FRACTION: f64 = 0.2;
pub const TWO_K_TRAIN: usize = 1600;
pub const TWO_K_VAL: usize = 400;

/// Precomputed context embeddings, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    /// `[N x D]`.
    pub features: Tensor,
    pub class_labels: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureManifest {
    ids: Vec<String>,
    class_labels: Vec<usize>,
    feature_file: String,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, features: Tensor, class_labels: Vec<usize>) -> Result<Self> {
        if features.rank() != 2 {
            bail!(Dimension, "features must be [N x D], got {:?}", features.shape());
        }
        let n = features.batch_len();
        if ids.len() != n || class_labels.len() != n {
            bail!(Data, "feature table rows disagree: {} ids, {n} feature rows, {} labels", ids.len(), class_labels.len());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            bail!(Data, "duplicate example id {dup:?}");
        }
        Ok(Self { ids, features, class_labels })
    }

    /// Reads a JSON manifest `{ids, class_labels, feature_file}`; the feature
    /// file path is relative to the manifest's directory.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let m: FeatureManifest = serde_json::from_str(&fs::read_to_string(manifest)?)?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        Self::new(m.ids, Tensor::load(base.join(&m.feature_file))?, m.class_labels)
    }

    /// Scales every row to unit L2 norm; zero rows are left as they are.
    pub fn l2_normalized(mut self) -> Self {
        let d = self.features.shape()[1];
        for row in self.features.data_mut().chunks_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        self
    }

    fn rows_by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut by: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in self.class_labels.iter().enumerate() {
            by.entry(c).or_default().push(i);
        }
        by
    }
}

/// Per class: cluster into `K` domains, give the first `ceil(K/2)` shuffled
/// domains to training and the rest to test, then move a uniform 20% of all
/// train-role examples to validation.
pub fn build_domain_splits(table: &FeatureTable, k: usize, split_seed: u64) -> Result<DomainSplit> {
    build_domain_splits_with(table, k, split_seed, &KMeansOptions::default())
}

pub fn build_domain_splits_with(table: &FeatureTable, k: usize, split_seed: u64, opts: &KMeansOptions) -> Result<DomainSplit> {
    if k < 2 {
        bail!(Parameter, "a train/test domain split needs K >= 2, got {k}");
    }
    let mut split = DomainSplit::new(k, split_seed);
    for (class, rows) in table.rows_by_class() {
        if rows.len() < 2 {
            bail!(Data, "class {class} has {} example(s); at least 2 are needed", rows.len());
        }
        let kc = k.min(rows.len());
        if kc < k {
            info!(class, examples = rows.len(), k = kc, "reducing K to the class size");
        }
        let feats = table.features.select(&rows)?;
        let mut krng = rng::substream(split_seed, rng::KMEANS, class as u64);
        let km = kmeans_with(&feats, kc, opts, &mut krng)?;
        let mut domains: Vec<usize> = (0..kc).collect();
        domains.shuffle(&mut rng::substream(split_seed, rng::SPLIT, class as u64));
        let n_train = kc.div_ceil(2);
        for (&row, &domain) in rows.iter().zip(&km.assignments) {
            let role = if domains[..n_train].contains(&domain) { Role::Train } else { Role::Test };
            split.insert(table.ids[row].clone(), Entry { class, domain, role })?;
        }
    }
    carve_val(&mut split, &mut rng::substream(split_seed, rng::SPLIT, u64::MAX));
    Ok(split)
}

/// Moves `round(0.2 · n_train)` uniformly drawn train-role examples to val.
pub(crate) fn carve_val(split: &mut DomainSplit, rng: &mut Rng) {
    let train: Vec<String> = split.ids_with(Role::Train).into_iter().map(String::from).collect();
    let n_val = (VAL_FRACTION * train.len() as f64).round() as usize;
    for i in index::sample(rng, train.len(), n_val) {
        split.set_role(&train[i], Role::Val);
    }
}

/// Largest-remainder apportionment of `target` across groups of the given sizes.
fn apportion(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut quota: Vec<usize> = sizes.iter().map(|&s| s * target / total).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // remainder numerators, larger first, lower index on ties
    order.sort_by_key(|&i| (std::cmp::Reverse(sizes[i] * target % total), i));
    let short = target - quota.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        quota[i] += 1;
    }
    quota
}

/// Uniform class-stratified sample of `target` ids.
fn stratified(split: &DomainSplit, ids: &[String], target: usize, rng: &mut Rng) -> Vec<String> {
    let mut by: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for id in ids {
        by.entry(split.get(id).expect("id from split").class).or_default().push(id);
    }
    let sizes: Vec<usize> = by.values().map(Vec::len).collect();
    let quota = apportion(&sizes, target);
    by.values()
        .zip(quota)
        .flat_map(|(members, q)| index::sample(rng, members.len(), q).into_iter().map(|i| members[i].clone()).collect::<Vec<_>>())
        .collect()
}

/// Subsamples the train and val roles down to exactly 1600 and 400
/// examples, stratified by class. Test is untouched; dropped examples leave
/// the split. A pool smaller than 2000 is kept whole and re-split 4:1.
pub fn subsample_2k(split: &DomainSplit, rng: &mut Rng) -> Result<DomainSplit> {
    let owned = |role| split.ids_with(role).into_iter().map(String::from).collect::<Vec<_>>();
    let (train, val) = (owned(Role::Train), owned(Role::Val));
    if train.is_empty() {
        bail!(Data, "2k subsampling needs a non-empty train pool");
    }
    let pool_len = train.len() + val.len();
    let mut out = split.clone();
    if train.len() >= TWO_K_TRAIN && val.len() >= TWO_K_VAL {
        let keep: std::collections::HashSet<String> =
            stratified(split, &train, TWO_K_TRAIN, rng).into_iter().chain(stratified(split, &val, TWO_K_VAL, rng)).collect();
        out.retain(|id, e| e.role == Role::Test || keep.contains(id));
    } else if pool_len >= TWO_K_TRAIN + TWO_K_VAL {
        info!(train = train.len(), val = val.len(), "role counts too small separately; drawing 2000 from the pooled roles");
        let pool: Vec<String> = train.into_iter().chain(val).collect();
        let kept = stratified(split, &pool, TWO_K_TRAIN + TWO_K_VAL, rng);
        let val_ids = stratified(split, &kept, TWO_K_VAL, rng);
        let kept: std::collections::HashSet<String> = kept.into_iter().collect();
        out.retain(|id, e| e.role == Role::Test || kept.contains(id));
        for id in &kept {
            out.set_role(id, Role::Train);
        }
        for id in &val_ids {
            out.set_role(id, Role::Val);
        }
    } else {
        info!(pool = pool_len, "pool below 2000; keeping every example and re-splitting 4:1");
        let pool: Vec<String> = train.into_iter().chain(val).collect();
        for id in &pool {
            out.set_role(id, Role::Train);
        }
        let n_val = (VAL_FRACTION * pool_len as f64).round() as usize;
        for id in stratified(split, &pool, n_val, rng) {
            out.set_role(&id, Role::Val);
        }
    }
    Ok(out)
}
