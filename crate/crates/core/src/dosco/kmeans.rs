use rand::Rng as _;
use tracing::debug;

use crate::error::{bail, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Independent k-means++ restarts; the lowest objective wins.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iter: 100, restarts: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    /// `[K x D]`.
    pub centroids: Tensor,
    pub objective: f64,
    /// Objective after every Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check(features: &Tensor, k: usize) -> Result<(usize, usize)> {
    if features.rank() != 2 {
        bail!(Dimension, "kmeans expects [N x D] features, got {:?}", features.shape());
    }
    let (n, d) = (features.shape()[0], features.shape()[1]);
    if k == 0 {
        bail!(Parameter, "kmeans needs K >= 1");
    }
    if n < k {
        bail!(Data, "kmeans: {n} points cannot form {k} clusters");
    }
    Ok((n, d))
}

/// Sum of squared distances of every point to its cluster mean. Empty
/// labels contribute nothing.
pub fn partition_cost(features: &Tensor, assignments: &[usize], k: usize) -> f64 {
    let d = features.shape()[1];
    let centroids = means(features.data(), d, assignments, k);
    features
        .data()
        .chunks(d)
        .zip(assignments)
        .map(|(x, &a)| sq_dist(x, &centroids[a * d..][..d]))
        .sum()
}

fn means(points: &[f64], d: usize, assignments: &[usize], k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (x, &a) in points.chunks(d).zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a * d..][..d].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums[c * d..][..d].iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    sums
}

/// k-means++: first centre uniform, each next one drawn with probability
/// proportional to the squared distance to the nearest chosen centre.
pub fn plus_plus_seed(features: &Tensor, k: usize, rng: &mut Rng) -> Result<Tensor> {
    let (n, d) = check(features, k)?;
    let x = features.data();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = x.chunks(d).map(|p| sq_dist(p, &x[chosen[0] * d..][..d])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 && u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            // guard against rounding landing on a zero-weight tail point
            if nearest[pick] == 0.0 {
                pick = nearest.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // all remaining points coincide with a centre
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (w, p) in nearest.iter_mut().zip(x.chunks(d)) {
            *w = w.min(sq_dist(p, &x[next * d..][..d]));
        }
    }
    let data = chosen.iter().flat_map(|&i| x[i * d..][..d].to_vec()).collect();
    Tensor::new([k, d], data)
}

/// Lloyd iterations from the given centres until the assignments stop
/// changing or `max_iter` is reached. A cluster that empties is re-seeded
/// at the point farthest from its current centre.
pub fn lloyd(features: &Tensor, init: &Tensor, max_iter: usize) -> Result<KMeans> {
    let k = init.batch_len();
    let (n, d) = check(features, k)?;
    if init.shape() != [k, d] {
        bail!(Dimension, "initial centroids {:?} do not match {d}-dimensional features", init.shape());
    }
    let x = features.data();
    let mut c = init.data().to_vec();
    let mut assign = vec![usize::MAX; n];
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, p) in x.chunks(d).enumerate() {
            let cur = assign[i];
            let mut best = cur;
            let mut best_d = if cur < k { sq_dist(p, &c[cur * d..][..d]) } else { f64::INFINITY };
            for j in 0..k {
                let dj = sq_dist(p, &c[j * d..][..d]);
                if dj < best_d {
                    best = j;
                    best_d = dj;
                }
            }
            if best != cur {
                assign[i] = best;
                changed = true;
            }
        }
        reseed_empty(x, d, k, &mut c, &mut assign);
        if !changed && !history.is_empty() {
            break;
        }
        c = means(x, d, &assign, k);
        let obj: f64 = x.chunks(d).zip(&assign).map(|(p, &a)| sq_dist(p, &c[a * d..][..d])).sum();
        if let Some(&prev) = history.last() {
            assert!(obj <= prev + 1e-9 * (1.0 + prev.abs()), "k-means objective rose from {prev} to {obj}");
        }
        history.push(obj);
    }
    let objective = *history.last().expect("at least one iteration");
    Ok(KMeans { assignments: assign, centroids: Tensor::new([k, d], c)?, objective, history })
}

fn reseed_empty(x: &[f64], d: usize, k: usize, c: &mut [f64], assign: &mut [usize]) {
    loop {
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else { return };
        // farthest point among clusters that can spare one
        let far = x
            .chunks(d)
            .enumerate()
            .filter(|&(i, _)| counts[assign[i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &c[assign[i] * d..][..d])))
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((i, v)),
            });
        let Some((i, _)) = far else { return };
        debug!(cluster = empty, point = i, "re-seeding empty k-means cluster");
        c[empty * d..][..d].copy_from_slice(&x[i * d..][..d]);
        assign[i] = empty;
    }
}

/// Best of `opts.restarts` k-means++ seeded Lloyd runs.
pub fn kmeans_with(features: &Tensor, k: usize, opts: &KMeansOptions, rng: &mut Rng) -> Result<KMeans> {
    check(features, k)?;
    if opts.restarts == 0 {
        bail!(Parameter, "kmeans needs at least one restart");
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..opts.restarts {
        let init = plus_plus_seed(features, k, rng)?;
        let run = lloyd(features, &init, opts.max_iter)?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts > 0"))
}

/// Twenty-restart k-means on `[N x D]` features under `seed`.
pub fn kmeans(features: &Tensor, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let mut r = rng::stream(seed, rng::KMEANS);
    kmeans_with(features, k, &KMeansOptions { max_iter, ..KMeansOptions::default() }, &mut r)
}
