//! Disruptive augmentations used as the OOD data generator `A(·)`.
//!
//! Every augmentor returns a fresh batch of the input's shape and never
//! touches its input. Randomness comes only from the supplied RNG; each
//! sampling function has a `*_with` twin that takes the draws explicitly.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distill::cross_entropy;
use crate::error::{bail, Result};
use crate::nets::Network;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Identity,
    Cutmix,
    Mixup,
    CutmixMixup,
    Jigsaw,
    GaussianNoise,
    AdvGradient,
    WaveMixup,
    WaveNoise,
    WaveMask,
}

impl AugKind {
    pub const ALL: [AugKind; 10] = [
        AugKind::Identity,
        AugKind::Cutmix,
        AugKind::Mixup,
        AugKind::CutmixMixup,
        AugKind::Jigsaw,
        AugKind::GaussianNoise,
        AugKind::AdvGradient,
        AugKind::WaveMixup,
        AugKind::WaveNoise,
        AugKind::WaveMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugKind::Identity => "identity",
            AugKind::Cutmix => "cutmix",
            AugKind::Mixup => "mixup",
            AugKind::CutmixMixup => "cutmix_mixup",
            AugKind::Jigsaw => "jigsaw",
            AugKind::GaussianNoise => "gaussian_noise",
            AugKind::AdvGradient => "adv_gradient",
            AugKind::WaveMixup => "wave_mixup",
            AugKind::WaveNoise => "wave_noise",
            AugKind::WaveMask => "wave_mask",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match Self::ALL.iter().find(|k| k.name() == s) {
            Some(k) => Ok(*k),
            None => bail!(Config, "unknown augmentor {s:?}"),
        }
    }
}

/// A configured OOD data generator. Parameters not used by `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augmentor {
    pub kind: AugKind,
    /// Jigsaw patch count, a perfect square.
    pub k: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub mask_fraction: f64,
    pub beta_a: f64,
    pub beta_b: f64,
}

impl Default for Augmentor {
    fn default() -> Self {
        Self { kind: AugKind::Identity, k: 4, sigma: 0.1, epsilon: 0.03, mask_fraction: 0.2, beta_a: 1.0, beta_b: 1.0 }
    }
}

impl Augmentor {
    pub fn new(kind: AugKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma", self.sigma), ("epsilon", self.epsilon), ("mask_fraction", self.mask_fraction)] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(Parameter, "aug.{name} must be a non-negative number, got {v}");
            }
        }
        if !(self.beta_a > 0.0 && self.beta_b > 0.0 && self.beta_a.is_finite() && self.beta_b.is_finite()) {
            bail!(Parameter, "aug.beta_a and aug.beta_b must be positive, got {} and {}", self.beta_a, self.beta_b);
        }
        if self.mask_fraction > 1.0 {
            bail!(Parameter, "aug.mask_fraction must be at most 1, got {}", self.mask_fraction);
        }
        if self.kind == AugKind::Jigsaw && grid_side(self.k).is_none() {
            bail!(Parameter, "aug.k must be a positive perfect square, got {}", self.k);
        }
        Ok(())
    }

    /// Applies `A(·)` to `batch`. `labels` and `model` are only used by
    /// the adversarial-gradient generator.
    pub fn apply(&self, batch: &Tensor, labels: &[usize], model: Option<&Network>, rng: &mut Rng) -> Result<Tensor> {
        self.validate()?;
        let (a, b) = (self.beta_a, self.beta_b);
        match self.kind {
            AugKind::Identity => Ok(batch.clone()),
            AugKind::Mixup => mixup(batch, a, b, rng),
            AugKind::Cutmix => cutmix(batch, a, b, rng),
            AugKind::CutmixMixup => cutmix_mixup(batch, a, b, rng),
            AugKind::Jigsaw => jigsaw(batch, self.k, rng),
            AugKind::GaussianNoise => gaussian_noise(batch, self.sigma, rng),
            AugKind::AdvGradient => match model {
                Some(m) => adv_gradient(batch, labels, m, self.epsilon),
                None => bail!(Usage, "adv_gradient needs a model to differentiate"),
            },
            AugKind::WaveMixup => {
                require_rank(batch, 3, "wave_mixup")?;
                mixup(batch, a, b, rng)
            }
            AugKind::WaveNoise => {
                require_rank(batch, 3, "wave_noise")?;
                gaussian_noise(batch, self.sigma, rng)
            }
            AugKind::WaveMask => wave_mask(batch, self.mask_fraction, rng),
        }
    }
}

fn grid_side(k: usize) -> Option<usize> {
    let s = (k as f64).sqrt().round() as usize;
    (k > 0 && s * s == k).then_some(s)
}

fn require_rank(t: &Tensor, rank: usize, name: &str) -> Result<()> {
    if t.rank() != rank {
        bail!(Dimension, "{name}: expected a rank-{rank} batch, got {:?}", t.shape());
    }
    Ok(())
}

/// `t·a + (1 − t)·b` clamped to the segment between `a` and `b`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (t * a + (1.0 - t) * b).clamp(a.min(b), a.max(b))
}

pub fn sample_beta(n: usize, a: f64, b: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    let beta = Beta::new(a, b).map_err(|e| crate::Error::Parameter(format!("beta({a}, {b}): {e}")))?;
    Ok((0..n).map(|_| beta.sample(rng)).collect())
}

/// Uniformly random permutation of the batch; self-pairing is allowed.
pub fn sample_partners(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// `out_i = m_i·x_i + (1 − m_i)·x_{partner_i}`.
pub fn mixup_with(batch: &Tensor, weights: &[f64], partners: &[usize]) -> Result<Tensor> {
    let n = batch.batch_len();
    if batch.rank() < 2 || n < 2 {
        bail!(Dimension, "mixup needs a batch of at least 2 examples, got {:?}", batch.shape());
    }
    if weights.len() != n || partners.len() != n || partners.iter().any(|&p| p >= n) {
        bail!(Usage, "mixup: need {n} weights and partners in range");
    }
    let stride = batch.numel() / n;
    let x = batch.data();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..n {
        let (own, other) = (&x[i * stride..][..stride], &x[partners[i] * stride..][..stride]);
        out.extend(own.iter().zip(other).map(|(&a, &b)| lerp(a, b, weights[i])));
    }
    Tensor::new(batch.shape(), out)
}

pub fn mixup(batch: &Tensor, beta_a: f64, beta_b: f64, rng: &mut Rng) -> Result<Tensor> {
    let n = batch.batch_len();
    if batch.rank() < 2 || n < 2 {
        bail!(Dimension, "mixup needs a batch of at least 2 examples, got {:?}", batch.shape());
    }
    let w = sample_beta(n, beta_a, beta_b, rng)?;
    let p = sample_partners(n, rng);
    mixup_with(batch, &w, &p)
}

/// Rectangle `[y0, y0 + h) x [x0, x0 + w)` pasted from the partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl CutBox {
    /// Box of sides `round(H·√(1−m))`, `round(W·√(1−m))`, placed uniformly
    /// among the positions where it fits inside the image.
    pub fn sample(height: usize, width: usize, m: f64, rng: &mut Rng) -> Self {
        let side = (1.0 - m).clamp(0.0, 1.0).sqrt();
        let h = ((height as f64 * side).round() as usize).min(height);
        let w = ((width as f64 * side).round() as usize).min(width);
        let y0 = rng.random_range(0..=height - h);
        let x0 = rng.random_range(0..=width - w);
        Self { y0, x0, h, w }
    }

    pub fn area(&self) -> usize {
        self.h * self.w
    }
}

pub fn cutmix_with(batch: &Tensor, boxes: &[CutBox], partners: &[usize]) -> Result<Tensor> {
    require_rank(batch, 4, "cutmix")?;
    let s = batch.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if boxes.len() != n || partners.len() != n || partners.iter().any(|&p| p >= n) {
        bail!(Usage, "cutmix: need {n} boxes and partners in range");
    }
    if boxes.iter().any(|b| b.y0 + b.h > h || b.x0 + b.w > w) {
        bail!(Usage, "cutmix: box outside the {h}x{w} image");
    }
    let x = batch.data();
    let mut out = x.to_vec();
    let img = c * h * w;
    for (i, (b, &p)) in boxes.iter().zip(partners).enumerate() {
        for ch in 0..c {
            for yy in b.y0..b.y0 + b.h {
                let row = ch * h * w + yy * w;
                let (dst, src) = (i * img + row + b.x0, p * img + row + b.x0);
                out[dst..dst + b.w].copy_from_slice(&x[src..src + b.w]);
            }
        }
    }
    Tensor::new(s, out)
}

pub fn cutmix(batch: &Tensor, beta_a: f64, beta_b: f64, rng: &mut Rng) -> Result<Tensor> {
    require_rank(batch, 4, "cutmix")?;
    let s = batch.shape();
    let m = sample_beta(s[0], beta_a, beta_b, rng)?;
    let boxes: Vec<CutBox> = m.iter().map(|&m| CutBox::sample(s[2], s[3], m, rng)).collect();
    let p = sample_partners(s[0], rng);
    cutmix_with(batch, &boxes, &p)
}

/// `α_i·mixed_i + (1 − α_i)·cut_i`.
pub fn cutmix_mixup_with(mixed: &Tensor, cut: &Tensor, alphas: &[f64]) -> Result<Tensor> {
    if mixed.shape() != cut.shape() || alphas.len() != mixed.batch_len() {
        bail!(Usage, "cutmix_mixup: component batches or weights disagree");
    }
    let stride = mixed.numel() / mixed.batch_len();
    let out = mixed
        .data()
        .chunks(stride)
        .zip(cut.data().chunks(stride))
        .zip(alphas)
        .flat_map(|((m, c), &a)| m.iter().zip(c).map(move |(&m, &c)| lerp(m, c, a)))
        .collect();
    Tensor::new(mixed.shape(), out)
}

/// One mixup pass and one cutmix pass with independent partners, blended
/// by a Beta-distributed weight; each output mixes up to three examples.
pub fn cutmix_mixup(batch: &Tensor, beta_a: f64, beta_b: f64, rng: &mut Rng) -> Result<Tensor> {
    require_rank(batch, 4, "cutmix_mixup")?;
    let mixed = mixup(batch, beta_a, beta_b, rng)?;
    let cut = cutmix(batch, beta_a, beta_b, rng)?;
    let alphas = sample_beta(batch.batch_len(), beta_a, beta_b, rng)?;
    cutmix_mixup_with(&mixed, &cut, &alphas)
}

/// Output patch `j` of image `i` is input patch `perms[i][j]` on a √k x √k grid.
pub fn jigsaw_with(batch: &Tensor, k: usize, perms: &[Vec<usize>]) -> Result<Tensor> {
    require_rank(batch, 4, "jigsaw")?;
    let s = batch.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let Some(side) = grid_side(k) else { bail!(Parameter, "jigsaw: k={k} is not a perfect square") };
    if h % side != 0 || w % side != 0 {
        bail!(Dimension, "jigsaw: a {side}x{side} grid does not divide a {h}x{w} image");
    }
    if perms.len() != n || perms.iter().any(|p| !is_permutation(p, k)) {
        bail!(Usage, "jigsaw: need one permutation of {k} patches per image");
    }
    let (ph, pw) = (h / side, w / side);
    let x = batch.data();
    let mut out = vec![0.0; x.len()];
    let img = c * h * w;
    for (i, perm) in perms.iter().enumerate() {
        for (dst_patch, &src_patch) in perm.iter().enumerate() {
            let (dy, dx) = ((dst_patch / side) * ph, (dst_patch % side) * pw);
            let (sy, sx) = ((src_patch / side) * ph, (src_patch % side) * pw);
            for ch in 0..c {
                for r in 0..ph {
                    let dst = i * img + ch * h * w + (dy + r) * w + dx;
                    let src = i * img + ch * h * w + (sy + r) * w + sx;
                    out[dst..dst + pw].copy_from_slice(&x[src..src + pw]);
                }
            }
        }
    }
    Tensor::new(s, out)
}

fn is_permutation(p: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    p.len() == k && p.iter().all(|&j| j < k && !std::mem::replace(&mut seen[j], true))
}

pub fn jigsaw(batch: &Tensor, k: usize, rng: &mut Rng) -> Result<Tensor> {
    require_rank(batch, 4, "jigsaw")?;
    let perms: Vec<Vec<usize>> = (0..batch.batch_len()).map(|_| sample_partners(k, rng)).collect();
    jigsaw_with(batch, k, &perms)
}

/// `x + ε` with `ε ~ N(0, σ²)` i.i.d.
pub fn gaussian_noise(batch: &Tensor, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        bail!(Parameter, "noise sigma must be non-negative, got {sigma}");
    }
    if sigma == 0.0 {
        return Ok(batch.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| crate::Error::Parameter(e.to_string()))?;
    let data = batch.data().iter().map(|&v| v + normal.sample(rng)).collect();
    Tensor::new(batch.shape(), data)
}

/// Single-step sign-gradient ascent on `model`'s cross-entropy:
/// `x + ε·sign(∂CE(y, f(x))/∂x)`; zero gradient entries stay put.
pub fn adv_gradient(batch: &Tensor, labels: &[usize], model: &Network, epsilon: f64) -> Result<Tensor> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        bail!(Parameter, "adversarial epsilon must be non-negative, got {epsilon}");
    }
    if epsilon == 0.0 {
        return Ok(batch.clone());
    }
    let mut g = Graph::new();
    let params = model.bind(&mut g, false);
    let x = g.param(batch.clone());
    let z = model.forward(&mut g, &params, x)?;
    let loss = cross_entropy(&mut g, labels, z, 1.0)?;
    g.backward(loss)?;
    let Some(grad) = g.grad(x) else { bail!(Usage, "adv_gradient: no gradient reached the input") };
    let data = batch
        .data()
        .iter()
        .zip(grad)
        .map(|(&v, &d)| if d > 0.0 { v + epsilon } else if d < 0.0 { v - epsilon } else { v })
        .collect();
    Tensor::new(batch.shape(), data)
}

/// Zeroes `round(fraction·L)` consecutive samples starting at `starts[i]`
/// in every channel of waveform `i`.
pub fn wave_mask_with(batch: &Tensor, fraction: f64, starts: &[usize]) -> Result<Tensor> {
    require_rank(batch, 3, "wave_mask")?;
    let len = mask_len(batch, fraction)?;
    let s = batch.shape();
    let (n, c, l) = (s[0], s[1], s[2]);
    if starts.len() != n || starts.iter().any(|&st| st + len > l) {
        bail!(Usage, "wave_mask: need {n} segment starts within the waveform");
    }
    let mut out = batch.data().to_vec();
    for (i, &st) in starts.iter().enumerate() {
        for ch in 0..c {
            let base = (i * c + ch) * l + st;
            out[base..base + len].fill(0.0);
        }
    }
    Tensor::new(s, out)
}

fn mask_len(batch: &Tensor, fraction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        bail!(Parameter, "mask fraction must lie in [0, 1], got {fraction}");
    }
    Ok((fraction * batch.shape()[2] as f64).round() as usize)
}

pub fn wave_mask(batch: &Tensor, fraction: f64, rng: &mut Rng) -> Result<Tensor> {
    require_rank(batch, 3, "wave_mask")?;
    let len = mask_len(batch, fraction)?;
    let l = batch.shape()[2];
    let starts: Vec<usize> = (0..batch.batch_len()).map(|_| rng.random_range(0..=l - len)).collect();
    wave_mask_with(batch, fraction, &starts)
}
