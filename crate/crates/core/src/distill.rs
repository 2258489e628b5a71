//! Losses: cross-entropy, temperature-softened KL, KD, OKD and the KD+Aug control.
//!
//! With student `S`, teacher `T`, balancing weight `λ` and temperatures
//! `π_ce`, `π_kl`:
//!
//! ```text
//! KD     = λ·CE(y, S(x); π_ce) + (1−λ)·KL(S(x), T(x); π_kl)
//! OKD    = KD + (1−λ)·KL(S(A(x)), T(A(x)); π_kl)
//! KD+Aug = λ·CE(y, S(A(x)); π_ce) + (1−λ)·KL(S(x), T(x); π_kl)
//! ```
//!
//! `KL(S, T)` uses the teacher distribution as the reference measure,
//! `Σ p_T (ln p_T − ln p_S)`, with no `π²` rescaling. Teacher logits enter
//! the tape as constants, so gradients reach student parameters only.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nets::Network;
use crate::oodgen::Augmentor;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub lambda: f64,
    pub pi_ce: f64,
    pub pi_kl: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { lambda: 0.1, pi_ce: 1.0, pi_kl: 4.0 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            bail!(Parameter, "lambda must lie in (0, 1], got {}", self.lambda);
        }
        if !(self.pi_ce > 0.0 && self.pi_kl > 0.0) {
            bail!(Parameter, "temperatures must be positive, got pi_ce={} pi_kl={}", self.pi_ce, self.pi_kl);
        }
        Ok(())
    }
}

/// Mean over the batch of `−ln softmax(logits / π)[i, y_i]`.
pub fn cross_entropy(g: &mut Graph, labels: &[usize], logits: Var, pi: f64) -> Result<Var> {
    let logp = g.log_softmax_temp(logits, pi)?;
    let picked = g.gather(logp, labels)?;
    let mean = g.mean(picked)?;
    g.scale(mean, -1.0)
}

/// `KL(p_student, p_teacher)` on row-stochastic inputs.
pub fn kl_div(g: &mut Graph, p_student: Var, p_teacher: Var) -> Result<Var> {
    g.kl_div(p_student, p_teacher)
}

/// KL between softened student logits on the tape and constant teacher logits.
pub fn softened_kl(g: &mut Graph, student_logits: Var, teacher_logits: &Tensor, pi: f64) -> Result<Var> {
    let ps = g.softmax_temp(student_logits, pi)?;
    let t = g.constant(teacher_logits.clone());
    let pt = g.softmax_temp(t, pi)?;
    g.kl_div(ps, pt)
}

/// A trainable student bound to a tape, and its frozen teacher.
pub struct Pair<'a> {
    pub student: &'a Network,
    pub params: &'a [Var],
    pub teacher: &'a Network,
}

/// Individual terms of a distillation loss. Weighted terms sum to `total`.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    pub kd_kl: Option<Var>,
    pub ood_kl: Option<Var>,
    /// `A(x)`, when the loss drew one.
    pub augmented: Option<Tensor>,
    /// Node holding the augmented batch on the tape.
    pub augmented_input: Option<Var>,
}

fn weighted(g: &mut Graph, a: Var, wa: f64, b: Var, wb: f64) -> Result<Var> {
    let a = g.scale(a, wa)?;
    let b = g.scale(b, wb)?;
    g.add(a, b)
}

/// Plain cross-entropy training objective.
pub fn erm_loss(g: &mut Graph, student: &Network, params: &[Var], x: &Tensor, y: &[usize], cfg: &DistillConfig) -> Result<LossTerms> {
    let xv = g.constant(x.clone());
    let z = student.forward(g, params, xv)?;
    let ce = cross_entropy(g, y, z, cfg.pi_ce)?;
    Ok(LossTerms { total: ce, ce, kd_kl: None, ood_kl: None, augmented: None, augmented_input: None })
}

pub fn kd_loss(g: &mut Graph, pair: &Pair, x: &Tensor, y: &[usize], cfg: &DistillConfig) -> Result<LossTerms> {
    let t = pair.teacher.logits(x)?;
    kd_loss_with_teacher(g, pair, x, &t, y, cfg)
}

/// [`kd_loss`] with the teacher's logits on `x` already computed.
pub fn kd_loss_with_teacher(
    g: &mut Graph,
    pair: &Pair,
    x: &Tensor,
    teacher_logits: &Tensor,
    y: &[usize],
    cfg: &DistillConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    let xv = g.constant(x.clone());
    let z = pair.student.forward(g, pair.params, xv)?;
    let ce = cross_entropy(g, y, z, cfg.pi_ce)?;
    let kl = softened_kl(g, z, teacher_logits, cfg.pi_kl)?;
    let total = weighted(g, ce, cfg.lambda, kl, 1.0 - cfg.lambda)?;
    Ok(LossTerms { total, ce, kd_kl: Some(kl), ood_kl: None, augmented: None, augmented_input: None })
}

pub fn okd_loss(
    g: &mut Graph,
    pair: &Pair,
    x: &Tensor,
    y: &[usize],
    aug: &Augmentor,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<LossTerms> {
    let t = pair.teacher.logits(x)?;
    okd_loss_with_teacher(g, pair, x, &t, y, aug, cfg, rng)
}

/// [`okd_loss`] with the teacher's logits on the clean batch already computed.
/// `A(x)` is drawn once and fed to both networks.
#[allow(clippy::too_many_arguments)]
pub fn okd_loss_with_teacher(
    g: &mut Graph,
    pair: &Pair,
    x: &Tensor,
    teacher_logits: &Tensor,
    y: &[usize],
    aug: &Augmentor,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<LossTerms> {
    let kd = kd_loss_with_teacher(g, pair, x, teacher_logits, y, cfg)?;
    let xa = aug.apply(x, y, Some(pair.teacher), rng)?;
    let ta = pair.teacher.logits(&xa)?;
    let xav = g.constant(xa.clone());
    let za = pair.student.forward(g, pair.params, xav)?;
    let ood = softened_kl(g, za, &ta, cfg.pi_kl)?;
    let ood_w = g.scale(ood, 1.0 - cfg.lambda)?;
    let total = g.add(kd.total, ood_w)?;
    Ok(LossTerms { total, ood_kl: Some(ood), augmented: Some(xa), augmented_input: Some(xav), ..kd })
}

#[allow(clippy::too_many_arguments)]
pub fn kd_aug_loss(
    g: &mut Graph,
    pair: &Pair,
    x: &Tensor,
    y: &[usize],
    aug: &Augmentor,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<LossTerms> {
    let t = pair.teacher.logits(x)?;
    kd_aug_loss_with_teacher(g, pair, x, &t, y, aug, cfg, rng)
}

/// Cross-entropy moves onto `A(x)` against the original labels; the
/// distillation term stays on the clean batch.
#[allow(clippy::too_many_arguments)]
pub fn kd_aug_loss_with_teacher(
    g: &mut Graph,
    pair: &Pair,
    x: &Tensor,
    teacher_logits: &Tensor,
    y: &[usize],
    aug: &Augmentor,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<LossTerms> {
    cfg.validate()?;
    let xa = aug.apply(x, y, Some(pair.teacher), rng)?;
    let xav = g.constant(xa.clone());
    let za = pair.student.forward(g, pair.params, xav)?;
    let ce = cross_entropy(g, y, za, cfg.pi_ce)?;
    let xv = g.constant(x.clone());
    let z = pair.student.forward(g, pair.params, xv)?;
    let kl = softened_kl(g, z, teacher_logits, cfg.pi_kl)?;
    let total = weighted(g, ce, cfg.lambda, kl, 1.0 - cfg.lambda)?;
    Ok(LossTerms { total, ce, kd_kl: Some(kl), ood_kl: None, augmented: Some(xa), augmented_input: Some(xav) })
}
