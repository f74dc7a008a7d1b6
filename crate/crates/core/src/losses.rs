//! The composite-loss zoo: base losses over probabilities composed with a
//! clipping transform and softmax, with forward values and gradients with
//! respect to the raw logits.
//!
//! Gradients are assembled by shared chain-rule plumbing. A base loss that
//! depends on the label probability alone only has to supply its label
//! coordinate derivative; the chain multiplies through the softmax
//! Jacobian and the clip JVP. For stability the label derivative is
//! supplied pre-multiplied by p_y (`chain_scale`), which cancels the 1/p_y
//! poles of the log-based losses, and log p_y itself is always evaluated
//! as u_y − logsumexp(u).

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, pnorm, NormOrder, Vec64};
use crate::transforms::{clip_by_norm, ClipConfig};

/// Base loss φ over probability vectors. Default hyperparameters follow
/// the common settings for each loss family.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseLoss {
    Ce,
    Focal { gamma: f64 },
    Mae,
    Gce { q: f64 },
    Sce { alpha: f64, beta: f64, a_clamp: f64 },
    PHuberCe { tau_h: f64 },
    TaylorCe { order: usize },
    Nce,
    Ael { a: f64 },
    Aul { a: f64, q: f64 },
    Agce { a: f64, q: f64 },
    Combo {
        alpha: f64,
        beta: f64,
        active: Box<BaseLoss>,
        passive: Box<BaseLoss>,
    },
}

impl BaseLoss {
    pub fn focal_default() -> Self {
        BaseLoss::Focal { gamma: 0.5 }
    }

    pub fn gce_default() -> Self {
        BaseLoss::Gce { q: 0.7 }
    }

    pub fn sce_default() -> Self {
        BaseLoss::Sce {
            alpha: 0.5,
            beta: 1.0,
            a_clamp: -4.0,
        }
    }

    pub fn phuber_default() -> Self {
        BaseLoss::PHuberCe { tau_h: 10.0 }
    }

    pub fn taylor_default() -> Self {
        BaseLoss::TaylorCe { order: 2 }
    }

    pub fn ael_default() -> Self {
        BaseLoss::Ael { a: 2.5 }
    }

    pub fn aul_default() -> Self {
        BaseLoss::Aul { a: 5.5, q: 3.0 }
    }

    pub fn agce_default() -> Self {
        BaseLoss::Agce { a: 1.8, q: 3.0 }
    }

    /// Active-passive combination NCE + MAE with α=50, β=1.
    pub fn nce_mae() -> Self {
        BaseLoss::Combo {
            alpha: 50.0,
            beta: 1.0,
            active: Box::new(BaseLoss::Nce),
            passive: Box::new(BaseLoss::Mae),
        }
    }

    /// Active-passive combination NCE + AGCE with α=50, β=0.1.
    pub fn nce_agce() -> Self {
        BaseLoss::Combo {
            alpha: 50.0,
            beta: 0.1,
            active: Box::new(BaseLoss::Nce),
            passive: Box::new(BaseLoss::agce_default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseLoss::Ce | BaseLoss::Mae | BaseLoss::Nce => Ok(()),
            BaseLoss::Focal { gamma } => {
                if *gamma < 0.0 {
                    return Err(Error::config("focal gamma must be nonnegative"));
                }
                Ok(())
            }
            BaseLoss::Gce { q } => {
                if !(0.0 < *q && *q <= 1.0) {
                    return Err(Error::config("gce q must be in (0, 1]"));
                }
                Ok(())
            }
            BaseLoss::Sce { alpha, beta, a_clamp } => {
                if *alpha <= 0.0 || *beta <= 0.0 {
                    return Err(Error::config("sce alpha and beta must be positive"));
                }
                if *a_clamp >= 0.0 {
                    return Err(Error::config("sce a_clamp must be negative"));
                }
                Ok(())
            }
            BaseLoss::PHuberCe { tau_h } => {
                if *tau_h <= 1.0 {
                    return Err(Error::config("phuber_ce tau must exceed 1"));
                }
                Ok(())
            }
            BaseLoss::TaylorCe { order } => {
                if *order < 1 {
                    return Err(Error::config("taylor_ce order must be at least 1"));
                }
                Ok(())
            }
            BaseLoss::Ael { a } => {
                if *a <= 0.0 {
                    return Err(Error::config("ael a must be positive"));
                }
                Ok(())
            }
            BaseLoss::Aul { a, q } => {
                if *a <= 1.0 {
                    return Err(Error::config("aul a must exceed 1"));
                }
                if *q <= 0.0 {
                    return Err(Error::config("aul q must be positive"));
                }
                Ok(())
            }
            BaseLoss::Agce { a, q } => {
                if *a <= 0.0 || *q <= 0.0 {
                    return Err(Error::config("agce a and q must be positive"));
                }
                Ok(())
            }
            BaseLoss::Combo { active, passive, .. } => {
                active.validate()?;
                passive.validate()
            }
        }
    }

    /// Short label for reports. Comma-free so the labels embed in CSV.
    pub fn label(&self) -> String {
        match self {
            BaseLoss::Ce => "ce".into(),
            BaseLoss::Focal { gamma } => format!("focal(gamma={gamma})"),
            BaseLoss::Mae => "mae".into(),
            BaseLoss::Gce { q } => format!("gce(q={q})"),
            BaseLoss::Sce { alpha, beta, .. } => format!("sce(alpha={alpha};beta={beta})"),
            BaseLoss::PHuberCe { tau_h } => format!("phuber_ce(tau={tau_h})"),
            BaseLoss::TaylorCe { order } => format!("taylor_ce(t={order})"),
            BaseLoss::Nce => "nce".into(),
            BaseLoss::Ael { a } => format!("ael(a={a})"),
            BaseLoss::Aul { a, q } => format!("aul(a={a};q={q})"),
            BaseLoss::Agce { a, q } => format!("agce(a={a};q={q})"),
            BaseLoss::Combo {
                alpha,
                beta,
                active,
                passive,
            } => format!("{}*{}+{}*{}", alpha, active.label(), beta, passive.label()),
        }
    }

    /// Loss value over a probability vector. Log-based losses return +∞
    /// when p_y = 0 (reachable only without clipping); NCE is a domain
    /// error when any component is zero.
    pub fn value(&self, p: &[f64], y: usize) -> Result<f64> {
        assert!(y < p.len(), "label out of range");
        match self {
            BaseLoss::Ce => Ok(ce(p, y)),
            BaseLoss::Focal { gamma } => Ok(focal(p, y, *gamma)),
            BaseLoss::Mae => Ok(mae(p, y)),
            BaseLoss::Gce { q } => Ok(gce(p, y, *q)),
            BaseLoss::Sce { alpha, beta, a_clamp } => Ok(sce(p, y, *alpha, *beta, *a_clamp)),
            BaseLoss::PHuberCe { tau_h } => Ok(phuber_ce(p, y, *tau_h)),
            BaseLoss::TaylorCe { order } => Ok(taylor_ce(p, y, *order)),
            BaseLoss::Nce => nce(p, y),
            BaseLoss::Ael { a } => Ok(ael(p, y, *a)),
            BaseLoss::Aul { a, q } => Ok(aul(p, y, *a, *q)),
            BaseLoss::Agce { a, q } => Ok(agce(p, y, *a, *q)),
            BaseLoss::Combo {
                alpha,
                beta,
                active,
                passive,
            } => Ok(alpha * active.value(p, y)? + beta * passive.value(p, y)?),
        }
    }

    /// Loss value evaluated through the link: `p` is softmax(u) and
    /// `lse` is logsumexp(u). Log terms use u_y − lse directly so the
    /// value stays finite whenever the logits are.
    fn value_from_link(&self, p: &[f64], lse: f64, u: &[f64], y: usize) -> Result<f64> {
        let neg_log_py = lse - u[y];
        let rest = rest_mass(p, y);
        match self {
            BaseLoss::Ce => Ok(neg_log_py),
            BaseLoss::Focal { gamma } => {
                if *gamma == 0.0 {
                    Ok(neg_log_py)
                } else {
                    Ok(rest.powf(*gamma) * neg_log_py)
                }
            }
            BaseLoss::Sce { alpha, beta, a_clamp } => {
                Ok(alpha * neg_log_py + beta * (-a_clamp) * rest)
            }
            BaseLoss::PHuberCe { tau_h } => {
                if p[y] >= 1.0 / tau_h {
                    Ok(neg_log_py)
                } else {
                    Ok(-tau_h * p[y] + tau_h.ln() + 1.0)
                }
            }
            BaseLoss::Nce => {
                check_nce_domain(p)?;
                let total: f64 = u.iter().map(|&uk| lse - uk).sum();
                Ok(neg_log_py / total)
            }
            BaseLoss::Combo {
                alpha,
                beta,
                active,
                passive,
            } => Ok(alpha * active.value_from_link(p, lse, u, y)?
                + beta * passive.value_from_link(p, lse, u, y)?),
            _ => self.value(p, y),
        }
    }

    /// For losses depending on p_y only: p_y · dφ/dp_y, algebraically
    /// simplified so it stays finite on the whole closed simplex.
    /// Returns None for losses with a dense probability gradient.
    fn chain_scale(&self, p: &[f64], lse: f64, u: &[f64], y: usize) -> Option<f64> {
        let py = p[y];
        let rest = rest_mass(p, y);
        match self {
            BaseLoss::Ce => Some(-1.0),
            BaseLoss::Focal { gamma } => {
                if *gamma == 0.0 {
                    return Some(-1.0);
                }
                if rest == 0.0 {
                    return Some(0.0);
                }
                let neg_log_py = lse - u[y];
                Some(-gamma * rest.powf(gamma - 1.0) * neg_log_py * py - rest.powf(*gamma))
            }
            BaseLoss::Mae => Some(-2.0 * py),
            BaseLoss::Gce { q } => Some(-py.powf(*q)),
            BaseLoss::Sce { alpha, beta, a_clamp } => Some(-alpha + beta * a_clamp * py),
            BaseLoss::PHuberCe { tau_h } => {
                if py >= 1.0 / tau_h {
                    Some(-1.0)
                } else {
                    Some(-tau_h * py)
                }
            }
            BaseLoss::TaylorCe { order } => {
                let mut deriv = 0.0;
                let mut pow = 1.0;
                for _ in 1..=*order {
                    deriv += pow;
                    pow *= rest;
                }
                Some(-py * deriv)
            }
            BaseLoss::Ael { a } => Some(-py * (-py / a).exp() / a),
            BaseLoss::Aul { a, q } => Some(-py * (a - py).powf(q - 1.0)),
            BaseLoss::Agce { a, q } => Some(-py * (a + py).powf(q - 1.0)),
            BaseLoss::Nce | BaseLoss::Combo { .. } => None,
        }
    }

    /// Accumulate `weight · Jσ(p)ᵀ · dφ/dp` into `out` (the gradient with
    /// respect to the pre-softmax vector u).
    fn accumulate_du(
        &self,
        p: &[f64],
        lse: f64,
        u: &[f64],
        y: usize,
        weight: f64,
        out: &mut [f64],
    ) -> Result<()> {
        if let Some(c) = self.chain_scale(p, lse, u, y) {
            for (i, (o, &pi)) in out.iter_mut().zip(p).enumerate() {
                let delta = if i == y { 1.0 } else { 0.0 };
                *o += weight * c * (delta - pi);
            }
            return Ok(());
        }
        match self {
            BaseLoss::Nce => {
                check_nce_domain(p)?;
                let k = p.len();
                let total: f64 = u.iter().map(|&uk| lse - uk).sum();
                let ly = lse - u[y];
                // p_i dφ/dp_i = −δ_iy/S + L_y/S²; subtract p_i (p·dφ/dp)
                let p_dot_g = -1.0 / total + (k as f64) * ly / (total * total);
                for (i, (o, &pi)) in out.iter_mut().zip(p).enumerate() {
                    let delta = if i == y { 1.0 } else { 0.0 };
                    let own = -delta / total + ly / (total * total);
                    *o += weight * (own - pi * p_dot_g);
                }
                Ok(())
            }
            BaseLoss::Combo {
                alpha,
                beta,
                active,
                passive,
            } => {
                active.accumulate_du(p, lse, u, y, weight * alpha, out)?;
                passive.accumulate_du(p, lse, u, y, weight * beta, out)
            }
            _ => unreachable!("chain_scale covers all scalar-coordinate losses"),
        }
    }
}

fn check_nce_domain(p: &[f64]) -> Result<()> {
    if p.iter().any(|&pk| pk <= 0.0) {
        return Err(Error::domain(
            "nce undefined with a zero-probability component (unreachable under clipping)",
        ));
    }
    Ok(())
}

/// 1 − p_y computed as the sum of the other components, avoiding
/// cancellation when p_y is close to 1.
#[inline]
fn rest_mass(p: &[f64], y: usize) -> f64 {
    p.iter()
        .enumerate()
        .filter(|(i, _)| *i != y)
        .map(|(_, &v)| v)
        .sum()
}

/// Cross entropy −log p_y. Returns +∞ when p_y = 0; with any finite
/// clipping threshold that case cannot occur.
pub fn ce(p: &[f64], y: usize) -> f64 {
    -p[y].ln()
}

/// Focal loss (1 − p_y)^γ · (−log p_y).
pub fn focal(p: &[f64], y: usize, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return ce(p, y);
    }
    rest_mass(p, y).powf(gamma) * ce(p, y)
}

/// Mean absolute error ‖onehot(y) − p‖₁ = 2(1 − p_y).
pub fn mae(p: &[f64], y: usize) -> f64 {
    2.0 * rest_mass(p, y)
}

/// Generalized cross entropy (1 − p_y^q)/q.
pub fn gce(p: &[f64], y: usize, q: f64) -> f64 {
    (1.0 - p[y].powf(q)) / q
}

/// Reverse cross entropy −Σ_j p_j log(onehot(y)_j) with log 0 clamped to
/// `a_clamp`, which collapses to −a_clamp·(1 − p_y).
pub fn rce(p: &[f64], y: usize, a_clamp: f64) -> f64 {
    -a_clamp * rest_mass(p, y)
}

/// Symmetric cross entropy α·CE + β·RCE.
pub fn sce(p: &[f64], y: usize, alpha: f64, beta: f64, a_clamp: f64) -> f64 {
    alpha * ce(p, y) + beta * rce(p, y, a_clamp)
}

/// Partially Huberised cross entropy: −log p_y above 1/τ, its tangent
/// line below. The two branches meet with matching value and slope.
pub fn phuber_ce(p: &[f64], y: usize, tau_h: f64) -> f64 {
    if p[y] >= 1.0 / tau_h {
        ce(p, y)
    } else {
        -tau_h * p[y] + tau_h.ln() + 1.0
    }
}

/// Taylor cross entropy Σ_{t=1..T} (1 − p_y)^t / t.
pub fn taylor_ce(p: &[f64], y: usize, order: usize) -> f64 {
    let rest = rest_mass(p, y);
    let mut value = 0.0;
    let mut pow = rest;
    for t in 1..=order {
        value += pow / t as f64;
        pow *= rest;
    }
    value
}

/// Normalized cross entropy CE(p, y) / Σ_k CE(p, k). Values lie in
/// (0, 1) and sum to 1 over the label; requires strictly interior p.
pub fn nce(p: &[f64], y: usize) -> Result<f64> {
    check_nce_domain(p)?;
    let total: f64 = (0..p.len()).map(|k| ce(p, k)).sum();
    Ok(ce(p, y) / total)
}

/// Asymmetric exponential loss exp(−p_y/a).
pub fn ael(p: &[f64], y: usize, a: f64) -> f64 {
    (-p[y] / a).exp()
}

/// Asymmetric unhinged loss ((a − p_y)^q − (a − 1)^q)/q.
pub fn aul(p: &[f64], y: usize, a: f64, q: f64) -> f64 {
    ((a - p[y]).powf(q) - (a - 1.0).powf(q)) / q
}

/// Asymmetric generalized cross entropy ((a + 1)^q − (a + p_y)^q)/q.
pub fn agce(p: &[f64], y: usize, a: f64, q: f64) -> f64 {
    ((a + 1.0).powf(q) - (a + p[y]).powf(q)) / q
}

/// CE composed with clip-by-norm, evaluated in the log-sum-exp form
/// log(1 + Σ_{j≠y} e^{u_j − u_y}) so the value never overflows.
pub fn ce_with_clip(z: &[f64], y: usize, tau: f64, p: NormOrder) -> Result<f64> {
    let u = clip_by_norm(z, tau, p);
    Ok(log_sum_exp(&u)? - u[y])
}

fn default_norm_reg() -> f64 {
    0.0
}

/// A fully specified training loss: base loss, logit transform, and an
/// optional ‖z‖₂ penalty (Lagrangian-style norm regularization; 0
/// disables it).
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub base: BaseLoss,
    pub clip: ClipConfig,
    pub norm_reg_lambda: f64,
}

impl LossSpec {
    pub fn new(base: BaseLoss, clip: ClipConfig) -> Self {
        LossSpec {
            base,
            clip,
            norm_reg_lambda: default_norm_reg(),
        }
    }

    pub fn with_norm_reg(mut self, lambda: f64) -> Self {
        self.norm_reg_lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.clip.validate()?;
        if self.norm_reg_lambda < 0.0 {
            return Err(Error::config("norm_reg_lambda must be nonnegative"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut s = format!("{}+{}", self.base.label(), self.clip.label());
        if self.norm_reg_lambda > 0.0 {
            s.push_str(&format!("+reg({})", self.norm_reg_lambda));
        }
        s
    }
}

/// Forward value and gradient with respect to the raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad_z: Vec64,
}

fn softmax_and_lse(u: &[f64]) -> (Vec64, f64) {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec64 = u.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    (p, m + sum.ln())
}

/// Evaluate φ(σ(clip(z)))_y + λ‖z‖₂ together with its gradient in z.
///
/// The chain runs dφ/dp through the softmax Jacobian and then the clip
/// JVP (every clip Jacobian here is symmetric, so JVP and VJP agree).
/// The trainer path requires a transform with a defined gradient:
/// by-norm with p = 2, by-value, logit-norm, or identity.
pub fn loss_forward_backward(spec: &LossSpec, z: &[f64], y: usize) -> Result<LossValueGrad> {
    spec.validate()?;
    if z.len() < 2 {
        return Err(Error::dimension("loss requires at least two classes"));
    }
    if y >= z.len() {
        return Err(Error::dimension(format!(
            "label {y} out of range for {} classes",
            z.len()
        )));
    }
    let u = spec.clip.forward(z)?;
    let (p, lse) = softmax_and_lse(&u);
    let mut value = spec.base.value_from_link(&p, lse, &u, y)?;

    let mut du = vec![0.0; z.len()];
    spec.base.accumulate_du(&p, lse, &u, y, 1.0, &mut du)?;
    let mut grad_z = spec.clip.jvp(z, &du)?;

    if spec.norm_reg_lambda > 0.0 {
        let norm = pnorm(z, NormOrder::L2);
        value += spec.norm_reg_lambda * norm;
        if norm > 0.0 {
            let s = spec.norm_reg_lambda / norm;
            for (g, &zi) in grad_z.iter_mut().zip(z) {
                *g += s * zi;
            }
        }
    }
    Ok(LossValueGrad { value, grad_z })
}
