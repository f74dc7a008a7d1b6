//! Logit-level transforms applied before the softmax link: clip-by-norm,
//! clip-by-value, logit normalization, and identity. Each has a forward
//! evaluation and, where the trainer needs it, a Jacobian-vector product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, pnorm, NormOrder, Vec64};

/// Which logit transform to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    /// Rescale to norm `tau` whenever the p-norm reaches `tau` (preserves
    /// direction, hence the predicted class).
    ByNorm,
    /// Componentwise clamp to [−tau, tau].
    ByValue,
    /// Normalize to a unit vector scaled by 1/tau (equality constraint on
    /// the norm rather than an upper bound).
    LogitNorm,
    Identity,
}

fn default_tau() -> f64 {
    1.0
}

fn default_p() -> NormOrder {
    NormOrder::L2
}

/// Transform selection plus hyperparameters. `tau` is the norm threshold
/// for `ByNorm`, the value threshold for `ByValue`, and the temperature
/// for `LogitNorm`; `p` applies to `ByNorm` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    pub kind: ClipKind,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_p")]
    pub p: NormOrder,
}

impl ClipConfig {
    pub fn identity() -> Self {
        ClipConfig {
            kind: ClipKind::Identity,
            tau: 1.0,
            p: NormOrder::L2,
        }
    }

    pub fn by_norm(tau: f64) -> Self {
        ClipConfig {
            kind: ClipKind::ByNorm,
            tau,
            p: NormOrder::L2,
        }
    }

    pub fn by_norm_p(tau: f64, p: NormOrder) -> Self {
        ClipConfig {
            kind: ClipKind::ByNorm,
            tau,
            p,
        }
    }

    pub fn by_value(lambda: f64) -> Self {
        ClipConfig {
            kind: ClipKind::ByValue,
            tau: lambda,
            p: NormOrder::L2,
        }
    }

    pub fn logit_norm(tau: f64) -> Self {
        ClipConfig {
            kind: ClipKind::LogitNorm,
            tau,
            p: NormOrder::L2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != ClipKind::Identity && !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!(
                "clip tau must be positive and finite, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// Forward transform. All norm orders are accepted here; only the
    /// gradient path is restricted.
    pub fn forward(&self, z: &[f64]) -> Result<Vec64> {
        self.validate()?;
        match self.kind {
            ClipKind::ByNorm => Ok(clip_by_norm(z, self.tau, self.p)),
            ClipKind::ByValue => Ok(clip_by_value(z, self.tau)),
            ClipKind::LogitNorm => logit_norm(z, self.tau),
            ClipKind::Identity => Ok(z.to_vec()),
        }
    }

    /// Jacobian-vector product of the transform at `z` applied to `v`.
    ///
    /// `ByNorm` supports p = 2 only: training uses the Euclidean norm,
    /// and the p ∈ {1, ∞} Jacobians are set-valued at kinks. Those
    /// orders stay forward-only and are rejected here with a config error.
    pub fn jvp(&self, z: &[f64], v: &[f64]) -> Result<Vec64> {
        self.validate()?;
        match self.kind {
            ClipKind::ByNorm => {
                if self.p != NormOrder::L2 {
                    return Err(Error::config(format!(
                        "clip_by_norm gradient requires p = 2 (got p = {}); \
                         p in {{1, inf}} is forward-only",
                        self.p
                    )));
                }
                Ok(clip_by_norm_jvp(z, self.tau, v))
            }
            ClipKind::ByValue => Ok(clip_by_value_jvp(z, self.tau, v)),
            ClipKind::LogitNorm => logit_norm_jvp(z, self.tau, v),
            ClipKind::Identity => Ok(v.to_vec()),
        }
    }

    /// Short label for tables and CSV output.
    pub fn label(&self) -> String {
        match self.kind {
            ClipKind::ByNorm => format!("by_norm(tau={},p={})", self.tau, self.p),
            ClipKind::ByValue => format!("by_value(lambda={})", self.tau),
            ClipKind::LogitNorm => format!("logit_norm(tau={})", self.tau),
            ClipKind::Identity => "identity".to_string(),
        }
    }
}

/// τ·z/‖z‖_p when ‖z‖_p ≥ τ, otherwise z unchanged. The boundary
/// ‖z‖_p = τ takes the clipped branch; there the two branches agree up
/// to rounding. The zero vector has norm 0 < τ and passes through.
pub fn clip_by_norm(z: &[f64], tau: f64, p: NormOrder) -> Vec64 {
    assert!(tau > 0.0, "clip_by_norm requires tau > 0");
    let norm = pnorm(z, p);
    if norm >= tau {
        let scale = tau / norm;
        z.iter().map(|&x| x * scale).collect()
    } else {
        z.to_vec()
    }
}

/// JVP of `clip_by_norm` with p = 2: identity below the threshold,
/// (τ/‖z‖)(v − z(zᵀv)/‖z‖²) on the clipped branch.
pub fn clip_by_norm_jvp(z: &[f64], tau: f64, v: &[f64]) -> Vec64 {
    assert!(tau > 0.0, "clip_by_norm_jvp requires tau > 0");
    assert_eq!(z.len(), v.len());
    let norm = pnorm(z, NormOrder::L2);
    if norm < tau {
        return v.to_vec();
    }
    let scale = tau / norm;
    let radial = dot(z, v) / (norm * norm);
    z.iter()
        .zip(v)
        .map(|(&zi, &vi)| scale * (vi - zi * radial))
        .collect()
}

/// Componentwise clamp to [−λ, λ].
pub fn clip_by_value(z: &[f64], lambda: f64) -> Vec64 {
    assert!(lambda > 0.0, "clip_by_value requires lambda > 0");
    z.iter().map(|&x| x.clamp(-lambda, lambda)).collect()
}

/// Subgradient convention: pass-through strictly inside (−λ, λ), zero
/// outside and at the boundary. Clamped components therefore carry no
/// gradient, which is the optimization weakness of value clipping.
pub fn clip_by_value_jvp(z: &[f64], lambda: f64, v: &[f64]) -> Vec64 {
    assert!(lambda > 0.0, "clip_by_value_jvp requires lambda > 0");
    assert_eq!(z.len(), v.len());
    z.iter()
        .zip(v)
        .map(|(&zi, &vi)| if zi > -lambda && zi < lambda { vi } else { 0.0 })
        .collect()
}

/// z/(τ‖z‖₂): unit direction scaled by 1/τ. The zero vector has no
/// direction and is a domain error.
pub fn logit_norm(z: &[f64], tau: f64) -> Result<Vec64> {
    assert!(tau > 0.0, "logit_norm requires tau > 0");
    let norm = pnorm(z, NormOrder::L2);
    if norm == 0.0 {
        return Err(Error::domain("logit_norm of the zero vector is undefined"));
    }
    let scale = 1.0 / (tau * norm);
    Ok(z.iter().map(|&x| x * scale).collect())
}

/// JVP of `logit_norm`: (v − ẑ(ẑᵀv))/(τ‖z‖).
pub fn logit_norm_jvp(z: &[f64], tau: f64, v: &[f64]) -> Result<Vec64> {
    assert!(tau > 0.0, "logit_norm_jvp requires tau > 0");
    assert_eq!(z.len(), v.len());
    let norm = pnorm(z, NormOrder::L2);
    if norm == 0.0 {
        return Err(Error::domain("logit_norm of the zero vector is undefined"));
    }
    let radial = dot(z, v) / (norm * norm);
    let scale = 1.0 / (tau * norm);
    Ok(z
        .iter()
        .zip(v)
        .map(|(&zi, &vi)| scale * (vi - zi * radial))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn by_norm_examples() {
        assert_close(&clip_by_norm(&[6.0, 8.0], 5.0, NormOrder::L2), &[3.0, 4.0], 1e-12);
        assert_close(&clip_by_norm(&[1.0, 1.0], 5.0, NormOrder::L2), &[1.0, 1.0], 0.0);
        assert_close(&clip_by_norm(&[0.0, 0.0], 1.0, NormOrder::L2), &[0.0, 0.0], 0.0);
    }

    #[test]
    fn by_norm_jvp_examples() {
        // pass-through branch
        let v = [0.3, -0.7];
        assert_close(&clip_by_norm_jvp(&[0.5, 0.5], 5.0, &v), &v, 0.0);
        // radial direction annihilated
        assert_close(&clip_by_norm_jvp(&[6.0, 8.0], 5.0, &[6.0, 8.0]), &[0.0, 0.0], 1e-12);
        // tangential direction scaled by tau/||z|| = 0.5
        assert_close(&clip_by_norm_jvp(&[6.0, 8.0], 5.0, &[-8.0, 6.0]), &[-4.0, 3.0], 1e-12);
    }

    #[test]
    fn by_value_examples() {
        assert_close(&clip_by_value(&[0.5, -0.3], 1.0), &[0.5, -0.3], 0.0);
        assert_close(&clip_by_value(&[3.0, -7.0], 2.0), &[2.0, -2.0], 0.0);
        assert_close(&clip_by_value(&[2.0, 0.0], 2.0), &[2.0, 0.0], 0.0);
        // boundary carries zero subgradient
        assert_close(&clip_by_value_jvp(&[2.0, 0.0], 2.0, &[1.0, 1.0]), &[0.0, 1.0], 0.0);
    }

    #[test]
    fn logit_norm_examples() {
        assert_close(&logit_norm(&[3.0, 4.0], 1.0).unwrap(), &[0.6, 0.8], 1e-12);
        assert_close(&logit_norm(&[3.0, 4.0], 0.5).unwrap(), &[1.2, 1.6], 1e-12);
        assert!(matches!(
            logit_norm(&[0.0, 0.0], 1.0),
            Err(crate::error::Error::Domain(_))
        ));
    }

    #[test]
    fn by_norm_invariants() {
        let mut rng = Rng::from_seed(11);
        for _ in 0..500 {
            let k = 2 + rng.below(6);
            let z: Vec64 = (0..k).map(|_| rng.uniform_in(-10.0, 10.0)).collect();
            let tau = rng.uniform_in(0.1, 5.0);
            let c = clip_by_norm(&z, tau, NormOrder::L2);
            // norm bound
            assert!(pnorm(&c, NormOrder::L2) <= tau * (1.0 + 1e-12) || pnorm(&z, NormOrder::L2) < tau);
            // idempotence
            assert_close(&clip_by_norm(&c, tau, NormOrder::L2), &c, 1e-12);
            // direction preservation: c = s*z with s in (0, 1]
            let zn = pnorm(&z, NormOrder::L2);
            if zn > 0.0 {
                let s = pnorm(&c, NormOrder::L2) / zn;
                assert!(s > 0.0 && s <= 1.0 + 1e-12);
                for (a, b) in c.iter().zip(&z) {
                    assert!((a - s * b).abs() < 1e-9);
                }
            }
            // radial invariance on the clipped branch
            if pnorm(&z, NormOrder::L2) >= tau {
                let alpha = 1.0 + rng.uniform_in(0.0, 4.0);
                let scaled: Vec64 = z.iter().map(|&x| x * alpha).collect();
                assert_close(&clip_by_norm(&scaled, tau, NormOrder::L2), &c, 1e-12);
            }
            // identity recovery for large tau
            let big = pnorm(&z, NormOrder::L2) + 1.0;
            assert_eq!(clip_by_norm(&z, big, NormOrder::L2), z);
        }
    }

    #[test]
    fn bounded_logit_gap() {
        let mut rng = Rng::from_seed(13);
        for _ in 0..500 {
            let k = 2 + rng.below(8);
            let z: Vec64 = (0..k).map(|_| rng.uniform_in(-50.0, 50.0)).collect();
            let tau = rng.uniform_in(0.2, 3.0);
            for p in [NormOrder::LInf, NormOrder::L2] {
                let c = clip_by_norm(&z, tau, p);
                let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(max - min <= 2.0 * tau + 1e-12, "gap {} tau {tau}", max - min);
            }
        }
    }

    #[test]
    fn by_norm_argmax_preserved() {
        let mut rng = Rng::from_seed(17);
        for _ in 0..200 {
            let k = 2 + rng.below(8);
            let z: Vec64 = (0..k).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
            let c = clip_by_norm(&z, 0.5, NormOrder::L2);
            let am = |v: &Vec64| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            assert_eq!(am(&z), am(&c));
        }
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let mut rng = Rng::from_seed(19);
        let mut checked = 0;
        while checked < 1000 {
            let k = 2 + rng.below(6);
            let z: Vec64 = (0..k).map(|_| rng.uniform_in(-4.0, 4.0)).collect();
            let tau = rng.uniform_in(0.5, 4.0);
            // the clip is nonsmooth exactly at ||z|| = tau; skip its neighborhood
            if (pnorm(&z, NormOrder::L2) - tau).abs() <= 1e-3 {
                continue;
            }
            let v: Vec64 = (0..k).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let analytic = clip_by_norm_jvp(&z, tau, &v);
            let h = 1e-6;
            let plus: Vec64 = z.iter().zip(&v).map(|(&a, &b)| a + h * b).collect();
            let minus: Vec64 = z.iter().zip(&v).map(|(&a, &b)| a - h * b).collect();
            let fp = clip_by_norm(&plus, tau, NormOrder::L2);
            let fm = clip_by_norm(&minus, tau, NormOrder::L2);
            let scale = analytic
                .iter()
                .map(|x| x.abs())
                .fold(1.0f64, f64::max);
            for i in 0..k {
                let numeric = (fp[i] - fm[i]) / (2.0 * h);
                assert!(
                    (analytic[i] - numeric).abs() / scale < 1e-6,
                    "jvp mismatch: {} vs {}",
                    analytic[i],
                    numeric
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn gradient_path_rejects_non_euclidean() {
        let cfg = ClipConfig::by_norm_p(1.0, NormOrder::LInf);
        assert!(cfg.forward(&[1.0, 2.0]).is_ok());
        assert!(matches!(
            cfg.jvp(&[1.0, 2.0], &[1.0, 0.0]),
            Err(crate::error::Error::Config(_))
        ));
    }
}
