//! Closed-form evaluation of the theoretical quantities attached to
//! logit clipping: the CE loss bounds, the symmetric and asymmetric
//! risk-gap constants, the Lipschitz composite bound, and the noisy-risk
//! decomposition identity.
//!
//! Every formula is evaluated in a log-sum-exp-stable arrangement; the
//! naive e^{2τ} overflows 64-bit floats once τ exceeds about 355.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower and upper bounds of CE with clip-by-norm at threshold `tau`
/// for `k` classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBounds {
    pub lower: f64,
    pub upper: f64,
    pub k: usize,
    pub tau: f64,
}

fn check_k_tau(k: usize, tau: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::domain(format!("class count must be at least 2, got {k}")));
    }
    if !(tau > 0.0) {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// [log(1+(K−1)e^{−2τ}), log(1+(K−1)e^{2τ})].
///
/// The upper bound is computed as 2τ + log((K−1) + e^{−2τ}), which is
/// algebraically identical and never overflows.
pub fn ce_clip_bounds(k: usize, tau: f64) -> Result<LossBounds> {
    check_k_tau(k, tau)?;
    let km1 = (k - 1) as f64;
    let lower = (km1 * (-2.0 * tau).exp()).ln_1p();
    let upper = 2.0 * tau + (km1 + (-2.0 * tau).exp()).ln();
    Ok(LossBounds { lower, upper, k, tau })
}

/// A^K_τ = log((1+(K−1)e^{2τ})/(1+(K−1)e^{−2τ})), the width of the CE
/// clip bounds. Strictly increasing in τ, vanishing as τ → 0.
pub fn a_const(k: usize, tau: f64) -> Result<f64> {
    let b = ce_clip_bounds(k, tau)?;
    Ok(b.upper - b.lower)
}

/// Risk gap bound under symmetric label noise: ηK/((1−η)K−1) · A^K_τ.
/// Requires η < 1 − 1/K so the denominator stays positive.
pub fn sym_risk_gap(k: usize, tau: f64, eta: f64) -> Result<f64> {
    check_k_tau(k, tau)?;
    let kf = k as f64;
    if !(0.0..1.0 - 1.0 / kf).contains(&eta) {
        return Err(Error::domain(format!(
            "symmetric noise rate must satisfy 0 <= eta < 1 - 1/K = {}, got {eta}",
            1.0 - 1.0 / kf
        )));
    }
    Ok(eta * kf / ((1.0 - eta) * kf - 1.0) * a_const(k, tau)?)
}

/// Risk gap bound under class-conditional (asymmetric) noise:
/// B^K_τ = K · A^K_τ · E[1−η_i]. The same closed form with an
/// instance-wise mean retention gives the instance-dependent constant
/// C^K_τ.
pub fn asym_risk_gap(k: usize, tau: f64, mean_retention: f64) -> Result<f64> {
    check_k_tau(k, tau)?;
    if !(mean_retention > 0.0 && mean_retention <= 1.0) {
        return Err(Error::domain(format!(
            "mean retention must lie in (0, 1], got {mean_retention}"
        )));
    }
    Ok(k as f64 * a_const(k, tau)? * mean_retention)
}

/// The attainable softmax probability range under max-norm-clipped
/// logits: (M^K_τ, N^K_τ) with M = 1/(1+(K−1)e^{2τ}), N = 1/(1+(K−1)e^{−2τ}).
pub fn simplex_prob_range(k: usize, tau: f64) -> Result<(f64, f64)> {
    check_k_tau(k, tau)?;
    let km1 = (k - 1) as f64;
    // M rewritten as e^{−2τ}/(e^{−2τ} + (K−1)) to avoid overflow
    let e = (-2.0 * tau).exp();
    let m = e / (e + km1);
    let n = 1.0 / (1.0 + km1 * e);
    Ok((m, n))
}

/// Bound on a composite loss whose base is L-Lipschitz on [M, N]:
/// L(N − M) + |φ(M)|, returned together with M and N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    pub bound: f64,
    pub m: f64,
    pub n: f64,
}

pub fn lipschitz_composite_bound(
    lipschitz: f64,
    k: usize,
    tau: f64,
    phi_at_m: f64,
) -> Result<LipschitzBound> {
    if lipschitz < 0.0 {
        return Err(Error::domain("Lipschitz constant must be nonnegative"));
    }
    let (m, n) = simplex_prob_range(k, tau)?;
    Ok(LipschitzBound {
        bound: lipschitz * (n - m) + phi_at_m.abs(),
        m,
        n,
    })
}

/// The decomposition of the noisy risk under symmetric noise:
/// R^η(f) = (1 − ηK/(K−1)) R(f) + (η/(K−1)) Σ_j L(f(x), j).
///
/// This is the testable surrogate for the symmetric risk-gap bound:
/// global minimizers cannot be computed, but the identity the bound
/// rests on can be checked on any fixed classifier.
pub fn noisy_risk_decomposition(
    clean_risk: f64,
    full_sum_risk: f64,
    k: usize,
    eta: f64,
) -> Result<f64> {
    if k < 2 {
        return Err(Error::domain("class count must be at least 2"));
    }
    let kf = k as f64;
    if !(0.0..=1.0 - 1.0 / kf).contains(&eta) {
        return Err(Error::domain(format!(
            "eta must lie in [0, 1 - 1/K], got {eta}"
        )));
    }
    Ok((1.0 - eta * kf / (kf - 1.0)) * clean_risk + eta / (kf - 1.0) * full_sum_risk)
}

/// CSV rows (k, tau, lower, upper, a_const) over a τ grid for each K,
/// in the shape plotting tools expect.
pub fn bounds_csv(ks: &[usize], tau_start: f64, tau_stop: f64, tau_step: f64) -> Result<String> {
    if ks.is_empty() {
        return Err(Error::domain("at least one K is required"));
    }
    if !(tau_start > 0.0) || tau_stop < tau_start || !(tau_step > 0.0) {
        return Err(Error::domain("invalid tau range"));
    }
    let mut out = String::from("k,tau,lower,upper,a_const\n");
    for &k in ks {
        let mut tau = tau_start;
        while tau <= tau_stop + 1e-12 {
            let b = ce_clip_bounds(k, tau)?;
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                k,
                tau,
                b.lower,
                b.upper,
                b.upper - b.lower
            ));
            tau += tau_step;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ce_with_clip;
    use crate::numerics::{NormOrder, Rng, Vec64};

    #[test]
    fn bounds_spot_values() {
        let b = ce_clip_bounds(10, 1.0).unwrap();
        assert!((b.lower - 0.796613801038224).abs() < 1e-12, "{}", b.lower);
        assert!((b.upper - 4.212149892302196).abs() < 1e-12, "{}", b.upper);
        let a = a_const(10, 1.0).unwrap();
        assert!((a - 3.415536091263972).abs() < 1e-12, "{a}");
    }

    #[test]
    fn bounds_limits() {
        // large tau: upper ≈ 2τ + ln(K−1), lower → 0
        let b = ce_clip_bounds(10, 1000.0).unwrap();
        assert!((b.upper - (2000.0 + 9.0f64.ln())).abs() < 1e-9);
        assert!(b.lower >= 0.0 && b.lower < 1e-300);
        // tiny tau: both bounds collapse to ln K
        let b = ce_clip_bounds(2, 1e-9).unwrap();
        assert!((b.lower - std::f64::consts::LN_2).abs() < 1e-8);
        assert!((b.upper - std::f64::consts::LN_2).abs() < 1e-8);
        // uniform logits are always feasible: lower <= ln K <= upper
        for &(k, tau) in &[(2usize, 0.5f64), (10, 1.0), (100, 3.0)] {
            let b = ce_clip_bounds(k, tau).unwrap();
            let lnk = (k as f64).ln();
            assert!(b.lower <= lnk && lnk <= b.upper);
        }
    }

    #[test]
    fn bounds_monotonicity() {
        // upper increasing in tau and K; lower decreasing in tau,
        // increasing in K
        let taus = [0.25, 0.5, 1.0, 2.0, 4.0];
        for w in taus.windows(2) {
            let a = ce_clip_bounds(10, w[0]).unwrap();
            let b = ce_clip_bounds(10, w[1]).unwrap();
            assert!(b.upper > a.upper);
            assert!(b.lower < a.lower);
            assert!(a_const(10, w[1]).unwrap() > a_const(10, w[0]).unwrap());
        }
        for ks in [2usize, 10, 100].windows(2) {
            let a = ce_clip_bounds(ks[0], 1.0).unwrap();
            let b = ce_clip_bounds(ks[1], 1.0).unwrap();
            assert!(b.upper > a.upper);
            assert!(b.lower > a.lower);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(ce_clip_bounds(1, 1.0).is_err());
        assert!(ce_clip_bounds(10, 0.0).is_err());
        assert!(sym_risk_gap(10, 1.0, 0.9).is_err());
        assert!(asym_risk_gap(10, 1.0, 0.0).is_err());
        assert!(noisy_risk_decomposition(1.0, 10.0, 10, 0.95).is_err());
    }

    #[test]
    fn sym_gap_values() {
        let g = sym_risk_gap(10, 1.0, 0.5).unwrap();
        assert!((g - 4.269420114079965).abs() < 1e-12, "{g}");
        assert_eq!(sym_risk_gap(10, 1.0, 0.0).unwrap(), 0.0);
        // explodes as eta approaches 1 − 1/K
        let near = sym_risk_gap(10, 1.0, 0.899999).unwrap();
        assert!(near > sym_risk_gap(10, 1.0, 0.89).unwrap());
        assert!(near > 1e5);
    }

    #[test]
    fn asym_gap_values() {
        let g = asym_risk_gap(10, 1.0, 0.6).unwrap();
        assert!((g - 20.493216547583832).abs() < 1e-12, "{g}");
        let g1 = asym_risk_gap(10, 1.0, 1.0).unwrap();
        assert!((g1 - 34.155360912639720).abs() < 1e-12, "{g1}");
    }

    #[test]
    fn gaps_vanish_with_tau() {
        let mut prev = f64::INFINITY;
        for tau in [1.0, 0.1, 0.01, 1e-4] {
            let a = a_const(10, tau).unwrap();
            let g = sym_risk_gap(10, tau, 0.5).unwrap();
            assert!(a < prev);
            assert!(g < 1.25 * prev + 1e-12);
            prev = a;
        }
        assert!(a_const(10, 1e-9).unwrap() < 1e-7);
    }

    #[test]
    fn lipschitz_bound_values() {
        let lb = lipschitz_composite_bound(0.0, 10, 1.0, -0.5).unwrap();
        assert!((lb.m - 0.014814484530738).abs() < 1e-12, "{}", lb.m);
        assert!((lb.n - 0.450853060379284).abs() < 1e-12, "{}", lb.n);
        assert!((lb.bound - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lipschitz_bound_dominates_observed_ce() {
        // CE base on [M, N]: L = 1/M, φ(M) = −log M. The resulting bound
        // must dominate the observed max |loss| over clipped logits.
        let (k, tau) = (10usize, 1.0f64);
        let (m, _) = simplex_prob_range(k, tau).unwrap();
        let lb = lipschitz_composite_bound(1.0 / m, k, tau, -(m.ln())).unwrap();
        let mut rng = Rng::from_seed(37);
        let mut max_obs: f64 = 0.0;
        for _ in 0..100_000 {
            let z: Vec64 = (0..k).map(|_| rng.uniform_in(-50.0, 50.0)).collect();
            let y = rng.below(k);
            let v = ce_with_clip(&z, y, tau, NormOrder::LInf).unwrap();
            max_obs = max_obs.max(v.abs());
        }
        assert!(
            lb.bound >= max_obs,
            "bound {} observed {max_obs}",
            lb.bound
        );
    }

    #[test]
    fn csv_rows_shape() {
        let csv = bounds_csv(&[2, 10], 0.5, 1.5, 0.5).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,tau,lower,upper,a_const");
        assert_eq!(lines.len(), 1 + 2 * 3);
        // upper column strictly increases along the tau grid
        let uppers: Vec<f64> = lines[1..=3]
            .iter()
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        assert!(uppers[0] < uppers[1] && uppers[1] < uppers[2]);
        assert!(bounds_csv(&[], 0.5, 1.5, 0.5).is_err());
        assert!(bounds_csv(&[2], 0.0, 1.5, 0.5).is_err());
    }

    #[test]
    fn decomposition_edge_cases() {
        assert_eq!(
            noisy_risk_decomposition(2.5, 100.0, 10, 0.0).unwrap(),
            2.5
        );
        // for a symmetric loss the full sum is constant: noisy risk is
        // affine in eta with slope (C/(K−1) − K/(K−1)·R)
        let k = 4usize;
        let clean = 1.5;
        let full = 6.0; // = K * clean ⇒ slope zero
        for eta in [0.0, 0.2, 0.5] {
            let r = noisy_risk_decomposition(clean, full, k, eta).unwrap();
            assert!((r - clean).abs() < 1e-12);
        }
    }
}
