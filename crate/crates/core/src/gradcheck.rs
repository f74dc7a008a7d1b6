//! Finite-difference verification of every analytic gradient in the
//! loss zoo, across all four logit transforms. The CLI `gradcheck`
//! subcommand runs this suite; the acceptance tests pin its tolerance.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{loss_forward_backward, BaseLoss, LossSpec};
use crate::numerics::{pnorm, NormOrder, Rng, Vec64};
use crate::transforms::{ClipConfig, ClipKind};

/// Central-difference gradient of the loss value with respect to the
/// logits, step h = 1e-6 · max(1, |z_i|) per coordinate.
pub fn finite_difference_grad(spec: &LossSpec, z: &[f64], y: usize) -> Result<Vec64> {
    let mut grad = vec![0.0; z.len()];
    let mut zp = z.to_vec();
    for i in 0..z.len() {
        let h = 1e-6 * z[i].abs().max(1.0);
        zp[i] = z[i] + h;
        let fp = loss_forward_backward(spec, &zp, y)?.value;
        zp[i] = z[i] - h;
        let fm = loss_forward_backward(spec, &zp, y)?.value;
        zp[i] = z[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Scale-normalized worst-coordinate error between analytic and
/// numerical gradients.
pub fn gradient_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1.0f64, f64::max);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0f64, f64::max)
        / scale
}

/// Result of checking one loss × transform combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: String,
    pub clip: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// The full loss zoo with its default hyperparameters.
pub fn default_zoo() -> Vec<BaseLoss> {
    vec![
        BaseLoss::Ce,
        BaseLoss::focal_default(),
        BaseLoss::Mae,
        BaseLoss::gce_default(),
        BaseLoss::sce_default(),
        BaseLoss::phuber_default(),
        BaseLoss::taylor_default(),
        BaseLoss::Nce,
        BaseLoss::ael_default(),
        BaseLoss::aul_default(),
        BaseLoss::agce_default(),
        BaseLoss::nce_mae(),
    ]
}

/// The four transforms exercised by the gradient suite.
pub fn default_clips() -> Vec<ClipConfig> {
    vec![
        ClipConfig::identity(),
        ClipConfig::by_norm(2.0),
        ClipConfig::by_value(2.0),
        ClipConfig::logit_norm(1.0),
    ]
}

/// Draw a random case, excluding the documented nonsmooth neighborhoods:
/// the clip-by-norm sphere, the clip-by-value box faces, and the
/// logit-norm origin.
fn sample_case(clip: &ClipConfig, rng: &mut Rng) -> (Vec64, usize) {
    loop {
        let k = 2 + rng.below(9);
        let z: Vec64 = (0..k).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let ok = match clip.kind {
            ClipKind::ByNorm => (pnorm(&z, NormOrder::L2) - clip.tau).abs() > 1e-3,
            ClipKind::ByValue => z.iter().all(|&v| (v.abs() - clip.tau).abs() > 1e-3),
            ClipKind::LogitNorm => pnorm(&z, NormOrder::L2) > 1e-2,
            ClipKind::Identity => true,
        };
        if ok {
            let y = rng.below(k);
            return (z, y);
        }
    }
}

/// Check one loss/clip pair over `trials` random cases. `corrupt`
/// deliberately perturbs the analytic gradient and must make the check
/// fail; it exists as a negative control for the harness itself.
pub fn check_pair(
    base: &BaseLoss,
    clip: &ClipConfig,
    trials: usize,
    tolerance: f64,
    rng: &mut Rng,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let spec = LossSpec::new(base.clone(), *clip);
    let mut max_err = 0.0f64;
    for _ in 0..trials {
        let (z, y) = sample_case(clip, rng);
        let mut analytic = loss_forward_backward(&spec, &z, y)?.grad_z;
        if corrupt {
            analytic[0] += 1e-3;
        }
        let numeric = finite_difference_grad(&spec, &z, y)?;
        max_err = max_err.max(gradient_rel_error(&analytic, &numeric));
    }
    Ok(GradCheckReport {
        loss: base.label(),
        clip: clip.label(),
        trials,
        max_rel_error: max_err,
        pass: trials == 0 || max_err < tolerance,
    })
}

/// Run the cross product of losses × clips.
pub fn run_suite(
    losses: &[BaseLoss],
    clips: &[ClipConfig],
    trials: usize,
    tolerance: f64,
    seed: u64,
    corrupt: bool,
) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::with_capacity(losses.len() * clips.len());
    for base in losses {
        for clip in clips {
            let mut rng = Rng::from_seed(seed)
                .substream(&format!("gradcheck/{}/{}", base.label(), clip.label()));
            reports.push(check_pair(base, clip, trials, tolerance, &mut rng, corrupt)?);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let losses = [BaseLoss::Ce, BaseLoss::Nce, BaseLoss::nce_mae()];
        let clips = default_clips();
        let reports = run_suite(&losses, &clips, 50, 1e-6, 7, false).unwrap();
        for r in &reports {
            assert!(r.pass, "{} x {} err {}", r.loss, r.clip, r.max_rel_error);
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let reports = run_suite(&[BaseLoss::Ce], &[ClipConfig::identity()], 10, 1e-6, 7, true)
            .unwrap();
        assert!(reports.iter().any(|r| !r.pass));
    }

    #[test]
    fn zero_trials_vacuous_pass() {
        let reports =
            run_suite(&[BaseLoss::Ce], &[ClipConfig::identity()], 0, 1e-6, 7, false).unwrap();
        assert!(reports[0].pass);
        assert_eq!(reports[0].trials, 0);
    }

    #[test]
    fn norm_reg_gradient_checks_too() {
        let spec = LossSpec::new(BaseLoss::Ce, ClipConfig::by_norm(1.5)).with_norm_reg(0.1);
        let mut rng = Rng::from_seed(3);
        for _ in 0..50 {
            let (z, y) = sample_case(&spec.clip, &mut rng);
            let analytic = loss_forward_backward(&spec, &z, y).unwrap().grad_z;
            let numeric = finite_difference_grad(&spec, &z, y).unwrap();
            assert!(gradient_rel_error(&analytic, &numeric) < 1e-6);
        }
    }
}
