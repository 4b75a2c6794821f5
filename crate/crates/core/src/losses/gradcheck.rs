//! Finite-difference verification of the analytic loss gradients.
//!
//! Each suite builds randomized instances that stay clear of the places
//! where the losses are only piecewise smooth (probability clamps, the
//! smooth-L1 crossover, the confidence threshold, zero Wasserstein
//! distance, match reassignments), then compares every analytic partial
//! against a central difference.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gwd::{gwd_d2, gwd_loss_raw};
use super::{focal_loss, smooth_l1_loss, total_loss, FrameSample, LossConfig};
use crate::boxes::Box3D;
use crate::error::Result;
use crate::tensor::SensorGeometry;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Error floor: when both the analytic and numeric values are at most this,
/// the pair counts as agreeing exactly.
pub const ABS_FLOOR: f64 = 1e-6;

/// Relative disagreement between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale <= ABS_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Outcome of one verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: &'static str,
    /// Randomized instances generated.
    pub trials: usize,
    /// Individual partial derivatives compared.
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<10} {:>4} trials {:>6} partials  max rel err {:9.3e}  tol {:7.1e}  {}",
            self.name,
            self.trials,
            self.checked,
            self.max_rel_err,
            self.tolerance,
            if self.pass { "ok" } else { "FAIL" }
        )
    }
}

fn finish(
    name: &'static str,
    trials: usize,
    checked: usize,
    max_rel_err: f64,
    tolerance: f64,
) -> GradCheckReport {
    GradCheckReport {
        name,
        trials,
        checked,
        max_rel_err,
        pass: max_rel_err <= tolerance,
        tolerance,
    }
}

/// Verifies the focal-loss gradient on random confidence maps against
/// random heatmap-style targets.
pub fn check_focal(seed: u64, trials: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (alpha, gamma) = (2.0, 4.0);
    let shape = (3usize, 6usize, 8usize);
    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..trials {
        let mut target = Array3::zeros(shape);
        for c in 1..shape.0 {
            // One exact peak per class plus smooth decay values elsewhere.
            let pr = rng.random_range(0..shape.1);
            let pa = rng.random_range(0..shape.2);
            for r in 0..shape.1 {
                for a in 0..shape.2 {
                    let d2 = ((r as f64 - pr as f64).powi(2) + (a as f64 - pa as f64).powi(2))
                        / (2.0 * 2.25);
                    target[[c, r, a]] = (-d2).exp();
                }
            }
            target[[c, pr, pa]] = 1.0;
        }
        let mut conf = Array3::zeros(shape);
        // Keep probabilities a full step plus margin away from the clamp
        // interval's ends.
        conf.mapv_inplace(|_| rng.random_range(0.05..0.95));
        let (_, grad) = focal_loss(&conf, &target, alpha, gamma)?;
        for _ in 0..10 {
            let idx = [
                rng.random_range(0..shape.0),
                rng.random_range(0..shape.1),
                rng.random_range(0..shape.2),
            ];
            let mut hi = conf.clone();
            let mut lo = conf.clone();
            hi[idx] += FD_STEP;
            lo[idx] -= FD_STEP;
            let (vh, _) = focal_loss(&hi, &target, alpha, gamma)?;
            let (vl, _) = focal_loss(&lo, &target, alpha, gamma)?;
            let numeric = (vh - vl) / (2.0 * FD_STEP);
            max_err = max_err.max(relative_error(grad[idx], numeric));
            checked += 1;
        }
    }
    Ok(finish("focal", trials, checked, max_err, 1e-4))
}

/// Verifies the smooth-L1 gradient with residuals kept away from the
/// quadratic/linear crossover.
pub fn check_smooth_l1(seed: u64, trials: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = 1.0;
    let (h, w) = (5usize, 6usize);
    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..trials {
        let target = Array3::from_shape_fn((8, h, w), |_| rng.random_range(-1.0..1.0));
        let mut mask = Array2::from_elem((h, w), false);
        for _ in 0..6 {
            mask[[rng.random_range(0..h), rng.random_range(0..w)]] = true;
        }
        let mut pred = target.clone();
        pred.mapv_inplace(|t| {
            // Residual in [−1.8, 1.8] staying at least 0.05 from ±β.
            let mut d: f64 = rng.random_range(-1.8..1.8);
            while (d.abs() - beta).abs() < 0.05 {
                d = rng.random_range(-1.8..1.8);
            }
            t + d
        });
        let (_, grad) = smooth_l1_loss(&pred, &target, &mask, beta)?;
        for _ in 0..10 {
            let idx = [
                rng.random_range(0..8),
                rng.random_range(0..h),
                rng.random_range(0..w),
            ];
            let mut hi = pred.clone();
            let mut lo = pred.clone();
            hi[idx] += FD_STEP;
            lo[idx] -= FD_STEP;
            let (vh, _) = smooth_l1_loss(&hi, &target, &mask, beta)?;
            let (vl, _) = smooth_l1_loss(&lo, &target, &mask, beta)?;
            let numeric = (vh - vl) / (2.0 * FD_STEP);
            max_err = max_err.max(relative_error(grad[idx], numeric));
            checked += 1;
        }
    }
    Ok(finish("smooth_l1", trials, checked, max_err, 1e-4))
}

/// Box decoded from 8 raw regression values around a fixed anchor point.
fn raw_to_box(base: (f64, f64, f64), raw: &[f64; 8]) -> Box3D {
    Box3D::new(
        base.0 + raw[0],
        base.1 + raw[1],
        base.2 + raw[2],
        raw[3].exp(),
        raw[4].exp(),
        raw[5].exp(),
        raw[6].atan2(raw[7]),
    )
    .expect("raw channels in the sampled ranges always decode to a valid box")
}

/// Verifies the Wasserstein-loss gradient through the raw regression
/// channels on random, clearly separated box pairs.
pub fn check_gwd(seed: u64, trials: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 1.65;
    let base = (10.0, 0.0, 0.5);
    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    let mut done = 0usize;
    while done < trials {
        let gt = Box3D::new(
            base.0 + rng.random_range(-1.0..1.0),
            base.1 + rng.random_range(-1.0..1.0),
            base.2 + rng.random_range(-0.5..0.5),
            rng.random_range(2.0..5.0),
            rng.random_range(1.0..3.0),
            rng.random_range(1.0..2.5),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        )?;
        let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let radius = rng.random_range(0.5..1.5);
        let raw = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(2.0f64..5.0).ln(),
            rng.random_range(1.0f64..3.0).ln(),
            rng.random_range(1.0f64..2.5).ln(),
            radius * angle.sin(),
            radius * angle.cos(),
        ];
        let pred = raw_to_box(base, &raw);
        // The transform has a square-root kink at zero distance; keep the
        // pair clearly apart so central differences are trustworthy.
        if gwd_d2(&pred, &gt) < 0.05 {
            continue;
        }
        done += 1;
        let (_, grad) = gwd_loss_raw(&pred, raw[6], raw[7], &gt, tau);
        for (ch, &g) in grad.iter().enumerate() {
            let mut hi = raw;
            let mut lo = raw;
            hi[ch] += FD_STEP;
            lo[ch] -= FD_STEP;
            let bh = raw_to_box(base, &hi);
            let bl = raw_to_box(base, &lo);
            let (vh, _) = gwd_loss_raw(&bh, hi[6], hi[7], &gt, tau);
            let (vl, _) = gwd_loss_raw(&bl, lo[6], lo[7], &gt, tau);
            let numeric = (vh - vl) / (2.0 * FD_STEP);
            max_err = max_err.max(relative_error(g, numeric));
            checked += 1;
        }
    }
    Ok(finish("gwd", trials, checked, max_err, 1e-3))
}

fn total_geometry() -> SensorGeometry {
    SensorGeometry {
        n_r: 8,
        n_a: 7,
        n_d: 4,
        n_e: 4,
        range_max: 24.0,
        azimuth_fov: 60.0,
        elevation_fov: 20.0,
        doppler_max: 8.0,
        z0: 0.2,
    }
}

/// A batch engineered so every piecewise boundary of the combined loss is at
/// least a full step away: confidences clear of the decode threshold and the
/// probability clamps, residuals clear of the smooth-L1 crossover, and
/// matches that cannot flip under the perturbation.
fn total_instance(rng: &mut ChaCha8Rng, geometry: &SensorGeometry) -> Result<Vec<FrameSample>> {
    let n_cls = 3;
    let shape = (n_cls, geometry.n_r, geometry.n_a_pad());
    let mut batch = Vec::new();
    for f in 0..2 {
        let mut conf = Array3::zeros(shape);
        conf.mapv_inplace(|_| rng.random_range(0.01..0.05));
        let mut params = Array3::zeros((8, geometry.n_r, geometry.n_a_pad()));
        params.mapv_inplace(|_| rng.random_range(-0.3..0.3));

        let mut gt = Vec::new();
        // Two anchored objects far apart on the grid, plus one spurious
        // above-threshold anchor that overlaps nothing.
        let bins = if f == 0 { [(4, 3), (2, 1)] } else { [(5, 4), (2, 2)] };
        for (k, &(pr, pa)) in bins.iter().enumerate() {
            let class = (k + 1) as u32;
            let range = geometry.range_center(pr);
            let azimuth = geometry.azimuth_center_deg(pa).to_radians();
            let dims = [
                rng.random_range(3.0..4.5),
                rng.random_range(1.6..2.4),
                rng.random_range(1.2..1.8),
            ];
            let yaw = rng.random_range(-0.6..0.6);
            let gt_box = Box3D::new(
                range * azimuth.cos(),
                range * azimuth.sin(),
                geometry.z0 + rng.random_range(-0.2..0.4),
                dims[0],
                dims[1],
                dims[2],
                yaw,
            )?;
            gt.push((class, gt_box));
            conf[[class as usize, pr, pa]] = rng.random_range(0.6..0.9);
            let truth = [
                0.0,
                0.0,
                gt_box.z - geometry.z0,
                dims[0].ln(),
                dims[1].ln(),
                dims[2].ln(),
                yaw.sin(),
                yaw.cos(),
            ];
            for (ch, t) in truth.into_iter().enumerate() {
                // Offsets keep the residual inside the quadratic branch and
                // the prediction overlapping its own object only.
                params[[ch, pr, pa]] = t + rng.random_range(-0.35..0.35);
            }
        }
        conf[[1, 7, 6]] = rng.random_range(0.45..0.55);
        batch.push(FrameSample { conf, params, gt });
    }
    Ok(batch)
}

/// Verifies the combined-loss gradients, holding the batch-mean normalizers
/// at their unperturbed values exactly as the analytic gradients do.
pub fn check_total(seed: u64, trials: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = total_geometry();
    let cfg = LossConfig::default();
    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..trials {
        let batch = total_instance(&mut rng, &geometry)?;
        let report = total_loss(&batch, &geometry, &cfg)?;
        let norms = (report.norm_foc, report.norm_gwd, report.norm_l1);
        let objective = |batch: &[FrameSample]| -> Result<f64> {
            let r = total_loss(batch, &geometry, &cfg)?;
            Ok(cfg.focal_weight * r.raw_foc / norms.0
                + r.raw_gwd / norms.1
                + r.raw_l1 / norms.2)
        };
        for _ in 0..8 {
            let f = rng.random_range(0..batch.len());
            let on_conf = rng.random_range(0..2) == 0;
            let idx = if on_conf {
                [
                    rng.random_range(0..batch[f].conf.shape()[0]),
                    rng.random_range(0..geometry.n_r),
                    rng.random_range(0..geometry.n_a_pad()),
                ]
            } else {
                [
                    rng.random_range(0..8),
                    rng.random_range(0..geometry.n_r),
                    rng.random_range(0..geometry.n_a_pad()),
                ]
            };
            let analytic = if on_conf {
                report.grads[f].d_conf[idx]
            } else {
                report.grads[f].d_params[idx]
            };
            let mut hi = batch.clone();
            let mut lo = batch.clone();
            if on_conf {
                // Skip indices where the step would cross the decode
                // threshold and change the matched set.
                let p = batch[f].conf[idx];
                if (p - cfg.tau_cls).abs() < 0.01 {
                    continue;
                }
                hi[f].conf[idx] += FD_STEP;
                lo[f].conf[idx] -= FD_STEP;
            } else {
                hi[f].params[idx] += FD_STEP;
                lo[f].params[idx] -= FD_STEP;
            }
            let numeric = (objective(&hi)? - objective(&lo)?) / (2.0 * FD_STEP);
            max_err = max_err.max(relative_error(analytic, numeric));
            checked += 1;
        }
    }
    Ok(finish("total", trials, checked, max_err, 1e-3))
}

/// Runs every suite with seeds derived from `seed`.
pub fn run_all(seed: u64, trials: usize) -> Result<Vec<GradCheckReport>> {
    Ok(vec![
        check_focal(seed, trials)?,
        check_smooth_l1(seed.wrapping_add(1), trials)?,
        check_gwd(seed.wrapping_add(2), trials)?,
        check_total(seed.wrapping_add(3), trials.max(2) / 2)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::super::{build_targets, CONF_EPS};
    use super::*;

    #[test]
    fn relative_error_floors_tiny_pairs() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-7, -1e-7), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn focal_gradients_match_differences() {
        let r = check_focal(7, 4).unwrap();
        assert!(r.pass, "{r}");
        assert_eq!(r.checked, 40);
    }

    #[test]
    fn smooth_l1_gradients_match_differences() {
        let r = check_smooth_l1(11, 4).unwrap();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn gwd_gradients_match_differences() {
        let r = check_gwd(13, 8).unwrap();
        assert!(r.pass, "{r}");
        assert_eq!(r.checked, 64);
    }

    #[test]
    fn total_gradients_match_differences() {
        let r = check_total(17, 2).unwrap();
        assert!(r.pass, "{r}");
        assert!(r.checked > 0);
    }

    #[test]
    fn probabilities_near_clamp_bounds_report_zero_gradient() {
        let conf = Array3::from_elem((1, 2, 2), CONF_EPS / 2.0);
        let target = Array3::zeros((1, 2, 2));
        let (_, grad) = focal_loss(&conf, &target, 2.0, 4.0).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn targets_are_reused_consistently_across_suites() {
        // The engineered total-loss batch must decode at least two matched
        // predictions per frame, or the Wasserstein term would silently
        // drop out of the combined check.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geometry = total_geometry();
        let batch = total_instance(&mut rng, &geometry).unwrap();
        let report = total_loss(&batch, &geometry, &LossConfig::default()).unwrap();
        assert_eq!(report.matched, 4);
        for frame in &batch {
            let t = build_targets(&frame.gt, &geometry, 3, 3.0).unwrap();
            assert_eq!(t.peaks.len(), 2);
        }
    }
}
