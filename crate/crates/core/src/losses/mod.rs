//! Training objectives: Gaussian-heatmap focal loss for the confidence map,
//! Gaussian-Wasserstein loss for matched rotated boxes, and smooth-L1 on the
//! regression channels — each with analytic gradients with respect to the
//! head outputs, plus the target builder and the combined, batch-normalized
//! total loss.
//!
//! All loss arithmetic runs in f64 with fixed-order reductions so values and
//! gradients are deterministic and cleanly checkable by finite differences.

pub mod gradcheck;
pub mod gwd;

use ndarray::{Array2, Array3};

use crate::boxes::{detection_order, iou_bev, Box3D, Detection, MAX_LOG_DIM};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::SensorGeometry;

/// Confidence values are clamped into [ε, 1−ε] before taking logarithms.
pub const CONF_EPS: f64 = 1e-6;

/// Floor for the mini-batch mean normalizers: a component whose batch mean is
/// already below this is negligible and must not be inflated back to 1 by
/// dividing by its own vanishing mean.
pub const NORM_GUARD: f64 = 1e-4;

/// Constants of the three objectives and of prediction-to-target matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Gaussian width of the heatmap targets, in bins.
    pub sigma: f64,
    /// Focal exponent on the prediction.
    pub alpha: f64,
    /// Focal penalty-reduction exponent on (1 − target).
    pub gamma: f64,
    /// Offset inside the Wasserstein transform 1 − 1/(τ + √d²).
    pub tau: f64,
    /// Smooth-L1 quadratic/linear crossover.
    pub beta: f64,
    /// Weight of the focal component in the combined loss.
    pub focal_weight: f64,
    /// Minimum BEV IoU for a decoded prediction to match a ground-truth box.
    pub match_min_iou: f64,
    /// Confidence threshold used when decoding predictions for matching.
    pub tau_cls: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            sigma: 3.0,
            alpha: 2.0,
            gamma: 4.0,
            tau: 1.65,
            beta: 1.0,
            focal_weight: 2.0,
            match_min_iou: 0.1,
            tau_cls: 0.3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v, lo) in [
            ("sigma", self.sigma, 0.0),
            ("alpha", self.alpha, 0.0),
            ("gamma", self.gamma, 0.0),
            ("tau", self.tau, 0.0),
            ("beta", self.beta, 0.0),
            ("focal_weight", self.focal_weight, 0.0),
        ] {
            if !v.is_finite() || v <= lo {
                return Err(Error::validation(format!(
                    "loss constant {name} must be finite and positive, got {v}"
                )));
            }
        }
        if !self.match_min_iou.is_finite() || !(0.0..=1.0).contains(&self.match_min_iou) {
            return Err(Error::validation("match_min_iou must lie in [0, 1]"));
        }
        if !(self.tau_cls > 0.0 && self.tau_cls < 1.0) {
            return Err(Error::validation("tau_cls must lie strictly inside (0, 1)"));
        }
        Ok(())
    }
}

/// One ground-truth object mapped onto the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub class_id: u32,
    pub r: usize,
    pub a: usize,
    pub bbox: Box3D,
}

/// Supervision targets for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    /// Heatmap targets, (n_cls, n_r, n_a_pad); exact 1.0 at peak bins,
    /// Gaussian decay elsewhere, objects of one class combined by max;
    /// background channel 0 stays all-zero.
    pub focal: Array3<f64>,
    /// Regression targets, (8, n_r, n_a_pad): (Δx, Δy, Δz) from the peak
    /// bin's polar center, log-dimensions, (sin yaw, cos yaw). Zero outside
    /// the mask.
    pub params: Array3<f64>,
    /// True exactly at peak bins.
    pub mask: Array2<bool>,
    /// One entry per object, in canonical order.
    pub peaks: Vec<Peak>,
}

/// Ground truth in a canonical order so downstream results never depend on
/// the list order handed in.
fn canonical_gt(gt: &[(u32, Box3D)]) -> Vec<(u32, Box3D)> {
    let mut sorted = gt.to_vec();
    sorted.sort_by(|(ca, a), (cb, b)| {
        let ka = (*ca, a.x, a.y, a.z, a.l, a.w, a.h, a.yaw);
        let kb = (*cb, b.x, b.y, b.z, b.l, b.w, b.h, b.yaw);
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted
}

/// Grid coordinates of a box center: nearest range/azimuth bin of its polar
/// position. Errors when the center falls off the unpadded grid.
fn center_bin(b: &Box3D, geometry: &SensorGeometry) -> Result<(usize, usize)> {
    let range = b.x.hypot(b.y);
    let azimuth_deg = b.y.atan2(b.x).to_degrees();
    let rb = geometry.range_to_bin(range).round();
    let ab = geometry.azimuth_deg_to_bin(azimuth_deg).round();
    if rb < 0.0 || rb >= geometry.n_r as f64 || ab < 0.0 || ab >= geometry.n_a as f64 {
        return Err(Error::validation(format!(
            "box center ({}, {}) maps outside the grid (bins {rb}, {ab})",
            b.x, b.y
        )));
    }
    Ok((rb as usize, ab as usize))
}

/// Regression target for a box anchored at bin (r, a).
fn encode_params(b: &Box3D, r: usize, a: usize, geometry: &SensorGeometry) -> [f64; 8] {
    let range = geometry.range_center(r);
    let azimuth = geometry.azimuth_center_deg(a).to_radians();
    [
        b.x - range * azimuth.cos(),
        b.y - range * azimuth.sin(),
        b.z - geometry.z0,
        b.l.ln(),
        b.w.ln(),
        b.h.ln(),
        b.yaw.sin(),
        b.yaw.cos(),
    ]
}

/// Builds the heatmap and regression targets for one frame.
pub fn build_targets(
    gt: &[(u32, Box3D)],
    geometry: &SensorGeometry,
    n_cls: usize,
    sigma: f64,
) -> Result<Targets> {
    geometry.validate()?;
    if n_cls < 2 {
        return Err(Error::validation(
            "n_cls must be at least 2 (background plus one class)",
        ));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::validation(format!(
            "heatmap sigma must be finite and positive, got {sigma}"
        )));
    }
    let (n_r, n_a_pad) = (geometry.n_r, geometry.n_a_pad());
    let mut focal = Array3::zeros((n_cls, n_r, n_a_pad));
    let mut params = Array3::zeros((8, n_r, n_a_pad));
    let mut mask = Array2::from_elem((n_r, n_a_pad), false);
    let mut peaks = Vec::with_capacity(gt.len());

    for (class_id, bbox) in canonical_gt(gt) {
        if class_id == 0 || class_id as usize >= n_cls {
            return Err(Error::validation(format!(
                "class_id {class_id} outside [1, {})",
                n_cls
            )));
        }
        let (pr, pa) = center_bin(&bbox, geometry)?;
        let c = class_id as usize;
        let inv = 1.0 / (2.0 * sigma * sigma);
        for r in 0..n_r {
            let dr = r as f64 - pr as f64;
            for a in 0..n_a_pad {
                let da = a as f64 - pa as f64;
                let g = (-(dr * dr + da * da) * inv).exp();
                if g > focal[[c, r, a]] {
                    focal[[c, r, a]] = g;
                }
            }
        }
        let enc = encode_params(&bbox, pr, pa, geometry);
        for (ch, v) in enc.into_iter().enumerate() {
            params[[ch, pr, pa]] = v;
        }
        mask[[pr, pa]] = true;
        peaks.push(Peak {
            class_id,
            r: pr,
            a: pa,
            bbox,
        });
    }
    Ok(Targets {
        focal,
        params,
        mask,
        peaks,
    })
}

/// Penalty-reduced pixelwise focal loss on continuous heatmap targets, with
/// the gradient with respect to the (post-sigmoid) confidence values.
///
/// At target-1 bins the term is −(1−p)^α·log p; elsewhere it is
/// −(1−y)^γ·p^α·log(1−p). The value is the mean over every bin of every
/// channel.
pub fn focal_loss(
    conf: &Array3<f64>,
    target: &Array3<f64>,
    alpha: f64,
    gamma: f64,
) -> Result<(f64, Array3<f64>)> {
    if conf.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            what: "focal target",
            expected: conf.shape().to_vec(),
            actual: target.shape().to_vec(),
        });
    }
    let n = conf.len() as f64;
    let mut grad = Array3::zeros(conf.raw_dim());
    let mut total = 0.0f64;
    for ((idx, &p_raw), &y) in conf.indexed_iter().zip(target.iter()) {
        let p = p_raw.clamp(CONF_EPS, 1.0 - CONF_EPS);
        let inside = p_raw > CONF_EPS && p_raw < 1.0 - CONF_EPS;
        let (value, dvalue) = if y >= 1.0 {
            let one_m = 1.0 - p;
            let v = -one_m.powf(alpha) * p.ln();
            let d = alpha * one_m.powf(alpha - 1.0) * p.ln() - one_m.powf(alpha) / p;
            (v, d)
        } else {
            let damp = (1.0 - y).powf(gamma);
            let v = -damp * p.powf(alpha) * (1.0 - p).ln();
            let d = -damp * (alpha * p.powf(alpha - 1.0) * (1.0 - p).ln() - p.powf(alpha) / (1.0 - p));
            (v, d)
        };
        total += value;
        grad[idx] = if inside { dvalue / n } else { 0.0 };
    }
    Ok((total / n, grad))
}

/// Smooth-L1 over the 8 regression channels at masked bins: quadratic below
/// β, linear above, averaged over the masked bins; exactly zero (with zero
/// gradient) when the mask is empty.
pub fn smooth_l1_loss(
    pred: &Array3<f64>,
    target: &Array3<f64>,
    mask: &Array2<bool>,
    beta: f64,
) -> Result<(f64, Array3<f64>)> {
    if pred.shape() != target.shape() || pred.shape()[0] != 8 {
        return Err(Error::ShapeMismatch {
            what: "regression target",
            expected: pred.shape().to_vec(),
            actual: target.shape().to_vec(),
        });
    }
    if mask.shape() != [pred.shape()[1], pred.shape()[2]] {
        return Err(Error::ShapeMismatch {
            what: "regression mask",
            expected: pred.shape()[1..].to_vec(),
            actual: mask.shape().to_vec(),
        });
    }
    let mut grad = Array3::zeros(pred.raw_dim());
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0f64;
    for ((r, a), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        for ch in 0..8 {
            let d = pred[[ch, r, a]] - target[[ch, r, a]];
            if d.abs() <= beta {
                total += d * d / (2.0 * beta);
                grad[[ch, r, a]] = d / beta * inv;
            } else {
                total += d.abs() - beta / 2.0;
                grad[[ch, r, a]] = d.signum() * inv;
            }
        }
    }
    Ok((total * inv, grad))
}

/// One frame of a training batch: head outputs in f64 plus ground truth.
#[derive(Debug, Clone)]
pub struct FrameSample {
    /// (n_cls, n_r, n_a_pad), values in [0, 1].
    pub conf: Array3<f64>,
    /// (8, n_r, n_a_pad).
    pub params: Array3<f64>,
    pub gt: Vec<(u32, Box3D)>,
}

/// Gradients of the combined loss for one frame, matching the head output
/// shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrads {
    pub d_conf: Array3<f64>,
    pub d_params: Array3<f64>,
}

/// Per-component values (normalized and raw), the frozen normalizers, and
/// per-frame gradients of the combined loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_foc: f64,
    pub l_gwd: f64,
    pub l_l1: f64,
    pub l_all: f64,
    pub raw_foc: f64,
    pub raw_gwd: f64,
    pub raw_l1: f64,
    /// Normalizers actually used (batch means floored by [`NORM_GUARD`]);
    /// gradients treat them as constants.
    pub norm_foc: f64,
    pub norm_gwd: f64,
    pub norm_l1: f64,
    /// Total matched prediction/ground-truth pairs across the batch.
    pub matched: usize,
    pub grads: Vec<FrameGrads>,
}

impl LossReport {
    /// Line record `foc gwd l1 all` of the normalized components.
    pub fn to_record(&self) -> String {
        format!("{} {} {} {}", self.l_foc, self.l_gwd, self.l_l1, self.l_all)
    }
}

/// A decoded prediction kept with its grid anchor and raw angle channels so
/// loss gradients can be routed back to the parameter map.
struct Anchor {
    r: usize,
    a: usize,
    raw_sin: f64,
    raw_cos: f64,
    det: Detection,
}

fn decode_anchors(
    conf: &Array3<f64>,
    params: &Array3<f64>,
    geometry: &SensorGeometry,
    tau_cls: f64,
) -> Result<Vec<Anchor>> {
    let n_cls = conf.shape()[0];
    let mut out = Vec::new();
    for c in 1..n_cls {
        for r in 0..geometry.n_r {
            for a in 0..geometry.n_a {
                let score = conf[[c, r, a]];
                if score < tau_cls {
                    continue;
                }
                let range = geometry.range_center(r);
                let azimuth = geometry.azimuth_center_deg(a).to_radians();
                let x = range * azimuth.cos() + params[[0, r, a]];
                let y = range * azimuth.sin() + params[[1, r, a]];
                let z = geometry.z0 + params[[2, r, a]];
                let l = params[[3, r, a]].clamp(-MAX_LOG_DIM, MAX_LOG_DIM).exp();
                let w = params[[4, r, a]].clamp(-MAX_LOG_DIM, MAX_LOG_DIM).exp();
                let h = params[[5, r, a]].clamp(-MAX_LOG_DIM, MAX_LOG_DIM).exp();
                let raw_sin = params[[6, r, a]];
                let raw_cos = params[[7, r, a]];
                let bbox = Box3D::new(x, y, z, l, w, h, raw_sin.atan2(raw_cos))?;
                out.push(Anchor {
                    r,
                    a,
                    raw_sin,
                    raw_cos,
                    det: Detection::new(c as u32, score.clamp(0.0, 1.0), bbox)?,
                });
            }
        }
    }
    out.sort_by(|p, q| detection_order(&p.det, &q.det));
    Ok(out)
}

struct FrameEval {
    foc: f64,
    gwd: f64,
    l1: f64,
    matched: usize,
    d_foc: Array3<f64>,
    d_gwd: Array3<f64>,
    d_l1: Array3<f64>,
}

fn eval_frame(
    frame: &FrameSample,
    geometry: &SensorGeometry,
    n_cls: usize,
    cfg: &LossConfig,
) -> Result<FrameEval> {
    let gt = canonical_gt(&frame.gt);
    let targets = build_targets(&gt, geometry, n_cls, cfg.sigma)?;
    let (foc, d_foc) = focal_loss(&frame.conf, &targets.focal, cfg.alpha, cfg.gamma)?;
    let (l1, d_l1) = smooth_l1_loss(&frame.params, &targets.params, &targets.mask, cfg.beta)?;

    // Greedy score-ordered matching of raw decoded boxes to ground truth:
    // each prediction takes the highest-IoU still-unmatched box if the
    // overlap clears the floor.
    let anchors = decode_anchors(&frame.conf, &frame.params, geometry, cfg.tau_cls)?;
    let mut gt_used = vec![false; gt.len()];
    let mut d_gwd = Array3::zeros(frame.params.raw_dim());
    let mut gwd_sum = 0.0f64;
    let mut matched = 0usize;
    for anchor in &anchors {
        let mut best: Option<(usize, f64)> = None;
        for (gi, (_, gbox)) in gt.iter().enumerate() {
            if gt_used[gi] {
                continue;
            }
            let iou = iou_bev(&anchor.det.bbox, gbox);
            if iou >= cfg.match_min_iou && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            gt_used[gi] = true;
            let (value, grad) = gwd::gwd_loss_raw(
                &anchor.det.bbox,
                anchor.raw_sin,
                anchor.raw_cos,
                &gt[gi].1,
                cfg.tau,
            );
            gwd_sum += value;
            matched += 1;
            for (ch, g) in grad.into_iter().enumerate() {
                d_gwd[[ch, anchor.r, anchor.a]] += g;
            }
        }
    }
    let gwd = if matched > 0 {
        let inv = 1.0 / matched as f64;
        d_gwd.mapv_inplace(|g| g * inv);
        gwd_sum * inv
    } else {
        0.0
    };

    Ok(FrameEval {
        foc,
        gwd,
        l1,
        matched,
        d_foc,
        d_gwd,
        d_l1,
    })
}

/// Combined three-part loss over a mini-batch.
///
/// Per frame, the focal, Wasserstein and smooth-L1 components are computed
/// with their own reductions; each component is then normalized by its batch
/// mean (floored by [`NORM_GUARD`] and treated as a constant for gradients)
/// and combined as `focal_weight·foc + gwd + l1`.
pub fn total_loss(
    batch: &[FrameSample],
    geometry: &SensorGeometry,
    cfg: &LossConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    geometry.validate()?;
    if batch.is_empty() {
        return Err(Error::validation("loss batch must hold at least one frame"));
    }
    let n_cls = batch[0].conf.shape()[0];
    let expect_conf = [n_cls, geometry.n_r, geometry.n_a_pad()];
    let expect_params = [8, geometry.n_r, geometry.n_a_pad()];
    for frame in batch {
        if frame.conf.shape() != expect_conf || n_cls < 2 {
            return Err(Error::ShapeMismatch {
                what: "batch confidence map",
                expected: expect_conf.to_vec(),
                actual: frame.conf.shape().to_vec(),
            });
        }
        if frame.params.shape() != expect_params {
            return Err(Error::ShapeMismatch {
                what: "batch parameter map",
                expected: expect_params.to_vec(),
                actual: frame.params.shape().to_vec(),
            });
        }
    }

    let evals: Vec<Result<FrameEval>> =
        exec::map_collect(batch.len(), |i| eval_frame(&batch[i], geometry, n_cls, cfg));
    let mut frames = Vec::with_capacity(batch.len());
    for e in evals {
        frames.push(e?);
    }

    let b = batch.len() as f64;
    let raw_foc = frames.iter().map(|f| f.foc).sum::<f64>() / b;
    let raw_gwd = frames.iter().map(|f| f.gwd).sum::<f64>() / b;
    let raw_l1 = frames.iter().map(|f| f.l1).sum::<f64>() / b;
    let matched = frames.iter().map(|f| f.matched).sum();

    let norm_foc = raw_foc.max(NORM_GUARD);
    let norm_gwd = raw_gwd.max(NORM_GUARD);
    let norm_l1 = raw_l1.max(NORM_GUARD);
    let l_foc = raw_foc / norm_foc;
    let l_gwd = raw_gwd / norm_gwd;
    let l_l1 = raw_l1 / norm_l1;
    let l_all = cfg.focal_weight * l_foc + l_gwd + l_l1;

    let foc_scale = cfg.focal_weight / (norm_foc * b);
    let gwd_scale = 1.0 / (norm_gwd * b);
    let l1_scale = 1.0 / (norm_l1 * b);
    let grads = frames
        .into_iter()
        .map(|f| FrameGrads {
            d_conf: f.d_foc.mapv(|g| g * foc_scale),
            d_params: &f.d_gwd.mapv(|g| g * gwd_scale) + &f.d_l1.mapv(|g| g * l1_scale),
        })
        .collect();

    Ok(LossReport {
        l_foc,
        l_gwd,
        l_l1,
        l_all,
        raw_foc,
        raw_gwd,
        raw_l1,
        norm_foc,
        norm_gwd,
        norm_l1,
        matched,
        grads,
    })
}
