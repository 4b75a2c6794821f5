//! Gaussian-Wasserstein regression loss for rotated boxes.
//!
//! A box maps to a Gaussian whose mean is the box center and whose covariance
//! is `R_θ · diag((l/2)², (w/2)², (h/2)²) · R_θᵀ`. The squared 2-Wasserstein
//! distance between two such Gaussians,
//!
//! ```text
//! d² = ‖μ₁ − μ₂‖² + tr(Σ₁ + Σ₂ − 2·(Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2}),
//! ```
//!
//! is evaluated through symmetric eigendecompositions, and the loss is
//! `1 − 1/(τ + √d²)`. Gradients flow analytically through both matrix square
//! roots via the Daleckii–Krein divided-difference form, which stays valid at
//! repeated eigenvalues.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::boxes::Box3D;

/// Floor applied to eigenvalue-derived denominators so near-singular
/// covariances degrade gracefully instead of dividing by ~0.
const EIG_GUARD: f64 = 1e-9;

/// The trace term is non-negative in exact arithmetic; computed values below
/// this fraction of the combined covariance scale are rounding residue and
/// are clamped to exactly zero, which keeps d²(a, a) = 0 bitwise.
const TRACE_RESIDUE: f64 = 1e-12;

/// Gaussian embedding of a box: mean at the center, covariance with the
/// half-dimensions squared as principal variances, rotated by yaw about z.
pub fn box_gaussian(b: &Box3D) -> (Vector3<f64>, Matrix3<f64>) {
    let (s, c) = b.yaw.sin_cos();
    let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let d = Matrix3::from_diagonal(&Vector3::new(
        (b.l / 2.0) * (b.l / 2.0),
        (b.w / 2.0) * (b.w / 2.0),
        (b.h / 2.0) * (b.h / 2.0),
    ));
    (Vector3::new(b.x, b.y, b.z), r * d * r.transpose())
}

struct Sqrtm {
    vectors: Matrix3<f64>,
    sqrt_eig: Vector3<f64>,
    root: Matrix3<f64>,
}

fn sqrtm(sym: &Matrix3<f64>) -> Sqrtm {
    let eig = SymmetricEigen::new(*sym);
    let sqrt_eig = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let root = eig.eigenvectors * Matrix3::from_diagonal(&sqrt_eig) * eig.eigenvectors.transpose();
    Sqrtm {
        vectors: eig.eigenvectors,
        sqrt_eig,
        root,
    }
}

/// Directional derivative of `sqrtm` at the decomposed matrix, applied to the
/// symmetric direction `d`: `U · [ (UᵀdU)_ij / (√λ_i + √λ_j) ] · Uᵀ`.
fn sqrtm_differential(s: &Sqrtm, d: &Matrix3<f64>) -> Matrix3<f64> {
    let projected = s.vectors.transpose() * d * s.vectors;
    let mut scaled = projected;
    for i in 0..3 {
        for j in 0..3 {
            let denom = (s.sqrt_eig[i] + s.sqrt_eig[j]).max(EIG_GUARD);
            scaled[(i, j)] /= denom;
        }
    }
    s.vectors * scaled * s.vectors.transpose()
}

/// d² plus its partial derivatives with respect to the first box's center,
/// dimensions and yaw.
pub(crate) struct GwdCore {
    pub d2: f64,
    pub d_center: [f64; 3],
    pub d_dims: [f64; 3],
    pub d_theta: f64,
}

pub(crate) fn gwd_core(pred: &Box3D, gt: &Box3D) -> GwdCore {
    let (mu1, sigma1) = box_gaussian(pred);
    let (mu2, sigma2) = box_gaussian(gt);
    let dmu = mu1 - mu2;

    let s1 = sqrtm(&sigma1);
    let b_raw = s1.root * sigma2 * s1.root;
    let b = (b_raw + b_raw.transpose()) * 0.5;
    let s2 = sqrtm(&b);

    let tr1 = sigma1.trace();
    let tr2 = sigma2.trace();
    let tr_root = s2.sqrt_eig.sum();
    let mut trace_term = tr1 + tr2 - 2.0 * tr_root;
    if trace_term < TRACE_RESIDUE * (tr1 + tr2) {
        trace_term = 0.0;
    }
    let d2 = dmu.norm_squared() + trace_term;

    // Directions of Σ₁ per box parameter: Σ₁ = R D Rᵀ with
    // D = diag((l/2)², (w/2)², (h/2)²).
    let (sy, cy) = pred.yaw.sin_cos();
    let r = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    let r_prime = Matrix3::new(-sy, -cy, 0.0, cy, -sy, 0.0, 0.0, 0.0, 0.0);
    let diag = Vector3::new(
        (pred.l / 2.0) * (pred.l / 2.0),
        (pred.w / 2.0) * (pred.w / 2.0),
        (pred.h / 2.0) * (pred.h / 2.0),
    );
    let mut dirs = [Matrix3::zeros(); 4];
    for (k, half) in [pred.l / 2.0, pred.w / 2.0, pred.h / 2.0].into_iter().enumerate() {
        let mut d_diag = Vector3::zeros();
        d_diag[k] = half; // d/d(dim) of (dim/2)² = dim/2
        dirs[k] = r * Matrix3::from_diagonal(&d_diag) * r.transpose();
    }
    let d_full = Matrix3::from_diagonal(&diag);
    dirs[3] = r_prime * d_full * r.transpose() + r * d_full * r_prime.transpose();

    // dT = tr(dΣ₁) − 2·tr(dM) where M = sqrtm(B) and
    // dB = dA·Σ₂·A + A·Σ₂·dA with A = sqrtm(Σ₁).
    let mut d_trace = [0.0f64; 4];
    for (k, dir) in dirs.iter().enumerate() {
        let da = sqrtm_differential(&s1, dir);
        let db_raw = da * sigma2 * s1.root + s1.root * sigma2 * da;
        let db = (db_raw + db_raw.transpose()) * 0.5;
        let projected = s2.vectors.transpose() * db * s2.vectors;
        let mut d_tr_root = 0.0;
        for i in 0..3 {
            d_tr_root += projected[(i, i)] / (2.0 * s2.sqrt_eig[i]).max(EIG_GUARD);
        }
        d_trace[k] = dir.trace() - 2.0 * d_tr_root;
    }

    GwdCore {
        d2,
        d_center: [2.0 * dmu.x, 2.0 * dmu.y, 2.0 * dmu.z],
        d_dims: [d_trace[0], d_trace[1], d_trace[2]],
        d_theta: d_trace[3],
    }
}

/// Squared 2-Wasserstein distance between the Gaussian embeddings of two
/// boxes. Symmetric, non-negative, exactly zero for identical boxes.
pub fn gwd_d2(a: &Box3D, b: &Box3D) -> f64 {
    gwd_core(a, b).d2
}

/// Loss value and gradient with respect to the eight raw regression values
/// `(Δx, Δy, Δz, ln l, ln w, ln h, sinθ_raw, cosθ_raw)` that decode into
/// `pred`. The raw sin/cos pair is passed explicitly because the network does
/// not emit a normalized pair; its norm scales the yaw gradient.
pub(crate) fn gwd_loss_raw(
    pred: &Box3D,
    raw_sin: f64,
    raw_cos: f64,
    gt: &Box3D,
    tau: f64,
) -> (f64, [f64; 8]) {
    let core = gwd_core(pred, gt);
    let root = core.d2.max(0.0).sqrt();
    let value = 1.0 - 1.0 / (tau + root);
    // d loss / d d² through the square-root transform; flat at d² = 0 where
    // the transform is non-differentiable but the loss is at its floor.
    let dl_dd2 = if root > 0.0 {
        1.0 / ((tau + root) * (tau + root) * 2.0 * root)
    } else {
        0.0
    };
    let norm2 = raw_sin * raw_sin + raw_cos * raw_cos;
    let (dth_dsin, dth_dcos) = if norm2 > 0.0 {
        (raw_cos / norm2, -raw_sin / norm2)
    } else {
        (0.0, 0.0)
    };
    let grad = [
        dl_dd2 * core.d_center[0],
        dl_dd2 * core.d_center[1],
        dl_dd2 * core.d_center[2],
        dl_dd2 * core.d_dims[0] * pred.l, // chain through dims = exp(raw)
        dl_dd2 * core.d_dims[1] * pred.w,
        dl_dd2 * core.d_dims[2] * pred.h,
        dl_dd2 * core.d_theta * dth_dsin,
        dl_dd2 * core.d_theta * dth_dcos,
    ];
    (value, grad)
}

/// Loss value and gradient with respect to the prediction's raw regression
/// values, taking the normalized `(sin yaw, cos yaw)` pair as the raw angle
/// channels.
pub fn gwd_loss(pred: &Box3D, gt: &Box3D, tau: f64) -> (f64, [f64; 8]) {
    let (s, c) = pred.yaw.sin_cos();
    gwd_loss_raw(pred, s, c, gt, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> Box3D {
        Box3D::new(x, y, z, l, w, h, yaw).unwrap()
    }

    #[test]
    fn identical_boxes_have_exactly_zero_distance() {
        let a = bx(3.0, -1.0, 0.4, 4.2, 1.8, 1.5, 0.7);
        assert_eq!(gwd_d2(&a, &a), 0.0);
        let (loss, grad) = gwd_loss(&a, &a, 1.65);
        assert!((loss - (1.0 - 1.0 / 1.65)).abs() < 1e-15);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn unit_center_offset_with_equal_shape() {
        let a = bx(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.3);
        let b = bx(1.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.3);
        assert!((gwd_d2(&a, &b) - 1.0).abs() < 1e-12);
        let (loss, _) = gwd_loss(&a, &b, 1.65);
        assert!((loss - (1.0 - 1.0 / 2.65)).abs() < 1e-12);
    }

    #[test]
    fn distance_is_symmetric() {
        let a = bx(1.0, 2.0, 0.1, 3.0, 1.4, 1.2, 0.9);
        let b = bx(2.5, 1.0, -0.3, 2.2, 1.9, 1.7, -0.4);
        assert!((gwd_d2(&a, &b) - gwd_d2(&b, &a)).abs() < 1e-9);
    }

    #[test]
    fn axis_aligned_scale_difference_matches_closed_form() {
        // Same center and orientation, axis-aligned: d² reduces to the sum of
        // squared half-dimension differences.
        let a = bx(0.0, 0.0, 0.0, 4.0, 2.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0);
        let expect = (2.0f64 - 1.0).powi(2) + (1.0f64 - 0.5).powi(2);
        assert!((gwd_d2(&a, &b) - expect).abs() < 1e-9);
    }

    #[test]
    fn invariant_under_rigid_motion_of_both_boxes() {
        let a = bx(1.0, 2.0, 0.1, 3.0, 1.4, 1.2, 0.9);
        let b = bx(2.5, 1.0, -0.3, 2.2, 1.9, 1.7, -0.4);
        let base = gwd_d2(&a, &b);
        let rot = 0.77f64;
        let (s, c) = rot.sin_cos();
        let moved = |bb: &Box3D| {
            bx(
                bb.x * c - bb.y * s + 3.0,
                bb.x * s + bb.y * c - 7.0,
                bb.z + 2.0,
                bb.l,
                bb.w,
                bb.h,
                bb.yaw + rot,
            )
        };
        assert!((gwd_d2(&moved(&a), &moved(&b)) - base).abs() < 1e-9);
    }

    #[test]
    fn yaw_difference_alone_produces_positive_distance() {
        let a = bx(0.0, 0.0, 0.0, 4.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 4.0, 1.0, 1.0, std::f64::consts::FRAC_PI_2);
        assert!(gwd_d2(&a, &b) > 0.5);
    }
}
