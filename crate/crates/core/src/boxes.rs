//! Rotated 3D boxes: decoding head outputs into detections, BEV/3D IoU via
//! convex polygon clipping, greedy non-maxima suppression, and the
//! line-oriented label/detection text formats.

use std::cmp::Ordering;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::tensor::SensorGeometry;

/// Raw regression values for log-dimensions are clamped to this magnitude
/// before exponentiation so an untrained network can never decode into a
/// non-finite box.
pub const MAX_LOG_DIM: f64 = 20.0;

/// Wraps an angle into (−π, π].
pub fn normalize_yaw(theta: f64) -> f64 {
    let t = theta.rem_euclid(std::f64::consts::TAU);
    if t > std::f64::consts::PI {
        t - std::f64::consts::TAU
    } else {
        t
    }
}

/// Oriented 3D box in the sensor cartesian frame (x forward, y left, z up);
/// `l` extends along the heading axis, `w` across it, `h` along z, and `yaw`
/// rotates about z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Box3D {
    /// Validates finiteness and positive dimensions; normalizes yaw into
    /// (−π, π].
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Self> {
        for (name, v) in [
            ("x", x),
            ("y", y),
            ("z", z),
            ("l", l),
            ("w", w),
            ("h", h),
            ("yaw", yaw),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(format!("box {name} must be finite")));
            }
        }
        if l <= 0.0 || w <= 0.0 || h <= 0.0 {
            return Err(Error::validation(format!(
                "box dimensions must be positive, got l={l} w={w} h={h}"
            )));
        }
        Ok(Box3D {
            x,
            y,
            z,
            l,
            w,
            h,
            yaw: normalize_yaw(yaw),
        })
    }

    /// BEV footprint corners in counterclockwise order.
    fn corners_bev(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let rot = |u: f64, v: f64| (self.x + u * c - v * s, self.y + u * s + v * c);
        [rot(hl, hw), rot(-hl, hw), rot(-hl, -hw), rot(hl, -hw)]
    }

    fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }
}

/// One scored, classified box. Class 0 is reserved for background and never
/// appears on a detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_id: u32,
    pub score: f64,
    pub bbox: Box3D,
}

impl Detection {
    pub fn new(class_id: u32, score: f64, bbox: Box3D) -> Result<Self> {
        if class_id == 0 {
            return Err(Error::validation("detection class_id 0 is reserved for background"));
        }
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::validation(format!(
                "detection score must lie in [0, 1], got {score}"
            )));
        }
        Ok(Detection {
            class_id,
            score,
            bbox,
        })
    }
}

fn cross(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

/// Area of the intersection of two convex quadrilaterals, by clipping `p`
/// against each half-plane of `q` and applying the shoelace formula.
fn quad_intersection_area(p: &[(f64, f64); 4], q: &[(f64, f64); 4]) -> f64 {
    // Clipping a convex polygon against four half-planes adds at most one
    // vertex net per crossing pair, so 16 slots never overflow.
    let mut poly = [(0.0f64, 0.0f64); 16];
    poly[..4].copy_from_slice(p);
    let mut n = 4usize;
    let mut next = [(0.0f64, 0.0f64); 16];

    for i in 0..4 {
        let (ax, ay) = q[i];
        let (bx, by) = q[(i + 1) % 4];
        let (dx, dy) = (bx - ax, by - ay);
        let mut m = 0usize;
        for j in 0..n {
            let cur = poly[j];
            let nxt = poly[(j + 1) % n];
            let side_cur = cross(dx, dy, cur.0 - ax, cur.1 - ay);
            let side_nxt = cross(dx, dy, nxt.0 - ax, nxt.1 - ay);
            if side_cur >= 0.0 {
                next[m] = cur;
                m += 1;
            }
            if (side_cur >= 0.0) != (side_nxt >= 0.0) {
                let t = side_cur / (side_cur - side_nxt);
                next[m] = (cur.0 + t * (nxt.0 - cur.0), cur.1 + t * (nxt.1 - cur.1));
                m += 1;
            }
        }
        if m == 0 {
            return 0.0;
        }
        poly[..m].copy_from_slice(&next[..m]);
        n = m;
    }

    let mut twice_area = 0.0;
    for j in 0..n {
        let (x0, y0) = poly[j];
        let (x1, y1) = poly[(j + 1) % n];
        twice_area += x0 * y1 - x1 * y0;
    }
    (twice_area / 2.0).abs()
}

/// BEV intersection area of two boxes, with a circumradius quick-reject for
/// clearly disjoint footprints.
fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let reach = (a.l.hypot(a.w) + b.l.hypot(b.w)) / 2.0;
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    quad_intersection_area(&a.corners_bev(), &b.corners_bev())
}

/// Intersection-over-union of the yaw-rotated BEV footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    let union = a.l * a.w + b.l * b.w - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric intersection-over-union; boxes are upright, so the volume is
/// the BEV overlap times the z-interval overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter_bev = bev_intersection_area(a, b);
    let z_overlap = ((a.z + a.h / 2.0).min(b.z + b.h / 2.0)
        - (a.z - a.h / 2.0).max(b.z - b.h / 2.0))
    .max(0.0);
    let inter = inter_bev * z_overlap;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Total order used wherever detections are ranked: descending score, then
/// ascending center coordinates, class and remaining fields so equal-score
/// runs are deterministic regardless of input order.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    let key = |d: &Detection| {
        (
            d.bbox.x,
            d.bbox.y,
            d.bbox.z,
            d.class_id as f64,
            d.bbox.l,
            d.bbox.w,
            d.bbox.h,
            d.bbox.yaw,
        )
    };
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| key(a).partial_cmp(&key(b)).unwrap_or(Ordering::Equal))
}

/// Thresholds the confidence map on its non-background channels and converts
/// each surviving bin into a detection.
///
/// The polar bin center (R, A) maps to cartesian (R·cos A, R·sin A); the
/// regressed offsets shift the center, z starts from the sensor height,
/// dimensions are exponentiated log-dimensions, and yaw comes from the
/// (sin, cos) channel pair. Padded azimuth columns are ignored.
pub fn decode(
    conf: &Array3<f32>,
    params: &Array3<f32>,
    geometry: &SensorGeometry,
    tau_cls: f64,
) -> Result<Vec<Detection>> {
    if !(tau_cls > 0.0 && tau_cls < 1.0) {
        return Err(Error::validation(format!(
            "tau_cls must lie strictly inside (0, 1), got {tau_cls}"
        )));
    }
    geometry.validate()?;
    let (n_r, n_a_pad) = (geometry.n_r, geometry.n_a_pad());
    let cshape = conf.shape();
    if cshape.len() != 3 || cshape[0] < 2 || cshape[1] != n_r || cshape[2] != n_a_pad {
        return Err(Error::ShapeMismatch {
            what: "confidence map",
            expected: vec![2, n_r, n_a_pad],
            actual: cshape.to_vec(),
        });
    }
    if params.shape() != [8, n_r, n_a_pad] {
        return Err(Error::ShapeMismatch {
            what: "parameter map",
            expected: vec![8, n_r, n_a_pad],
            actual: params.shape().to_vec(),
        });
    }
    let n_cls = cshape[0];
    let mut out = Vec::new();
    for c in 1..n_cls {
        for r in 0..n_r {
            for a in 0..geometry.n_a {
                let score = conf[[c, r, a]] as f64;
                if score < tau_cls {
                    continue;
                }
                let range = geometry.range_center(r);
                let azimuth = geometry.azimuth_center_deg(a).to_radians();
                let x = range * azimuth.cos() + params[[0, r, a]] as f64;
                let y = range * azimuth.sin() + params[[1, r, a]] as f64;
                let z = geometry.z0 + params[[2, r, a]] as f64;
                let l = (params[[3, r, a]] as f64).clamp(-MAX_LOG_DIM, MAX_LOG_DIM).exp();
                let w = (params[[4, r, a]] as f64).clamp(-MAX_LOG_DIM, MAX_LOG_DIM).exp();
                let h = (params[[5, r, a]] as f64).clamp(-MAX_LOG_DIM, MAX_LOG_DIM).exp();
                let yaw = (params[[6, r, a]] as f64).atan2(params[[7, r, a]] as f64);
                let bbox = Box3D::new(x, y, z, l, w, h, yaw)?;
                out.push(Detection::new(c as u32, score.clamp(0.0, 1.0), bbox)?);
            }
        }
    }
    Ok(out)
}

/// Greedy class-aware non-maxima suppression: rank by [`detection_order`],
/// keep a detection iff its BEV IoU with every kept detection of the same
/// class stays below `iou_threshold`. The result keeps the ranked order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted: Vec<Detection> = detections.to_vec();
    sorted.sort_unstable_by(detection_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let suppressed = kept
            .iter()
            .filter(|k| k.class_id == d.class_id)
            .any(|k| iou_bev(&k.bbox, &d.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

fn parse_f64(token: &str, what: &str, line_no: usize) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| Error::format(format!("line {line_no}: bad {what} value {token:?}")))
}

/// Parses ground-truth labels: one `class_id x y z l w h yaw` record per
/// line, blank lines and `#` comments skipped.
pub fn parse_labels(text: &str) -> Result<Vec<(u32, Box3D)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = trimmed.split_whitespace().collect();
        if tok.len() != 8 {
            return Err(Error::format(format!(
                "line {line_no}: expected 8 fields (class_id x y z l w h yaw), got {}",
                tok.len()
            )));
        }
        let class_id: u32 = tok[0]
            .parse()
            .map_err(|_| Error::format(format!("line {line_no}: bad class_id {:?}", tok[0])))?;
        if class_id == 0 {
            return Err(Error::format(format!(
                "line {line_no}: class_id 0 is reserved for background"
            )));
        }
        let v: Vec<f64> = tok[1..]
            .iter()
            .map(|t| parse_f64(t, "box field", line_no))
            .collect::<Result<_>>()?;
        let bbox = Box3D::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
            .map_err(|e| Error::format(format!("line {line_no}: {e}")))?;
        out.push((class_id, bbox));
    }
    Ok(out)
}

pub fn format_labels(items: &[(u32, Box3D)]) -> String {
    let mut s = String::new();
    for (class_id, b) in items {
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            class_id, b.x, b.y, b.z, b.l, b.w, b.h, b.yaw
        ));
    }
    s
}

/// Parses detections: one `class_id score x y z l w h yaw` record per line.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = trimmed.split_whitespace().collect();
        if tok.len() != 9 {
            return Err(Error::format(format!(
                "line {line_no}: expected 9 fields (class_id score x y z l w h yaw), got {}",
                tok.len()
            )));
        }
        let class_id: u32 = tok[0]
            .parse()
            .map_err(|_| Error::format(format!("line {line_no}: bad class_id {:?}", tok[0])))?;
        let v: Vec<f64> = tok[1..]
            .iter()
            .map(|t| parse_f64(t, "detection field", line_no))
            .collect::<Result<_>>()?;
        let bbox = Box3D::new(v[1], v[2], v[3], v[4], v[5], v[6], v[7])
            .map_err(|e| Error::format(format!("line {line_no}: {e}")))?;
        let det = Detection::new(class_id, v[0], bbox)
            .map_err(|e| Error::format(format!("line {line_no}: {e}")))?;
        out.push(det);
    }
    Ok(out)
}

pub fn format_detections(items: &[Detection]) -> String {
    let mut s = String::new();
    for d in items {
        let b = &d.bbox;
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {} {}\n",
            d.class_id, d.score, b.x, b.y, b.z, b.l, b.w, b.h, b.yaw
        ));
    }
    s
}

pub fn load_labels(path: &Path) -> Result<Vec<(u32, Box3D)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|e| Error::format_at(path, e.to_string()))
}

pub fn save_labels(path: &Path, items: &[(u32, Box3D)]) -> Result<()> {
    atomic_write(path, format_labels(items).as_bytes())
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text).map_err(|e| Error::format_at(path, e.to_string()))
}

pub fn save_detections(path: &Path, items: &[Detection]) -> Result<()> {
    atomic_write(path, format_detections(items).as_bytes())
}
