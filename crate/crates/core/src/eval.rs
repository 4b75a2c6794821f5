//! Detection evaluation: region-of-interest filtering, per-class greedy
//! matching by rotated-box overlap, average precision in both sampled and
//! exact-area modes, dataset-level pooling across frames, per-condition
//! grouping, and table/CSV emission.

use std::collections::{BTreeMap, BTreeSet};

use crate::boxes::{detection_order, iou_3d, iou_bev, Box3D, Detection};
use crate::error::{Error, Result};

/// Cartesian region a box center must lie in (closed intervals) to count
/// during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl Default for Roi {
    fn default() -> Self {
        Roi {
            x: (0.0, 72.0),
            y: (-6.4, 6.4),
            z: (-2.0, 6.0),
        }
    }
}

impl Roi {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::validation(format!(
                    "roi {name} bounds must be finite with min < max, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Center containment with closed intervals on every axis.
    pub fn contains(&self, b: &Box3D) -> bool {
        (self.x.0..=self.x.1).contains(&b.x)
            && (self.y.0..=self.y.1).contains(&b.y)
            && (self.z.0..=self.z.1).contains(&b.z)
    }

    pub fn filter_detections(&self, items: &[Detection]) -> Vec<Detection> {
        items
            .iter()
            .filter(|d| self.contains(&d.bbox))
            .cloned()
            .collect()
    }

    pub fn filter_labels(&self, items: &[(u32, Box3D)]) -> Vec<(u32, Box3D)> {
        items
            .iter()
            .filter(|(_, b)| self.contains(b))
            .copied()
            .collect()
    }
}

/// Overlap measure used for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ThreeD,
    Bev,
}

impl Metric {
    pub fn iou(&self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            Metric::ThreeD => iou_3d(a, b),
            Metric::Bev => iou_bev(a, b),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::ThreeD => "3D",
            Metric::Bev => "BEV",
        })
    }
}

/// Average-precision integration mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApMode {
    /// 40-point interpolated sampling of the precision envelope.
    R40,
    /// Exact area under the interpolated precision envelope.
    Exact,
}

/// Score-greedy one-to-one matching of same-class predictions (already in
/// rank order) against ground-truth boxes: each prediction takes the
/// highest-IoU unmatched box when that overlap reaches the threshold.
/// Returns one true-positive flag per prediction.
fn match_ranked(preds: &[Detection], gts: &[Box3D], metric: Metric, iou_thr: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    preds
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if used[gi] {
                    continue;
                }
                let iou = metric.iou(&p.bbox, g);
                if iou >= iou_thr && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            if let Some((gi, _)) = best {
                used[gi] = true;
                true
            } else {
                false
            }
        })
        .collect()
}

/// Area under the interpolated precision envelope for a ranked
/// true-positive sequence.
fn ap_from_ranked(is_tp: &[bool], n_gt: usize, mode: ApMode) -> f64 {
    assert!(n_gt > 0, "AP needs at least one ground-truth instance");
    let mut recall = Vec::with_capacity(is_tp.len());
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (i, &t) in is_tp.iter().enumerate() {
        if t {
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // Precision envelope: best precision achievable at or beyond each rank.
    let mut envelope = precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    match mode {
        ApMode::Exact => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for i in 0..recall.len() {
                if recall[i] > prev_recall {
                    ap += (recall[i] - prev_recall) * envelope[i];
                    prev_recall = recall[i];
                }
            }
            ap
        }
        ApMode::R40 => {
            let mut sum = 0.0;
            for k in 1..=40 {
                let r = k as f64 / 40.0;
                // Highest precision among ranks whose recall reaches r.
                sum += recall
                    .iter()
                    .position(|&rc| rc >= r - 1e-12)
                    .map_or(0.0, |i| envelope[i]);
            }
            sum / 40.0
        }
    }
}

/// Per-class average precision over a single pooled prediction/label set.
/// Classes without ground truth have no defined AP and are absent from the
/// result; classes with ground truth but no matched prediction score 0.
pub fn average_precision(
    preds: &[Detection],
    gts: &[(u32, Box3D)],
    metric: Metric,
    iou_thr: f64,
    mode: ApMode,
) -> Result<BTreeMap<u32, f64>> {
    if !(iou_thr > 0.0 && iou_thr <= 1.0) {
        return Err(Error::validation(format!(
            "IoU threshold must lie in (0, 1], got {iou_thr}"
        )));
    }
    let mut out = BTreeMap::new();
    let classes: BTreeSet<u32> = gts.iter().map(|(c, _)| *c).collect();
    for class in classes {
        let class_gts: Vec<Box3D> = gts
            .iter()
            .filter(|(c, _)| *c == class)
            .map(|(_, b)| *b)
            .collect();
        let mut class_preds: Vec<Detection> = preds
            .iter()
            .filter(|d| d.class_id == class)
            .cloned()
            .collect();
        class_preds.sort_by(detection_order);
        let is_tp = match_ranked(&class_preds, &class_gts, metric, iou_thr);
        out.insert(class, ap_from_ranked(&is_tp, class_gts.len(), mode));
    }
    Ok(out)
}

/// One frame's detections and labels under a condition tag.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_id: String,
    pub condition: String,
    pub detections: Vec<Detection>,
    pub labels: Vec<(u32, Box3D)>,
}

/// Evaluation settings.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub roi: Roi,
    pub iou_thresholds: Vec<f64>,
    pub mode: ApMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            roi: Roi::default(),
            iou_thresholds: vec![0.3, 0.5],
            mode: ApMode::R40,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.roi.validate()?;
        if self.iou_thresholds.is_empty() {
            return Err(Error::validation("at least one IoU threshold is required"));
        }
        for &t in &self.iou_thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::validation(format!(
                    "IoU threshold must lie in (0, 1], got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// One class's AP under one condition/metric/threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ApRow {
    pub condition: String,
    pub metric: Metric,
    pub iou_thr: f64,
    pub class_id: u32,
    pub ap: f64,
    pub gt_count: usize,
    pub tp: usize,
    pub fp: usize,
    pub missed: usize,
}

/// Mean AP over the classes with defined AP.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRow {
    pub condition: String,
    pub metric: Metric,
    pub iou_thr: f64,
    pub map: f64,
    pub classes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalResult {
    pub rows: Vec<ApRow>,
    pub map_rows: Vec<MapRow>,
}

/// Pools per-frame matches for one (metric, threshold) into ranked
/// true-positive flags and per-class ground-truth counts.
fn pooled_ranked(
    frames: &[&FrameRecord],
    roi: &Roi,
    metric: Metric,
    iou_thr: f64,
) -> BTreeMap<u32, (Vec<bool>, usize)> {
    // (class, score-ranked pooled predictions with TP flags, gt count)
    let mut pooled: BTreeMap<u32, Vec<(Detection, String, bool)>> = BTreeMap::new();
    let mut gt_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for frame in frames {
        let dets = roi.filter_detections(&frame.detections);
        let labels = roi.filter_labels(&frame.labels);
        let classes: BTreeSet<u32> = labels
            .iter()
            .map(|(c, _)| *c)
            .chain(dets.iter().map(|d| d.class_id))
            .collect();
        for class in classes {
            let class_gts: Vec<Box3D> = labels
                .iter()
                .filter(|(c, _)| *c == class)
                .map(|(_, b)| *b)
                .collect();
            let mut class_preds: Vec<Detection> = dets
                .iter()
                .filter(|d| d.class_id == class)
                .cloned()
                .collect();
            class_preds.sort_by(detection_order);
            let is_tp = match_ranked(&class_preds, &class_gts, metric, iou_thr);
            *gt_counts.entry(class).or_default() += class_gts.len();
            let bucket = pooled.entry(class).or_default();
            for (det, tp) in class_preds.into_iter().zip(is_tp) {
                bucket.push((det, frame.frame_id.clone(), tp));
            }
        }
    }
    let mut out = BTreeMap::new();
    for (class, mut entries) in pooled {
        // Global rank order: by score with full deterministic tie-breaks, so
        // the result cannot depend on frame or detection input order.
        entries.sort_by(|(a, fa, _), (b, fb, _)| {
            detection_order(a, b).then_with(|| fa.cmp(fb))
        });
        let flags = entries.into_iter().map(|(_, _, tp)| tp).collect();
        let gt = gt_counts.get(&class).copied().unwrap_or(0);
        out.insert(class, (flags, gt));
    }
    for (class, gt) in gt_counts {
        out.entry(class).or_insert_with(|| (Vec::new(), gt));
    }
    out
}

/// Dataset-level evaluation: matches are pooled across frames into one PR
/// curve per class (never averaged per frame), for the whole set ("all") and
/// for every distinct condition tag.
pub fn evaluate(frames: &[FrameRecord], cfg: &EvalConfig) -> Result<EvalResult> {
    cfg.validate()?;
    let mut seen = BTreeSet::new();
    for f in frames {
        if !seen.insert(f.frame_id.as_str()) {
            return Err(Error::validation(format!(
                "duplicate frame id {} in evaluation input",
                f.frame_id
            )));
        }
    }
    let mut conditions: Vec<String> = vec!["all".to_string()];
    let tags: BTreeSet<&str> = frames.iter().map(|f| f.condition.as_str()).collect();
    for t in tags {
        if t != "all" {
            conditions.push(t.to_string());
        }
    }

    let mut sorted_frames: Vec<&FrameRecord> = frames.iter().collect();
    sorted_frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));

    let mut result = EvalResult::default();
    for condition in &conditions {
        let subset: Vec<&FrameRecord> = sorted_frames
            .iter()
            .copied()
            .filter(|f| condition == "all" || &f.condition == condition)
            .collect();
        for metric in [Metric::ThreeD, Metric::Bev] {
            for &iou_thr in &cfg.iou_thresholds {
                let ranked = pooled_ranked(&subset, &cfg.roi, metric, iou_thr);
                let mut aps = Vec::new();
                for (class_id, (flags, gt_count)) in &ranked {
                    if *gt_count == 0 {
                        // Predictions without any ground truth of this class
                        // have no defined AP.
                        continue;
                    }
                    let ap = ap_from_ranked(flags, *gt_count, cfg.mode);
                    let tp = flags.iter().filter(|&&t| t).count();
                    result.rows.push(ApRow {
                        condition: condition.clone(),
                        metric,
                        iou_thr,
                        class_id: *class_id,
                        ap,
                        gt_count: *gt_count,
                        tp,
                        fp: flags.len() - tp,
                        missed: gt_count - tp,
                    });
                    aps.push(ap);
                }
                if !aps.is_empty() {
                    result.map_rows.push(MapRow {
                        condition: condition.clone(),
                        metric,
                        iou_thr,
                        map: aps.iter().sum::<f64>() / aps.len() as f64,
                        classes: aps.len(),
                    });
                }
            }
        }
    }
    Ok(result)
}

/// Pooled precision-recall points (recall, precision) for one class, for
/// external plotting.
pub fn pr_points(
    frames: &[FrameRecord],
    roi: &Roi,
    class_id: u32,
    metric: Metric,
    iou_thr: f64,
) -> Vec<(f64, f64)> {
    let refs: Vec<&FrameRecord> = {
        let mut v: Vec<&FrameRecord> = frames.iter().collect();
        v.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
        v
    };
    let ranked = pooled_ranked(&refs, roi, metric, iou_thr);
    let Some((flags, gt_count)) = ranked.get(&class_id) else {
        return Vec::new();
    };
    if *gt_count == 0 {
        return Vec::new();
    }
    let mut tp = 0usize;
    flags
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if t {
                tp += 1;
            }
            (tp as f64 / *gt_count as f64, tp as f64 / (i + 1) as f64)
        })
        .collect()
}

/// Machine-readable table: `class,condition,metric,iou_thr,ap` rows followed
/// by `mAP` rows.
pub fn to_csv(result: &EvalResult) -> String {
    let mut out = String::from("class,condition,metric,iou_thr,ap\n");
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.class_id, r.condition, r.metric, r.iou_thr, r.ap
        ));
    }
    for m in &result.map_rows {
        out.push_str(&format!(
            "mAP,{},{},{},{}\n",
            m.condition, m.metric, m.iou_thr, m.map
        ));
    }
    out
}

/// Human-readable aligned table.
pub fn to_table(result: &EvalResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:<6} {:>7} {:>7} {:>8} {:>6} {:>6} {:>6} {:>6}\n",
        "condition", "metric", "iou", "class", "AP", "gt", "tp", "fp", "fn"
    ));
    for r in &result.rows {
        out.push_str(&format!(
            "{:<12} {:<6} {:>7.2} {:>7} {:>8.4} {:>6} {:>6} {:>6} {:>6}\n",
            r.condition, r.metric.to_string(), r.iou_thr, r.class_id, r.ap,
            r.gt_count, r.tp, r.fp, r.missed
        ));
    }
    for m in &result.map_rows {
        out.push_str(&format!(
            "{:<12} {:<6} {:>7.2} {:>7} {:>8.4}  over {} class(es)\n",
            m.condition, m.metric.to_string(), m.iou_thr, "mAP", m.map, m.classes
        ));
    }
    out
}

/// One manifest line: frame id, tensor path, label path, condition tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub tensor_path: String,
    pub label_path: String,
    pub condition: String,
}

/// Parses the comma-separated manifest, skipping blank lines and `#`
/// comments; errors carry line numbers.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::format(format!(
                "manifest line {}: expected 4 comma-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::format(format!(
                "manifest line {}: empty field",
                lineno + 1
            )));
        }
        if !ids.insert(fields[0].to_string()) {
            return Err(Error::format(format!(
                "manifest line {}: duplicate frame id {}",
                lineno + 1,
                fields[0]
            )));
        }
        out.push(ManifestEntry {
            frame_id: fields[0].to_string(),
            tensor_path: fields[1].to_string(),
            label_path: fields[2].to_string(),
            condition: fields[3].to_string(),
        });
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("# frame_id,tensor_path,label_path,condition\n");
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.frame_id, e.tensor_path, e.label_path, e.condition
        ));
    }
    out
}
