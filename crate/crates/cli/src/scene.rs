//! Scene scripts: a plain-text description of frames to synthesize, each
//! carrying radar targets and the ground-truth boxes they correspond to.
//!
//! ```text
//! # comment
//! frame f000 condition=day
//! target range=12.0 azimuth=5.0 doppler=3.0 elevation=1.0 amplitude=4.0
//! label class=1 x=11.95 y=1.04 z=0.5 l=4.2 w=1.9 h=1.6 yaw=0.12
//! ```
//!
//! `target` lines accept optional `width_r/width_a/width_d/width_e` keys
//! (default 1.0 bins each). A frame with no target and no label lines is a
//! valid empty scene.

use anyhow::{anyhow, bail, Result};
use radekit_core::boxes::Box3D;
use radekit_core::tensor::TargetSpec;

/// One frame of a scene script.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFrame {
    pub frame_id: String,
    pub condition: String,
    pub targets: Vec<TargetSpec>,
    pub labels: Vec<(u32, Box3D)>,
}

/// Splits `key=value` tokens, rejecting stray words and duplicate keys.
fn parse_fields<'a>(tokens: &[&'a str], lineno: usize) -> Result<Vec<(&'a str, &'a str)>> {
    let mut out: Vec<(&str, &str)> = Vec::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| anyhow!("scene line {lineno}: expected key=value, got {tok:?}"))?;
        if out.iter().any(|(seen, _)| *seen == k) {
            bail!("scene line {lineno}: duplicate key {k:?}");
        }
        out.push((k, v));
    }
    Ok(out)
}

fn take_f64(fields: &[(&str, &str)], key: &str, lineno: usize) -> Result<f64> {
    let (_, v) = fields
        .iter()
        .find(|(k, _)| *k == key)
        .ok_or_else(|| anyhow!("scene line {lineno}: missing key {key:?}"))?;
    v.parse()
        .map_err(|_| anyhow!("scene line {lineno}: bad number for {key:?}: {v:?}"))
}

fn take_f64_or(fields: &[(&str, &str)], key: &str, default: f64, lineno: usize) -> Result<f64> {
    match fields.iter().find(|(k, _)| *k == key) {
        Some((_, v)) => v
            .parse()
            .map_err(|_| anyhow!("scene line {lineno}: bad number for {key:?}: {v:?}")),
        None => Ok(default),
    }
}

fn check_known(fields: &[(&str, &str)], known: &[&str], lineno: usize) -> Result<()> {
    for (k, _) in fields {
        if !known.contains(k) {
            bail!("scene line {lineno}: unknown key {k:?}");
        }
    }
    Ok(())
}

/// Parses a scene script; errors carry 1-based line numbers.
pub fn parse_scene(text: &str) -> Result<Vec<SceneFrame>> {
    let mut frames: Vec<SceneFrame> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "frame" => {
                if tokens.len() < 2 {
                    bail!("scene line {lineno}: frame needs an id");
                }
                let frame_id = tokens[1].to_string();
                if frame_id.contains('=') {
                    bail!("scene line {lineno}: frame id must come before key=value fields");
                }
                if frames.iter().any(|f| f.frame_id == frame_id) {
                    bail!("scene line {lineno}: duplicate frame id {frame_id:?}");
                }
                let fields = parse_fields(&tokens[2..], lineno)?;
                check_known(&fields, &["condition"], lineno)?;
                let condition = fields
                    .iter()
                    .find(|(k, _)| *k == "condition")
                    .map(|(_, v)| v.to_string())
                    .unwrap_or_else(|| "all".to_string());
                frames.push(SceneFrame {
                    frame_id,
                    condition,
                    targets: Vec::new(),
                    labels: Vec::new(),
                });
            }
            "target" => {
                let frame = frames
                    .last_mut()
                    .ok_or_else(|| anyhow!("scene line {lineno}: target before any frame"))?;
                let fields = parse_fields(&tokens[1..], lineno)?;
                check_known(
                    &fields,
                    &[
                        "range", "azimuth", "doppler", "elevation", "amplitude", "width_r",
                        "width_a", "width_d", "width_e",
                    ],
                    lineno,
                )?;
                frame.targets.push(TargetSpec {
                    range: take_f64(&fields, "range", lineno)?,
                    azimuth_deg: take_f64(&fields, "azimuth", lineno)?,
                    doppler: take_f64(&fields, "doppler", lineno)?,
                    elevation_deg: take_f64(&fields, "elevation", lineno)?,
                    amplitude: take_f64(&fields, "amplitude", lineno)?,
                    width_r: take_f64_or(&fields, "width_r", 1.0, lineno)?,
                    width_a: take_f64_or(&fields, "width_a", 1.0, lineno)?,
                    width_d: take_f64_or(&fields, "width_d", 1.0, lineno)?,
                    width_e: take_f64_or(&fields, "width_e", 1.0, lineno)?,
                });
            }
            "label" => {
                let frame = frames
                    .last_mut()
                    .ok_or_else(|| anyhow!("scene line {lineno}: label before any frame"))?;
                let fields = parse_fields(&tokens[1..], lineno)?;
                check_known(&fields, &["class", "x", "y", "z", "l", "w", "h", "yaw"], lineno)?;
                let class: u32 = {
                    let (_, v) = fields
                        .iter()
                        .find(|(k, _)| *k == "class")
                        .ok_or_else(|| anyhow!("scene line {lineno}: missing key \"class\""))?;
                    v.parse()
                        .map_err(|_| anyhow!("scene line {lineno}: bad class id {v:?}"))?
                };
                let b = Box3D::new(
                    take_f64(&fields, "x", lineno)?,
                    take_f64(&fields, "y", lineno)?,
                    take_f64(&fields, "z", lineno)?,
                    take_f64(&fields, "l", lineno)?,
                    take_f64(&fields, "w", lineno)?,
                    take_f64(&fields, "h", lineno)?,
                    take_f64(&fields, "yaw", lineno)?,
                )
                .map_err(|e| anyhow!("scene line {lineno}: {e}"))?;
                frame.labels.push((class, b));
            }
            other => bail!("scene line {lineno}: unknown directive {other:?}"),
        }
    }
    Ok(frames)
}
