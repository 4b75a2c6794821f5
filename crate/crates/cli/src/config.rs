//! Declarative run configuration: a sectioned `key = value` text file plus
//! `--set section.key=value` overrides. Unknown sections or keys are
//! rejected, and the effective configuration dumps back to an equivalent
//! file, so a run can always be reproduced from its dump.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use radekit_core::eval::{ApMode, EvalConfig, Roi};
use radekit_core::losses::LossConfig;
use radekit_core::network::NetworkConfig;
use radekit_core::tensor::SensorGeometry;

/// Scene synthesis settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSection {
    pub noise_floor: f64,
    pub seed: u64,
}

/// Network construction toggles.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub n_cls: usize,
    pub feature_dim: usize,
    pub cbam: bool,
    pub dilated_neck: bool,
    pub expanded_heads: bool,
    pub input_stem: bool,
    pub feature_expansion: bool,
    pub groupnorm_groups: usize,
    pub cbam_reduction: usize,
    pub seed: u64,
}

/// Loss hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSection {
    pub sigma: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub beta: f64,
    pub focal_weight: f64,
    pub match_min_iou: f64,
}

/// Detection decoding settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeSection {
    pub tau_cls: f64,
    pub nms_iou: f64,
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub roi_x: (f64, f64),
    pub roi_y: (f64, f64),
    pub roi_z: (f64, f64),
    pub iou_thresholds: Vec<f64>,
    pub ap_mode: ApMode,
}

/// The full run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: SensorGeometry,
    pub synthesis: SynthesisSection,
    pub network: NetworkSection,
    pub loss: LossSection,
    pub decode: DecodeSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        RunConfig {
            geometry: SensorGeometry::default(),
            synthesis: SynthesisSection {
                noise_floor: 0.05,
                seed: 7,
            },
            network: NetworkSection {
                n_cls: 5,
                feature_dim: 128,
                cbam: true,
                dilated_neck: true,
                expanded_heads: true,
                input_stem: false,
                feature_expansion: false,
                groupnorm_groups: 32,
                cbam_reduction: 16,
                seed: 42,
            },
            loss: LossSection {
                sigma: loss.sigma,
                alpha: loss.alpha,
                gamma: loss.gamma,
                tau: loss.tau,
                beta: loss.beta,
                focal_weight: loss.focal_weight,
                match_min_iou: loss.match_min_iou,
            },
            decode: DecodeSection {
                tau_cls: loss.tau_cls,
                nms_iou: 0.3,
            },
            eval: EvalSection {
                roi_x: (0.0, 72.0),
                roi_y: (-6.4, 6.4),
                roi_z: (-2.0, 6.0),
                iou_thresholds: vec![0.3, 0.5],
                ap_mode: ApMode::R40,
            },
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => bail!("expected true or false, got {other:?}"),
    }
}

fn parse_pair(v: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("expected two comma-separated numbers, got {v:?}");
    }
    Ok((parts[0].parse()?, parts[1].parse()?))
}

fn parse_list(v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(Into::into))
        .collect()
}

impl RunConfig {
    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match (section, key) {
            ("geometry", "n_r") => self.geometry.n_r = v.parse()?,
            ("geometry", "n_a") => self.geometry.n_a = v.parse()?,
            ("geometry", "n_d") => self.geometry.n_d = v.parse()?,
            ("geometry", "n_e") => self.geometry.n_e = v.parse()?,
            ("geometry", "range_max") => self.geometry.range_max = v.parse()?,
            ("geometry", "azimuth_fov") => self.geometry.azimuth_fov = v.parse()?,
            ("geometry", "elevation_fov") => self.geometry.elevation_fov = v.parse()?,
            ("geometry", "doppler_max") => self.geometry.doppler_max = v.parse()?,
            ("geometry", "z0") => self.geometry.z0 = v.parse()?,
            ("synthesis", "noise_floor") => self.synthesis.noise_floor = v.parse()?,
            ("synthesis", "seed") => self.synthesis.seed = v.parse()?,
            ("network", "n_cls") => self.network.n_cls = v.parse()?,
            ("network", "feature_dim") => self.network.feature_dim = v.parse()?,
            ("network", "cbam") => self.network.cbam = parse_bool(v)?,
            ("network", "dilated_neck") => self.network.dilated_neck = parse_bool(v)?,
            ("network", "expanded_heads") => self.network.expanded_heads = parse_bool(v)?,
            ("network", "input_stem") => self.network.input_stem = parse_bool(v)?,
            ("network", "feature_expansion") => self.network.feature_expansion = parse_bool(v)?,
            ("network", "groupnorm_groups") => self.network.groupnorm_groups = v.parse()?,
            ("network", "cbam_reduction") => self.network.cbam_reduction = v.parse()?,
            ("network", "seed") => self.network.seed = v.parse()?,
            ("loss", "sigma") => self.loss.sigma = v.parse()?,
            ("loss", "alpha") => self.loss.alpha = v.parse()?,
            ("loss", "gamma") => self.loss.gamma = v.parse()?,
            ("loss", "tau") => self.loss.tau = v.parse()?,
            ("loss", "beta") => self.loss.beta = v.parse()?,
            ("loss", "focal_weight") => self.loss.focal_weight = v.parse()?,
            ("loss", "match_min_iou") => self.loss.match_min_iou = v.parse()?,
            ("decode", "tau_cls") => self.decode.tau_cls = v.parse()?,
            ("decode", "nms_iou") => self.decode.nms_iou = v.parse()?,
            ("eval", "roi_x") => self.eval.roi_x = parse_pair(v)?,
            ("eval", "roi_y") => self.eval.roi_y = parse_pair(v)?,
            ("eval", "roi_z") => self.eval.roi_z = parse_pair(v)?,
            ("eval", "iou_thresholds") => self.eval.iou_thresholds = parse_list(v)?,
            ("eval", "ap_mode") => {
                self.eval.ap_mode = match v {
                    "r40" => ApMode::R40,
                    "exact" => ApMode::Exact,
                    other => bail!("ap_mode must be r40 or exact, got {other:?}"),
                }
            }
            _ => bail!("unknown configuration key {section}.{key}"),
        }
        Ok(())
    }

    /// Parses a full config file, starting from the defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("config line {}: unterminated section header", lineno + 1))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value", lineno + 1))?;
            let key = key.trim();
            if section.is_empty() {
                bail!("config line {}: key {key:?} appears before any [section]", lineno + 1);
            }
            let full = format!("{section}.{key}");
            if seen.contains(&full) {
                bail!("config line {}: duplicate key {full}", lineno + 1);
            }
            cfg.set(&section, key, value)
                .with_context(|| format!("config line {}", lineno + 1))?;
            seen.push(full);
        }
        Ok(cfg)
    }

    /// Applies one `--set section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects section.key=value, got {assignment:?}"))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| anyhow!("--set expects section.key=value, got {assignment:?}"))?;
        self.set(section.trim(), key.trim(), value)
            .with_context(|| format!("--set {assignment}"))
    }

    /// Canonical text form; `parse(to_text(c)) == c` for any valid `c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let g = &self.geometry;
        writeln!(s, "[geometry]").unwrap();
        writeln!(s, "n_r = {}", g.n_r).unwrap();
        writeln!(s, "n_a = {}", g.n_a).unwrap();
        writeln!(s, "n_d = {}", g.n_d).unwrap();
        writeln!(s, "n_e = {}", g.n_e).unwrap();
        writeln!(s, "range_max = {}", g.range_max).unwrap();
        writeln!(s, "azimuth_fov = {}", g.azimuth_fov).unwrap();
        writeln!(s, "elevation_fov = {}", g.elevation_fov).unwrap();
        writeln!(s, "doppler_max = {}", g.doppler_max).unwrap();
        writeln!(s, "z0 = {}", g.z0).unwrap();
        writeln!(s, "\n[synthesis]").unwrap();
        writeln!(s, "noise_floor = {}", self.synthesis.noise_floor).unwrap();
        writeln!(s, "seed = {}", self.synthesis.seed).unwrap();
        let n = &self.network;
        writeln!(s, "\n[network]").unwrap();
        writeln!(s, "n_cls = {}", n.n_cls).unwrap();
        writeln!(s, "feature_dim = {}", n.feature_dim).unwrap();
        writeln!(s, "cbam = {}", n.cbam).unwrap();
        writeln!(s, "dilated_neck = {}", n.dilated_neck).unwrap();
        writeln!(s, "expanded_heads = {}", n.expanded_heads).unwrap();
        writeln!(s, "input_stem = {}", n.input_stem).unwrap();
        writeln!(s, "feature_expansion = {}", n.feature_expansion).unwrap();
        writeln!(s, "groupnorm_groups = {}", n.groupnorm_groups).unwrap();
        writeln!(s, "cbam_reduction = {}", n.cbam_reduction).unwrap();
        writeln!(s, "seed = {}", n.seed).unwrap();
        let l = &self.loss;
        writeln!(s, "\n[loss]").unwrap();
        writeln!(s, "sigma = {}", l.sigma).unwrap();
        writeln!(s, "alpha = {}", l.alpha).unwrap();
        writeln!(s, "gamma = {}", l.gamma).unwrap();
        writeln!(s, "tau = {}", l.tau).unwrap();
        writeln!(s, "beta = {}", l.beta).unwrap();
        writeln!(s, "focal_weight = {}", l.focal_weight).unwrap();
        writeln!(s, "match_min_iou = {}", l.match_min_iou).unwrap();
        writeln!(s, "\n[decode]").unwrap();
        writeln!(s, "tau_cls = {}", self.decode.tau_cls).unwrap();
        writeln!(s, "nms_iou = {}", self.decode.nms_iou).unwrap();
        let e = &self.eval;
        writeln!(s, "\n[eval]").unwrap();
        writeln!(s, "roi_x = {},{}", e.roi_x.0, e.roi_x.1).unwrap();
        writeln!(s, "roi_y = {},{}", e.roi_y.0, e.roi_y.1).unwrap();
        writeln!(s, "roi_z = {},{}", e.roi_z.0, e.roi_z.1).unwrap();
        let thr: Vec<String> = e.iou_thresholds.iter().map(|t| t.to_string()).collect();
        writeln!(s, "iou_thresholds = {}", thr.join(",")).unwrap();
        writeln!(
            s,
            "ap_mode = {}",
            match e.ap_mode {
                ApMode::R40 => "r40",
                ApMode::Exact => "exact",
            }
        )
        .unwrap();
        s
    }

    /// The network configuration implied by this run configuration.
    pub fn network_config(&self) -> NetworkConfig {
        let n = &self.network;
        let mut cfg = NetworkConfig::for_geometry(&self.geometry, n.n_cls, n.seed);
        cfg.feature_dim = n.feature_dim;
        cfg.use_cbam = n.cbam;
        cfg.use_dilated_neck = n.dilated_neck;
        cfg.use_expanded_heads = n.expanded_heads;
        cfg.use_input_stem = n.input_stem;
        cfg.use_feature_expansion = n.feature_expansion;
        cfg.groupnorm_groups = n.groupnorm_groups;
        cfg.cbam_reduction = n.cbam_reduction;
        cfg
    }

    pub fn loss_config(&self) -> LossConfig {
        let l = &self.loss;
        LossConfig {
            sigma: l.sigma,
            alpha: l.alpha,
            gamma: l.gamma,
            tau: l.tau,
            beta: l.beta,
            focal_weight: l.focal_weight,
            match_min_iou: l.match_min_iou,
            tau_cls: self.decode.tau_cls,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        let e = &self.eval;
        EvalConfig {
            roi: Roi {
                x: e.roi_x,
                y: e.roi_y,
                z: e.roi_z,
            },
            iou_thresholds: e.iou_thresholds.clone(),
            mode: e.ap_mode,
        }
    }
}
