//! Subcommand implementations.

pub mod bench;
pub mod decode;
pub mod eval;
pub mod gradcheck;
pub mod infer;
pub mod project;
pub mod synth;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use radekit_core::eval::ManifestEntry;

/// Manifest paths are relative to the manifest file's own directory.
pub fn resolve(manifest_path: &Path, entry_path: &str) -> PathBuf {
    let p = Path::new(entry_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    radekit_core::eval::parse_manifest(&text)
        .with_context(|| format!("parsing manifest {}", path.display()))
}

/// Per-frame artifact names.
pub fn projection_name(frame_id: &str) -> String {
    format!("{frame_id}.proj.rdt")
}

pub fn conf_name(frame_id: &str) -> String {
    format!("{frame_id}.conf.rdt")
}

pub fn params_name(frame_id: &str) -> String {
    format!("{frame_id}.parm.rdt")
}

pub fn detections_name(frame_id: &str) -> String {
    format!("{frame_id}.txt")
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("creating directory {}", path.display()))
}

/// Mean and half-width of a 95% normal confidence interval.
pub fn mean_ci(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}
