//! `decode`: turn per-frame head outputs into detection files, applying the
//! confidence gate and non-maxima suppression.

use std::path::Path;

use anyhow::{Context, Result};
use radekit_core::boxes::{decode, nms, save_detections};
use radekit_core::error::Error;
use radekit_core::io::load_channel_map;

use crate::config::RunConfig;

pub fn run(cfg: &RunConfig, manifest: &Path, heads_dir: &Path, out_dir: &Path) -> Result<()> {
    let entries = super::read_manifest(manifest)?;
    super::ensure_dir(out_dir)?;
    if !(cfg.decode.nms_iou > 0.0 && cfg.decode.nms_iou < 1.0) {
        return Err(Error::validation(format!(
            "nms_iou must lie strictly inside (0, 1), got {}",
            cfg.decode.nms_iou
        ))
        .into());
    }

    let mut total = 0usize;
    for e in &entries {
        let conf_path = heads_dir.join(super::conf_name(&e.frame_id));
        let params_path = heads_dir.join(super::params_name(&e.frame_id));
        let (geometry, conf) = load_channel_map(&conf_path)
            .with_context(|| format!("loading {}", conf_path.display()))?;
        let (pg, params) = load_channel_map(&params_path)
            .with_context(|| format!("loading {}", params_path.display()))?;
        if pg != geometry {
            return Err(Error::validation(format!(
                "frame {}: confidence and parameter maps carry different geometries",
                e.frame_id
            ))
            .into());
        }
        let raw = decode(&conf, &params, &geometry, cfg.decode.tau_cls)?;
        let kept = nms(&raw, cfg.decode.nms_iou);
        total += kept.len();
        save_detections(&out_dir.join(super::detections_name(&e.frame_id)), &kept)?;
    }
    println!(
        "decoded {} detection(s) across {} frame(s) into {}",
        total,
        entries.len(),
        out_dir.display()
    );
    Ok(())
}
