//! `eval`: score detection files against labels, grouped by the manifest's
//! condition tags, and emit human/CSV tables plus optional PR-curve data.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use radekit_core::boxes::{load_detections, load_labels};
use radekit_core::eval::{evaluate, pr_points, to_csv, to_table, FrameRecord, Metric};
use radekit_core::io::atomic_write;

use crate::config::RunConfig;

pub fn run(
    cfg: &RunConfig,
    manifest: &Path,
    dets_dir: &Path,
    csv: Option<&Path>,
    plot_data: Option<&Path>,
) -> Result<()> {
    let entries = super::read_manifest(manifest)?;
    let eval_cfg = cfg.eval_config();

    let mut frames = Vec::with_capacity(entries.len());
    for e in &entries {
        let labels = load_labels(&super::resolve(manifest, &e.label_path))?;
        let dets_path = dets_dir.join(super::detections_name(&e.frame_id));
        let detections = if dets_path.is_file() {
            load_detections(&dets_path)
                .with_context(|| format!("loading {}", dets_path.display()))?
        } else {
            eprintln!(
                "warning: frame {}: no detection file at {}, counting its labels as missed",
                e.frame_id,
                dets_path.display()
            );
            Vec::new()
        };
        frames.push(FrameRecord {
            frame_id: e.frame_id.clone(),
            condition: e.condition.clone(),
            detections,
            labels,
        });
    }

    let result = evaluate(&frames, &eval_cfg)?;
    print!("{}", to_table(&result));
    if let Some(path) = csv {
        atomic_write(path, to_csv(&result).as_bytes())?;
        println!("wrote CSV table to {}", path.display());
    }
    if let Some(path) = plot_data {
        let classes: BTreeSet<u32> = result
            .rows
            .iter()
            .filter(|r| r.condition == "all")
            .map(|r| r.class_id)
            .collect();
        let mut text = String::from("class,metric,iou_thr,recall,precision\n");
        for &class in &classes {
            for metric in [Metric::ThreeD, Metric::Bev] {
                for &thr in &eval_cfg.iou_thresholds {
                    for (recall, precision) in
                        pr_points(&frames, &eval_cfg.roi, class, metric, thr)
                    {
                        writeln!(text, "{class},{metric},{thr},{recall},{precision}").unwrap();
                    }
                }
            }
        }
        atomic_write(path, text.as_bytes())?;
        println!("wrote PR points to {}", path.display());
    }
    Ok(())
}
