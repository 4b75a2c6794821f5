//! `synth`: render a scene script into tensor files, label files, and a
//! manifest.

use std::path::Path;

use anyhow::{Context, Result};
use radekit_core::boxes::save_labels;
use radekit_core::eval::{format_manifest, ManifestEntry};
use radekit_core::io::{atomic_write, save_tensor};
use radekit_core::network::checkpoint::fingerprint64;
use radekit_core::tensor::synthesize;

use crate::config::RunConfig;
use crate::scene::parse_scene;

pub fn run(cfg: &RunConfig, scene_path: &Path, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(scene_path)
        .with_context(|| format!("reading scene script {}", scene_path.display()))?;
    let frames = parse_scene(&text)?;

    let tensors_dir = out_dir.join("tensors");
    let labels_dir = out_dir.join("labels");
    super::ensure_dir(&tensors_dir)?;
    super::ensure_dir(&labels_dir)?;

    let mut entries = Vec::with_capacity(frames.len());
    for frame in &frames {
        // Every frame draws from its own seed so scenes differ while the
        // whole run stays reproducible from the base seed.
        let seed = cfg.synthesis.seed ^ fingerprint64(&frame.frame_id);
        let tensor = synthesize(cfg.geometry, &frame.targets, cfg.synthesis.noise_floor, seed)?;
        let tensor_rel = format!("tensors/{}.rdt", frame.frame_id);
        let label_rel = format!("labels/{}.txt", frame.frame_id);
        save_tensor(&out_dir.join(&tensor_rel), &tensor)?;
        save_labels(&out_dir.join(&label_rel), &frame.labels)?;
        entries.push(ManifestEntry {
            frame_id: frame.frame_id.clone(),
            tensor_path: tensor_rel,
            label_path: label_rel,
            condition: frame.condition.clone(),
        });
    }
    let manifest_path = out_dir.join("manifest.csv");
    atomic_write(&manifest_path, format_manifest(&entries).as_bytes())?;
    println!(
        "synthesized {} frame(s) into {}",
        entries.len(),
        out_dir.display()
    );
    Ok(())
}
