//! `project`: collapse 4D tensors to concatenated range-azimuth maps; with
//! `--stats`, report the storage the projection saves.

use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use radekit_core::io::{load_tensor, save_projection};
use radekit_core::tensor::{memory_stats, project, SensorGeometry};

use crate::config::RunConfig;

fn print_stats(geometry: &SensorGeometry) -> Result<()> {
    // Validate (and compute) before printing anything, so an unprojectable
    // geometry produces an error and no partial report.
    let s4 = memory_stats(geometry, 4)?;
    let s8 = memory_stats(geometry, 8)?;
    println!(
        "geometry: {}x{}x{}x{} -> {}x{}x{} ({} azimuth pad columns)",
        geometry.n_r,
        geometry.n_a,
        geometry.n_d,
        geometry.n_e,
        geometry.n_de(),
        geometry.n_r,
        geometry.n_a_pad(),
        geometry.pad_cols()
    );
    for (width, s) in [(4u64, s4), (8, s8)] {
        println!(
            "element width {width} B: full {} B, projection {} B, reduction {:.4}%",
            s.full_bytes, s.projection_bytes, s.reduction_percent
        );
    }
    Ok(())
}

pub fn run(
    cfg: &RunConfig,
    manifest: Option<&Path>,
    out_dir: Option<&Path>,
    stats: bool,
) -> Result<()> {
    let Some(manifest_path) = manifest else {
        // No inputs: report stats for the configured geometry alone.
        if stats {
            print_stats(&cfg.geometry)?;
            return Ok(());
        }
        anyhow::bail!("project needs --manifest (or --stats for a geometry-only report)");
    };
    let entries = super::read_manifest(manifest_path)?;
    let out = out_dir
        .ok_or_else(|| anyhow::anyhow!("project needs --out-dir when given a manifest"))?;
    super::ensure_dir(out)?;

    let mut latencies = Vec::with_capacity(entries.len());
    let mut geometry = None;
    for e in &entries {
        let tensor = load_tensor(&super::resolve(manifest_path, &e.tensor_path))?;
        let t0 = Instant::now();
        let proj = project(&tensor)?;
        latencies.push(t0.elapsed().as_secs_f64() * 1e3);
        save_projection(&out.join(super::projection_name(&e.frame_id)), &proj)?;
        geometry.get_or_insert(tensor.geometry);
    }
    println!("projected {} frame(s) into {}", entries.len(), out.display());
    if let Some(g) = geometry {
        let (mean, ci) = super::mean_ci(&latencies);
        println!("projection latency per frame: {mean:.2} ± {ci:.2} ms");
        if stats {
            print_stats(&g)?;
        }
    } else if stats {
        print_stats(&cfg.geometry)?;
    }
    Ok(())
}
