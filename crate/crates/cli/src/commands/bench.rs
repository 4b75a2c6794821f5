//! `bench`: time the network stages on synthetic frames. Host-CPU figures
//! only — not comparable to any accelerator measurement.

use std::time::Instant;

use anyhow::{bail, Result};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radekit_core::network::Network;
use radekit_core::tensor::RaProjection;

use crate::config::RunConfig;

pub fn run(cfg: &RunConfig, frames: usize) -> Result<()> {
    if frames == 0 {
        bail!("bench needs --frames >= 1");
    }
    let g = cfg.geometry;
    let net = Network::new(cfg.network_config())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.synthesis.seed);
    let mut data = Array3::<f32>::zeros((g.n_de(), g.n_r, g.n_a_pad()));
    for c in 0..g.n_de() {
        for r in 0..g.n_r {
            for a in 0..g.n_a {
                data[[c, r, a]] = rng.random_range(0.0..1.0);
            }
        }
    }
    let proj = RaProjection::new(g, data, (g.n_a, g.pad_cols()))?;

    // Warm-up run so allocation and cache effects do not land in frame 0.
    let _ = net.forward(&proj)?;

    let mut backbone = Vec::with_capacity(frames);
    let mut neck = Vec::with_capacity(frames);
    let mut heads = Vec::with_capacity(frames);
    let mut end_to_end = Vec::with_capacity(frames);
    for _ in 0..frames {
        let t0 = Instant::now();
        let normalized = net.normalize_input(&proj.data);
        let stem = net.stem_forward(&normalized)?;
        let maps = net.encoder_forward(&stem)?;
        let features = net.decoder_forward(&maps)?;
        backbone.push(t0.elapsed().as_secs_f64() * 1e3);

        let t1 = Instant::now();
        let fused = net.neck_forward(&features)?;
        neck.push(t1.elapsed().as_secs_f64() * 1e3);

        let t2 = Instant::now();
        let _ = net.heads_forward(&fused)?;
        heads.push(t2.elapsed().as_secs_f64() * 1e3);

        let t3 = Instant::now();
        let _ = net.forward(&proj)?;
        end_to_end.push(t3.elapsed().as_secs_f64() * 1e3);
    }

    println!(
        "timings over {frames} frame(s) at {}x{}x{} input (host CPU; not comparable to accelerator figures):",
        g.n_de(),
        g.n_r,
        g.n_a_pad()
    );
    for (name, samples) in [
        ("backbone", &backbone),
        ("neck", &neck),
        ("heads", &heads),
        ("end-to-end", &end_to_end),
    ] {
        let (mean, ci) = super::mean_ci(samples);
        println!("  {name:<10} {mean:9.2} ± {ci:.2} ms");
    }
    let stage_sum =
        super::mean_ci(&backbone).0 + super::mean_ci(&neck).0 + super::mean_ci(&heads).0;
    println!(
        "  stages sum to {stage_sum:.2} ms vs end-to-end {:.2} ms",
        super::mean_ci(&end_to_end).0
    );
    Ok(())
}
