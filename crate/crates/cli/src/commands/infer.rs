//! `infer`: produce per-frame head outputs, either by running the network
//! over projections or — in oracle mode — by building them directly from
//! ground-truth labels through the supervision-target builder.

use std::path::Path;

use anyhow::{Context, Result};
use ndarray::Array3;
use radekit_core::boxes::load_labels;
use radekit_core::io::{load_projection, save_channel_map};
use radekit_core::losses::build_targets;
use radekit_core::network::Network;

use crate::config::RunConfig;

pub struct InferArgs<'a> {
    pub manifest: &'a Path,
    pub proj_dir: Option<&'a Path>,
    pub out_dir: &'a Path,
    pub checkpoint: Option<&'a Path>,
    pub save_checkpoint: Option<&'a Path>,
    pub inject_gt: bool,
}

pub fn run(cfg: &RunConfig, args: &InferArgs) -> Result<()> {
    let entries = super::read_manifest(args.manifest)?;
    super::ensure_dir(args.out_dir)?;

    let net_cfg = cfg.network_config();
    let needs_network = !args.inject_gt || args.save_checkpoint.is_some();
    let network = if needs_network {
        let net = match args.checkpoint {
            Some(path) => Network::load(path, net_cfg.clone())
                .with_context(|| format!("loading checkpoint {}", path.display()))?,
            None => Network::new(net_cfg.clone())?,
        };
        if let Some(path) = args.save_checkpoint {
            net.save(path)
                .with_context(|| format!("saving checkpoint {}", path.display()))?;
            println!("saved checkpoint to {}", path.display());
        }
        Some(net)
    } else {
        None
    };

    for e in &entries {
        let (conf, params) = if args.inject_gt {
            let labels = load_labels(&super::resolve(args.manifest, &e.label_path))?;
            let sigma = cfg.loss_config().sigma;
            let targets = build_targets(&labels, &cfg.geometry, net_cfg.n_cls, sigma)?;
            // Unit confidence exactly at each object's peak bin; the
            // regression channels come straight from the target builder, so
            // decoding recovers the labels.
            let mut conf = Array3::<f32>::zeros((
                net_cfg.n_cls,
                cfg.geometry.n_r,
                cfg.geometry.n_a_pad(),
            ));
            for peak in &targets.peaks {
                conf[[peak.class_id as usize, peak.r, peak.a]] = 1.0;
            }
            let params = targets.params.mapv(|v| v as f32);
            (conf, params)
        } else {
            let proj_dir = args
                .proj_dir
                .ok_or_else(|| anyhow::anyhow!("infer needs --proj-dir unless --inject-gt"))?;
            let proj = load_projection(&proj_dir.join(super::projection_name(&e.frame_id)))?;
            let out = network
                .as_ref()
                .expect("network is constructed when not injecting")
                .forward(&proj)?;
            (out.conf, out.params)
        };
        save_channel_map(
            &args.out_dir.join(super::conf_name(&e.frame_id)),
            &cfg.geometry,
            &conf,
        )?;
        save_channel_map(
            &args.out_dir.join(super::params_name(&e.frame_id)),
            &cfg.geometry,
            &params,
        )?;
    }
    println!(
        "wrote head outputs for {} frame(s) into {}",
        entries.len(),
        args.out_dir.display()
    );
    Ok(())
}
