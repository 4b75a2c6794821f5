//! The detection network: a UNet-style encoder–decoder over stacked
//! range–azimuth projections with attention-gated skip connections, an
//! optional dilated residual neck, and decoupled classification/regression
//! heads on the full-resolution feature map.
//!
//! The forward pass is a pure function of (weights, input) and is bitwise
//! deterministic at any thread count. There is no backpropagation here; the
//! loss module owns gradients with respect to the head outputs.

pub mod cbam;
pub mod checkpoint;
pub mod layers;

use std::path::Path;

use ndarray::{concatenate, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{RaProjection, SensorGeometry};
use cbam::Cbam;
use checkpoint::{fingerprint64, load_params, save_params, ParamMap};
use layers::{maxpool2, sigmoid_inplace, silu_inplace, Conv2d, ConvTranspose2d, GroupNorm};

/// Initial bias of the final classification convolution, placing the
/// untrained foreground prior near 0.1.
pub const CLS_PRIOR_BIAS: f32 = -2.19;

/// Number of resolution stages (one full-resolution stage plus three
/// halvings).
pub const STAGES: usize = 4;

/// Structure and initialization parameters of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Doppler channels in the input block (first `n_d` channels).
    pub n_d: usize,
    /// Elevation channels in the input block (next `n_e` channels).
    pub n_e: usize,
    pub n_r: usize,
    pub n_a_pad: usize,
    /// Class channels including background at index 0.
    pub n_cls: usize,
    /// Decoder output channels (128, or 256 under feature expansion).
    pub feature_dim: usize,
    pub use_cbam: bool,
    pub use_dilated_neck: bool,
    pub use_expanded_heads: bool,
    pub use_input_stem: bool,
    pub use_feature_expansion: bool,
    pub groupnorm_groups: usize,
    pub cbam_reduction: usize,
    /// Weight-initialization seed; not part of the structural fingerprint.
    pub seed: u64,
}

impl NetworkConfig {
    /// Defaults for a given sensor geometry: attention, dilated neck, and
    /// expanded heads on; input stem and feature expansion off.
    pub fn for_geometry(g: &SensorGeometry, n_cls: usize, seed: u64) -> NetworkConfig {
        NetworkConfig {
            n_d: g.n_d,
            n_e: g.n_e,
            n_r: g.n_r,
            n_a_pad: g.n_a_pad(),
            n_cls,
            feature_dim: 128,
            use_cbam: true,
            use_dilated_neck: true,
            use_expanded_heads: true,
            use_input_stem: false,
            use_feature_expansion: false,
            groupnorm_groups: 32,
            cbam_reduction: 16,
            seed,
        }
    }

    /// Input channel count.
    pub fn n_de(&self) -> usize {
        self.n_d + self.n_e
    }

    /// Decoder output width actually used: `feature_dim`, doubled to 256 by
    /// feature expansion.
    pub fn effective_feature_dim(&self) -> usize {
        if self.use_feature_expansion {
            256
        } else {
            self.feature_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_d == 0 || self.n_e == 0 {
            return Err(Error::validation("n_d and n_e must both be positive"));
        }
        if self.n_r % 8 != 0 || self.n_a_pad % 8 != 0 || self.n_r < 8 || self.n_a_pad < 8 {
            return Err(Error::validation(format!(
                "spatial dims must be positive multiples of 8 (three halvings), got {}×{}",
                self.n_r, self.n_a_pad
            )));
        }
        if self.n_cls < 2 {
            return Err(Error::validation(
                "n_cls must be at least 2 (background plus one class)",
            ));
        }
        if self.feature_dim != 128 && self.feature_dim != 256 {
            return Err(Error::validation(format!(
                "feature_dim must be 128 or 256, got {}",
                self.feature_dim
            )));
        }
        if self.groupnorm_groups == 0 || self.cbam_reduction == 0 {
            return Err(Error::validation(
                "groupnorm_groups and cbam_reduction must be positive",
            ));
        }
        if self.use_cbam && self.n_de() < self.cbam_reduction {
            return Err(Error::validation(format!(
                "attention needs at least {} input channels, got n_d + n_e = {}",
                self.cbam_reduction,
                self.n_de()
            )));
        }
        Ok(())
    }

    /// (channels, height, width) per stage: stage s halves the spatial dims
    /// s−1 times and widens channels to n_de·2^(s−1).
    pub fn stage_shapes(&self) -> [[usize; 3]; STAGES] {
        std::array::from_fn(|i| {
            let f = 1 << i;
            [self.n_de() * f, self.n_r / f, self.n_a_pad / f]
        })
    }

    /// Canonical structural description: every field that determines layer
    /// shapes, one `key=value` per line in sorted key order. The seed is
    /// excluded so re-initialized weights stay loadable.
    pub fn canonical_text(&self) -> String {
        format!(
            "cbam={}\ncbam_reduction={}\ndilated_neck={}\nexpanded_heads={}\n\
             feature_dim={}\nfeature_expansion={}\ngroupnorm_groups={}\n\
             input_stem={}\nn_a_pad={}\nn_cls={}\nn_d={}\nn_e={}\nn_r={}\n",
            self.use_cbam,
            self.cbam_reduction,
            self.use_dilated_neck,
            self.use_expanded_heads,
            self.feature_dim,
            self.use_feature_expansion,
            self.groupnorm_groups,
            self.use_input_stem,
            self.n_a_pad,
            self.n_cls,
            self.n_d,
            self.n_e,
            self.n_r,
        )
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint64(&self.canonical_text())
    }
}

/// Network outputs on the full-resolution grid: sigmoid confidences per
/// class channel and the 8 regression channels
/// (Δx, Δy, Δz, log l, log w, log h, sin θ, cos θ).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub conf: Array3<f32>,
    pub params: Array3<f32>,
}

#[derive(Debug, Clone)]
struct EncStage {
    conv: Conv2d,
    norm: GroupNorm,
}

#[derive(Debug, Clone)]
struct DecStage {
    up: ConvTranspose2d,
    conv: Conv2d,
    norm: GroupNorm,
}

#[derive(Debug, Clone)]
pub(crate) struct NeckBlock {
    dilated: Conv2d,
    fuse: Conv2d,
}

impl NeckBlock {
    pub(crate) fn new(channels: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        NeckBlock {
            dilated: Conv2d::new(channels, channels, 3, dilation, dilation, rng),
            fuse: Conv2d::new(channels, channels, 3, 1, 1, rng),
        }
    }

    /// SiLU(M + Conv₁(Conv_dil(M))): a shape-preserving residual block.
    pub(crate) fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let mut y = self.fuse.forward(&self.dilated.forward(x));
        y += x;
        silu_inplace(&mut y);
        y
    }
}

#[derive(Debug, Clone)]
enum Heads {
    /// Three 3×3 convolutions per branch.
    Expanded { cls: Vec<Conv2d>, reg: Vec<Conv2d> },
    /// One 1×1 convolution per branch.
    Baseline { cls: Conv2d, reg: Conv2d },
}

/// The assembled network. Construction draws every weight from a single
/// seeded stream, so identical configs always initialize identically.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetworkConfig,
    stem: Option<(Conv2d, Conv2d)>,
    /// Stages 2..4, applied after each max-pool.
    enc: Vec<EncStage>,
    /// Skip gates for stages 1..3; empty when attention is off.
    skip_gates: Vec<Cbam>,
    /// Up-stages in application order s = 3, 2, 1.
    dec: Vec<DecStage>,
    /// Residual blocks k = 1, 2, 3; empty when the neck is off.
    neck: Vec<NeckBlock>,
    heads: Heads,
}

impl Network {
    pub fn new(cfg: NetworkConfig) -> Result<Network> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let shapes = cfg.stage_shapes();
        let gn = cfg.groupnorm_groups;

        let stem = if cfg.use_input_stem {
            Some((
                Conv2d::new(cfg.n_d, cfg.n_d, 3, 1, 1, &mut rng),
                Conv2d::new(cfg.n_e, cfg.n_e, 3, 1, 1, &mut rng),
            ))
        } else {
            None
        };

        let enc = (1..STAGES)
            .map(|s| {
                let (cin, cout) = (shapes[s - 1][0], shapes[s][0]);
                EncStage {
                    conv: Conv2d::new(cin, cout, 3, 1, 1, &mut rng),
                    norm: GroupNorm::new(cout, gn),
                }
            })
            .collect();

        let skip_gates = if cfg.use_cbam {
            (0..STAGES - 1)
                .map(|s| Cbam::new(shapes[s][0], cfg.cbam_reduction, &mut rng))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };

        let dec = (1..STAGES)
            .rev()
            .map(|s| {
                // Consumes the stage-(s+1) map, emits the stage-s width; the
                // final stage compresses to the feature dimension.
                let cin = shapes[s][0];
                let half = shapes[s - 1][0];
                let cout = if s == 1 {
                    cfg.effective_feature_dim()
                } else {
                    half
                };
                DecStage {
                    up: ConvTranspose2d::new(cin, half, &mut rng),
                    conv: Conv2d::new(2 * half, cout, 3, 1, 1, &mut rng),
                    norm: GroupNorm::new(cout, gn),
                }
            })
            .collect();

        let fd = cfg.effective_feature_dim();
        let neck = if cfg.use_dilated_neck {
            (1..=3).map(|k| NeckBlock::new(fd, k, &mut rng)).collect()
        } else {
            Vec::new()
        };

        let heads = if cfg.use_expanded_heads {
            let widths = [fd, fd, fd];
            let cls: Vec<Conv2d> = (0..3)
                .map(|i| {
                    let cout = if i == 2 { cfg.n_cls } else { widths[i] };
                    Conv2d::new(widths[i], cout, 3, 1, 1, &mut rng)
                })
                .collect();
            let reg = (0..3)
                .map(|i| {
                    let cout = if i == 2 { 8 } else { widths[i] };
                    Conv2d::new(widths[i], cout, 3, 1, 1, &mut rng)
                })
                .collect();
            Heads::Expanded { cls, reg }
        } else {
            Heads::Baseline {
                cls: Conv2d::new(fd, cfg.n_cls, 1, 0, 1, &mut rng),
                reg: Conv2d::new(fd, 8, 1, 0, 1, &mut rng),
            }
        };
        let mut net = Network {
            cfg,
            stem,
            enc,
            skip_gates,
            dec,
            neck,
            heads,
        };
        match &mut net.heads {
            Heads::Expanded { cls, .. } => cls[2].bias.fill(CLS_PRIOR_BIAS),
            Heads::Baseline { cls, .. } => cls.bias.fill(CLS_PRIOR_BIAS),
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    fn expect_shape(&self, x: &Array3<f32>, shape: [usize; 3], what: &'static str) -> Result<()> {
        if x.dim() != (shape[0], shape[1], shape[2]) {
            return Err(Error::ShapeMismatch {
                what,
                expected: shape.to_vec(),
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Scales the map by its global maximum when that maximum is positive.
    pub fn normalize_input(&self, x: &Array3<f32>) -> Array3<f32> {
        let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if max > 0.0 {
            x.mapv(|v| v / max)
        } else {
            x.clone()
        }
    }

    /// Per-block convolutions applied to the doppler and elevation channel
    /// groups separately; identity when the stem is disabled.
    pub fn stem_forward(&self, x: &Array3<f32>) -> Result<Array3<f32>> {
        self.expect_shape(x, self.cfg.stage_shapes()[0], "stem input")?;
        match &self.stem {
            None => Ok(x.clone()),
            Some((rad, rae)) => {
                let doppler = x.slice(ndarray::s![..self.cfg.n_d, .., ..]).to_owned();
                let elevation = x.slice(ndarray::s![self.cfg.n_d.., .., ..]).to_owned();
                let a = rad.forward(&doppler);
                let b = rae.forward(&elevation);
                Ok(concatenate(Axis(0), &[a.view(), b.view()]).expect("matching spatial dims"))
            }
        }
    }

    /// Stage maps: the input itself, then three rounds of max-pool +
    /// convolution + group norm + SiLU with doubling channel width.
    pub fn encoder_forward(&self, x: &Array3<f32>) -> Result<[Array3<f32>; STAGES]> {
        let shapes = self.cfg.stage_shapes();
        self.expect_shape(x, shapes[0], "encoder input")?;
        let mut maps: Vec<Array3<f32>> = Vec::with_capacity(STAGES);
        maps.push(x.clone());
        for stage in &self.enc {
            let pooled = maxpool2(maps.last().expect("non-empty"))?;
            let mut m = stage.norm.forward(&stage.conv.forward(&pooled));
            silu_inplace(&mut m);
            maps.push(m);
        }
        for (m, s) in maps.iter().zip(shapes) {
            debug_assert_eq!(m.dim(), (s[0], s[1], s[2]));
        }
        Ok(maps.try_into().expect("exactly four stages"))
    }

    /// Upsamples from the deepest stage, concatenating each (optionally
    /// attention-gated) skip and compressing channels, down to the
    /// full-resolution feature map.
    pub fn decoder_forward(&self, maps: &[Array3<f32>; STAGES]) -> Result<Array3<f32>> {
        let shapes = self.cfg.stage_shapes();
        for (m, s) in maps.iter().zip(shapes) {
            self.expect_shape(m, s, "decoder stage input")?;
        }
        let mut cur = maps[STAGES - 1].clone();
        for (i, stage) in self.dec.iter().enumerate() {
            let skip_idx = STAGES - 2 - i; // stage numbers 3, 2, 1
            let up = stage.up.forward(&cur);
            let skip = if self.cfg.use_cbam {
                self.skip_gates[skip_idx].forward(&maps[skip_idx])
            } else {
                maps[skip_idx].clone()
            };
            if up.dim() != skip.dim() {
                return Err(Error::ShapeMismatch {
                    what: "decoder skip connection",
                    expected: vec![up.dim().0, up.dim().1, up.dim().2],
                    actual: skip.shape().to_vec(),
                });
            }
            let cat = concatenate(Axis(0), &[up.view(), skip.view()]).expect("matching dims");
            let mut m = stage.norm.forward(&stage.conv.forward(&cat));
            silu_inplace(&mut m);
            cur = m;
        }
        Ok(cur)
    }

    /// Three residual blocks with dilations 1, 2, 3; identity when the neck
    /// is disabled.
    pub fn neck_forward(&self, x: &Array3<f32>) -> Result<Array3<f32>> {
        let fd = self.cfg.effective_feature_dim();
        self.expect_shape(x, [fd, self.cfg.n_r, self.cfg.n_a_pad], "neck input")?;
        let mut cur = x.clone();
        for block in &self.neck {
            cur = block.forward(&cur);
        }
        Ok(cur)
    }

    /// Decoupled branches over the feature map: sigmoid-activated class
    /// confidences and linear regression channels.
    pub fn heads_forward(&self, x: &Array3<f32>) -> Result<HeadOutputs> {
        let fd = self.cfg.effective_feature_dim();
        self.expect_shape(x, [fd, self.cfg.n_r, self.cfg.n_a_pad], "head input")?;
        let (conf, params) = match &self.heads {
            Heads::Expanded { cls, reg } => {
                let mut c = x.clone();
                for conv in cls {
                    c = conv.forward(&c);
                    sigmoid_inplace(&mut c);
                }
                let mut r = reg[0].forward(x);
                silu_inplace(&mut r);
                r = reg[1].forward(&r);
                silu_inplace(&mut r);
                (c, reg[2].forward(&r))
            }
            Heads::Baseline { cls, reg } => {
                let mut c = cls.forward(x);
                sigmoid_inplace(&mut c);
                (c, reg.forward(x))
            }
        };
        Ok(HeadOutputs { conf, params })
    }

    /// Full forward pass over a raw channel map.
    pub fn forward_map(&self, x: &Array3<f32>) -> Result<HeadOutputs> {
        let normalized = self.normalize_input(x);
        let stemmed = self.stem_forward(&normalized)?;
        let maps = self.encoder_forward(&stemmed)?;
        let features = self.decoder_forward(&maps)?;
        let features = self.neck_forward(&features)?;
        self.heads_forward(&features)
    }

    /// Full forward pass over a projection, checking its geometry against
    /// the configured input block structure.
    pub fn forward(&self, p: &RaProjection) -> Result<HeadOutputs> {
        let g = &p.geometry;
        if g.n_d != self.cfg.n_d
            || g.n_e != self.cfg.n_e
            || g.n_r != self.cfg.n_r
            || g.n_a_pad() != self.cfg.n_a_pad
        {
            return Err(Error::validation(format!(
                "projection dims ({}+{} ch, {}×{}) do not match the network ({}+{} ch, {}×{})",
                g.n_d,
                g.n_e,
                g.n_r,
                g.n_a_pad(),
                self.cfg.n_d,
                self.cfg.n_e,
                self.cfg.n_r,
                self.cfg.n_a_pad,
            )));
        }
        self.forward_map(&p.data)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        if let Some((a, b)) = &self.stem {
            n += a.param_count() + b.param_count();
        }
        for s in &self.enc {
            n += s.conv.param_count() + s.norm.param_count();
        }
        for g in &self.skip_gates {
            n += g.param_count();
        }
        for s in &self.dec {
            n += s.up.param_count() + s.conv.param_count() + s.norm.param_count();
        }
        for b in &self.neck {
            n += b.dilated.param_count() + b.fuse.param_count();
        }
        n + self.heads_param_count()
    }

    pub fn heads_param_count(&self) -> usize {
        match &self.heads {
            Heads::Expanded { cls, reg } => cls
                .iter()
                .chain(reg)
                .map(Conv2d::param_count)
                .sum(),
            Heads::Baseline { cls, reg } => cls.param_count() + reg.param_count(),
        }
    }

    fn load_all(&mut self, map: &mut ParamMap) -> Result<()> {
        if let Some((rad, rae)) = &mut self.stem {
            rad.load_into("stem.rad", map)?;
            rae.load_into("stem.rae", map)?;
        }
        for (i, s) in self.enc.iter_mut().enumerate() {
            s.conv.load_into(&format!("enc{}.conv", i + 2), map)?;
            s.norm.load_into(&format!("enc{}.norm", i + 2), map)?;
        }
        for (i, g) in self.skip_gates.iter_mut().enumerate() {
            g.load_into(&format!("skip{}", i + 1), map)?;
        }
        for (i, s) in self.dec.iter_mut().enumerate() {
            let stage = STAGES - 1 - i;
            s.up.load_into(&format!("dec{stage}.up"), map)?;
            s.conv.load_into(&format!("dec{stage}.conv"), map)?;
            s.norm.load_into(&format!("dec{stage}.norm"), map)?;
        }
        for (i, b) in self.neck.iter_mut().enumerate() {
            b.dilated.load_into(&format!("neck{}.dilated", i + 1), map)?;
            b.fuse.load_into(&format!("neck{}.fuse", i + 1), map)?;
        }
        match &mut self.heads {
            Heads::Expanded { cls, reg } => {
                for (i, c) in cls.iter_mut().enumerate() {
                    c.load_into(&format!("head.cls{}", i + 1), map)?;
                }
                for (i, r) in reg.iter_mut().enumerate() {
                    r.load_into(&format!("head.reg{}", i + 1), map)?;
                }
            }
            Heads::Baseline { cls, reg } => {
                cls.load_into("head.cls", map)?;
                reg.load_into("head.reg", map)?;
            }
        }
        Ok(())
    }

    fn collect_params(&self) -> ParamMap {
        let mut map = ParamMap::new();
        if let Some((rad, rae)) = &self.stem {
            rad.save("stem.rad", &mut map);
            rae.save("stem.rae", &mut map);
        }
        for (i, s) in self.enc.iter().enumerate() {
            s.conv.save(&format!("enc{}.conv", i + 2), &mut map);
            s.norm.save(&format!("enc{}.norm", i + 2), &mut map);
        }
        for (i, g) in self.skip_gates.iter().enumerate() {
            g.save(&format!("skip{}", i + 1), &mut map);
        }
        for (i, s) in self.dec.iter().enumerate() {
            let stage = STAGES - 1 - i;
            s.up.save(&format!("dec{stage}.up"), &mut map);
            s.conv.save(&format!("dec{stage}.conv"), &mut map);
            s.norm.save(&format!("dec{stage}.norm"), &mut map);
        }
        for (i, b) in self.neck.iter().enumerate() {
            b.dilated.save(&format!("neck{}.dilated", i + 1), &mut map);
            b.fuse.save(&format!("neck{}.fuse", i + 1), &mut map);
        }
        match &self.heads {
            Heads::Expanded { cls, reg } => {
                for (i, c) in cls.iter().enumerate() {
                    c.save(&format!("head.cls{}", i + 1), &mut map);
                }
                for (i, r) in reg.iter().enumerate() {
                    r.save(&format!("head.reg{}", i + 1), &mut map);
                }
            }
            Heads::Baseline { cls, reg } => {
                cls.save("head.cls", &mut map);
                reg.save("head.reg", &mut map);
            }
        }
        map
    }

    /// Writes all weights with the structural config fingerprint.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(path, self.cfg.fingerprint(), &self.collect_params())
    }

    /// Rebuilds a network for `cfg` from a checkpoint, rejecting files whose
    /// fingerprint does not match and files with missing or extra blobs.
    pub fn load(path: &Path, cfg: NetworkConfig) -> Result<Network> {
        let (fp, mut map) = load_params(path)?;
        let expected = cfg.fingerprint();
        if fp != expected {
            return Err(Error::FingerprintMismatch {
                expected,
                actual: fp,
            });
        }
        let mut net = Network::new(cfg)?;
        net.load_all(&mut map)?;
        map.expect_empty()?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_cfg() -> NetworkConfig {
        NetworkConfig {
            n_d: 8,
            n_e: 8,
            n_r: 16,
            n_a_pad: 16,
            n_cls: 5,
            feature_dim: 128,
            use_cbam: true,
            use_dilated_neck: true,
            use_expanded_heads: true,
            use_input_stem: false,
            use_feature_expansion: false,
            groupnorm_groups: 32,
            cbam_reduction: 16,
            seed: 11,
        }
    }

    fn random_input(cfg: &NetworkConfig, seed: u64) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array3::zeros((cfg.n_de(), cfg.n_r, cfg.n_a_pad));
        x.mapv_inplace(|_| rng.random_range(0.0..4.0f64) as f32);
        x
    }

    #[test]
    fn stage_shapes_follow_the_doubling_rule() {
        let mut cfg = tiny_cfg();
        cfg.n_d = 64;
        cfg.n_e = 37;
        cfg.n_r = 256;
        cfg.n_a_pad = 112;
        assert_eq!(
            cfg.stage_shapes(),
            [[101, 256, 112], [202, 128, 56], [404, 64, 28], [808, 32, 14]]
        );
        let mut small = tiny_cfg();
        small.n_d = 2;
        small.n_e = 2;
        small.n_r = 16;
        small.n_a_pad = 8;
        assert_eq!(
            small.stage_shapes(),
            [[4, 16, 8], [8, 8, 4], [16, 4, 2], [32, 2, 1]]
        );
    }

    #[test]
    fn tiny_encoder_decoder_produce_contract_shapes() {
        let cfg = tiny_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        let x = random_input(&cfg, 1);
        let maps = net.encoder_forward(&x).unwrap();
        for (m, s) in maps.iter().zip(cfg.stage_shapes()) {
            assert_eq!(m.shape(), s);
        }
        let features = net.decoder_forward(&maps).unwrap();
        assert_eq!(features.dim(), (128, 16, 16));
        let out = net.heads_forward(&net.neck_forward(&features).unwrap()).unwrap();
        assert_eq!(out.conf.dim(), (5, 16, 16));
        assert_eq!(out.params.dim(), (8, 16, 16));
    }

    #[test]
    fn smallest_contract_example_runs_without_attention() {
        let mut cfg = tiny_cfg();
        cfg.n_d = 2;
        cfg.n_e = 2;
        cfg.n_a_pad = 8;
        cfg.use_cbam = false;
        let net = Network::new(cfg.clone()).unwrap();
        let maps = net.encoder_forward(&random_input(&cfg, 2)).unwrap();
        assert_eq!(maps[3].dim(), (32, 2, 1));
        assert!(Network::new({
            let mut c = cfg;
            c.use_cbam = true;
            c
        })
        .is_err());
    }

    #[test]
    fn zero_input_stays_zero_through_the_encoder() {
        let cfg = tiny_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        let zero = Array3::zeros((cfg.n_de(), cfg.n_r, cfg.n_a_pad));
        let maps = net.encoder_forward(&zero).unwrap();
        for m in &maps {
            assert!(m.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn attention_toggle_never_changes_shapes() {
        for use_cbam in [false, true] {
            let mut cfg = tiny_cfg();
            cfg.use_cbam = use_cbam;
            let net = Network::new(cfg.clone()).unwrap();
            let out = net.forward_map(&random_input(&cfg, 3)).unwrap();
            assert_eq!(out.conf.dim(), (5, 16, 16));
            assert_eq!(out.params.dim(), (8, 16, 16));
        }
    }

    #[test]
    fn confidences_stay_in_unit_interval() {
        for expanded in [false, true] {
            let mut cfg = tiny_cfg();
            cfg.use_expanded_heads = expanded;
            let net = Network::new(cfg.clone()).unwrap();
            let out = net.forward_map(&random_input(&cfg, 4)).unwrap();
            assert!(out.conf.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(out.params.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn baseline_heads_have_the_minimal_parameter_count() {
        let mut cfg = tiny_cfg();
        cfg.use_expanded_heads = false;
        let net = Network::new(cfg.clone()).unwrap();
        assert_eq!(net.heads_param_count(), (128 + 1) * (cfg.n_cls + 8));
    }

    #[test]
    fn classification_prior_bias_is_applied() {
        for expanded in [false, true] {
            let mut cfg = tiny_cfg();
            cfg.use_expanded_heads = expanded;
            let net = Network::new(cfg).unwrap();
            let bias = match &net.heads {
                Heads::Expanded { cls, .. } => &cls[2].bias,
                Heads::Baseline { cls, .. } => &cls.bias,
            };
            assert!(bias.iter().all(|&b| b == CLS_PRIOR_BIAS));
        }
    }

    #[test]
    fn neck_with_zero_weights_is_triple_silu() {
        let cfg = tiny_cfg();
        let mut net = Network::new(cfg.clone()).unwrap();
        for block in &mut net.neck {
            block.dilated.weight.fill(0.0);
            block.dilated.bias.fill(0.0);
            block.fuse.weight.fill(0.0);
            block.fuse.bias.fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Array3::zeros((128, cfg.n_r, cfg.n_a_pad));
        x.mapv_inplace(|_| rng.random_range(-2.0..2.0f64) as f32);
        let got = net.neck_forward(&x).unwrap();
        let mut want = x;
        for _ in 0..3 {
            silu_inplace(&mut want);
        }
        assert_eq!(got, want);
    }

    #[test]
    fn neck_reaches_exactly_nine_pixels_per_side() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let blocks: Vec<NeckBlock> = (1..=3).map(|k| NeckBlock::new(3, k, &mut rng)).collect();
        let run = |x: &Array3<f32>| {
            let mut cur = x.clone();
            for b in &blocks {
                cur = b.forward(&cur);
            }
            cur
        };
        let zeros = Array3::zeros((3, 24, 24));
        let base = run(&zeros);
        // An impulse 9 rows away still influences the center; 10 rows away
        // cannot: dilations 1+2+3 plus three unit-dilation convolutions give
        // reach 9 per side (receptive field growth 18 per axis).
        for (offset, expect_reach) in [(9usize, true), (10, false)] {
            let mut x = zeros.clone();
            x[[0, 12 + offset, 12]] = 1.0;
            let out = run(&x);
            let moved = out[[0, 12, 12]] != base[[0, 12, 12]];
            assert_eq!(moved, expect_reach, "offset {offset}");
        }
    }

    #[test]
    fn input_stem_preserves_shape_and_adds_parameters() {
        let mut with = tiny_cfg();
        with.use_input_stem = true;
        let without = tiny_cfg();
        let net_with = Network::new(with.clone()).unwrap();
        let net_without = Network::new(without).unwrap();
        let x = random_input(&with, 7);
        let out = net_with.forward_map(&x).unwrap();
        assert_eq!(out.conf.dim(), (5, 16, 16));
        let expected_extra = (8 * 8 * 9 + 8) * 2;
        assert_eq!(
            net_with.param_count(),
            net_without.param_count() + expected_extra
        );
    }

    #[test]
    fn forward_is_bitwise_deterministic_across_thread_modes() {
        let cfg = tiny_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        let x = random_input(&cfg, 8);
        let par = net.forward_map(&x).unwrap();
        let seq = crate::exec::sequential(|| net.forward_map(&x).unwrap());
        assert_eq!(par.conf, seq.conf);
        assert_eq!(par.params, seq.params);
        let again = net.forward_map(&x).unwrap();
        assert_eq!(par.conf, again.conf);
    }

    #[test]
    fn normalization_divides_by_the_global_maximum() {
        let cfg = tiny_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        let mut x = random_input(&cfg, 9);
        x[[0, 0, 0]] = 8.0;
        let normalized = net.normalize_input(&x);
        assert_eq!(normalized[[0, 0, 0]], 1.0);
        assert!(normalized.iter().all(|&v| v <= 1.0));
        let zero = Array3::zeros((cfg.n_de(), cfg.n_r, cfg.n_a_pad));
        assert_eq!(net.normalize_input(&zero), zero);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_outputs_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let cfg = tiny_cfg();
        let net = Network::new(cfg.clone()).unwrap();
        net.save(&path).unwrap();
        let loaded = Network::load(&path, cfg.clone()).unwrap();
        let x = random_input(&cfg, 10);
        let a = net.forward_map(&x).unwrap();
        let b = loaded.forward_map(&x).unwrap();
        assert_eq!(a.conf, b.conf);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn checkpoint_rejects_structural_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let cfg = tiny_cfg();
        Network::new(cfg.clone()).unwrap().save(&path).unwrap();
        let mut other = cfg.clone();
        other.use_feature_expansion = true;
        let err = Network::load(&path, other).unwrap_err();
        assert!(matches!(err, Error::FingerprintMismatch { .. }), "{err}");
        // Same structure with a different seed must load fine.
        let mut reseeded = cfg;
        reseeded.seed = 999;
        assert!(Network::load(&path, reseeded).is_ok());
    }

    #[test]
    fn initialization_is_reproducible_for_equal_seeds() {
        let a = Network::new(tiny_cfg()).unwrap();
        let b = Network::new(tiny_cfg()).unwrap();
        let x = random_input(&tiny_cfg(), 11);
        assert_eq!(
            a.forward_map(&x).unwrap().params,
            b.forward_map(&x).unwrap().params
        );
        let mut cfg = tiny_cfg();
        cfg.seed = 12;
        let c = Network::new(cfg).unwrap();
        assert_ne!(
            a.forward_map(&x).unwrap().params,
            c.forward_map(&x).unwrap().params
        );
    }

    #[test]
    fn toggles_change_parameter_counts_but_not_shapes() {
        let base_count = Network::new(tiny_cfg()).unwrap().param_count();
        for flag in 0..4 {
            let mut cfg = tiny_cfg();
            match flag {
                0 => cfg.use_cbam = false,
                1 => cfg.use_dilated_neck = false,
                2 => cfg.use_expanded_heads = false,
                _ => cfg.use_input_stem = true,
            }
            let net = Network::new(cfg.clone()).unwrap();
            assert_ne!(net.param_count(), base_count, "flag {flag}");
            let out = net.forward_map(&random_input(&cfg, 13)).unwrap();
            assert_eq!(out.conf.dim(), (5, 16, 16), "flag {flag}");
            assert_eq!(out.params.dim(), (8, 16, 16), "flag {flag}");
        }
    }
}
