//! Convolutional block attention: channel gating from pooled descriptors
//! through a shared bottleneck MLP, followed by spatial gating from a 7×7
//! convolution over channel-pooled maps. Both gates are sigmoids, so the
//! module only ever attenuates its input.

use ndarray::{Array2, Array3};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::network::checkpoint::ParamMap;
use crate::network::layers::{sigmoid, Conv2d, Linear};

#[derive(Debug, Clone, PartialEq)]
pub struct Cbam {
    /// Shared bottleneck MLP applied to both pooled channel descriptors.
    pub mlp1: Linear,
    pub mlp2: Linear,
    /// 7×7 convolution over the 2-channel stack of channel-pooled maps.
    pub spatial: Conv2d,
}

impl Cbam {
    /// Builds attention for `channels`-wide maps with bottleneck
    /// ⌊channels/reduction⌋, which must be at least 1.
    pub fn new(channels: usize, reduction: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bottleneck = channels / reduction;
        if bottleneck == 0 {
            return Err(Error::validation(format!(
                "attention bottleneck ⌊{channels}/{reduction}⌋ is zero; \
                 the channel count must be at least the reduction factor"
            )));
        }
        Ok(Cbam {
            mlp1: Linear::new(channels, bottleneck, rng),
            mlp2: Linear::new(bottleneck, channels, rng),
            spatial: Conv2d::new(2, 1, 7, 3, 1, rng),
        })
    }

    pub fn param_count(&self) -> usize {
        self.mlp1.param_count() + self.mlp2.param_count() + self.spatial.param_count()
    }

    fn mlp(&self, x: &[f32]) -> Vec<f32> {
        let mut hidden = self.mlp1.forward(x);
        for v in &mut hidden {
            *v = v.max(0.0);
        }
        self.mlp2.forward(&hidden)
    }

    /// Applies both gates and also returns them: the per-channel attention
    /// vector and the spatial attention map.
    pub fn forward_detailed(&self, x: &Array3<f32>) -> (Array3<f32>, Vec<f32>, Array2<f32>) {
        let (c, h, w) = x.dim();
        let hw = (h * w) as f64;
        let xs = x.as_slice().expect("owned layout");

        // Channel gate from global average and max pooling.
        let mut avg = vec![0f32; c];
        let mut max = vec![0f32; c];
        for ch in 0..c {
            let seg = &xs[ch * h * w..(ch + 1) * h * w];
            avg[ch] = (seg.iter().map(|&v| v as f64).sum::<f64>() / hw) as f32;
            max[ch] = seg.iter().copied().fold(seg[0], f32::max);
        }
        let logits_avg = self.mlp(&avg);
        let logits_max = self.mlp(&max);
        let channel_gate: Vec<f32> = logits_avg
            .iter()
            .zip(&logits_max)
            .map(|(&a, &m)| sigmoid(a + m))
            .collect();

        let mut gated = Array3::zeros((c, h, w));
        {
            let gs = gated.as_slice_mut().expect("owned layout");
            exec::for_each_chunk(gs, h * w, |ch, chunk| {
                let g = channel_gate[ch];
                let seg = &xs[ch * h * w..(ch + 1) * h * w];
                for (o, &v) in chunk.iter_mut().zip(seg) {
                    *o = v * g;
                }
            });
        }

        // Spatial gate from cross-channel average and max pooling.
        let mut pooled = Array3::zeros((2, h, w));
        for r in 0..h {
            for col in 0..w {
                let mut acc = 0f64;
                let mut m = gated[[0, r, col]];
                for ch in 0..c {
                    let v = gated[[ch, r, col]];
                    acc += v as f64;
                    m = m.max(v);
                }
                pooled[[0, r, col]] = (acc / c as f64) as f32;
                pooled[[1, r, col]] = m;
            }
        }
        let mut spatial_gate = self.spatial.forward(&pooled);
        spatial_gate.mapv_inplace(sigmoid);
        let spatial_gate = spatial_gate
            .index_axis_move(ndarray::Axis(0), 0)
            .into_dimensionality::<ndarray::Ix2>()
            .expect("single-channel gate");

        let mut out = gated;
        {
            let ss = spatial_gate.as_slice().expect("owned layout");
            let os = out.as_slice_mut().expect("owned layout");
            exec::for_each_chunk(os, h * w, |_, chunk| {
                for (o, &g) in chunk.iter_mut().zip(ss) {
                    *o *= g;
                }
            });
        }
        (out, channel_gate, spatial_gate)
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        self.forward_detailed(x).0
    }

    pub fn save(&self, name: &str, map: &mut ParamMap) {
        self.mlp1.save(&format!("{name}.mlp1"), map);
        self.mlp2.save(&format!("{name}.mlp2"), map);
        self.spatial.save(&format!("{name}.spatial"), map);
    }

    pub fn load_into(&mut self, name: &str, map: &mut ParamMap) -> Result<()> {
        self.mlp1.load_into(&format!("{name}.mlp1"), map)?;
        self.mlp2.load_into(&format!("{name}.mlp2"), map)?;
        self.spatial.load_into(&format!("{name}.spatial"), map)
    }
}
