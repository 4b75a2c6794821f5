//! Dense layer primitives for the detection network: stride-1 convolutions
//! with padding and dilation, 2×2 transposed convolutions, max pooling,
//! group normalization, fully connected layers, and the activations.
//!
//! All forward passes are pure functions of (weights, input). Convolutions
//! parallelize over output channels; every channel is accumulated in a fixed
//! sequential order, so results are bitwise identical at any thread count.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::network::checkpoint::ParamMap;

/// Uniform He-style initialization bound √(6 / fan_in).
fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn he_fill(rng: &mut ChaCha8Rng, fan_in: usize, data: &mut [f32]) {
    let bound = he_bound(fan_in);
    for v in data {
        *v = rng.random_range(-bound..bound) as f32;
    }
}

/// Logistic function.
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// x·σ(x), applied elementwise.
pub fn silu_inplace(a: &mut Array3<f32>) {
    a.mapv_inplace(|x| x * sigmoid(x));
}

pub fn sigmoid_inplace(a: &mut Array3<f32>) {
    a.mapv_inplace(sigmoid);
}

/// Stride-1 2D convolution over channels-first maps, with zero padding and
/// optional dilation.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// (out_channels, in_channels, k, k).
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        padding: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut conv = Conv2d {
            weight: Array4::zeros((out_ch, in_ch, kernel, kernel)),
            bias: Array1::zeros(out_ch),
            padding,
            dilation,
        };
        let fan_in = in_ch * kernel * kernel;
        he_fill(rng, fan_in, conv.weight.as_slice_mut().expect("owned layout"));
        conv
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Output spatial size for an input of (h, w).
    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.weight.shape()[2];
        let reach = self.dilation * (k - 1);
        (h + 2 * self.padding - reach, w + 2 * self.padding - reach)
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (in_ch, h, w) = x.dim();
        let (out_ch, w_in_ch, k, _) = self.weight.dim();
        assert_eq!(in_ch, w_in_ch, "convolution input channel mismatch");
        let (h_out, w_out) = self.out_spatial(h, w);
        let (p, d) = (self.padding as isize, self.dilation as isize);
        let xs = x.as_slice().expect("owned layout");
        let ws = self.weight.as_slice().expect("owned layout");
        let mut out = Array3::zeros((out_ch, h_out, w_out));
        let os = out.as_slice_mut().expect("owned layout");
        exec::for_each_chunk(os, h_out * w_out, |oc, chunk| {
            chunk.fill(self.bias[oc]);
            for ic in 0..in_ch {
                let x_ch = &xs[ic * h * w..(ic + 1) * h * w];
                let w_base = ((oc * in_ch + ic) * k) * k;
                for kh in 0..k {
                    let row_shift = kh as isize * d - p;
                    let oh_lo = (-row_shift).max(0) as usize;
                    let oh_hi = (h as isize - row_shift).clamp(0, h_out as isize) as usize;
                    for kw in 0..k {
                        let wv = ws[w_base + kh * k + kw];
                        let col_shift = kw as isize * d - p;
                        let ow_lo = (-col_shift).max(0) as usize;
                        let ow_hi = (w as isize - col_shift).clamp(0, w_out as isize) as usize;
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = (oh as isize + row_shift) as usize;
                            let iw0 = (ow_lo as isize + col_shift) as usize;
                            let xseg = &x_ch[ih * w + iw0..ih * w + iw0 + (ow_hi - ow_lo)];
                            let oseg = &mut chunk[oh * w_out + ow_lo..oh * w_out + ow_hi];
                            for (o, &xv) in oseg.iter_mut().zip(xseg) {
                                *o += wv * xv;
                            }
                        }
                    }
                }
            }
        });
        out
    }

    pub fn save(&self, name: &str, map: &mut ParamMap) {
        map.insert(&format!("{name}.weight"), self.weight.clone().into_dyn());
        map.insert(&format!("{name}.bias"), self.bias.clone().into_dyn());
    }

    pub fn load_into(&mut self, name: &str, map: &mut ParamMap) -> Result<()> {
        self.weight = map.take_like(&format!("{name}.weight"), self.weight.view().into_dyn())?;
        self.bias = map.take_like(&format!("{name}.bias"), self.bias.view().into_dyn())?;
        Ok(())
    }
}

/// 2×2 transposed convolution with stride 2: exact ×2 upsampling where each
/// output position receives exactly one kernel tap per input channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    /// (in_channels, out_channels, 2, 2).
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
}

impl ConvTranspose2d {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = ConvTranspose2d {
            weight: Array4::zeros((in_ch, out_ch, 2, 2)),
            bias: Array1::zeros(out_ch),
        };
        he_fill(rng, in_ch * 4, layer.weight.as_slice_mut().expect("owned layout"));
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (in_ch, h, w) = x.dim();
        let (w_in_ch, out_ch, _, _) = self.weight.dim();
        assert_eq!(in_ch, w_in_ch, "transposed convolution channel mismatch");
        let (h_out, w_out) = (2 * h, 2 * w);
        let xs = x.as_slice().expect("owned layout");
        let mut out = Array3::zeros((out_ch, h_out, w_out));
        let os = out.as_slice_mut().expect("owned layout");
        exec::for_each_chunk(os, h_out * w_out, |oc, chunk| {
            chunk.fill(self.bias[oc]);
            for ic in 0..in_ch {
                let x_ch = &xs[ic * h * w..(ic + 1) * h * w];
                for kh in 0..2 {
                    for kw in 0..2 {
                        let wv = self.weight[[ic, oc, kh, kw]];
                        for ihr in 0..h {
                            let orow = (2 * ihr + kh) * w_out;
                            let xrow = &x_ch[ihr * w..(ihr + 1) * w];
                            for (iwc, &xv) in xrow.iter().enumerate() {
                                chunk[orow + 2 * iwc + kw] += wv * xv;
                            }
                        }
                    }
                }
            }
        });
        out
    }

    pub fn save(&self, name: &str, map: &mut ParamMap) {
        map.insert(&format!("{name}.weight"), self.weight.clone().into_dyn());
        map.insert(&format!("{name}.bias"), self.bias.clone().into_dyn());
    }

    pub fn load_into(&mut self, name: &str, map: &mut ParamMap) -> Result<()> {
        self.weight = map.take_like(&format!("{name}.weight"), self.weight.view().into_dyn())?;
        self.bias = map.take_like(&format!("{name}.bias"), self.bias.view().into_dyn())?;
        Ok(())
    }
}

/// 2×2 max pooling with stride 2. Both spatial dimensions must be even.
pub fn maxpool2(x: &Array3<f32>) -> Result<Array3<f32>> {
    let (c, h, w) = x.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::validation(format!(
            "max pooling needs even spatial dims, got {h}×{w}"
        )));
    }
    let (h_out, w_out) = (h / 2, w / 2);
    let xs = x.as_slice().expect("owned layout");
    let mut out = Array3::zeros((c, h_out, w_out));
    let os = out.as_slice_mut().expect("owned layout");
    exec::for_each_chunk(os, h_out * w_out, |ch, chunk| {
        let x_ch = &xs[ch * h * w..(ch + 1) * h * w];
        for oh in 0..h_out {
            let r0 = &x_ch[2 * oh * w..(2 * oh + 1) * w];
            let r1 = &x_ch[(2 * oh + 1) * w..(2 * oh + 2) * w];
            let orow = &mut chunk[oh * w_out..(oh + 1) * w_out];
            for (ow, o) in orow.iter_mut().enumerate() {
                let a = r0[2 * ow].max(r0[2 * ow + 1]);
                let b = r1[2 * ow].max(r1[2 * ow + 1]);
                *o = a.max(b);
            }
        }
    });
    Ok(out)
}

/// Largest group count ≤ `preferred` that divides `channels`.
pub fn group_count(channels: usize, preferred: usize) -> usize {
    (1..=preferred.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

/// Group normalization with per-channel affine parameters. Statistics are
/// accumulated in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    /// Uses the largest divisor of `channels` that is at most `preferred`.
    pub fn new(channels: usize, preferred: usize) -> Self {
        GroupNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            groups: group_count(channels, preferred),
            eps: 1e-6,
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    /// The normalized map before the affine transform: each group is shifted
    /// to zero mean and scaled to unit variance.
    pub fn normalize(&self, x: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = x.dim();
        assert_eq!(c % self.groups, 0, "group count must divide channels");
        let per = c / self.groups;
        let hw = h * w;
        let xs = x.as_slice().expect("owned layout");
        let mut stats = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let seg = &xs[g * per * hw..(g + 1) * per * hw];
            let n = seg.len() as f64;
            let mean = seg.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = seg
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            stats.push((mean, (var + self.eps).sqrt()));
        }
        let mut out = Array3::zeros((c, h, w));
        let os = out.as_slice_mut().expect("owned layout");
        exec::for_each_chunk(os, hw, |ch, chunk| {
            let (mean, denom) = stats[ch / per];
            let x_ch = &xs[ch * hw..(ch + 1) * hw];
            for (o, &v) in chunk.iter_mut().zip(x_ch) {
                *o = ((v as f64 - mean) / denom) as f32;
            }
        });
        out
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let mut out = self.normalize(x);
        let hw = x.dim().1 * x.dim().2;
        let os = out.as_slice_mut().expect("owned layout");
        exec::for_each_chunk(os, hw, |ch, chunk| {
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            for o in chunk.iter_mut() {
                *o = *o * g + b;
            }
        });
        out
    }

    pub fn save(&self, name: &str, map: &mut ParamMap) {
        map.insert(&format!("{name}.gamma"), self.gamma.clone().into_dyn());
        map.insert(&format!("{name}.beta"), self.beta.clone().into_dyn());
    }

    pub fn load_into(&mut self, name: &str, map: &mut ParamMap) -> Result<()> {
        self.gamma = map.take_like(&format!("{name}.gamma"), self.gamma.view().into_dyn())?;
        self.beta = map.take_like(&format!("{name}.beta"), self.beta.view().into_dyn())?;
        Ok(())
    }
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// (out_features, in_features).
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Linear {
            weight: Array2::zeros((out_features, in_features)),
            bias: Array1::zeros(out_features),
        };
        he_fill(rng, in_features, layer.weight.as_slice_mut().expect("owned layout"));
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        assert_eq!(x.len(), self.weight.shape()[1], "linear input size mismatch");
        self.weight
            .outer_iter()
            .zip(self.bias.iter())
            .map(|(row, &b)| {
                let mut acc = b;
                for (&wv, &xv) in row.iter().zip(x) {
                    acc += wv * xv;
                }
                acc
            })
            .collect()
    }

    pub fn save(&self, name: &str, map: &mut ParamMap) {
        map.insert(&format!("{name}.weight"), self.weight.clone().into_dyn());
        map.insert(&format!("{name}.bias"), self.bias.clone().into_dyn());
    }

    pub fn load_into(&mut self, name: &str, map: &mut ParamMap) -> Result<()> {
        self.weight = map.take_like(&format!("{name}.weight"), self.weight.view().into_dyn())?;
        self.bias = map.take_like(&format!("{name}.bias"), self.bias.view().into_dyn())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Direct per-output-element convolution used as an oracle.
    fn conv_reference(conv: &Conv2d, x: &Array3<f32>) -> Array3<f32> {
        let (in_ch, h, w) = x.dim();
        let (out_ch, _, k, _) = conv.weight.dim();
        let (h_out, w_out) = conv.out_spatial(h, w);
        let (p, d) = (conv.padding as isize, conv.dilation as isize);
        let mut out = Array3::zeros((out_ch, h_out, w_out));
        for oc in 0..out_ch {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = conv.bias[oc];
                    for ic in 0..in_ch {
                        for kh in 0..k {
                            for kw in 0..k {
                                let ih = oh as isize + kh as isize * d - p;
                                let iw = ow as isize + kw as isize * d - p;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                acc += conv.weight[[oc, ic, kh, kw]]
                                    * x[[ic, ih as usize, iw as usize]];
                            }
                        }
                    }
                    out[[oc, oh, ow]] = acc;
                }
            }
        }
        out
    }

    fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f32> {
        let mut m = Array3::zeros((c, h, w));
        m.mapv_inplace(|_| rng.random_range(-1.0..1.0f64) as f32);
        m
    }

    #[test]
    fn conv_matches_reference_across_padding_and_dilation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (k, p, d) in [(3, 1, 1), (3, 2, 2), (3, 3, 3), (7, 3, 1), (1, 0, 1)] {
            let conv = {
                let mut c = Conv2d::new(3, 4, k, p, d, &mut rng);
                c.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5f64) as f32);
                c
            };
            let x = random_map(&mut rng, 3, 10, 9);
            let got = conv.forward(&x);
            let want = conv_reference(&conv, &x);
            assert_eq!(got.dim(), (4, 10, 9), "k={k} p={p} d={d}");
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() <= 1e-5, "k={k} p={p} d={d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut conv = Conv2d {
            weight: Array4::zeros((2, 2, 3, 3)),
            bias: Array1::zeros(2),
            padding: 1,
            dilation: 1,
        };
        conv.weight[[0, 0, 1, 1]] = 1.0;
        conv.weight[[1, 1, 1, 1]] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_map(&mut rng, 2, 6, 5);
        assert_eq!(conv.forward(&x), x);
    }

    #[test]
    fn conv_parallel_and_sequential_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let conv = Conv2d::new(5, 8, 3, 1, 1, &mut rng);
        let x = random_map(&mut rng, 5, 16, 12);
        let par = conv.forward(&x);
        let seq = exec::sequential(|| conv.forward(&x));
        assert_eq!(par, seq);
    }

    #[test]
    fn transposed_conv_places_each_tap_once() {
        let mut layer = ConvTranspose2d {
            weight: Array4::zeros((1, 1, 2, 2)),
            bias: Array1::zeros(1),
        };
        layer.weight[[0, 0, 0, 0]] = 1.0;
        layer.weight[[0, 0, 0, 1]] = 2.0;
        layer.weight[[0, 0, 1, 0]] = 3.0;
        layer.weight[[0, 0, 1, 1]] = 4.0;
        let mut x = Array3::zeros((1, 2, 2));
        x[[0, 0, 0]] = 1.0;
        x[[0, 1, 1]] = 10.0;
        let y = layer.forward(&x);
        assert_eq!(y.dim(), (1, 4, 4));
        assert_eq!(y[[0, 0, 0]], 1.0);
        assert_eq!(y[[0, 0, 1]], 2.0);
        assert_eq!(y[[0, 1, 0]], 3.0);
        assert_eq!(y[[0, 1, 1]], 4.0);
        assert_eq!(y[[0, 2, 2]], 10.0);
        assert_eq!(y[[0, 3, 3]], 40.0);
        assert_eq!(y[[0, 2, 0]], 0.0);
    }

    #[test]
    fn maxpool_reduces_each_window() {
        let mut x = Array3::zeros((1, 4, 4));
        for (i, v) in x.iter_mut().enumerate() {
            *v = i as f32;
        }
        let y = maxpool2(&x).unwrap();
        assert_eq!(y.dim(), (1, 2, 2));
        assert_eq!(y[[0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1]], 7.0);
        assert_eq!(y[[0, 1, 0]], 13.0);
        assert_eq!(y[[0, 1, 1]], 15.0);
        assert!(maxpool2(&Array3::<f32>::zeros((1, 3, 4))).is_err());
    }

    #[test]
    fn group_count_falls_back_to_greatest_divisor() {
        assert_eq!(group_count(128, 32), 32);
        assert_eq!(group_count(101, 32), 1);
        assert_eq!(group_count(202, 32), 2);
        assert_eq!(group_count(404, 32), 4);
        assert_eq!(group_count(808, 32), 8);
        assert_eq!(group_count(24, 32), 24);
    }

    #[test]
    fn groupnorm_normalizes_each_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gn = GroupNorm::new(6, 2);
        assert_eq!(gn.groups, 2);
        let x = random_map(&mut rng, 6, 5, 4);
        let y = gn.normalize(&x);
        for g in 0..2 {
            let seg: Vec<f64> = (g * 3..(g + 1) * 3)
                .flat_map(|c| {
                    y.index_axis(ndarray::Axis(0), c)
                        .iter()
                        .map(|&v| v as f64)
                        .collect::<Vec<_>>()
                })
                .collect();
            let n = seg.len() as f64;
            let mean = seg.iter().sum::<f64>() / n;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "group {g} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "group {g} var {var}");
        }
    }

    #[test]
    fn groupnorm_is_scale_invariant_before_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gn = GroupNorm::new(8, 4);
        let x = random_map(&mut rng, 8, 6, 6);
        let base = gn.normalize(&x);
        for c in [0.5f32, 2.0, 37.0] {
            let scaled = gn.normalize(&x.mapv(|v| v * c));
            for (a, b) in base.iter().zip(scaled.iter()) {
                assert!((a - b).abs() < 1e-5, "scale {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn linear_computes_affine_map() {
        let layer = Linear {
            weight: ndarray::array![[1.0f32, 2.0], [0.0, -1.0]],
            bias: ndarray::array![0.5f32, 1.0],
        };
        assert_eq!(layer.forward(&[3.0, 4.0]), vec![11.5, -3.0]);
    }

    #[test]
    fn activations_match_definitions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.19) - 0.8993).abs() < 1e-3);
        let mut a = ndarray::array![[[0.0f32, 1.0, -1.0]]];
        silu_inplace(&mut a);
        assert_eq!(a[[0, 0, 0]], 0.0);
        assert!((a[[0, 0, 1]] - 0.731_058_6).abs() < 1e-5);
        assert!((a[[0, 0, 2]] + 0.268_941_4).abs() < 1e-5);
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let a = Conv2d::new(4, 6, 3, 1, 1, &mut ChaCha8Rng::seed_from_u64(12));
        let b = Conv2d::new(4, 6, 3, 1, 1, &mut ChaCha8Rng::seed_from_u64(12));
        let c = Conv2d::new(4, 6, 3, 1, 1, &mut ChaCha8Rng::seed_from_u64(13));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f64 / (4.0 * 9.0)).sqrt() as f32;
        assert!(a.weight.iter().all(|w| w.abs() <= bound));
        assert!(a.bias.iter().all(|&b| b == 0.0));
    }
}
