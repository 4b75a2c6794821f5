//! 4D radar power tensors: sensor geometry, scripted synthesis, and the
//! max-projection that collapses the tensor into stacked range-azimuth views.

use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;

/// Largest target amplitude the synthesizer accepts. The bound guarantees
/// that truncated Gaussian tails (per-axis weight < 1e-90) round to exactly
/// +0.0f32, so skipping them leaves every element bit-identical to full
/// evaluation.
pub const MAX_AMPLITUDE: f64 = 1e30;

/// Per-axis truncation radius in units of the Gaussian width: exp(-21²/2) is
/// far below the 1e-90 weight cutoff documented on [`MAX_AMPLITUDE`].
const TRUNCATION_SIGMAS: f64 = 21.0;

/// Bin layout and physical extents of the sensor.
///
/// Bin-center mappings are uniform and strictly monotone:
/// `range(r) = (r+0.5)·range_max/n_r`, and the angular/doppler axes are
/// symmetric about zero, e.g. `azimuth(a) = −fov/2 + (a+0.5)·fov/n_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorGeometry {
    /// Range bin count.
    pub n_r: usize,
    /// Azimuth bin count (before padding).
    pub n_a: usize,
    /// Doppler bin count.
    pub n_d: usize,
    /// Elevation bin count.
    pub n_e: usize,
    /// Maximum range in meters; range bins span [0, range_max].
    pub range_max: f64,
    /// Total azimuth field of view in degrees, symmetric about boresight.
    pub azimuth_fov: f64,
    /// Total elevation field of view in degrees, symmetric about horizontal.
    pub elevation_fov: f64,
    /// Maximum absolute radial velocity in m/s; doppler bins span ±doppler_max.
    pub doppler_max: f64,
    /// Sensor mounting height above the ground plane, in meters.
    pub z0: f64,
}

impl Default for SensorGeometry {
    /// The reference sensor: 256 range × 107 azimuth × 64 doppler × 37
    /// elevation bins over 118 m, a 107° azimuth fan and a 37° elevation fan.
    fn default() -> Self {
        SensorGeometry {
            n_r: 256,
            n_a: 107,
            n_d: 64,
            n_e: 37,
            range_max: 118.0,
            azimuth_fov: 107.0,
            elevation_fov: 37.0,
            doppler_max: 16.0,
            z0: 0.0,
        }
    }
}

impl SensorGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.n_a == 0 || self.n_d == 0 || self.n_e == 0 {
            return Err(Error::validation("all bin counts must be >= 1"));
        }
        self.total_elems()?;
        for (name, v) in [
            ("range_max", self.range_max),
            ("azimuth_fov", self.azimuth_fov),
            ("elevation_fov", self.elevation_fov),
            ("doppler_max", self.doppler_max),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::validation(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !self.z0.is_finite() {
            return Err(Error::validation("z0 must be finite"));
        }
        Ok(())
    }

    /// Total element count of the full tensor, guarding against overflow.
    pub fn total_elems(&self) -> Result<usize> {
        self.n_r
            .checked_mul(self.n_a)
            .and_then(|x| x.checked_mul(self.n_d))
            .and_then(|x| x.checked_mul(self.n_e))
            .ok_or_else(|| Error::validation("tensor element count overflows usize"))
    }

    /// Azimuth bin count after zero-padding to the next multiple of 8.
    pub fn n_a_pad(&self) -> usize {
        self.n_a.next_multiple_of(8)
    }

    /// Number of zero columns appended by the projection.
    pub fn pad_cols(&self) -> usize {
        self.n_a_pad() - self.n_a
    }

    /// Channel count of the stacked projection: doppler block + elevation block.
    pub fn n_de(&self) -> usize {
        self.n_d + self.n_e
    }

    /// Center of range bin `r`, in meters.
    pub fn range_center(&self, r: usize) -> f64 {
        (r as f64 + 0.5) * self.range_max / self.n_r as f64
    }

    /// Center of azimuth bin `a`, in degrees from boresight (positive toward +y).
    pub fn azimuth_center_deg(&self, a: usize) -> f64 {
        -self.azimuth_fov / 2.0 + (a as f64 + 0.5) * self.azimuth_fov / self.n_a as f64
    }

    /// Center of doppler bin `d`, in m/s.
    pub fn doppler_center(&self, d: usize) -> f64 {
        -self.doppler_max + (d as f64 + 0.5) * 2.0 * self.doppler_max / self.n_d as f64
    }

    /// Center of elevation bin `e`, in degrees.
    pub fn elevation_center_deg(&self, e: usize) -> f64 {
        -self.elevation_fov / 2.0 + (e as f64 + 0.5) * self.elevation_fov / self.n_e as f64
    }

    /// Fractional range bin of a physical range (inverse of `range_center`).
    pub fn range_to_bin(&self, range: f64) -> f64 {
        range / self.range_max * self.n_r as f64 - 0.5
    }

    /// Fractional azimuth bin of an azimuth in degrees.
    pub fn azimuth_deg_to_bin(&self, azimuth_deg: f64) -> f64 {
        (azimuth_deg + self.azimuth_fov / 2.0) / self.azimuth_fov * self.n_a as f64 - 0.5
    }

    /// Fractional doppler bin of a radial velocity in m/s.
    pub fn doppler_to_bin(&self, doppler: f64) -> f64 {
        (doppler + self.doppler_max) / (2.0 * self.doppler_max) * self.n_d as f64 - 0.5
    }

    /// Fractional elevation bin of an elevation in degrees.
    pub fn elevation_deg_to_bin(&self, elevation_deg: f64) -> f64 {
        (elevation_deg + self.elevation_fov / 2.0) / self.elevation_fov * self.n_e as f64 - 0.5
    }
}

/// One scripted point target: physical position plus the per-axis Gaussian
/// window widths (in bins) and amplitude of the bump it deposits.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    /// Range in meters.
    pub range: f64,
    /// Azimuth in degrees from boresight.
    pub azimuth_deg: f64,
    /// Radial velocity in m/s.
    pub doppler: f64,
    /// Elevation in degrees.
    pub elevation_deg: f64,
    /// Peak power deposited at the target's bin coordinates.
    pub amplitude: f64,
    /// Gaussian width along the range axis, in bins.
    pub width_r: f64,
    /// Gaussian width along the azimuth axis, in bins.
    pub width_a: f64,
    /// Gaussian width along the doppler axis, in bins.
    pub width_d: f64,
    /// Gaussian width along the elevation axis, in bins.
    pub width_e: f64,
}

impl TargetSpec {
    pub fn validate(&self, geometry: &SensorGeometry) -> Result<()> {
        let fields = [
            ("range", self.range),
            ("azimuth_deg", self.azimuth_deg),
            ("doppler", self.doppler),
            ("elevation_deg", self.elevation_deg),
            ("amplitude", self.amplitude),
            ("width_r", self.width_r),
            ("width_a", self.width_a),
            ("width_d", self.width_d),
            ("width_e", self.width_e),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::validation(format!("target {name} must be finite")));
            }
        }
        if self.amplitude <= 0.0 || self.amplitude > MAX_AMPLITUDE {
            return Err(Error::validation(format!(
                "target amplitude must lie in (0, {MAX_AMPLITUDE:e}], got {}",
                self.amplitude
            )));
        }
        for (name, w) in [
            ("width_r", self.width_r),
            ("width_a", self.width_a),
            ("width_d", self.width_d),
            ("width_e", self.width_e),
        ] {
            if w <= 0.0 {
                return Err(Error::validation(format!(
                    "target {name} must be positive, got {w}"
                )));
            }
        }
        let half_az = geometry.azimuth_fov / 2.0;
        let half_el = geometry.elevation_fov / 2.0;
        if self.range < 0.0 || self.range > geometry.range_max {
            return Err(Error::validation(format!(
                "target range {} outside [0, {}]",
                self.range, geometry.range_max
            )));
        }
        if self.azimuth_deg < -half_az || self.azimuth_deg > half_az {
            return Err(Error::validation(format!(
                "target azimuth {}° outside ±{half_az}°",
                self.azimuth_deg
            )));
        }
        if self.doppler < -geometry.doppler_max || self.doppler > geometry.doppler_max {
            return Err(Error::validation(format!(
                "target doppler {} outside ±{}",
                self.doppler, geometry.doppler_max
            )));
        }
        if self.elevation_deg < -half_el || self.elevation_deg > half_el {
            return Err(Error::validation(format!(
                "target elevation {}° outside ±{half_el}°",
                self.elevation_deg
            )));
        }
        Ok(())
    }
}

/// Dense non-negative 4D power tensor over (range, azimuth, doppler, elevation).
#[derive(Debug, Clone, PartialEq)]
pub struct RadeTensor {
    pub geometry: SensorGeometry,
    /// Shape (n_r, n_a, n_d, n_e), row-major.
    pub data: Array4<f32>,
}

impl RadeTensor {
    /// Wraps raw data after checking shape, finiteness and non-negativity.
    pub fn new(geometry: SensorGeometry, data: Array4<f32>) -> Result<Self> {
        geometry.validate()?;
        let expected = [geometry.n_r, geometry.n_a, geometry.n_d, geometry.n_e];
        let actual = data.shape();
        if actual != expected {
            return Err(Error::ShapeMismatch {
                what: "radar tensor",
                expected: expected.to_vec(),
                actual: actual.to_vec(),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(
                "radar tensor elements must be finite and non-negative",
            ));
        }
        Ok(RadeTensor { geometry, data })
    }
}

/// Stacked max-projections of a [`RadeTensor`]: channels `[0, n_d)` hold the
/// elevation-reduced view, channels `[n_d, n_d+n_e)` the doppler-reduced view,
/// with the azimuth axis zero-padded to a multiple of 8 on the high side.
#[derive(Debug, Clone, PartialEq)]
pub struct RaProjection {
    pub geometry: SensorGeometry,
    /// Shape (n_de, n_r, n_a_pad), row-major.
    pub data: Array3<f32>,
    /// (original azimuth bin count, zero columns appended).
    pub pad_record: (usize, usize),
}

impl RaProjection {
    /// Wraps raw data after checking shape and padding consistency.
    pub fn new(
        geometry: SensorGeometry,
        data: Array3<f32>,
        pad_record: (usize, usize),
    ) -> Result<Self> {
        geometry.validate()?;
        if geometry.n_r % 8 != 0 {
            return Err(Error::validation(format!(
                "projection requires n_r divisible by 8, got {}",
                geometry.n_r
            )));
        }
        let expected = [geometry.n_de(), geometry.n_r, geometry.n_a_pad()];
        if data.shape() != expected {
            return Err(Error::ShapeMismatch {
                what: "projection",
                expected: expected.to_vec(),
                actual: data.shape().to_vec(),
            });
        }
        if pad_record != (geometry.n_a, geometry.pad_cols()) {
            return Err(Error::validation(format!(
                "pad record {pad_record:?} does not match geometry ({}, {})",
                geometry.n_a,
                geometry.pad_cols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("projection elements must be finite"));
        }
        for c in 0..expected[0] {
            for r in 0..expected[1] {
                for a in geometry.n_a..expected[2] {
                    if data[[c, r, a]] != 0.0 {
                        return Err(Error::validation("padded azimuth columns must be zero"));
                    }
                }
            }
        }
        Ok(RaProjection {
            geometry,
            data,
            pad_record,
        })
    }
}

/// Builds a tensor as uniform floor noise plus a superposition of separable
/// Gaussian bumps, one per target, in per-axis fractional bin coordinates.
///
/// Deterministic for a fixed seed, bit-identical across thread counts: the
/// noise word for an element depends only on its flat index, and target
/// contributions are rounded to f32 one target at a time in list order.
pub fn synthesize(
    geometry: SensorGeometry,
    targets: &[TargetSpec],
    noise_floor: f64,
    seed: u64,
) -> Result<RadeTensor> {
    geometry.validate()?;
    for t in targets {
        t.validate(&geometry)?;
    }
    if !noise_floor.is_finite() || noise_floor < 0.0 {
        return Err(Error::validation(format!(
            "noise_floor must be finite and non-negative, got {noise_floor}"
        )));
    }

    let (n_r, n_a, n_d, n_e) = (geometry.n_r, geometry.n_a, geometry.n_d, geometry.n_e);
    let total = geometry.total_elems()?;
    let mut data = vec![0f32; total];

    if noise_floor > 0.0 {
        // One uniform draw per element: word k of the seeded stream scaled
        // into [0, noise_floor). Chunks re-seek the stream to their own start
        // so the value at a flat index never depends on the chunk layout.
        let slab = n_a * n_d * n_e;
        let scale = noise_floor / (1u32 << 24) as f64;
        exec::for_each_chunk(&mut data, slab, |chunk_idx, chunk| {
            use rand::RngCore;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_word_pos((chunk_idx * slab) as u128);
            for v in chunk.iter_mut() {
                *v = ((rng.next_u32() >> 8) as f64 * scale) as f32;
            }
        });
    }

    for t in targets {
        let centers = [
            geometry.range_to_bin(t.range),
            geometry.azimuth_deg_to_bin(t.azimuth_deg),
            geometry.doppler_to_bin(t.doppler),
            geometry.elevation_deg_to_bin(t.elevation_deg),
        ];
        let widths = [t.width_r, t.width_a, t.width_d, t.width_e];
        let dims = [n_r, n_a, n_d, n_e];
        // Per-axis weight tables over the truncated support window.
        let mut lo = [0usize; 4];
        let mut weights: [Vec<f64>; 4] = [vec![], vec![], vec![], vec![]];
        let mut empty = false;
        for ax in 0..4 {
            let radius = TRUNCATION_SIGMAS * widths[ax];
            let start = (centers[ax] - radius).ceil().max(0.0) as usize;
            let end_f = (centers[ax] + radius).floor();
            if end_f < start as f64 || start >= dims[ax] {
                empty = true;
                break;
            }
            let end = (end_f as usize).min(dims[ax] - 1);
            lo[ax] = start;
            weights[ax] = (start..=end)
                .map(|i| {
                    let d = i as f64 - centers[ax];
                    (-d * d / (2.0 * widths[ax] * widths[ax])).exp()
                })
                .collect();
        }
        if empty {
            continue;
        }
        let (wr, wa, wd, we) = (&weights[0], &weights[1], &weights[2], &weights[3]);
        for (ri, vr) in wr.iter().enumerate() {
            let r = lo[0] + ri;
            for (ai, va) in wa.iter().enumerate() {
                let a = lo[1] + ai;
                let amp_ra = t.amplitude * vr * va;
                for (di, vd) in wd.iter().enumerate() {
                    let d = lo[2] + di;
                    let base = ((r * n_a + a) * n_d + d) * n_e + lo[3];
                    let amp_rad = amp_ra * vd;
                    for (ei, ve) in we.iter().enumerate() {
                        data[base + ei] += (amp_rad * ve) as f32;
                    }
                }
            }
        }
    }

    let data = Array4::from_shape_vec((n_r, n_a, n_d, n_e), data)
        .expect("constructed with matching length");
    Ok(RadeTensor { geometry, data })
}

/// Max-projects the tensor along elevation (channels `[0, n_d)`) and along
/// doppler (channels `[n_d, n_d+n_e)`), then zero-pads azimuth to the next
/// multiple of 8. Requires `n_r` divisible by 8 so the result can be halved
/// three times downstream.
pub fn project(t: &RadeTensor) -> Result<RaProjection> {
    let g = t.geometry;
    g.validate()?;
    if g.n_r % 8 != 0 {
        return Err(Error::validation(format!(
            "projection requires n_r divisible by 8, got {}",
            g.n_r
        )));
    }
    let (n_r, n_a, n_d, n_e) = (g.n_r, g.n_a, g.n_d, g.n_e);
    let n_a_pad = g.n_a_pad();
    let n_de = g.n_de();
    let src = t.data.as_slice().expect("tensor data is contiguous");
    let mut out = vec![0f32; n_de * n_r * n_a_pad];

    // Each chunk is one output channel; channels touch disjoint output rows,
    // and the f32 max over finite values is order-independent, so the result
    // is bitwise identical for any parallelization.
    exec::for_each_chunk(&mut out, n_r * n_a_pad, |c, chunk| {
        if c < n_d {
            let d = c;
            for r in 0..n_r {
                for a in 0..n_a {
                    let base = ((r * n_a + a) * n_d + d) * n_e;
                    let cell = &src[base..base + n_e];
                    let mut m = cell[0];
                    for &v in &cell[1..] {
                        m = m.max(v);
                    }
                    chunk[r * n_a_pad + a] = m;
                }
            }
        } else {
            let e = c - n_d;
            for r in 0..n_r {
                for a in 0..n_a {
                    let base = (r * n_a + a) * n_d * n_e + e;
                    let mut m = src[base];
                    for d in 1..n_d {
                        m = m.max(src[base + d * n_e]);
                    }
                    chunk[r * n_a_pad + a] = m;
                }
            }
        }
    });

    let data = Array3::from_shape_vec((n_de, n_r, n_a_pad), out)
        .expect("constructed with matching length");
    Ok(RaProjection {
        geometry: g,
        data,
        pad_record: (n_a, n_a_pad - n_a),
    })
}

/// Byte footprints of the full tensor versus its projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryStats {
    pub full_bytes: u64,
    pub projection_bytes: u64,
    /// 100·(1 − projection/full); negative when the projection is larger.
    pub reduction_percent: f64,
}

/// Computes the storage saved by projecting, at a uniform element width of
/// 4 or 8 bytes.
pub fn memory_stats(geometry: &SensorGeometry, element_bytes: u64) -> Result<MemoryStats> {
    geometry.validate()?;
    if geometry.n_r % 8 != 0 {
        return Err(Error::validation(format!(
            "projection requires n_r divisible by 8, got {}",
            geometry.n_r
        )));
    }
    if element_bytes != 4 && element_bytes != 8 {
        return Err(Error::validation(format!(
            "element_bytes must be 4 or 8, got {element_bytes}"
        )));
    }
    let full_bytes = geometry.n_r as u64
        * geometry.n_a as u64
        * geometry.n_d as u64
        * geometry.n_e as u64
        * element_bytes;
    let projection_bytes =
        geometry.n_de() as u64 * geometry.n_r as u64 * geometry.n_a_pad() as u64 * element_bytes;
    let reduction_percent = 100.0 * (1.0 - projection_bytes as f64 / full_bytes as f64);
    Ok(MemoryStats {
        full_bytes,
        projection_bytes,
        reduction_percent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_geometry() -> SensorGeometry {
        SensorGeometry {
            n_r: 16,
            n_a: 12,
            n_d: 8,
            n_e: 6,
            range_max: 40.0,
            azimuth_fov: 90.0,
            elevation_fov: 30.0,
            doppler_max: 10.0,
            z0: 0.5,
        }
    }

    fn target_at_bins(g: &SensorGeometry, r: usize, a: usize, d: usize, e: usize) -> TargetSpec {
        TargetSpec {
            range: g.range_center(r),
            azimuth_deg: g.azimuth_center_deg(a),
            doppler: g.doppler_center(d),
            elevation_deg: g.elevation_center_deg(e),
            amplitude: 1.0,
            width_r: 1.0,
            width_a: 1.0,
            width_d: 1.0,
            width_e: 1.0,
        }
    }

    #[test]
    fn bin_centers_are_monotone_and_invert() {
        let g = SensorGeometry::default();
        for r in 1..g.n_r {
            assert!(g.range_center(r) > g.range_center(r - 1));
        }
        for a in 1..g.n_a {
            assert!(g.azimuth_center_deg(a) > g.azimuth_center_deg(a - 1));
        }
        let az = g.azimuth_center_deg(53);
        assert!((g.azimuth_deg_to_bin(az) - 53.0).abs() < 1e-9);
        let rg = g.range_center(100);
        assert!((g.range_to_bin(rg) - 100.0).abs() < 1e-9);
        assert!((g.doppler_to_bin(g.doppler_center(7)) - 7.0).abs() < 1e-9);
        assert!((g.elevation_deg_to_bin(g.elevation_center_deg(3)) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn default_geometry_pads_to_112() {
        let g = SensorGeometry::default();
        assert_eq!(g.n_a_pad(), 112);
        assert_eq!(g.pad_cols(), 5);
        assert_eq!(g.n_de(), 101);
    }

    #[test]
    fn empty_scene_is_all_zero() {
        let t = synthesize(small_geometry(), &[], 0.0, 7).unwrap();
        assert!(t.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_target_peaks_at_its_bin() {
        let g = small_geometry();
        let t = synthesize(g, &[target_at_bins(&g, 8, 5, 3, 2)], 0.0, 0).unwrap();
        let (mut argmax, mut best) = ([0usize; 4], f32::NEG_INFINITY);
        for ((idx, &v), _) in t.data.indexed_iter().zip(0..) {
            if v > best {
                best = v;
                argmax = [idx.0, idx.1, idx.2, idx.3];
            }
        }
        assert_eq!(argmax, [8, 5, 3, 2]);
        assert_eq!(best, 1.0);
    }

    #[test]
    fn two_targets_sum_elementwise() {
        let g = small_geometry();
        let mut t1 = target_at_bins(&g, 3, 2, 1, 1);
        let mut t2 = target_at_bins(&g, 13, 10, 6, 4);
        t1.amplitude = 1.0;
        t2.amplitude = 0.5;
        let both = synthesize(g, &[t1.clone(), t2.clone()], 0.0, 0).unwrap();
        let alone1 = synthesize(g, &[t1], 0.0, 0).unwrap();
        let alone2 = synthesize(g, &[t2], 0.0, 0).unwrap();
        for ((a, b), c) in both
            .data
            .iter()
            .zip(alone1.data.iter())
            .zip(alone2.data.iter())
        {
            assert_eq!(*a, *b + *c);
        }
    }

    #[test]
    fn synthesis_is_seed_deterministic() {
        let g = small_geometry();
        let targets = [target_at_bins(&g, 4, 4, 4, 4)];
        let a = synthesize(g, &targets, 0.3, 42).unwrap();
        let b = synthesize(g, &targets, 0.3, 42).unwrap();
        assert_eq!(a.data, b.data);
        let c = synthesize(g, &targets, 0.3, 43).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn parallel_and_sequential_synthesis_agree() {
        let g = small_geometry();
        let targets = [target_at_bins(&g, 4, 4, 4, 4)];
        let par = synthesize(g, &targets, 0.3, 42).unwrap();
        let seq = exec::sequential(|| synthesize(g, &targets, 0.3, 42).unwrap());
        assert_eq!(par.data, seq.data);
    }

    #[test]
    fn noise_stays_in_floor_range() {
        let t = synthesize(small_geometry(), &[], 0.25, 5).unwrap();
        assert!(t.data.iter().all(|&v| (0.0..0.25).contains(&v)));
        assert!(t.data.iter().any(|&v| v > 0.2));
    }

    #[test]
    fn out_of_view_target_is_rejected() {
        let g = small_geometry();
        let mut t = target_at_bins(&g, 0, 0, 0, 0);
        t.range = g.range_max + 1.0;
        assert!(synthesize(g, &[t], 0.0, 0).is_err());
        let mut t = target_at_bins(&g, 0, 0, 0, 0);
        t.azimuth_deg = g.azimuth_fov;
        assert!(synthesize(g, &[t], 0.0, 0).is_err());
        let mut t = target_at_bins(&g, 0, 0, 0, 0);
        t.amplitude = 0.0;
        assert!(synthesize(g, &[t], 0.0, 0).is_err());
    }

    #[test]
    fn zero_tensor_projects_to_zero() {
        let t = synthesize(small_geometry(), &[], 0.0, 0).unwrap();
        let p = project(&t).unwrap();
        assert_eq!(p.data.shape(), [14, 16, 16]);
        assert!(p.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_projection_shape_and_pad() {
        let g = SensorGeometry::default();
        let t = RadeTensor {
            geometry: g,
            data: Array4::zeros((g.n_r, g.n_a, g.n_d, g.n_e)),
        };
        let p = project(&t).unwrap();
        assert_eq!(p.data.shape(), [101, 256, 112]);
        assert_eq!(p.pad_record, (107, 5));
    }

    #[test]
    fn projection_matches_loop_oracle() {
        let g = small_geometry();
        let t = synthesize(g, &[target_at_bins(&g, 8, 5, 3, 2)], 0.4, 11).unwrap();
        let p = project(&t).unwrap();
        for r in 0..g.n_r {
            for a in 0..g.n_a {
                for d in 0..g.n_d {
                    let mut m = f32::NEG_INFINITY;
                    for e in 0..g.n_e {
                        m = m.max(t.data[[r, a, d, e]]);
                    }
                    assert_eq!(p.data[[d, r, a]], m);
                }
                for e in 0..g.n_e {
                    let mut m = f32::NEG_INFINITY;
                    for d in 0..g.n_d {
                        m = m.max(t.data[[r, a, d, e]]);
                    }
                    assert_eq!(p.data[[g.n_d + e, r, a]], m);
                }
            }
        }
        for c in 0..g.n_de() {
            for r in 0..g.n_r {
                for a in g.n_a..g.n_a_pad() {
                    assert_eq!(p.data[[c, r, a]], 0.0);
                }
            }
        }
    }

    #[test]
    fn projection_rejects_unhalvable_range_axis() {
        let mut g = small_geometry();
        g.n_r = 15;
        let t = RadeTensor {
            geometry: g,
            data: Array4::zeros((15, g.n_a, g.n_d, g.n_e)),
        };
        assert!(project(&t).is_err());
    }

    #[test]
    fn memory_stats_default_geometry() {
        let s = memory_stats(&SensorGeometry::default(), 4).unwrap();
        assert_eq!(s.full_bytes, 259_457_024);
        assert_eq!(s.projection_bytes, 11_583_488);
        let exact = 100.0 * (1.0 - (101.0 * 112.0) / (107.0 * 64.0 * 37.0));
        assert!((s.reduction_percent - exact).abs() < 1e-12);
        assert!(s.reduction_percent >= 91.9);
        // Same ratio at 8-byte elements.
        let s8 = memory_stats(&SensorGeometry::default(), 8).unwrap();
        assert!((s8.reduction_percent - exact).abs() < 1e-12);
    }

    #[test]
    fn memory_stats_degenerate_geometry_goes_negative() {
        let g = SensorGeometry {
            n_r: 8,
            n_a: 8,
            n_d: 1,
            n_e: 1,
            ..SensorGeometry::default()
        };
        let s = memory_stats(&g, 4).unwrap();
        assert_eq!(s.full_bytes, 256);
        assert_eq!(s.projection_bytes, 512);
        assert!(s.reduction_percent < 0.0);
    }

    #[test]
    fn memory_stats_rejects_odd_widths() {
        assert!(memory_stats(&SensorGeometry::default(), 3).is_err());
    }

    #[test]
    fn memory_stats_requires_projectable_range_axis() {
        let g = SensorGeometry {
            n_r: 63,
            ..SensorGeometry::default()
        };
        assert!(memory_stats(&g, 4).is_err());
    }
}
