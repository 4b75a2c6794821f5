//! Portable on-disk container for tensors, projections and channel maps.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "RADETNSR" (8 bytes)
//! version: u16        — currently 1
//! rank: u16           — 4 for full tensors, 3 for projections/channel maps
//! dims: rank × u32    — (n_r, n_a, n_d, n_e) or (channels, n_r, n_a_pad)
//! element_width: u8   — 4 (f32 payload)
//! geometry: 7 × f64   — n_d, n_e, range_max, azimuth_fov, elevation_fov,
//!                       doppler_max, z0 (the geometry fields not already
//!                       recoverable from dims, in declaration order)
//! pad_record: 2 × u32 — rank-3 only: original n_a, zero columns appended
//! payload             — row-major f32 values
//! ```
//!
//! All writes go through a temp file + rename so interrupted runs never leave
//! a parseable partial artifact behind.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array3, Array4};

use crate::error::{Error, Result};
use crate::tensor::{RaProjection, RadeTensor, SensorGeometry};

const MAGIC: &[u8; 8] = b"RADETNSR";
const VERSION: u16 = 1;
const ELEMENT_WIDTH: u8 = 4;

/// Writes `bytes` to `path` atomically: the data lands in a temp file in the
/// destination directory and is renamed into place only once fully written.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn geometry_block(g: &SensorGeometry) -> [f64; 7] {
    [
        g.n_d as f64,
        g.n_e as f64,
        g.range_max,
        g.azimuth_fov,
        g.elevation_fov,
        g.doppler_max,
        g.z0,
    ]
}

fn usize_from_block(path: &Path, name: &str, v: f64) -> Result<usize> {
    if !v.is_finite() || v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(Error::format_at(
            path,
            format!("geometry field {name} is not a valid bin count: {v}"),
        ));
    }
    Ok(v as usize)
}

fn encode(rank: u16, dims: &[usize], g: &SensorGeometry, pad: Option<(u32, u32)>, data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 2 + 2 + dims.len() * 4 + 1 + 56 + 8 + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rank.to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(ELEMENT_WIDTH);
    for v in geometry_block(g) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some((orig, cols)) = pad {
        out.extend_from_slice(&orig.to_le_bytes());
        out.extend_from_slice(&cols.to_le_bytes());
    }
    let start = out.len();
    out.resize(start + data.len() * 4, 0);
    for (dst, v) in out[start..].chunks_exact_mut(4).zip(data) {
        dst.copy_from_slice(&v.to_le_bytes());
    }
    out
}

/// Cursor over a fully-read file, with truncation-aware accessors.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format_at(
                self.path,
                format!("truncated file: missing {what}"),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

struct Decoded {
    rank: u16,
    dims: Vec<usize>,
    geometry: [f64; 7],
    pad: Option<(u32, u32)>,
    payload: Vec<f32>,
}

fn decode(path: &Path, bytes: &[u8]) -> Result<Decoded> {
    let mut r = Reader { path, bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format_at(path, "bad magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format_at(
            path,
            format!("unsupported format version {version}"),
        ));
    }
    let rank = r.u16("rank")?;
    if rank != 3 && rank != 4 {
        return Err(Error::format_at(path, format!("unsupported rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    let mut count = 1usize;
    for i in 0..rank {
        let d = r.u32(&format!("dim {i}"))? as usize;
        if d == 0 {
            return Err(Error::format_at(path, "zero-sized dimension"));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::format_at(path, "dimension product overflows"))?;
        dims.push(d);
    }
    let width = r.take(1, "element width")?[0];
    if width != ELEMENT_WIDTH {
        return Err(Error::format_at(
            path,
            format!("unsupported element width {width}"),
        ));
    }
    let mut geometry = [0f64; 7];
    for (i, slot) in geometry.iter_mut().enumerate() {
        *slot = r.f64(&format!("geometry field {i}"))?;
    }
    let pad = if rank == 3 {
        Some((r.u32("pad record")?, r.u32("pad record")?))
    } else {
        None
    };
    let payload_bytes = r.take(count * 4, "payload")?;
    if r.pos != bytes.len() {
        return Err(Error::format_at(path, "trailing data after payload"));
    }
    let payload = payload_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Decoded {
        rank,
        dims,
        geometry,
        pad,
        payload,
    })
}

fn geometry_from_decoded(path: &Path, d: &Decoded, n_r: usize, n_a: usize) -> Result<SensorGeometry> {
    let g = SensorGeometry {
        n_r,
        n_a,
        n_d: usize_from_block(path, "n_d", d.geometry[0])?,
        n_e: usize_from_block(path, "n_e", d.geometry[1])?,
        range_max: d.geometry[2],
        azimuth_fov: d.geometry[3],
        elevation_fov: d.geometry[4],
        doppler_max: d.geometry[5],
        z0: d.geometry[6],
    };
    g.validate()
        .map_err(|e| Error::format_at(path, format!("invalid geometry: {e}")))?;
    Ok(g)
}

pub fn save_tensor(path: &Path, t: &RadeTensor) -> Result<()> {
    let g = &t.geometry;
    let dims = [g.n_r, g.n_a, g.n_d, g.n_e];
    let data = t.data.as_slice().expect("tensor data is contiguous");
    atomic_write(path, &encode(4, &dims, g, None, data))
}

pub fn load_tensor(path: &Path) -> Result<RadeTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let d = decode(path, &bytes)?;
    if d.rank != 4 {
        return Err(Error::format_at(
            path,
            format!("expected a rank-4 tensor, found rank {}", d.rank),
        ));
    }
    let g = geometry_from_decoded(path, &d, d.dims[0], d.dims[1])?;
    if g.n_d != d.dims[2] || g.n_e != d.dims[3] {
        return Err(Error::format_at(
            path,
            "geometry block disagrees with tensor dimensions",
        ));
    }
    let data = Array4::from_shape_vec((g.n_r, g.n_a, g.n_d, g.n_e), d.payload)
        .expect("payload length checked during decode");
    RadeTensor::new(g, data).map_err(|e| Error::format_at(path, e.to_string()))
}

fn load_rank3(path: &Path) -> Result<(SensorGeometry, Array3<f32>, (usize, usize))> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let d = decode(path, &bytes)?;
    if d.rank != 3 {
        return Err(Error::format_at(
            path,
            format!("expected a rank-3 map, found rank {}", d.rank),
        ));
    }
    let (n_a, pad_cols) = d.pad.expect("rank-3 decode always carries a pad record");
    let (channels, n_r, n_a_pad) = (d.dims[0], d.dims[1], d.dims[2]);
    let g = geometry_from_decoded(path, &d, n_r, n_a as usize)?;
    if g.n_a_pad() != n_a_pad || g.pad_cols() != pad_cols as usize {
        return Err(Error::format_at(
            path,
            "pad record disagrees with stored dimensions",
        ));
    }
    let data = Array3::from_shape_vec((channels, n_r, n_a_pad), d.payload)
        .expect("payload length checked during decode");
    Ok((g, data, (n_a as usize, pad_cols as usize)))
}

pub fn save_projection(path: &Path, p: &RaProjection) -> Result<()> {
    let g = &p.geometry;
    let dims = [g.n_de(), g.n_r, g.n_a_pad()];
    let pad = Some((p.pad_record.0 as u32, p.pad_record.1 as u32));
    let data = p.data.as_slice().expect("projection data is contiguous");
    atomic_write(path, &encode(3, &dims, g, pad, data))
}

pub fn load_projection(path: &Path) -> Result<RaProjection> {
    let (g, data, pad) = load_rank3(path)?;
    if data.shape()[0] != g.n_de() {
        return Err(Error::format_at(
            path,
            format!(
                "projection channel count {} does not equal n_d + n_e = {}",
                data.shape()[0],
                g.n_de()
            ),
        ));
    }
    RaProjection::new(g, data, pad).map_err(|e| Error::format_at(path, e.to_string()))
}

/// Saves an arbitrary-channel range-azimuth map (confidence or regression
/// outputs) in the same rank-3 container as projections.
pub fn save_channel_map(path: &Path, g: &SensorGeometry, data: &Array3<f32>) -> Result<()> {
    let shape = data.shape();
    if shape[1] != g.n_r || shape[2] != g.n_a_pad() {
        return Err(Error::ShapeMismatch {
            what: "channel map",
            expected: vec![shape[0], g.n_r, g.n_a_pad()],
            actual: shape.to_vec(),
        });
    }
    let dims = [shape[0], shape[1], shape[2]];
    let pad = Some((g.n_a as u32, g.pad_cols() as u32));
    let slice = data.as_slice().ok_or_else(|| {
        Error::validation("channel map must be contiguous row-major")
    })?;
    atomic_write(path, &encode(3, &dims, g, pad, slice))
}

pub fn load_channel_map(path: &Path) -> Result<(SensorGeometry, Array3<f32>)> {
    let (g, data, _pad) = load_rank3(path)?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::format_at(path, "channel map holds non-finite values"));
    }
    Ok((g, data))
}
