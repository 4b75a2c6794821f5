//! Weight checkpoint container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "RADENETW" (8 bytes)
//! version: u16                — currently 1
//! fingerprint: u64            — hash of the canonical structural config text
//! blob count: u32
//! blob table, one entry per blob in ascending path order:
//!     path length: u16, path bytes (UTF-8)
//!     rank: u16, dims: rank × u32
//!     offset: u64             — element offset into the payload section
//! payload: concatenated f32 values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, ArrayViewD, IxDyn};

use crate::error::{Error, Result};
use crate::io::atomic_write;

const MAGIC: &[u8; 8] = b"RADENETW";
const VERSION: u16 = 1;

/// 64-bit FNV-1a hash of a canonical text, used to bind checkpoints to the
/// network structure they were created for.
pub fn fingerprint64(text: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in text.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Named weight blobs keyed by canonical layer path.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct ParamMap {
    blobs: BTreeMap<String, ArrayD<f32>>,
}

impl ParamMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Registers a blob. Every layer path may appear exactly once.
    pub fn insert(&mut self, key: &str, value: ArrayD<f32>) {
        let prev = self.blobs.insert(key.to_string(), value);
        assert!(prev.is_none(), "duplicate checkpoint blob {key}");
    }

    /// Removes and returns the blob at `key`, requiring the same shape as
    /// `like`; the error names the missing or misshapen path.
    pub fn take_like<D: ndarray::Dimension>(
        &mut self,
        key: &str,
        like: ArrayViewD<f32>,
    ) -> Result<ndarray::Array<f32, D>> {
        let blob = self
            .blobs
            .remove(key)
            .ok_or_else(|| Error::format(format!("checkpoint is missing blob {key}")))?;
        if blob.shape() != like.shape() {
            return Err(Error::ShapeMismatch {
                what: "checkpoint blob",
                expected: like.shape().to_vec(),
                actual: blob.shape().to_vec(),
            });
        }
        blob.into_dimensionality::<D>()
            .map_err(|_| Error::format(format!("checkpoint blob {key} has the wrong rank")))
    }

    /// Succeeds only when every blob has been consumed.
    pub fn expect_empty(&self) -> Result<()> {
        if let Some(key) = self.blobs.keys().next() {
            return Err(Error::format(format!(
                "checkpoint holds {} unexpected blob(s), first: {key}",
                self.blobs.len()
            )));
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.blobs.keys().map(String::as_str)
    }
}

/// Serializes the blobs with the config fingerprint and writes atomically.
pub fn save_params(path: &Path, fingerprint: u64, params: &ParamMap) -> Result<()> {
    let mut table = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0u64;
    for (key, blob) in &params.blobs {
        table.extend_from_slice(&(key.len() as u16).to_le_bytes());
        table.extend_from_slice(key.as_bytes());
        table.extend_from_slice(&(blob.ndim() as u16).to_le_bytes());
        for &d in blob.shape() {
            table.extend_from_slice(&(d as u32).to_le_bytes());
        }
        table.extend_from_slice(&offset.to_le_bytes());
        for &v in blob.as_slice().expect("owned layout") {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += blob.len() as u64;
    }
    let mut out = Vec::with_capacity(8 + 2 + 8 + 4 + table.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&fingerprint.to_le_bytes());
    out.extend_from_slice(&(params.blobs.len() as u32).to_le_bytes());
    out.extend_from_slice(&table);
    out.extend_from_slice(&payload);
    atomic_write(path, &out)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format_at(
                self.path,
                format!("truncated checkpoint: missing {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint, returning its config fingerprint and blobs.
pub fn load_params(path: &Path) -> Result<(u64, ParamMap)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format_at(path, "bad magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format_at(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let fingerprint = r.u64("fingerprint")?;
    let count = r.u32("blob count")? as usize;
    let mut entries = Vec::with_capacity(count);
    let mut expected_offset = 0u64;
    for i in 0..count {
        let key_len = r.u16(&format!("blob {i} path length"))? as usize;
        let key = std::str::from_utf8(r.take(key_len, "blob path")?)
            .map_err(|_| Error::format_at(path, "blob path is not UTF-8"))?
            .to_string();
        let rank = r.u16("blob rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut len = 1usize;
        for _ in 0..rank {
            let d = r.u32("blob dim")? as usize;
            if d == 0 {
                return Err(Error::format_at(path, "zero-sized blob dimension"));
            }
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::format_at(path, "blob dimensions overflow"))?;
            dims.push(d);
        }
        let offset = r.u64("blob offset")?;
        if offset != expected_offset {
            return Err(Error::format_at(
                path,
                format!("blob {key} has offset {offset}, expected {expected_offset}"),
            ));
        }
        expected_offset += len as u64;
        entries.push((key, dims, len));
    }
    let mut map = ParamMap::new();
    for (key, dims, len) in entries {
        let raw = r.take(len * 4, &format!("payload of {key}"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if map.blobs.contains_key(&key) {
            return Err(Error::format_at(path, format!("duplicate blob {key}")));
        }
        map.insert(
            &key,
            ArrayD::from_shape_vec(IxDyn(&dims), data).expect("length checked above"),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::format_at(path, "trailing data after payload"));
    }
    Ok((fingerprint, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample_map() -> ParamMap {
        let mut map = ParamMap::new();
        map.insert("enc2.conv.weight", array![[1.0f32, -2.5], [0.25, 4.0]].into_dyn());
        map.insert("enc2.conv.bias", array![0.0f32, 0.125].into_dyn());
        map
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.ckpt");
        let map = sample_map();
        save_params(&path, 0xdead_beef, &map).unwrap();
        let (fp, back) = load_params(&path).unwrap();
        assert_eq!(fp, 0xdead_beef);
        assert_eq!(back, map);
    }

    #[test]
    fn fingerprint_is_stable_and_separating() {
        let a = fingerprint64("n_cls=5\nn_d=64\n");
        assert_eq!(a, fingerprint64("n_cls=5\nn_d=64\n"));
        assert_ne!(a, fingerprint64("n_cls=6\nn_d=64\n"));
        // Classic reference value for the empty input.
        assert_eq!(fingerprint64(""), 0xcbf2_9ce4_8422_2325);
    }

    #[test]
    fn take_like_enforces_shape() {
        let mut map = sample_map();
        let like = ndarray::Array2::<f32>::zeros((2, 2));
        let got: ndarray::Array2<f32> = map
            .take_like("enc2.conv.weight", like.view().into_dyn())
            .unwrap();
        assert_eq!(got[[1, 1]], 4.0);
        let wrong = ndarray::Array2::<f32>::zeros((3, 2));
        assert!(map
            .take_like::<ndarray::Ix2>("enc2.conv.bias", wrong.view().into_dyn())
            .is_err());
        assert!(map
            .take_like::<ndarray::Ix2>("missing.blob", like.view().into_dyn())
            .is_err());
    }

    #[test]
    fn expect_empty_reports_leftovers() {
        let map = sample_map();
        let err = map.expect_empty().unwrap_err();
        assert!(err.to_string().contains("unexpected"), "{err}");
        assert!(ParamMap::new().expect_empty().is_ok());
    }

    #[test]
    fn truncation_and_magic_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.ckpt");
        save_params(&path, 7, &sample_map()).unwrap();
        let full = fs::read(&path).unwrap();

        let mut bad = full.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(load_params(&path).unwrap_err().to_string().contains("bad magic"));

        let mut short = full.clone();
        short.truncate(full.len() - 3);
        fs::write(&path, &short).unwrap();
        assert!(load_params(&path)
            .unwrap_err()
            .to_string()
            .contains("truncated"));

        let mut long = full;
        long.push(0);
        fs::write(&path, &long).unwrap();
        assert!(load_params(&path)
            .unwrap_err()
            .to_string()
            .contains("trailing"));
    }
}
