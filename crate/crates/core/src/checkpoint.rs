//! Single-file checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPCL"
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       8     metadata length L, u64 little-endian
//! 16      L     metadata: JSON object, tensor name → {dtype, shape, offset, length}
//! ...           zero padding up to the next multiple of 64 (payload start)
//! ...           payload: little-endian f32 data; each tensor's `offset` is
//!               relative to the payload start and a multiple of 64
//! ```
//!
//! Names appear in lexicographic order and tensors are laid out in that order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamSet, Tensor};

pub const MAGIC: [u8; 4] = *b"SPCL";
pub const VERSION: u32 = 1;
pub const ALIGN: usize = 64;
const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

fn align_up(x: usize) -> usize {
    x.div_ceil(ALIGN) * ALIGN
}

pub fn to_bytes(params: &ParamSet<f32>) -> Vec<u8> {
    let mut meta = BTreeMap::new();
    let mut cursor = 0usize;
    for (name, t) in params {
        let length = t.numel() * 4;
        meta.insert(
            name.clone(),
            TensorEntry {
                dtype: "f32".into(),
                shape: t.shape().to_vec(),
                offset: cursor as u64,
                length: length as u64,
            },
        );
        cursor = align_up(cursor + length);
    }
    let meta_bytes = serde_json::to_vec(&meta).expect("metadata serializes");
    let payload_start = align_up(HEADER_LEN + meta_bytes.len());

    let mut out = Vec::with_capacity(payload_start + cursor);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.resize(payload_start, 0);
    for ((_, t), entry) in params.iter().zip(meta.values()) {
        out.resize(payload_start + entry.offset as usize, 0);
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet<f32>> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload(format!("{} bytes is shorter than the magic", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload("header is incomplete".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::TruncatedPayload(format!("metadata of {meta_len} bytes runs past end of file")))?;
    let meta: BTreeMap<String, TensorEntry> =
        serde_json::from_slice(&bytes[HEADER_LEN..meta_end]).map_err(|e| Error::Metadata(e.to_string()))?;
    let payload_start = align_up(meta_end);

    for (name, e) in &meta {
        if e.dtype != "f32" {
            return Err(Error::Metadata(format!("`{name}` has unsupported dtype `{}`", e.dtype)));
        }
        let numel: usize = e.shape.iter().product();
        if e.length != (numel * 4) as u64 {
            return Err(Error::Metadata(format!("`{name}` declares {} bytes for shape {:?}", e.length, e.shape)));
        }
        if e.offset % ALIGN as u64 != 0 {
            return Err(Error::Metadata(format!("`{name}` offset {} is not {ALIGN}-byte aligned", e.offset)));
        }
    }

    let mut by_offset: Vec<(&String, &TensorEntry)> = meta.iter().collect();
    by_offset.sort_by_key(|(_, e)| e.offset);
    for pair in by_offset.windows(2) {
        let (a, ea) = pair[0];
        let (b, eb) = pair[1];
        if ea.offset + ea.length > eb.offset {
            return Err(Error::OverlappingOffsets { first: a.clone(), second: b.clone() });
        }
    }

    let mut params = ParamSet::new();
    for (name, e) in meta {
        let start = payload_start as u64 + e.offset;
        let end = start + e.length;
        if end > bytes.len() as u64 {
            return Err(Error::TruncatedPayload(format!(
                "`{name}` needs bytes {start}..{end} but the file has {}",
                bytes.len()
            )));
        }
        let data: Vec<f32> = bytes[start as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(e.shape, data).map_err(|err| Error::Metadata(format!("`{name}`: {err}")))?;
        params.insert(name, t);
    }
    Ok(params)
}

pub fn save(params: &ParamSet<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet<f32>> {
    from_bytes(&std::fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorDiff {
    pub name: String,
    pub max_abs: f64,
    pub frobenius: f64,
}

/// Per-tensor max-abs and Frobenius norm of `a − b`.
pub fn diff(a: &ParamSet<f32>, b: &ParamSet<f32>) -> Result<Vec<TensorDiff>> {
    a.check_compatible(b)?;
    Ok(a.iter()
        .zip(b.iter())
        .map(|((name, ta), (_, tb))| {
            let (mut max_abs, mut sq) = (0.0f64, 0.0f64);
            for (&x, &y) in ta.data().iter().zip(tb.data()) {
                let d = (x as f64 - y as f64).abs();
                max_abs = max_abs.max(d);
                sq += d * d;
            }
            TensorDiff { name: name.clone(), max_abs, frobenius: sq.sqrt() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        p.insert("a", Tensor::new(vec![2, 2], vec![0.25, 1e-8, f32::MAX, -0.0]).unwrap());
        p.insert("s", Tensor::scalar(7.0));
        p
    }

    #[test]
    fn layout_is_aligned() {
        let bytes = to_bytes(&sample());
        assert_eq!(&bytes[..4], b"SPCL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let start = align_up(16 + meta_len);
        // "a" is first, then "b" at 64, "s" at 128
        assert_eq!(&bytes[start..start + 4], &0.25f32.to_le_bytes());
        assert_eq!(&bytes[start + 64..start + 68], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[start + 128..start + 132], &7.0f32.to_le_bytes());
        assert_eq!(bytes.len(), start + 132);
    }

    #[test]
    fn round_trip_bit_exact() {
        let p = sample();
        let q = from_bytes(&to_bytes(&p)).unwrap();
        for ((_, a), (_, b)) in p.iter().zip(q.iter()) {
            let ab: Vec<u32> = a.data().iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn error_categories() {
        let bytes = to_bytes(&sample());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::UnsupportedVersion(9))));

        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(from_bytes(short), Err(Error::TruncatedPayload(_))));
        assert!(matches!(from_bytes(&bytes[..10]), Err(Error::TruncatedPayload(_))));

        // make "b" start where "a" does
        let needle = b"\"offset\":64";
        let pos = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut bad = bytes.clone();
        bad[pos..pos + needle.len()].copy_from_slice(b"\"offset\":0 ");
        let r = from_bytes(&bad);
        assert!(matches!(r, Err(Error::OverlappingOffsets { .. })), "{r:?}");

        let mut bad = bytes.clone();
        bad[16] = b'[';
        assert!(matches!(from_bytes(&bad), Err(Error::Metadata(_))));
    }

    #[test]
    fn diff_of_identical_sets_is_zero() {
        let p = sample();
        assert!(diff(&p, &p).unwrap().iter().all(|d| d.max_abs == 0.0 && d.frobenius == 0.0));
        let mut q = p.clone();
        q.get_mut("b").unwrap().data_mut()[1] = 2.0;
        let d = diff(&p, &q).unwrap();
        assert_eq!(d[1].name, "b");
        assert_eq!(d[1].max_abs, 4.0);
    }
}
