//! Reader and writer for `.nnstw` tensor archives.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NNSTW001"            8 bytes magic
//! version: u32          must be 1
//! count: u32            number of tensors
//! repeated count times:
//!   name_len: u16, name: UTF-8 bytes
//!   ndim: u8 (1..=8), dims: ndim x u32
//!   dtype: u8           0 = f32
//!   payload: product(dims) x f32
//! ```
//!
//! Bytes after the last tensor are rejected.

use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"NNSTW001";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const MAX_NDIM: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArchiveError {
    #[error("missing NNSTW001 magic")]
    BadMagic,
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),
    #[error("tensor `{name}` has unsupported dtype {dtype}")]
    UnsupportedDtype { name: String, dtype: u8 },
    #[error("archive truncated while reading {0}")]
    TruncatedPayload(String),
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{0}` contains a non-finite value")]
    NonFiniteValue(String),
    #[error("invalid tensor name: {0}")]
    InvalidName(String),
    #[error("tensor `{name}` has invalid rank {ndim}")]
    InvalidRank { name: String, ndim: usize },
    #[error("tensor `{name}` declares {expected} values but holds {actual}")]
    LengthMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl ArchiveTensor {
    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

/// Named f32 tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorArchive {
    entries: IndexMap<String, ArchiveTensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        dims: Vec<u32>,
        data: Vec<f32>,
    ) -> Result<(), ArchiveError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ArchiveError::InvalidName("empty name".into()));
        }
        if name.len() > u16::MAX as usize {
            return Err(ArchiveError::InvalidName(format!("name of {} bytes", name.len())));
        }
        if dims.is_empty() || dims.len() > MAX_NDIM {
            return Err(ArchiveError::InvalidRank {
                name,
                ndim: dims.len(),
            });
        }
        let expected: usize = dims.iter().map(|&d| d as usize).product();
        if expected != data.len() {
            return Err(ArchiveError::LengthMismatch {
                name,
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ArchiveError::NonFiniteValue(name));
        }
        if self.entries.contains_key(&name) {
            return Err(ArchiveError::DuplicateName(name));
        }
        self.entries.insert(name, ArchiveTensor { dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveTensor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArchiveTensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.values().map(ArchiveTensor::numel).sum()
    }

    /// Moves every tensor of `other` into `self`, rejecting name clashes.
    pub fn merge(&mut self, other: TensorArchive) -> Result<(), ArchiveError> {
        for (name, t) in other.entries {
            self.insert(name, t.dims, t.data)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_archive(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        read_archive(bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(read_archive(&bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        std::fs::write(path, write_archive(self))?;
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ArchiveError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ArchiveError::TruncatedPayload(what.to_string()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ArchiveError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_archive(bytes: &[u8]) -> Result<TensorArchive, ArchiveError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(ArchiveError::UnsupportedVersion(version));
    }
    let count = cur.u32("tensor count")?;
    let mut archive = TensorArchive::new();
    for index in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| ArchiveError::InvalidName(format!("tensor {index} is not UTF-8")))?
            .to_string();
        if name.is_empty() {
            return Err(ArchiveError::InvalidName(format!("tensor {index} has an empty name")));
        }
        let ndim = cur.u8("rank")? as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(ArchiveError::InvalidRank { name, ndim });
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32("dims")?);
        }
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(ArchiveError::UnsupportedDtype { name, dtype });
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ArchiveError::TruncatedPayload(format!("payload of `{name}`")))?;
        let payload = cur.take(numel, &format!("payload of `{name}`"))?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ArchiveError::NonFiniteValue(name));
        }
        if archive.contains(&name) {
            return Err(ArchiveError::DuplicateName(name));
        }
        archive.entries.insert(name, ArchiveTensor { dims, data });
    }
    if cur.pos != bytes.len() {
        return Err(ArchiveError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(archive)
}

pub fn write_archive(archive: &TensorArchive) -> Vec<u8> {
    let payload: usize = archive
        .entries
        .iter()
        .map(|(k, v)| 2 + k.len() + 1 + 4 * v.dims.len() + 1 + 4 * v.data.len())
        .sum();
    let mut out = Vec::with_capacity(16 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(archive.entries.len() as u32).to_le_bytes());
    for (name, t) in &archive.entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.dims.len() as u8);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_archive_is_sixteen_bytes() {
        let bytes = write_archive(&TensorArchive::new());
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..8], b"NNSTW001");
        assert_eq!(&bytes[8..], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert!(read_archive(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_tensor_layout() {
        let mut a = TensorArchive::new();
        a.insert("w", vec![2], vec![1.0, -1.0]).unwrap();
        let expect: Vec<u8> = [
            &b"NNSTW001"[..],
            &[1, 0, 0, 0],       // version
            &[1, 0, 0, 0],       // count
            &[1, 0],             // name length
            b"w",
            &[1],                // ndim
            &[2, 0, 0, 0],       // dims
            &[0],                // dtype f32
            &[0x00, 0x00, 0x80, 0x3f], // 1.0
            &[0x00, 0x00, 0x80, 0xbf], // -1.0
        ]
        .concat();
        assert_eq!(write_archive(&a), expect);
        assert_eq!(read_archive(&expect).unwrap(), a);
    }

    #[test]
    fn error_paths() {
        let mut a = TensorArchive::new();
        a.insert("conv", vec![2, 3], vec![0.5; 6]).unwrap();
        let good = write_archive(&a);

        assert_eq!(read_archive(b"NOTMAGIC"), Err(ArchiveError::BadMagic));
        assert_eq!(read_archive(b"NNST"), Err(ArchiveError::BadMagic));

        let mut v2 = good.clone();
        v2[8] = 2;
        assert_eq!(read_archive(&v2), Err(ArchiveError::UnsupportedVersion(2)));

        let short = &good[..good.len() - 3];
        assert!(matches!(read_archive(short), Err(ArchiveError::TruncatedPayload(_))));

        let mut dtype = good.clone();
        let dtype_pos = 16 + 2 + 4 + 1 + 8;
        dtype[dtype_pos] = 1;
        assert!(matches!(read_archive(&dtype), Err(ArchiveError::UnsupportedDtype { dtype: 1, .. })));

        let mut nan = good.clone();
        let last = nan.len() - 4;
        nan[last..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(read_archive(&nan), Err(ArchiveError::NonFiniteValue("conv".into())));

        let mut trailing = good.clone();
        trailing.push(0);
        assert_eq!(read_archive(&trailing), Err(ArchiveError::TrailingBytes(1)));

        // Two tensors with the same name, assembled by hand.
        let mut dup = good.clone();
        dup[12] = 2;
        dup.extend_from_slice(&good[16..]);
        assert_eq!(read_archive(&dup), Err(ArchiveError::DuplicateName("conv".into())));

        assert_eq!(
            a.insert("conv", vec![1], vec![0.0]),
            Err(ArchiveError::DuplicateName("conv".into()))
        );
        assert!(a.insert("", vec![1], vec![0.0]).is_err());
        assert!(a.insert("x", vec![1], vec![f32::INFINITY]).is_err());
    }

    fn arb_archive() -> impl Strategy<Value = TensorArchive> {
        prop::collection::vec(
            (
                "[a-z][a-z0-9._]{0,12}",
                prop::collection::vec(1u32..4, 1..4),
                any::<u64>(),
            ),
            0..6,
        )
        .prop_map(|items| {
            let mut a = TensorArchive::new();
            for (name, dims, seed) in items {
                let n: u32 = dims.iter().product();
                let data = (0..n)
                    .map(|i| ((seed.wrapping_add(i as u64) % 1000) as f32 - 500.0) / 7.0)
                    .collect();
                let _ = a.insert(name, dims, data);
            }
            a
        })
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(a in arb_archive()) {
            let bytes = write_archive(&a);
            let back = read_archive(&bytes).unwrap();
            prop_assert_eq!(&back, &a);
            prop_assert_eq!(write_archive(&back), bytes);
        }

        #[test]
        fn random_bytes_never_panic(tail in prop::collection::vec(any::<u8>(), 0..256), header in any::<bool>()) {
            let mut bytes = Vec::new();
            if header {
                bytes.extend_from_slice(MAGIC);
                bytes.extend_from_slice(&1u32.to_le_bytes());
            }
            bytes.extend_from_slice(&tail);
            let _ = read_archive(&bytes);
        }

        #[test]
        fn truncations_are_errors(a in arb_archive(), cut in 1usize..64) {
            let bytes = write_archive(&a);
            if cut <= bytes.len() && !a.is_empty() {
                prop_assert!(read_archive(&bytes[..bytes.len() - cut]).is_err());
            }
        }
    }
}
