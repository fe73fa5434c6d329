//! `NDAC` tensor container used for activation caches and dataset exports.
//!
//! Layout: magic `NDAC` | version u32 LE | dtype u8 (0 = f32) | rank u8 |
//! dims u32 LE × rank (sample count first) | fingerprint u64 LE | f32 LE
//! payload.

use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CACHE_MAGIC: [u8; 4] = *b"NDAC";
pub const CACHE_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

/// Header fields of a container file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub dims: Vec<usize>,
    pub fingerprint: u64,
}

impl ContainerHeader {
    fn byte_len(&self) -> usize {
        4 + 4 + 1 + 1 + 4 * self.dims.len() + 8
    }
}

pub fn write_container(path: &Path, tensor: &Tensor, fingerprint: u64) -> Result<()> {
    if tensor.rank() > u8::MAX as usize {
        return Err(Error::invalid("tensor rank exceeds 255"));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F32, tensor.rank() as u8])?;
    for &d in tensor.shape() {
        let d =
            u32::try_from(d).map_err(|_| Error::invalid(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&fingerprint.to_le_bytes())?;
    for v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<ContainerHeader> {
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 10 {
        return Err(corrupt("file shorter than the fixed header"));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != CACHE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: CACHE_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            supported: CACHE_VERSION,
        });
    }
    if bytes[8] != DTYPE_F32 {
        return Err(corrupt(&format!("unsupported dtype {}", bytes[8])));
    }
    let rank = bytes[9] as usize;
    let end = 10 + 4 * rank + 8;
    if bytes.len() < end {
        return Err(corrupt("header truncated"));
    }
    let dims = (0..rank)
        .map(|i| {
            u32::from_le_bytes(bytes[10 + 4 * i..14 + 4 * i].try_into().expect("4 bytes")) as usize
        })
        .collect();
    let fingerprint = u64::from_le_bytes(bytes[end - 8..end].try_into().expect("8 bytes"));
    Ok(ContainerHeader { dims, fingerprint })
}

/// Reads only the header.
pub fn read_container_header(path: &Path) -> Result<ContainerHeader> {
    let mut f = std::fs::File::open(path)?;
    let mut fixed = [0u8; 10];
    f.read_exact(&mut fixed).map_err(|_| Error::Corrupt {
        path: path.to_path_buf(),
        reason: "file shorter than the fixed header".into(),
    })?;
    let mut rest = vec![0u8; 4 * fixed[9] as usize + 8];
    let got = f.read(&mut rest)?;
    let mut bytes = fixed.to_vec();
    bytes.extend_from_slice(&rest[..got]);
    parse_header(path, &bytes)
}

/// Reads a container; `expected_fingerprint` is checked when given.
pub fn read_container(
    path: &Path,
    expected_fingerprint: Option<u64>,
) -> Result<(Tensor, ContainerHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let header = parse_header(path, &bytes)?;
    if let Some(exp) = expected_fingerprint {
        if exp != header.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: exp,
                found: header.fingerprint,
            });
        }
    }
    let payload = &bytes[header.byte_len()..];
    let n: usize = header.dims.iter().product();
    if payload.len() != 4 * n {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!(
                "payload has {} bytes, dims {:?} need {}",
                payload.len(),
                header.dims,
                4 * n
            ),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let t = Tensor::new(header.dims.clone(), data)?;
    Ok((t, header))
}

/// Teacher activations at one boundary for every sample of a dataset.
#[derive(Clone, Debug)]
pub struct ActivationCache {
    pub boundary: usize,
    pub path: PathBuf,
    pub fingerprint: u64,
    pub activations: Tensor,
}

impl ActivationCache {
    pub fn sample_count(&self) -> usize {
        self.activations.shape()[0]
    }

    /// Per-sample activation shape.
    pub fn feature_shape(&self) -> &[usize] {
        &self.activations.shape()[1..]
    }

    pub fn save(&self) -> Result<()> {
        write_container(&self.path, &self.activations, self.fingerprint)
    }

    /// Opens a cache built from `dataset`; a different dataset is rejected.
    pub fn open(path: &Path, boundary: usize, dataset: &Dataset) -> Result<ActivationCache> {
        let (activations, header) = read_container(path, Some(dataset.fingerprint()))?;
        if activations.shape()[0] != dataset.len() {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!(
                    "{} records for {} samples",
                    activations.shape()[0],
                    dataset.len()
                ),
            });
        }
        Ok(ActivationCache {
            boundary,
            path: path.to_path_buf(),
            fingerprint: header.fingerprint,
            activations,
        })
    }
}

/// Writes a dataset's images to the container format for inspection.
pub fn export_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_container(path, &dataset.images, dataset.fingerprint())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ndac");
        let t = Tensor::from_fn(&[3, 2, 2], |i| i as f32 * 0.5);
        write_container(&p, &t, 42).unwrap();
        let h = read_container_header(&p).unwrap();
        assert_eq!(h.dims, vec![3, 2, 2]);
        assert_eq!(h.fingerprint, 42);
        let (back, _) = read_container(&p, None).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bad_dtype_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ndac");
        write_container(&p, &Tensor::zeros(&[1, 1]), 0).unwrap();
        let mut b = std::fs::read(&p).unwrap();
        b[8] = 3;
        std::fs::write(&p, &b).unwrap();
        assert!(matches!(
            read_container(&p, None),
            Err(Error::Corrupt { .. })
        ));
    }
}
