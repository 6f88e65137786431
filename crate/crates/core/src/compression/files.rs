//! Descriptor arrays and fitted models on disk, little-endian.
//!
//! ```text
//! descriptors: n: u64 | d: u64 | scalar_bytes: u32 | row-major values
//! models:      magic | version: u32 | payload | crc32(payload): u32
//! ```

use std::fs;
use std::path::Path;

use super::{CompressionError, Descriptors, PcaProjection, PqCodebook};

const PCA_MAGIC: &[u8; 4] = b"IMPC";
const PQ_MAGIC: &[u8; 4] = b"IMPQ";
const MODEL_VERSION: u32 = 1;

pub fn write_descriptors(data: &Descriptors, scalar_bytes: usize) -> Result<Vec<u8>, CompressionError> {
    let mut out = Vec::with_capacity(20 + data.values().len() * scalar_bytes);
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(&(data.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(scalar_bytes as u32).to_le_bytes());
    match scalar_bytes {
        4 => data.values().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        8 => data.values().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        w => return Err(CompressionError::InvalidArgument(format!("scalar width {w} is not 4 or 8"))),
    }
    Ok(out)
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<Descriptors, CompressionError> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let width = r.u32()? as usize;
    if width != 4 && width != 8 {
        return Err(CompressionError::Format(format!("scalar width {width} is not 4 or 8")));
    }
    let count = n.checked_mul(d).ok_or_else(|| CompressionError::Format("size overflow".into()))?;
    if r.remaining() != count * width {
        return Err(CompressionError::Format(format!("expected {} data bytes, found {}", count * width, r.remaining())));
    }
    let values = (0..count).map(|_| if width == 4 { r.f32().map(f64::from) } else { r.f64() }).collect::<Result<_, _>>()?;
    Descriptors::new(n, d, values)
}

fn wrap(magic: &[u8; 4], payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(magic);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn unwrap<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<&'a [u8], CompressionError> {
    if bytes.len() < 12 || &bytes[..4] != magic {
        return Err(CompressionError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != MODEL_VERSION {
        return Err(CompressionError::Format(format!("unsupported version {version}")));
    }
    let (payload, crc) = bytes[8..].split_at(bytes.len() - 12);
    if crc32fast::hash(payload) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(CompressionError::Checksum);
    }
    Ok(payload)
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
}

pub fn save_pca(p: &PcaProjection, path: impl AsRef<Path>) -> Result<(), CompressionError> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(p.d as u32).to_le_bytes());
    payload.extend_from_slice(&(p.k as u32).to_le_bytes());
    put_f64s(&mut payload, &p.mean);
    put_f64s(&mut payload, &p.variances);
    put_f64s(&mut payload, &p.basis);
    fs::write(path, wrap(PCA_MAGIC, payload))?;
    Ok(())
}

pub fn load_pca(path: impl AsRef<Path>) -> Result<PcaProjection, CompressionError> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(unwrap(PCA_MAGIC, &bytes)?);
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let mean = r.f64s(d)?;
    let variances = r.f64s(k)?;
    let basis = r.f64s(k * d)?;
    r.finish()?;
    Ok(PcaProjection { mean, basis, k, d, variances })
}

pub fn save_pq(cb: &PqCodebook, path: impl AsRef<Path>) -> Result<(), CompressionError> {
    let mut payload = Vec::new();
    for v in [cb.m, cb.k, cb.sub_dim] {
        payload.extend_from_slice(&(v as u32).to_le_bytes());
    }
    put_f64s(&mut payload, &cb.centroids);
    fs::write(path, wrap(PQ_MAGIC, payload))?;
    Ok(())
}

pub fn load_pq(path: impl AsRef<Path>) -> Result<PqCodebook, CompressionError> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(unwrap(PQ_MAGIC, &bytes)?);
    let (m, k, sub_dim) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let centroids = r.f64s(m * k * sub_dim)?;
    r.finish()?;
    Ok(PqCodebook { m, k, sub_dim, centroids })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], CompressionError> {
        if self.remaining() < N {
            return Err(CompressionError::Format("truncated".into()));
        }
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CompressionError> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, CompressionError> {
        self.take().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32, CompressionError> {
        self.take().map(f32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, CompressionError> {
        self.take().map(f64::from_le_bytes)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CompressionError> {
        if self.remaining() / 8 < n {
            return Err(CompressionError::Format("truncated".into()));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    fn finish(&self) -> Result<(), CompressionError> {
        if self.remaining() != 0 {
            return Err(CompressionError::Format(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
