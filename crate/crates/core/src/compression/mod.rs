//! Descriptor compression baselines and representation-size accounting.

mod files;
mod kmeans;
mod pca;
mod pq;

use thiserror::Error;

pub use files::{load_pca, load_pq, read_descriptors, save_pca, save_pq, write_descriptors};
pub use kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaProjection};
pub use pq::{pq_decode, pq_encode, pq_fit, PqCodebook};

use crate::extraction::PACKED_BYTES_PER_POINT;

#[derive(Debug, Error)]
pub enum CompressionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("data has rank {rank}, fewer than the {requested} requested components")]
    RankDeficient { rank: usize, requested: usize },
    #[error("{n} points cannot form {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("code {index} out of range for {k} centroids")]
    CodeRange { index: usize, k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown representation `{0}`")]
    UnknownMethod(String),
    #[error("file format: {0}")]
    Format(String),
    #[error("checksum mismatch")]
    Checksum,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// `n` descriptors of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptors {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl Descriptors {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self, CompressionError> {
        if values.len() != n * d {
            return Err(CompressionError::InvalidArgument(format!("{} values for {n} x {d}", values.len())));
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CompressionError> {
        let d = rows.first().map_or(0, |r| r.len());
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(CompressionError::Dimension { expected: d, got: r.len() });
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// What one frame's features are transmitted as.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Representation {
    /// Channel-matched points: coordinates only.
    Ours { n: usize },
    RawFloat { n_pts: usize, d: usize, bytes_per_scalar: usize },
    Pca { n_pts: usize, k: usize },
    Pq { n_pts: usize, m: usize, k: usize },
}

/// Bytes per stored PCA coefficient.
pub const PCA_COEFFICIENT_BYTES: usize = 4;

/// Bytes of one product-quantization code.
pub fn pq_code_bytes(m: usize, k: usize) -> usize {
    (m as f64 * (k as f64).log2() / 8.0).ceil() as usize
}

/// Total size in bytes, with 3-byte coordinates for every point.
pub fn representation_size_bytes(r: &Representation) -> usize {
    let coords = PACKED_BYTES_PER_POINT;
    match *r {
        Representation::Ours { n } => coords * n,
        Representation::RawFloat { n_pts, d, bytes_per_scalar } => n_pts * (coords + d * bytes_per_scalar),
        Representation::Pca { n_pts, k } => n_pts * (coords + k * PCA_COEFFICIENT_BYTES),
        Representation::Pq { n_pts, m, k } => n_pts * (coords + pq_code_bytes(m, k)),
    }
}

impl Representation {
    /// Parses `ours:N`, `raw:N:D:BYTES`, `pca:N:K` or `pq:N:M:K`.
    pub fn parse(text: &str) -> Result<Self, CompressionError> {
        let mut parts = text.trim().split(':');
        let kind = parts.next().unwrap_or_default();
        let nums: Vec<usize> = parts
            .map(|p| p.parse::<usize>().map_err(|_| CompressionError::UnknownMethod(text.to_string())))
            .collect::<Result<_, _>>()?;
        match (kind, nums.as_slice()) {
            ("ours", &[n]) => Ok(Self::Ours { n }),
            ("raw", &[n_pts, d, bytes_per_scalar]) => Ok(Self::RawFloat { n_pts, d, bytes_per_scalar }),
            ("pca", &[n_pts, k]) => Ok(Self::Pca { n_pts, k }),
            ("pq", &[n_pts, m, k]) if k >= 1 => Ok(Self::Pq { n_pts, m, k }),
            _ => Err(CompressionError::UnknownMethod(text.to_string())),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::Ours { n } => format!("ours n={n}"),
            Self::RawFloat { d, bytes_per_scalar, .. } => format!("raw d={d} x{bytes_per_scalar}B"),
            Self::Pca { k, .. } => format!("pca k={k}"),
            Self::Pq { m, k, .. } => format!("pq m={m} k={k}"),
        }
    }
}
