use super::kmeans::{kmeans, nearest, KMeansConfig};
use super::{CompressionError, Descriptors};

/// `m` sub-quantizers of `k` centroids over consecutive `d / m` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    pub m: usize,
    pub k: usize,
    pub sub_dim: usize,
    /// `m x k x sub_dim`.
    pub centroids: Vec<f64>,
}

impl PqCodebook {
    pub fn dim(&self) -> usize {
        self.m * self.sub_dim
    }

    /// Bits per code, `m * ceil(log2 k)`.
    pub fn code_bits(&self) -> usize {
        self.m * (self.k as f64).log2().ceil() as usize
    }

    fn block(&self, b: usize) -> &[f64] {
        let len = self.k * self.sub_dim;
        &self.centroids[b * len..(b + 1) * len]
    }
}

/// Fits each sub-quantizer with k-means; block `b` is seeded with `seed + b`.
pub fn pq_fit(data: &Descriptors, m: usize, k: usize, seed: u64) -> Result<PqCodebook, CompressionError> {
    let d = data.dim();
    if m == 0 || !d.is_multiple_of(m) {
        return Err(CompressionError::InvalidArgument(format!("dimension {d} is not divisible into {m} blocks")));
    }
    if data.len() < k {
        return Err(CompressionError::TooFewPoints { n: data.len(), k });
    }
    let sub_dim = d / m;
    let mut centroids = Vec::with_capacity(m * k * sub_dim);
    for b in 0..m {
        let block: Vec<f64> = (0..data.len()).flat_map(|i| data.row(i)[b * sub_dim..(b + 1) * sub_dim].iter().copied()).collect();
        let cfg = KMeansConfig { seed: seed.wrapping_add(b as u64), ..KMeansConfig::default() };
        centroids.extend(kmeans(&block, sub_dim, k, &cfg)?.centroids);
    }
    Ok(PqCodebook { m, k, sub_dim, centroids })
}

/// Nearest centroid per block, ties to the lowest index.
pub fn pq_encode(cb: &PqCodebook, x: &[f64]) -> Result<Vec<usize>, CompressionError> {
    if x.len() != cb.dim() {
        return Err(CompressionError::Dimension { expected: cb.dim(), got: x.len() });
    }
    Ok((0..cb.m).map(|b| nearest(cb.block(b), cb.sub_dim, &x[b * cb.sub_dim..(b + 1) * cb.sub_dim]).0).collect())
}

pub fn pq_decode(cb: &PqCodebook, code: &[usize]) -> Result<Vec<f64>, CompressionError> {
    if code.len() != cb.m {
        return Err(CompressionError::Dimension { expected: cb.m, got: code.len() });
    }
    let mut out = Vec::with_capacity(cb.dim());
    for (b, &c) in code.iter().enumerate() {
        if c >= cb.k {
            return Err(CompressionError::CodeRange { index: c, k: cb.k });
        }
        out.extend_from_slice(&cb.block(b)[c * cb.sub_dim..(c + 1) * cb.sub_dim]);
    }
    Ok(out)
}
