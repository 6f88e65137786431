use nalgebra::{DMatrix, SymmetricEigen};

use super::{CompressionError, Descriptors};

/// Mean and `k` orthonormal principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `k x d`, row-major.
    pub basis: Vec<f64>,
    pub k: usize,
    pub d: usize,
    /// Variance captured by each basis row, descending.
    pub variances: Vec<f64>,
}

impl PcaProjection {
    pub fn basis_row(&self, i: usize) -> &[f64] {
        &self.basis[i * self.d..(i + 1) * self.d]
    }
}

/// Top-`k` eigenvectors of the sample covariance. Each basis vector is
/// signed so that its largest-magnitude component is positive.
pub fn pca_fit(data: &Descriptors, k: usize) -> Result<PcaProjection, CompressionError> {
    let (n, d) = (data.len(), data.dim());
    if !(n > d && d >= k && k >= 1) {
        return Err(CompressionError::InvalidArgument(format!("need N > d >= k >= 1, got N={n}, d={d}, k={k}")));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        let r = data.row(i);
        for a in 0..d {
            let ca = r[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += ca * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite covariance"));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * d as f64 * 1e-12;
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    if rank < k {
        return Err(CompressionError::RankDeficient { rank, requested: k });
    }
    let mut basis = Vec::with_capacity(k * d);
    let mut variances = Vec::with_capacity(k);
    for &i in &order[..k] {
        let col = eig.eigenvectors.column(i);
        let lead = col.iter().fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        basis.extend(col.iter().map(|v| v * sign));
        variances.push(eig.eigenvalues[i]);
    }
    Ok(PcaProjection { mean, basis, k, d, variances })
}

/// `B (x - mean)`.
pub fn pca_project(p: &PcaProjection, x: &[f64]) -> Result<Vec<f64>, CompressionError> {
    if x.len() != p.d {
        return Err(CompressionError::Dimension { expected: p.d, got: x.len() });
    }
    Ok((0..p.k)
        .map(|i| p.basis_row(i).iter().zip(x.iter().zip(&p.mean)).map(|(b, (x, m))| b * (x - m)).sum())
        .collect())
}

/// `mean + B^T y`.
pub fn pca_reconstruct(p: &PcaProjection, y: &[f64]) -> Result<Vec<f64>, CompressionError> {
    if y.len() != p.k {
        return Err(CompressionError::Dimension { expected: p.k, got: y.len() });
    }
    let mut x = p.mean.clone();
    for (i, yi) in y.iter().enumerate() {
        for (xj, bj) in x.iter_mut().zip(p.basis_row(i)) {
            *xj += yi * bj;
        }
    }
    Ok(x)
}
