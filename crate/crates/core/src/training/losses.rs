use crate::correspondence::MatchLabel;

/// Responses are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]` before any log.
pub const LOG_CLAMP: f64 = 1e-6;

/// `p[i][j]`: response of channel `j` to patch `i`. Rows whose patch could
/// not be gathered are invalid and take part in no loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    n: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ResponseMatrix {
    pub fn new(n: usize, values: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(values.len(), n * n, "response matrix must be n x n");
        assert_eq!(valid.len(), n, "one validity flag per row");
        Self { n, values, valid }
    }

    /// All rows valid.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let values = rows.iter().flat_map(|r| {
            assert_eq!(r.len(), n, "rows must have n entries");
            r.iter().copied()
        });
        Self::new(n, values.collect(), vec![true; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Loss value and its gradient with respect to every matrix entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn clamped(p: f64) -> (f64, bool) {
    if p < LOG_CLAMP {
        (LOG_CLAMP, false)
    } else if p > 1.0 - LOG_CLAMP {
        (1.0 - LOG_CLAMP, false)
    } else {
        (p, true)
    }
}

/// `-log p` and its derivative (zero where the clamp is active).
fn neg_log(p: f64) -> (f64, f64) {
    let (c, live) = clamped(p);
    (-c.ln(), if live { -1.0 / c } else { 0.0 })
}

/// `-log(1 - p)` and its derivative.
fn neg_log_complement(p: f64) -> (f64, f64) {
    let (c, live) = clamped(p);
    (-(1.0 - c).ln(), if live { 1.0 / (1.0 - c) } else { 0.0 })
}

fn check(p: &ResponseMatrix, labels: &[MatchLabel]) {
    assert_eq!(labels.len(), p.n, "one label per channel");
}

/// Cross-entropy on the diagonal: inliers pushed up, outliers pushed down.
pub fn loss_inlier(p: &ResponseMatrix, labels: &[MatchLabel]) -> LossTerm {
    check(p, labels);
    let n = p.n;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * n];
    for (i, label) in labels.iter().enumerate() {
        if !p.valid[i] {
            continue;
        }
        let (v, d) = match label {
            MatchLabel::Inlier => neg_log(p.get(i, i)),
            MatchLabel::Outlier => neg_log_complement(p.get(i, i)),
            MatchLabel::Unassigned => continue,
        };
        value += v;
        grad[i * n + i] += d;
    }
    LossTerm { value, grad }
}

/// Suppresses every other channel on the patch of an inlier.
pub fn loss_redundancy(p: &ResponseMatrix, labels: &[MatchLabel]) -> LossTerm {
    check(p, labels);
    let n = p.n;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * n];
    for (i, label) in labels.iter().enumerate() {
        if !p.valid[i] || *label != MatchLabel::Inlier {
            continue;
        }
        for j in (0..n).filter(|&j| j != i) {
            let (v, d) = neg_log_complement(p.get(i, j));
            value += v;
            grad[i * n + j] += d;
        }
    }
    LossTerm { value, grad }
}

/// Promotes channel `i` on the patch at the true correspondence of an
/// outlier's partner. `p_prime` holds the correspondence-patch responses.
pub fn loss_correspondence(p_prime: &ResponseMatrix, labels: &[MatchLabel]) -> LossTerm {
    check(p_prime, labels);
    let n = p_prime.n;
    let mut value = 0.0;
    let mut grad = vec![0.0; n * n];
    for (i, label) in labels.iter().enumerate() {
        if !p_prime.valid[i] || *label != MatchLabel::Outlier {
            continue;
        }
        let (v, d) = neg_log(p_prime.get(i, i));
        value += v;
        grad[i * n + i] += d;
    }
    LossTerm { value, grad }
}

#[cfg(test)]
mod tests {
    use super::*;
    use MatchLabel::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn half(n: usize) -> ResponseMatrix {
        ResponseMatrix::from_rows(&vec![vec![0.5; n]; n])
    }

    #[test]
    fn inlier_examples() {
        assert!((loss_inlier(&half(1), &[Inlier]).value - std::f64::consts::LN_2).abs() < 1e-6);
        assert!((loss_inlier(&half(2), &[Unassigned, Outlier]).value - std::f64::consts::LN_2).abs() < 1e-6);
        assert_eq!(loss_inlier(&half(3), &[Unassigned; 3]).value, 0.0);
    }

    #[test]
    fn redundancy_examples() {
        let t = loss_redundancy(&half(3), &[Inlier, Outlier, Unassigned]);
        assert!((t.value - 2.0 * LN2).abs() < 1e-12);
        assert_eq!(loss_redundancy(&half(3), &[Outlier, Unassigned, Outlier]).value, 0.0);
    }

    #[test]
    fn correspondence_examples() {
        let t = loss_correspondence(&half(3), &[Inlier, Outlier, Unassigned]);
        assert!((t.value - LN2).abs() < 1e-12);
        assert_eq!(t.grad.iter().filter(|&&g| g != 0.0).count(), 1);
        assert!(t.grad[4] < 0.0);
        assert_eq!(loss_correspondence(&half(2), &[Inlier, Unassigned]).value, 0.0);
    }

    #[test]
    fn toy_gradient_pattern() {
        // channel 0 inlier, 1 outlier, 2 unassigned
        let labels = [Inlier, Outlier, Unassigned];
        let p = half(3);
        let inl = loss_inlier(&p, &labels);
        let red = loss_redundancy(&p, &labels);
        let cor = loss_correspondence(&p, &labels);
        // descent direction is -grad: p00 up, p11 down
        assert!(inl.grad[0] < 0.0);
        assert!(inl.grad[4] > 0.0);
        assert_eq!(inl.grad[8], 0.0);
        // suppression of channels 1 and 2 on the inlier patch only
        assert!(red.grad[1] > 0.0 && red.grad[2] > 0.0);
        let elsewhere: f64 = red.grad[3..].iter().map(|g| g.abs()).sum();
        assert_eq!(elsewhere, 0.0);
        // promotion of channel 1 on its correspondence patch only
        assert!(cor.grad[4] < 0.0);
        assert_eq!(cor.grad.iter().filter(|&&g| g != 0.0).count(), 1);
        // nothing touches the unassigned diagonal
        assert_eq!(inl.grad[8] + red.grad[8] + cor.grad[8], 0.0);
    }

    #[test]
    fn clamping_keeps_values_finite() {
        let p = ResponseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]);
        let t = loss_inlier(&p, &[Inlier, Outlier]);
        assert!((t.value - 2.0 * -(LOG_CLAMP.ln())).abs() < 1e-6);
        assert!(t.grad.iter().all(|g| *g == 0.0));
        assert!(loss_redundancy(&p, &[Inlier, Unassigned]).value.is_finite());
    }

    #[test]
    fn invalid_rows_are_skipped() {
        let p = ResponseMatrix::new(2, vec![0.5; 4], vec![false, true]);
        assert!((loss_inlier(&p, &[Inlier, Inlier]).value - LN2).abs() < 1e-12);
        assert!((loss_redundancy(&p, &[Inlier, Inlier]).value - LN2).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradients_match_differences() {
        let rows = vec![vec![0.3, 0.6, 0.2], vec![0.7, 0.4, 0.9], vec![0.1, 0.5, 0.8]];
        let labels = [Inlier, Outlier, Inlier];
        let total = |m: &ResponseMatrix| loss_inlier(m, &labels).value + loss_redundancy(m, &labels).value + loss_correspondence(m, &labels).value;
        let base = ResponseMatrix::from_rows(&rows);
        let g: Vec<f64> = (0..9)
            .map(|k| loss_inlier(&base, &labels).grad[k] + loss_redundancy(&base, &labels).grad[k] + loss_correspondence(&base, &labels).grad[k])
            .collect();
        let h = 1e-6;
        for k in 0..9 {
            let mut up = base.values().to_vec();
            let mut down = up.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (total(&ResponseMatrix::new(3, up, vec![true; 3])) - total(&ResponseMatrix::new(3, down, vec![true; 3]))) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6, "entry {k}: {fd} vs {}", g[k]);
        }
    }
}
