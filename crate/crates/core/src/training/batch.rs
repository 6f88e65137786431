use nalgebra::Point2;

use super::losses::{loss_correspondence, loss_inlier, loss_redundancy, LossTerm, ResponseMatrix};
use super::{LossReport, LossWeights, TrainingError};
use crate::correspondence::{LabeledMatchSet, MatchLabel};
use crate::network::{NetworkGradients, NetworkParams};
use crate::numerics::Tensor4;
use crate::{Image, Scalar};

/// `r x r` crop centered on `center`; `None` when it would leave the image.
pub fn gather_patch(image: &Image, center: (usize, usize), r: usize) -> Option<Image> {
    assert!(r % 2 == 1, "patch side must be odd");
    let h = r / 2;
    let x0 = center.0.checked_sub(h)?;
    let y0 = center.1.checked_sub(h)?;
    image.crop(x0, y0, r)
}

/// Nearest pixel to a subpixel location, if it is non-negative.
fn nearest_pixel(p: Point2<f64>) -> Option<(usize, usize)> {
    let (x, y) = (p.x.round(), p.y.round());
    (x >= 0.0 && y >= 0.0 && x.is_finite() && y.is_finite()).then_some((x as usize, y as usize))
}

/// Which batch row holds each channel's patch, per image side.
#[derive(Debug, Clone, PartialEq)]
struct Rows {
    interest: Vec<Option<usize>>,
    correspondence: Vec<Option<usize>>,
}

/// The patches of one training pair, stacked into a single batch:
/// for each image, patches at its interest points and at the true
/// correspondences of the other image's outlier points.
#[derive(Debug, Clone)]
pub struct TrainingBatch<T> {
    pub patches: Tensor4<T>,
    pub labels: Vec<MatchLabel>,
    sides: [Rows; 2],
}

impl<T: Scalar> TrainingBatch<T> {
    /// Correspondence patches are only gathered for outliers, the only rows
    /// that use them.
    pub fn build(image_a: &Image, image_b: &Image, labeled: &LabeledMatchSet, r: usize) -> Self {
        let n = labeled.len();
        let mut data: Vec<T> = Vec::new();
        let mut count = 0;
        let mut push = |patch: Option<Image>| -> Option<usize> {
            let patch = patch?;
            data.extend(patch.data().iter().map(|&v| T::lit(v as f64)));
            count += 1;
            Some(count - 1)
        };
        let mut sides = Vec::with_capacity(2);
        for (side, image) in [image_a, image_b].into_iter().enumerate() {
            let mut rows = Rows { interest: vec![None; n], correspondence: vec![None; n] };
            for (i, m) in labeled.matches.iter().enumerate() {
                let own = if side == 0 { m.p } else { m.p_prime };
                rows.interest[i] = push(nearest_pixel(own).and_then(|c| gather_patch(image, c, r)));
            }
            for (i, m) in labeled.matches.iter().enumerate() {
                if m.label != MatchLabel::Outlier {
                    continue;
                }
                // true location, in this image, of the other image's point
                let corr = if side == 0 { m.backward } else { m.forward };
                rows.correspondence[i] = push(corr.and_then(nearest_pixel).and_then(|c| gather_patch(image, c, r)));
            }
            sides.push(rows);
        }
        let patches = Tensor4::from_vec([count, r, r, 1], data).expect("length matches");
        let sides: [Rows; 2] = sides.try_into().expect("two sides");
        Self { patches, labels: labeled.labels(), sides }
    }

    pub fn len(&self) -> usize {
        self.patches.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.batch() == 0
    }

    fn matrix(&self, output: &Tensor4<T>, rows: &[Option<usize>]) -> ResponseMatrix {
        let n = self.labels.len();
        let mut values = vec![0.5; n * n];
        for (i, row) in rows.iter().enumerate() {
            if let Some(b) = row {
                for j in 0..n {
                    values[i * n + j] = output.get(*b, 0, 0, j).as_f64();
                }
            }
        }
        ResponseMatrix::new(n, values, rows.iter().map(|r| r.is_some()).collect())
    }

    /// Interest-point and correspondence response matrices of one side.
    pub fn response_matrices(&self, output: &Tensor4<T>, side: usize) -> (ResponseMatrix, ResponseMatrix) {
        (self.matrix(output, &self.sides[side].interest), self.matrix(output, &self.sides[side].correspondence))
    }

    /// Total loss over both sides, and `dL/d(output)`.
    pub fn loss(&self, output: &Tensor4<T>, weights: &LossWeights) -> (LossReport, Tensor4<T>) {
        let n = self.labels.len();
        let mut upstream = Tensor4::<T>::zeros(output.shape());
        let mut report = LossReport::from_labels(&self.labels);
        let mut scatter = |term: &LossTerm, rows: &[Option<usize>], w: f64| {
            for (i, row) in rows.iter().enumerate() {
                if let Some(b) = row {
                    for j in 0..n {
                        let g = term.grad[i * n + j];
                        if g != 0.0 {
                            let idx = upstream.index(*b, 0, 0, j);
                            let d = upstream.data_mut();
                            d[idx] = d[idx] + T::lit(w * g);
                        }
                    }
                }
            }
        };
        for side in 0..2 {
            let (p, p_prime) = self.response_matrices(output, side);
            let rows = &self.sides[side];
            let inl = loss_inlier(&p, &self.labels);
            let red = loss_redundancy(&p, &self.labels);
            let cor = loss_correspondence(&p_prime, &self.labels);
            report.l_inl += inl.value;
            report.l_red += red.value;
            report.l_cor += cor.value;
            scatter(&inl, &rows.interest, weights.inlier);
            scatter(&red, &rows.interest, weights.redundancy);
            scatter(&cor, &rows.correspondence, weights.correspondence);
        }
        report.total = weights.inlier * report.l_inl + weights.redundancy * report.l_red + weights.correspondence * report.l_cor;
        (report, upstream)
    }

    /// Forward, loss and backward for fixed patches.
    pub fn loss_and_gradient(
        &self,
        params: &NetworkParams<T>,
        weights: &LossWeights,
    ) -> Result<(LossReport, NetworkGradients<T>), TrainingError> {
        if self.is_empty() {
            return Ok((LossReport::from_labels(&self.labels), NetworkGradients::zeros_like(params)));
        }
        let fwd = params.forward_patches_cached(&self.patches)?;
        let (report, upstream) = self.loss(&fwd.output, weights);
        let grads = params.backward_patches(&fwd, &upstream)?;
        Ok((report, grads))
    }

    /// Loss only.
    pub fn loss_value(&self, params: &NetworkParams<T>, weights: &LossWeights) -> Result<f64, TrainingError> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let out = params.forward_patches(&self.patches)?;
        Ok(self.loss(&out, weights).0.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::LabeledMatch;

    #[test]
    fn gather_examples() {
        let img = Image::from_fn(40, 40, |x, y| (x + 40 * y) as f32);
        let p = gather_patch(&img, (20, 20), 29).unwrap();
        assert_eq!(p.width(), 29);
        assert_eq!(p.get(14, 14), img.get(20, 20));
        assert_eq!(p.get(0, 0), img.get(6, 6));
        assert!(gather_patch(&img, (0, 0), 29).is_none());
        assert!(gather_patch(&img, (14, 14), 29).is_some());
        assert!(gather_patch(&img, (26, 25), 29).is_none());
    }

    fn lm(p: (f64, f64), q: (f64, f64), fwd: Option<(f64, f64)>, bwd: Option<(f64, f64)>, label: MatchLabel) -> LabeledMatch {
        let pt = |(x, y): (f64, f64)| Point2::new(x, y);
        LabeledMatch { p: pt(p), p_prime: pt(q), forward: fwd.map(pt), backward: bwd.map(pt), label }
    }

    #[test]
    fn batch_layout() {
        let img = crate::synthetic::smooth_texture(30, 30, 1);
        let set = LabeledMatchSet {
            matches: vec![
                lm((10.0, 10.0), (12.0, 10.0), Some((12.0, 10.0)), Some((10.0, 10.0)), MatchLabel::Inlier),
                lm((15.0, 15.0), (20.0, 20.0), Some((16.0, 15.0)), Some((19.0, 20.0)), MatchLabel::Outlier),
                lm((12.0, 12.0), (12.0, 12.0), None, Some((12.0, 12.0)), MatchLabel::Unassigned),
                // correspondence patch would leave the image
                lm((14.0, 14.0), (18.0, 18.0), Some((0.0, 1.0)), Some((29.0, 29.0)), MatchLabel::Outlier),
            ],
        };
        let b = TrainingBatch::<f64>::build(&img, &img, &set, 5);
        // 4 interest + 1 correspondence per side
        assert_eq!(b.len(), 10);
        assert_eq!(b.sides[0].correspondence, vec![None, Some(4), None, None]);
        assert_eq!(b.sides[1].interest, vec![Some(5), Some(6), Some(7), Some(8)]);
        assert_eq!(b.sides[1].correspondence, vec![None, Some(9), None, None]);
        // side 0 correspondence patch sits at the backward location (19, 20)
        let want = gather_patch(&img, (19, 20), 5).unwrap();
        let got: Vec<f32> = b.patches.data()[4 * 25..5 * 25].iter().map(|&v| v as f32).collect();
        assert_eq!(got, want.data());
    }
}
