//! Pyramidal Lucas-Kanade tracking, dense sequence tracks and overlap-based
//! pair selection.

mod pyramid;
mod sequence;

use nalgebra::{Matrix2, Point2, Vector2};
use thiserror::Error;

pub use pyramid::{downsample, Pyramid};
pub use sequence::{
    pair_candidates, qualifying_frames, sample_pairs, select_pairs, sequence_key, track_sequence, PairSelectionConfig,
    TrackConfig, TrackTable,
};

use crate::Image;

#[derive(Debug, Error)]
pub enum KltError {
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    SizeMismatch { index: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("frame index {index} out of range for {len} frames")]
    FrameIndex { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("track cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KltConfig {
    /// Odd window side in pixels.
    pub window: usize,
    pub levels: usize,
    pub max_iters: usize,
    /// Convergence threshold on the update length, pixels.
    pub eps: f64,
    /// Lost when the smallest structure tensor eigenvalue divided by the
    /// window area falls below this.
    pub min_eigen: f64,
}

impl Default for KltConfig {
    fn default() -> Self {
        Self { window: 21, levels: 3, max_iters: 30, eps: 0.01, min_eigen: 1e-4 }
    }
}

impl KltConfig {
    pub fn validate(&self) -> Result<(), KltError> {
        if self.window < 5 || self.window.is_multiple_of(2) {
            return Err(KltError::Config(format!("window must be odd and at least 5, got {}", self.window)));
        }
        if self.levels == 0 {
            return Err(KltError::Config("at least one pyramid level is required".into()));
        }
        if !(self.eps > 0.0) || !(self.min_eigen >= 0.0) {
            return Err(KltError::Config("eps must be positive and min_eigen non-negative".into()));
        }
        Ok(())
    }
}

/// Tracks `p` from `a` into `b`; `None` when the track is lost.
pub fn track_point(a: &Image, b: &Image, p: Point2<f64>, config: &KltConfig) -> Option<Point2<f64>> {
    let pa = Pyramid::build(a, config.levels);
    let pb = Pyramid::build(b, config.levels);
    track_point_pyramids(&pa, &pb, p, config)
}

fn smallest_eigenvalue(g: &Matrix2<f64>) -> f64 {
    let mean = 0.5 * (g[(0, 0)] + g[(1, 1)]);
    let half_diff = 0.5 * (g[(0, 0)] - g[(1, 1)]);
    mean - (half_diff * half_diff + g[(0, 1)] * g[(0, 1)]).sqrt()
}

struct Template {
    offsets: Vec<(f64, f64)>,
    values: Vec<f64>,
    grad: Vec<(f64, f64)>,
}

impl Template {
    fn new(img: &Image, c: Point2<f64>, half: isize) -> Self {
        let side = (2 * half + 1) as usize;
        let mut offsets = Vec::with_capacity(side * side);
        let mut values = Vec::with_capacity(side * side);
        let mut grad = Vec::with_capacity(side * side);
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (c.x + dx as f64, c.y + dy as f64);
                offsets.push((dx as f64, dy as f64));
                values.push(img.sample_clamped(x, y));
                let gx = 0.5 * (img.sample_clamped(x + 1.0, y) - img.sample_clamped(x - 1.0, y));
                let gy = 0.5 * (img.sample_clamped(x, y + 1.0) - img.sample_clamped(x, y - 1.0));
                grad.push((gx, gy));
            }
        }
        Self { offsets, values, grad }
    }

    fn structure_tensor(&self) -> Matrix2<f64> {
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for &(gx, gy) in &self.grad {
            xx += gx * gx;
            xy += gx * gy;
            yy += gy * gy;
        }
        Matrix2::new(xx, xy, xy, yy)
    }

    fn ssd(&self, img: &Image, at: Point2<f64>) -> f64 {
        self.offsets
            .iter()
            .zip(&self.values)
            .map(|(&(dx, dy), &t)| (t - img.sample_clamped(at.x + dx, at.y + dy)).powi(2))
            .sum()
    }
}

/// [`track_point`] on prebuilt pyramids.
pub fn track_point_pyramids(pa: &Pyramid, pb: &Pyramid, p: Point2<f64>, config: &KltConfig) -> Option<Point2<f64>> {
    let a0 = pa.level(0);
    let b0 = pb.level(0);
    if !a0.contains(p.x, p.y) {
        return None;
    }
    let levels = config.levels.min(pa.len()).min(pb.len());
    let half = (config.window / 2) as isize;
    let area = (config.window * config.window) as f64;
    let mut g = Vector2::zeros();
    for level in (0..levels).rev() {
        let scale = 0.5f64.powi(level as i32);
        let a = pa.level(level);
        let b = pb.level(level);
        let c = Point2::new(p.x * scale, p.y * scale);
        let tpl = Template::new(a, c, half);
        let st = tpl.structure_tensor();
        if smallest_eigenvalue(&st) / area < config.min_eigen {
            return None;
        }
        let inv = st.try_inverse()?;
        let start_ssd = if level == 0 { tpl.ssd(b, c + g) } else { 0.0 };
        let mut v = Vector2::zeros();
        for _ in 0..config.max_iters {
            let at = c + g + v;
            let mut rhs = Vector2::zeros();
            for ((&(dx, dy), &t), &(gx, gy)) in tpl.offsets.iter().zip(&tpl.values).zip(&tpl.grad) {
                let diff = t - b.sample_clamped(at.x + dx, at.y + dy);
                rhs.x += diff * gx;
                rhs.y += diff * gy;
            }
            let eta = inv * rhs;
            v += eta;
            let moved = c + g + v;
            if !moved.x.is_finite() || !moved.y.is_finite() || !b.contains(moved.x, moved.y) {
                return None;
            }
            if eta.norm() < config.eps {
                break;
            }
        }
        if level == 0 {
            g += v;
            let end_ssd = tpl.ssd(b, c + g);
            // the fixpoint sits slightly off the exact SSD minimum, so only a
            // clear increase counts as divergence
            if end_ssd > 1.1 * start_ssd + 1e-6 * area {
                return None;
            }
        } else {
            g = (g + v) * 2.0;
        }
    }
    let out = p + g;
    b0.contains(out.x, out.y).then_some(out)
}
