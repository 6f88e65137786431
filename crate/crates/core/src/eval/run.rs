use std::collections::BTreeSet;

use nalgebra::{Matrix3, Point2, Vector3};
use rayon::prelude::*;

use super::dataset::{Dataset, HomographyPair, SequenceData};
use super::{matching_score, EvalError, EvalRecord, PointOutcome};
use crate::correspondence::{label_matches, MatchLabel, DEFAULT_THRESHOLD_PX};
use crate::extraction::{extract_points, match_by_channel, ResponseStack};
use crate::geometry::{
    ransac_p3p, relative_pose, rotation_geodesic_deg, stereo_match_by_channel, translation_error_m, RansacConfig,
    StereoMatchConfig,
};
use crate::{Image, NetworkParams, Scalar};

/// Anything that turns an image into `n` response channels.
pub trait Detector: Sync {
    fn n_channels(&self) -> usize;
    /// Border band excluded from extraction.
    fn margin(&self) -> usize;
    fn responses(&self, image: &Image) -> Result<ResponseStack<f32>, EvalError>;
}

impl<T: Scalar> Detector for NetworkParams<T> {
    fn n_channels(&self) -> usize {
        NetworkParams::n_channels(self)
    }

    fn margin(&self) -> usize {
        self.config.border_margin()
    }

    fn responses(&self, image: &Image) -> Result<ResponseStack<f32>, EvalError> {
        Ok(self.forward_full(image)?.map(|v| v.as_f64() as f32))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Pair `i` runs RANSAC with seed `ransac.seed + i`.
    pub ransac: RansacConfig,
    pub stereo: StereoMatchConfig,
    /// Pixel threshold of the inlier rule on homography pairs.
    pub label_threshold_px: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ransac: RansacConfig::default(), stereo: StereoMatchConfig::default(), label_threshold_px: DEFAULT_THRESHOLD_PX }
    }
}

/// Evaluates a dataset. Sequences use `pairs`, or the descriptor's own pair
/// list when `pairs` is `None`; homography datasets evaluate every entry.
/// Records come back in pair order.
pub fn evaluate_pairs(
    dataset: &Dataset,
    detector: &dyn Detector,
    pairs: Option<&[(usize, usize)]>,
    config: &EvalConfig,
) -> Result<Vec<EvalRecord>, EvalError> {
    match dataset {
        Dataset::Sequence(seq) => {
            let pairs = pairs
                .or(seq.pairs.as_deref())
                .ok_or_else(|| EvalError::Dataset(format!("{}: no pair list", seq.name)))?;
            evaluate_sequence(seq, detector, pairs, config)
        }
        Dataset::Homography { pairs, .. } => evaluate_homographies(pairs, detector, config),
    }
}

pub fn evaluate_sequence(
    seq: &SequenceData,
    detector: &dyn Detector,
    pairs: &[(usize, usize)],
    config: &EvalConfig,
) -> Result<Vec<EvalRecord>, EvalError> {
    let calib = seq.calibration.ok_or(EvalError::MissingCalibration)?;
    let right = seq.right.as_ref().ok_or_else(|| EvalError::Dataset(format!("{}: no right frames", seq.name)))?;
    let poses = seq.poses.as_ref().ok_or_else(|| EvalError::Dataset(format!("{}: no poses", seq.name)))?;
    let n = seq.left.len();
    if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= n || b >= n) {
        return Err(EvalError::Dataset(format!("pair ({a}, {b}) out of range for {n} frames")));
    }
    for img in seq.left.iter().chain(right) {
        if (img.width(), img.height()) != (calib.intrinsics.width, calib.intrinsics.height) {
            return Err(EvalError::Dataset(format!(
                "frame is {}x{}, calibration says {}x{}",
                img.width(),
                img.height(),
                calib.intrinsics.width,
                calib.intrinsics.height
            )));
        }
    }

    // left responses for every frame in a pair, right responses for bases
    let keys: Vec<(usize, bool)> = pairs
        .iter()
        .flat_map(|&(a, b)| [(a, false), (a, true), (b, false)])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let stacks: Vec<ResponseStack<f32>> = keys
        .par_iter()
        .map(|&(i, is_right)| detector.responses(if is_right { &right[i] } else { &seq.left[i] }))
        .collect::<Result<_, _>>()?;
    let stack = |i: usize, is_right: bool| &stacks[keys.binary_search(&(i, is_right)).expect("computed above")];

    let k = &calib.intrinsics;
    let n_ch = detector.n_channels();
    pairs
        .par_iter()
        .enumerate()
        .map(|(idx, &(a, b))| {
            let pts_a = extract_points(stack(a, false), detector.margin())?;
            let pts_b = extract_points(stack(b, false), detector.margin())?;
            let lifted = stereo_match_by_channel(&pts_a, stack(a, true), k, calib.baseline, &config.stereo);
            let (mut world, mut pixels, mut channels) = (Vec::new(), Vec::new(), Vec::new());
            for (c, p) in lifted.iter().enumerate() {
                if let Some(p) = p {
                    world.push(*p);
                    let q = &pts_b.points[c];
                    pixels.push(Point2::new(q.x as f64, q.y as f64));
                    channels.push(c);
                }
            }
            let cfg = RansacConfig { seed: config.ransac.seed.wrapping_add(idx as u64), ..config.ransac };
            let result = if world.len() >= 4 { Some(ransac_p3p(&world, &pixels, k, &cfg)?) } else { None };

            let truth = relative_pose(&poses[a], &poses[b]);
            let (e_r, e_t, inliers) = match result.as_ref().and_then(|r| r.pose.as_ref().map(|p| (r, p))) {
                Some((r, pose)) => (
                    rotation_geodesic_deg(&pose.rotation, &truth.rotation)?,
                    translation_error_m(&pose.translation, &truth.translation),
                    r.inlier_count,
                ),
                None => (f64::INFINITY, f64::INFINITY, 0),
            };
            let mut inlier_channel = vec![false; n_ch];
            if let Some(r) = result.as_ref().filter(|r| r.is_success()) {
                for (i, &c) in channels.iter().enumerate() {
                    inlier_channel[c] = r.inlier_mask[i];
                }
            }
            let points = pts_a
                .points
                .iter()
                .chain(&pts_b.points)
                .map(|p| PointOutcome { response: p.response, inlier: inlier_channel[p.channel] })
                .collect();
            Ok(EvalRecord {
                name: format!("{}/{a:06}-{b:06}", seq.name),
                d_r_deg: Some(rotation_geodesic_deg(&Matrix3::identity(), &truth.rotation)?),
                dt_m: Some(translation_error_m(&Vector3::zeros(), &truth.translation)),
                matching_score: matching_score(inliers, n_ch),
                e_r_deg: Some(e_r),
                et_m: Some(e_t),
                inlier_count: inliers,
                n_channels: n_ch,
                points,
            })
        })
        .collect()
}

pub fn evaluate_homographies(pairs: &[HomographyPair], detector: &dyn Detector, config: &EvalConfig) -> Result<Vec<EvalRecord>, EvalError> {
    let n_ch = detector.n_channels();
    pairs
        .par_iter()
        .map(|pair| {
            let pts_a = extract_points(&detector.responses(&pair.image_a)?, detector.margin())?;
            let pts_b = extract_points(&detector.responses(&pair.image_b)?, detector.margin())?;
            let matches = match_by_channel(&pts_a, &pts_b)?;
            let size = |img: &Image| (img.width(), img.height());
            let labeled = label_matches(&matches, &pair.h, size(&pair.image_a), size(&pair.image_b), config.label_threshold_px);
            let labels = labeled.labels();
            let points = pts_a
                .points
                .iter()
                .chain(&pts_b.points)
                .map(|p| PointOutcome { response: p.response, inlier: labels[p.channel] == MatchLabel::Inlier })
                .collect();
            let inliers = labeled.inlier_count();
            Ok(EvalRecord {
                name: pair.name.clone(),
                d_r_deg: None,
                dt_m: None,
                matching_score: matching_score(inliers, n_ch),
                e_r_deg: None,
                et_m: None,
                inlier_count: inliers,
                n_channels: n_ch,
                points,
            })
        })
        .collect()
}
