//! Ground-truth correspondences between two images and the labeling of
//! channel matches as inlier, outlier or unassigned.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Point2, Vector3};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, RigidPose};
use crate::klt::{track_point_pyramids, KltConfig, Pyramid};
use crate::{Image, MatchSet};

pub const DEFAULT_THRESHOLD_PX: f64 = 3.0;

#[derive(Debug, Error)]
pub enum CorrespondenceError {
    #[error("homography is singular")]
    Singular,
    #[error("point maps to infinity (w = {0:e})")]
    DegeneratePoint(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("frame index {index} out of range for {len} frames")]
    FrameIndex { index: usize, len: usize },
    #[error("depth map is {got:?}, camera is {expected:?}")]
    DepthSize { expected: (usize, usize), got: (usize, usize) },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] crate::ImageError),
}

/// Projective map of a pixel.
pub fn homography_map(h: &Matrix3<f64>, p: Point2<f64>) -> Result<Point2<f64>, CorrespondenceError> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    if q.z.abs() < 1e-12 {
        return Err(CorrespondenceError::DegeneratePoint(q.z));
    }
    Ok(Point2::new(q.x / q.z, q.y / q.z))
}

/// Pixel `p` with depth `depth` in camera `a`, seen from camera `b`.
/// Poses are world-from-camera. `None` when the point is behind `b`.
pub fn depth_pose_map(
    p: Point2<f64>,
    depth: f64,
    pose_a: &RigidPose,
    pose_b: &RigidPose,
    k: &CameraIntrinsics,
) -> Option<Point2<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return None;
    }
    let world = pose_a.transform(&k.unproject(&p, depth));
    k.project(&pose_b.inverse().transform(&world))
}

/// Follows `p` from `frames[a]` to `frames[b]` one frame at a time (either
/// direction). Any lost step makes the whole chain untrackable.
pub fn klt_chain_map(frames: &[Pyramid], a: usize, b: usize, p: Point2<f64>, config: &KltConfig) -> Option<Point2<f64>> {
    let mut q = p;
    let mut f = a;
    while f != b {
        let next = if b > f { f + 1 } else { f - 1 };
        q = track_point_pyramids(&frames[f], &frames[next], q, config)?;
        f = next;
    }
    Some(q)
}

/// Dense depth in meters; non-positive or non-finite entries are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, CorrespondenceError> {
        if data.len() != width * height {
            return Err(CorrespondenceError::Parse(format!("depth data has {} values for {width}x{height}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    /// Loads a 16-bit PNG storing `depth * scale` (TUM style, scale 5000;
    /// millimeters use 1000). Zero means no depth.
    pub fn load_png16(path: impl AsRef<Path>, scale: f64) -> Result<Self, CorrespondenceError> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| crate::ImageError::Decode { path: path.display().to_string(), source })?
            .into_luma16();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| if v == 0 { f32::NAN } else { (v as f64 / scale) as f32 }).collect();
        Self::new(w as usize, h as usize, data)
    }

    /// Depth at the nearest pixel.
    pub fn at(&self, p: Point2<f64>) -> Option<f64> {
        let (x, y) = (p.x.round(), p.y.round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        let d = self.data[y as usize * self.width + x as usize] as f64;
        (d.is_finite() && d > 0.0).then_some(d)
    }
}

/// A source of true correspondences between image `I` and image `I'`.
pub trait Correspondence {
    /// Location in `I'` of pixel `p` of `I`, possibly outside the frame.
    fn forward(&self, p: Point2<f64>) -> Option<Point2<f64>>;
    /// Location in `I` of pixel `p` of `I'`.
    fn backward(&self, p: Point2<f64>) -> Option<Point2<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomographyProvider {
    h: Matrix3<f64>,
    h_inv: Matrix3<f64>,
}

impl HomographyProvider {
    pub fn new(h: Matrix3<f64>) -> Result<Self, CorrespondenceError> {
        let h_inv = h.try_inverse().ok_or(CorrespondenceError::Singular)?;
        if !h_inv.iter().all(|v| v.is_finite()) {
            return Err(CorrespondenceError::Singular);
        }
        Ok(Self { h, h_inv })
    }

    pub fn identity() -> Self {
        Self { h: Matrix3::identity(), h_inv: Matrix3::identity() }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.h
    }

    pub fn inverted(&self) -> Self {
        Self { h: self.h_inv, h_inv: self.h }
    }

    /// Nine whitespace-separated values, row-major.
    pub fn parse(text: &str) -> Result<Self, CorrespondenceError> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| CorrespondenceError::Parse(format!("{s:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if values.len() != 9 {
            return Err(CorrespondenceError::Parse(format!("expected 9 homography entries, found {}", values.len())));
        }
        Self::new(Matrix3::from_row_slice(&values))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorrespondenceError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl Correspondence for HomographyProvider {
    fn forward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        homography_map(&self.h, p).ok()
    }

    fn backward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        homography_map(&self.h_inv, p).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthPoseProvider {
    pub depth_a: DepthMap,
    pub depth_b: DepthMap,
    /// World-from-camera poses.
    pub pose_a: RigidPose,
    pub pose_b: RigidPose,
    pub intrinsics: CameraIntrinsics,
}

impl DepthPoseProvider {
    pub fn new(
        depth_a: DepthMap,
        depth_b: DepthMap,
        pose_a: RigidPose,
        pose_b: RigidPose,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, CorrespondenceError> {
        let expected = (intrinsics.width, intrinsics.height);
        for d in [&depth_a, &depth_b] {
            if (d.width, d.height) != expected {
                return Err(CorrespondenceError::DepthSize { expected, got: (d.width, d.height) });
            }
        }
        Ok(Self { depth_a, depth_b, pose_a, pose_b, intrinsics })
    }
}

impl Correspondence for DepthPoseProvider {
    fn forward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        depth_pose_map(p, self.depth_a.at(p)?, &self.pose_a, &self.pose_b, &self.intrinsics)
    }

    fn backward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        depth_pose_map(p, self.depth_b.at(p)?, &self.pose_b, &self.pose_a, &self.intrinsics)
    }
}

/// Correspondence by chained KLT between two frames of a sequence.
#[derive(Debug, Clone)]
pub struct KltChainProvider {
    frames: Arc<Vec<Pyramid>>,
    pub frame_a: usize,
    pub frame_b: usize,
    pub config: KltConfig,
}

impl KltChainProvider {
    pub fn new(frames: Arc<Vec<Pyramid>>, frame_a: usize, frame_b: usize, config: KltConfig) -> Result<Self, CorrespondenceError> {
        for index in [frame_a, frame_b] {
            if index >= frames.len() {
                return Err(CorrespondenceError::FrameIndex { index, len: frames.len() });
            }
        }
        Ok(Self { frames, frame_a, frame_b, config })
    }

    /// Builds pyramids for a whole sequence once, for sharing between pairs.
    pub fn pyramids(images: &[Image], config: &KltConfig) -> Arc<Vec<Pyramid>> {
        Arc::new(images.iter().map(|img| Pyramid::build(img, config.levels)).collect())
    }
}

impl Correspondence for KltChainProvider {
    fn forward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        klt_chain_map(&self.frames, self.frame_a, self.frame_b, p, &self.config)
    }

    fn backward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        klt_chain_map(&self.frames, self.frame_b, self.frame_a, p, &self.config)
    }
}

/// Any of the supported providers.
#[derive(Debug, Clone)]
pub enum CorrespondenceProvider {
    Homography(HomographyProvider),
    DepthPose(Box<DepthPoseProvider>),
    KltChain(KltChainProvider),
}

impl Correspondence for CorrespondenceProvider {
    fn forward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        match self {
            Self::Homography(c) => c.forward(p),
            Self::DepthPose(c) => c.forward(p),
            Self::KltChain(c) => c.forward(p),
        }
    }

    fn backward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        match self {
            Self::Homography(c) => c.backward(p),
            Self::DepthPose(c) => c.backward(p),
            Self::KltChain(c) => c.backward(p),
        }
    }
}

/// Swaps the roles of the two images.
pub struct Reversed<'a, C: ?Sized>(pub &'a C);

impl<C: Correspondence + ?Sized> Correspondence for Reversed<'_, C> {
    fn forward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        self.0.backward(p)
    }

    fn backward(&self, p: Point2<f64>) -> Option<Point2<f64>> {
        self.0.forward(p)
    }
}

/// Reads `frame_id qw qx qy qz tx ty tz` lines (world-from-camera).
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_poses(text: &str) -> Result<Vec<(String, RigidPose)>, CorrespondenceError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(CorrespondenceError::Parse(format!("line {}: expected 8 fields, found {}", lineno + 1, fields.len())));
        }
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| CorrespondenceError::Parse(format!("line {}: {s:?}: {e}", lineno + 1))))
            .collect::<Result<_, _>>()?;
        let pose = RigidPose::from_quaternion(v[0], v[1], v[2], v[3], Vector3::new(v[4], v[5], v[6]));
        out.push((fields[0].to_string(), pose));
    }
    Ok(out)
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<(String, RigidPose)>, CorrespondenceError> {
    parse_poses(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchLabel {
    Inlier,
    Outlier,
    Unassigned,
}

/// One channel's match and the ground truth used to label it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledMatch {
    pub p: Point2<f64>,
    pub p_prime: Point2<f64>,
    /// True location of `p` in `I'`.
    pub forward: Option<Point2<f64>>,
    /// True location of `p_prime` in `I`.
    pub backward: Option<Point2<f64>>,
    pub label: MatchLabel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledMatchSet {
    pub matches: Vec<LabeledMatch>,
}

impl LabeledMatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn labels(&self) -> Vec<MatchLabel> {
        self.matches.iter().map(|m| m.label).collect()
    }

    pub fn count(&self, label: MatchLabel) -> usize {
        self.matches.iter().filter(|m| m.label == label).count()
    }

    pub fn inlier_count(&self) -> usize {
        self.count(MatchLabel::Inlier)
    }
}

fn in_frame(p: Option<Point2<f64>>, size: (usize, usize)) -> Option<Point2<f64>> {
    p.filter(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= (size.0 - 1) as f64 && p.y <= (size.1 - 1) as f64)
}

/// Labels every channel match of `I` (size `size_a`) against `I'` (size
/// `size_b`). A match is an inlier when each point lies within
/// `threshold_px` of the other's true location; unassigned when either
/// true location is unknown or outside its frame.
pub fn label_matches<C: Correspondence + ?Sized>(
    matches: &MatchSet,
    psi: &C,
    size_a: (usize, usize),
    size_b: (usize, usize),
    threshold_px: f64,
) -> LabeledMatchSet {
    let matches = matches
        .pairs
        .iter()
        .map(|(a, b)| {
            let p = Point2::new(a.x as f64, a.y as f64);
            let p_prime = Point2::new(b.x as f64, b.y as f64);
            let forward = in_frame(psi.forward(p), size_b);
            let backward = in_frame(psi.backward(p_prime), size_a);
            let label = match (forward, backward) {
                (Some(f), Some(bw)) => {
                    if (f - p_prime).norm() <= threshold_px && (bw - p).norm() <= threshold_px {
                        MatchLabel::Inlier
                    } else {
                        MatchLabel::Outlier
                    }
                }
                _ => MatchLabel::Unassigned,
            };
            LabeledMatch { p, p_prime, forward, backward, label }
        })
        .collect();
    LabeledMatchSet { matches }
}
