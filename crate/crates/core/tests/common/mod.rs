//! Synthetic stereo sequences with an oracle detector that fires exactly on
//! the projections of known world landmarks.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use imip::eval::{Detector, EvalError, SequenceData};
use imip::geometry::{CameraIntrinsics, RigidPose, StereoCalibration};
use imip::synthetic::PlanarScene;
use imip::{Image, ResponseStack};
use nalgebra::{Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WIDTH: usize = 320;
pub const HEIGHT: usize = 240;
pub const BASELINE: f64 = 0.5;

pub fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, WIDTH, HEIGHT).unwrap()
}

/// Camera-from-world poses. Rotations are quarter turns about the optical
/// axis and translations whole baselines in x and y, so that landmarks at
/// integer pixel and integer disparity in frame 0 project to integer pixels
/// in every view.
pub fn camera_poses() -> Vec<RigidPose> {
    let z = Vector3::z();
    vec![
        RigidPose::identity(),
        RigidPose::from_axis_angle(z, 0.0, Vector3::new(BASELINE, 0.0, 0.0)),
        RigidPose::from_axis_angle(z, std::f64::consts::FRAC_PI_2, Vector3::new(BASELINE, -BASELINE, 0.0)),
        RigidPose::from_axis_angle(z, std::f64::consts::PI, Vector3::new(0.0, BASELINE, 0.0)),
    ]
}

/// Landmarks in frame-0 camera coordinates, which double as world coordinates.
pub fn landmarks(n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let k = intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = Vec::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u = rng.random_range(90..=230) as f64;
        let v = rng.random_range(50..=190) as f64;
        let d = rng.random_range(6..=20) as f64;
        // keep peaks apart so channels do not see each other's maxima
        if taken.iter().any(|&(a, b): &(f64, f64)| (a - u).abs() + (b - v).abs() < 4.0) {
            continue;
        }
        taken.push((u, v));
        out.push(k.unproject(&Point2::new(u, v), k.fx * BASELINE / d));
    }
    out
}

fn peak_stack(pixels: &[Point2<f64>]) -> ResponseStack<f32> {
    ResponseStack::from_fn(HEIGHT, WIDTH, pixels.len(), |y, x, c| {
        let p = pixels[c];
        let r2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
        if r2 > 36.0 {
            0.05
        } else {
            (0.05 + 0.9 * (-r2 / 4.0).exp()) as f32
        }
    })
}

/// Detector that looks views up by image content.
pub struct OracleDetector {
    views: Vec<(Image, ResponseStack<f32>)>,
    pub margin: usize,
    pub calls: AtomicUsize,
}

impl Detector for OracleDetector {
    fn n_channels(&self) -> usize {
        self.views[0].1.channels()
    }

    fn margin(&self) -> usize {
        self.margin
    }

    fn responses(&self, image: &Image) -> Result<ResponseStack<f32>, EvalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.views
            .iter()
            .find(|(img, _)| img == image)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| EvalError::InvalidArgument("unknown view".into()))
    }
}

pub struct SyntheticStereo {
    pub sequence: SequenceData,
    pub detector: OracleDetector,
    pub landmarks: Vec<Vector3<f64>>,
}

/// Renders a corridor from every pose, left and right, and builds the
/// oracle detector for `n` landmarks.
pub fn synthetic_stereo(n: usize, seed: u64, pairs: Vec<(usize, usize)>) -> SyntheticStereo {
    let k = intrinsics();
    let scene = PlanarScene::corridor(seed, 30.0);
    let pts = landmarks(n, seed);
    let right_offset = RigidPose { rotation: nalgebra::Matrix3::identity(), translation: Vector3::new(-BASELINE, 0.0, 0.0) };
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut views = Vec::new();
    for cam_from_world in camera_poses() {
        for (is_right, out) in [(false, &mut left), (true, &mut right)] {
            let cam = if is_right { right_offset.compose(&cam_from_world) } else { cam_from_world };
            let image = scene.render(&k, &cam.inverse()).image;
            let pixels: Vec<Point2<f64>> = pts
                .iter()
                .map(|p| {
                    let q = k.project(&cam.transform(p)).expect("in front");
                    Point2::new(q.x.round(), q.y.round())
                })
                .collect();
            views.push((image.clone(), peak_stack(&pixels)));
            out.push(image);
        }
    }
    let sequence = SequenceData {
        name: "synth".into(),
        left,
        right: Some(right),
        poses: Some(camera_poses().iter().map(RigidPose::inverse).collect()),
        calibration: Some(StereoCalibration { intrinsics: k, baseline: BASELINE }),
        pairs: Some(pairs),
    };
    SyntheticStereo { sequence, detector: OracleDetector { views, margin: 5, calls: AtomicUsize::new(0) }, landmarks: pts }
}
