use std::path::Path;

use nalgebra::{Point2, Vector3};

use super::GeometryError;

/// Undistorted pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::Intrinsics(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Pixel of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Point2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        Some(Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame point at depth `z` along the ray through `pixel`.
    pub fn unproject(&self, pixel: &Point2<f64>, z: f64) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) * z / self.fx, (pixel.y - self.cy) * z / self.fy, z)
    }

    pub fn bearing(&self, pixel: &Point2<f64>) -> Vector3<f64> {
        self.unproject(pixel, 1.0).normalize()
    }

    pub fn contains(&self, pixel: &Point2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

/// Rectified stereo rig: shared intrinsics and a horizontal baseline in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoCalibration {
    pub intrinsics: CameraIntrinsics,
    pub baseline: f64,
}

impl StereoCalibration {
    /// Parses `fx fy cx cy width height baseline`.
    pub fn parse(text: &str) -> Result<Self, GeometryError> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(GeometryError::Parse(format!("expected 7 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64, GeometryError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| GeometryError::Parse(format!("field {}: {e}", i + 1)))
        };
        let dim = |i: usize| -> Result<usize, GeometryError> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| GeometryError::Parse(format!("field {}: {e}", i + 1)))
        };
        let intrinsics = CameraIntrinsics::new(num(0)?, num(1)?, num(2)?, num(3)?, dim(4)?, dim(5)?)?;
        let baseline = num(6)?;
        if !(baseline > 0.0) {
            return Err(GeometryError::Parse(format!("baseline must be positive, got {baseline}")));
        }
        Ok(Self { intrinsics, baseline })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        format!("{} {} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height, self.baseline)
    }
}
