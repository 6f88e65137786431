//! Analytic test imagery: smooth random textures and ray-cast planar scenes.
//!
//! Every texture is a closed-form function of continuous coordinates, so
//! shifted, warped and re-rendered views are exact rather than resampled.

use nalgebra::{Matrix3, Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{CameraIntrinsics, RigidPose};
use crate::Image;

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    inv_two_sigma_sq: f64,
    amplitude: f64,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amplitude: f64,
}

/// Sum of Gaussian blobs and low-frequency sinusoids squashed into `(0, 1)`.
#[derive(Debug, Clone)]
pub struct SmoothTexture {
    blobs: Vec<Blob>,
    waves: Vec<Wave>,
}

impl SmoothTexture {
    /// Random texture whose blobs cover `[0, extent_x] x [0, extent_y]`
    /// with a margin, so nearby out-of-frame content is textured too.
    pub fn random(seed: u64, extent_x: f64, extent_y: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let margin = 16.0;
        let area = (extent_x + 2.0 * margin) * (extent_y + 2.0 * margin);
        let n_blobs = ((area / 90.0) as usize).max(8);
        let blobs = (0..n_blobs)
            .map(|_| {
                let sigma: f64 = rng.random_range(2.0..6.0);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Blob {
                    x: rng.random_range(-margin..extent_x + margin),
                    y: rng.random_range(-margin..extent_y + margin),
                    inv_two_sigma_sq: 1.0 / (2.0 * sigma * sigma),
                    amplitude: sign * rng.random_range(0.6..1.4),
                }
            })
            .collect();
        let waves = (0..3)
            .map(|_| {
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let period: f64 = rng.random_range(25.0..60.0);
                let k = std::f64::consts::TAU / period;
                Wave {
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amplitude: rng.random_range(0.1..0.3),
                }
            })
            .collect();
        Self { blobs, waves }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let mut s = 0.0;
        for b in &self.blobs {
            let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
            let e = d2 * b.inv_two_sigma_sq;
            if e < 30.0 {
                s += b.amplitude * (-e).exp();
            }
        }
        for w in &self.waves {
            s += w.amplitude * (w.kx * x + w.ky * y + w.phase).sin();
        }
        0.5 + 0.5 * s.tanh()
    }

    pub fn render(&self, width: usize, height: usize) -> Image {
        Image::from_fn(width, height, |x, y| self.value(x as f64, y as f64) as f32)
    }

    /// View in which content at `p` moves to `p + (dx, dy)`.
    pub fn render_shifted(&self, width: usize, height: usize, dx: f64, dy: f64) -> Image {
        Image::from_fn(width, height, |x, y| self.value(x as f64 - dx, y as f64 - dy) as f32)
    }

    /// View in which content at `p` moves to `H p`.
    pub fn render_warped(&self, width: usize, height: usize, h: &Matrix3<f64>) -> Option<Image> {
        let inv = h.try_inverse()?;
        Some(Image::from_fn(width, height, |x, y| {
            let q = inv * Vector3::new(x as f64, y as f64, 1.0);
            self.value(q.x / q.z, q.y / q.z) as f32
        }))
    }
}

/// Rendered smooth texture of the given size.
pub fn smooth_texture(width: usize, height: usize, seed: u64) -> Image {
    SmoothTexture::random(seed, width as f64, height as f64).render(width, height)
}

/// Finite textured rectangle in world space.
#[derive(Debug, Clone)]
pub struct TexturedPlane {
    pub origin: Vector3<f64>,
    /// Orthonormal in-plane axes.
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub extent: (f64, f64),
    /// Texture pixels per meter.
    pub texels_per_m: f64,
    texture: SmoothTexture,
}

impl TexturedPlane {
    pub fn new(origin: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>, extent: (f64, f64), texels_per_m: f64, seed: u64) -> Self {
        let texture = SmoothTexture::random(seed, extent.0 * texels_per_m, extent.1 * texels_per_m);
        Self { origin, u: u.normalize(), v: v.normalize(), extent, texels_per_m, texture }
    }

    fn normal(&self) -> Vector3<f64> {
        self.u.cross(&self.v)
    }

    /// Ray parameter and texture value of the first hit, if any.
    fn intersect(&self, center: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let n = self.normal();
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.origin - center)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let hit = center + dir * t - self.origin;
        let (a, b) = (hit.dot(&self.u), hit.dot(&self.v));
        if a < 0.0 || b < 0.0 || a > self.extent.0 || b > self.extent.1 {
            return None;
        }
        Some((t, self.texture.value(a * self.texels_per_m, b * self.texels_per_m)))
    }
}

/// Collection of planes rendered by ray casting with a pinhole camera.
#[derive(Debug, Clone)]
pub struct PlanarScene {
    pub planes: Vec<TexturedPlane>,
    pub background: f32,
}

/// One rendered view: intensities and camera-frame depth (`inf` on background).
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Image,
    pub depth: Vec<f64>,
}

impl RenderedView {
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.image.width() + x]
    }
}

impl PlanarScene {
    /// Corridor along +z: floor, ceiling, two walls and an end wall,
    /// `length` meters deep and 4 m wide.
    pub fn corridor(seed: u64, length: f64) -> Self {
        let tpm = 40.0;
        let (hw, hh) = (2.0, 1.5);
        let x = Vector3::x();
        let y = Vector3::y();
        let z = Vector3::z();
        let planes = vec![
            TexturedPlane::new(Vector3::new(-hw, hh, -2.0), x, z, (2.0 * hw, length + 2.0), tpm, seed),
            TexturedPlane::new(Vector3::new(-hw, -hh, -2.0), z, x, (length + 2.0, 2.0 * hw), tpm, seed + 1),
            TexturedPlane::new(Vector3::new(-hw, -hh, -2.0), y, z, (2.0 * hh, length + 2.0), tpm, seed + 2),
            TexturedPlane::new(Vector3::new(hw, -hh, -2.0), z, y, (length + 2.0, 2.0 * hh), tpm, seed + 3),
            TexturedPlane::new(Vector3::new(-hw, -hh, length), x, y, (2.0 * hw, 2.0 * hh), tpm, seed + 4),
        ];
        Self { planes, background: 0.5 }
    }

    /// Renders the view of a camera with pose `world_from_camera`.
    pub fn render(&self, k: &CameraIntrinsics, world_from_camera: &RigidPose) -> RenderedView {
        let (w, h) = (k.width, k.height);
        let mut data = vec![self.background; w * h];
        let mut depth = vec![f64::INFINITY; w * h];
        let center = world_from_camera.translation;
        for py in 0..h {
            for px in 0..w {
                let ray_cam = k.unproject(&Point2::new(px as f64, py as f64), 1.0);
                let dir = world_from_camera.rotation * ray_cam;
                let mut best: Option<(f64, f64)> = None;
                for plane in &self.planes {
                    if let Some((t, v)) = plane.intersect(&center, &dir) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, v));
                        }
                    }
                }
                if let Some((t, v)) = best {
                    // the camera ray has unit z, so the parameter is the depth
                    data[py * w + px] = v as f32;
                    depth[py * w + px] = t;
                }
            }
        }
        RenderedView { image: Image::new(w, h, data).expect("size matches"), depth }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_is_bounded_and_deterministic() {
        let a = smooth_texture(40, 30, 3);
        let b = smooth_texture(40, 30, 3);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let mean = a.data().iter().sum::<f32>() / a.data().len() as f32;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f32>() / a.data().len() as f32;
        assert!(var > 1e-3, "texture should have contrast, variance {var}");
    }

    #[test]
    fn shift_moves_content() {
        let t = SmoothTexture::random(1, 50.0, 50.0);
        let base = t.render(50, 50);
        let moved = t.render_shifted(50, 50, 3.0, -2.0);
        assert_eq!(base.get(10, 20), moved.get(13, 18));
    }

    #[test]
    fn warp_by_identity_is_render() {
        let t = SmoothTexture::random(2, 30.0, 30.0);
        assert_eq!(t.render(30, 30), t.render_warped(30, 30, &Matrix3::identity()).unwrap());
    }

    #[test]
    fn corridor_depth_matches_geometry() {
        let scene = PlanarScene::corridor(5, 10.0);
        let k = CameraIntrinsics::new(60.0, 60.0, 32.0, 24.0, 64, 48).unwrap();
        let view = scene.render(&k, &RigidPose::identity());
        // the optical axis hits the end wall at z = 10
        assert!((view.depth_at(32, 24) - 10.0).abs() < 1e-9);
        assert!(view.depth.iter().all(|d| d.is_finite()));
    }
}
