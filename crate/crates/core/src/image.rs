//! Single-channel floating point images with intensities in `[0, 1]`.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image data length {len} does not match {width}x{height}")]
    DataLength { width: usize, height: usize, len: usize },
    #[error("failed to read image {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::DataLength { width, height, len: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Loads any format the `image` crate decodes; color is reduced to luminance.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|source| ImageError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        let luma = decoded.to_luma32f();
        let (w, h) = luma.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: luma.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions");
        buf.save(path).map_err(|source| ImageError::Encode {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// True if `(x, y)` lies inside `[0, width) x [0, height)`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }

    /// Bilinear sample; `None` when the 2x2 support leaves the image.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            // exact hits on the last row/column are still valid
            if x0 < self.width && y0 < self.height && x == x0 as f64 && y == y0 as f64 {
                return Some(self.get(x0, y0) as f64);
            }
            return None;
        }
        let ax = x - x0 as f64;
        let ay = y - y0 as f64;
        let i = y0 * self.width + x0;
        let d = &self.data;
        let top = d[i] as f64 * (1.0 - ax) + d[i + 1] as f64 * ax;
        let bottom = d[i + self.width] as f64 * (1.0 - ax) + d[i + self.width + 1] as f64 * ax;
        Some(top * (1.0 - ay) + bottom * ay)
    }

    /// Bilinear sample with coordinates clamped to the image.
    #[inline]
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = x - x0 as f64;
        let ay = y - y0 as f64;
        let d = &self.data;
        let w = self.width;
        let top = d[y0 * w + x0] as f64 * (1.0 - ax) + d[y0 * w + x1] as f64 * ax;
        let bottom = d[y1 * w + x0] as f64 * (1.0 - ax) + d[y1 * w + x1] as f64 * ax;
        top * (1.0 - ay) + bottom * ay
    }

    /// Crops an `size x size` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Option<Image> {
        if x0 + size > self.width || y0 + size > self.height {
            return None;
        }
        let mut data = Vec::with_capacity(size * size);
        for y in y0..y0 + size {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + size]);
        }
        Some(Image { width: size, height: size, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_sample_interpolates_and_rejects_outside() {
        let img = Image::from_fn(4, 3, |x, y| (x + 10 * y) as f32);
        assert_eq!(img.sample(1.0, 1.0), Some(11.0));
        assert!((img.sample(1.5, 1.5).unwrap() - 16.5).abs() < 1e-12);
        assert_eq!(img.sample(3.0, 2.0), Some(23.0));
        assert_eq!(img.sample(3.5, 0.0), None);
        assert_eq!(img.sample(-0.1, 0.0), None);
    }

    #[test]
    fn crop_bounds() {
        let img = Image::from_fn(5, 5, |x, y| (x * y) as f32);
        let c = img.crop(1, 2, 3).unwrap();
        assert_eq!(c.get(0, 0), 2.0);
        assert_eq!(c.get(2, 2), 12.0);
        assert!(img.crop(3, 3, 3).is_none());
    }

    #[test]
    fn png_roundtrip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = Image::from_fn(7, 3, |x, y| (x * 3 + y) as f32 / 30.0);
        img.save_png(&path).unwrap();
        let back = Image::load(&path).unwrap();
        assert_eq!((back.width(), back.height()), (7, 3));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
