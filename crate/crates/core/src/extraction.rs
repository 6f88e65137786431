//! Interest points as per-channel global maxima, matched by channel index.

use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractionError {
    #[error("margin {margin} leaves no valid region in a {width}x{height} response map")]
    EmptyRegion { margin: usize, width: usize, height: usize },
    #[error("channel count mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error("coordinate ({x}, {y}) does not fit in 12 bits")]
    CoordinateRange { x: u32, y: u32 },
    #[error("packed coordinates must be a multiple of 3 bytes, got {0}")]
    PackedLength(usize),
}

/// Dense `height x width x channels` responses, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseStack<T = f32> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> ResponseStack<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), height * width * channels, "response stack size");
        Self { height, width, channels, data }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> ResponseStack<U> {
        ResponseStack {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// The maximum of one channel; `channel` is the match identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterestPoint {
    pub channel: usize,
    pub x: u32,
    pub y: u32,
    pub response: f64,
}

/// Exactly one point per channel, indexed by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestPointSet {
    pub points: Vec<InterestPoint>,
}

impl InterestPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Builds a set from coordinates; responses are set to zero.
    pub fn from_coordinates(coords: &[(u32, u32)]) -> Self {
        Self {
            points: coords
                .iter()
                .enumerate()
                .map(|(channel, &(x, y))| InterestPoint { channel, x, y, response: 0.0 })
                .collect(),
        }
    }

    pub fn coordinates(&self) -> Vec<(u32, u32)> {
        self.points.iter().map(|p| (p.x, p.y)).collect()
    }
}

/// Channel-aligned pairs `(a[i], b[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<(InterestPoint, InterestPoint)>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Global maximum of every channel over the region `margin` pixels away from
/// each border. Ties go to the smallest row, then the smallest column.
pub fn extract_points<T: Scalar>(stack: &ResponseStack<T>, margin: usize) -> Result<InterestPointSet, ExtractionError> {
    let (h, w) = (stack.height, stack.width);
    if 2 * margin >= h || 2 * margin >= w {
        return Err(ExtractionError::EmptyRegion { margin, width: w, height: h });
    }
    let points = (0..stack.channels)
        .into_par_iter()
        .map(|c| {
            let mut best = (margin, margin);
            let mut best_v = stack.get(margin, margin, c);
            for y in margin..h - margin {
                for x in margin..w - margin {
                    let v = stack.get(y, x, c);
                    // strict comparison keeps the first (row-major) maximum
                    if v > best_v || (best_v.is_nan() && !v.is_nan()) {
                        best_v = v;
                        best = (y, x);
                    }
                }
            }
            InterestPoint { channel: c, x: best.1 as u32, y: best.0 as u32, response: best_v.as_f64() }
        })
        .collect();
    Ok(InterestPointSet { points })
}

pub fn match_by_channel(a: &InterestPointSet, b: &InterestPointSet) -> Result<MatchSet, ExtractionError> {
    if a.len() != b.len() {
        return Err(ExtractionError::ChannelMismatch(a.len(), b.len()));
    }
    Ok(MatchSet { pairs: a.points.iter().copied().zip(b.points.iter().copied()).collect() })
}

/// Largest coordinate representable in the packed format, exclusive.
pub const PACKED_COORDINATE_LIMIT: u32 = 4096;

/// 12 bits of x and 12 bits of y.
pub const PACKED_BYTES_PER_POINT: usize = 3;

/// Packs each point into 3 bytes (12-bit x, then 12-bit y, most significant
/// bit first), concatenated in channel order.
pub fn pack_coordinates(set: &InterestPointSet) -> Result<Vec<u8>, ExtractionError> {
    let mut out = Vec::with_capacity(PACKED_BYTES_PER_POINT * set.len());
    for p in &set.points {
        if p.x >= PACKED_COORDINATE_LIMIT || p.y >= PACKED_COORDINATE_LIMIT {
            return Err(ExtractionError::CoordinateRange { x: p.x, y: p.y });
        }
        out.push((p.x >> 4) as u8);
        out.push((((p.x & 0xf) << 4) | (p.y >> 8)) as u8);
        out.push((p.y & 0xff) as u8);
    }
    Ok(out)
}

/// Inverse of [`pack_coordinates`]; channel `i` is the `i`-th triple.
pub fn unpack_coordinates(bytes: &[u8]) -> Result<Vec<(u32, u32)>, ExtractionError> {
    if !bytes.len().is_multiple_of(3) {
        return Err(ExtractionError::PackedLength(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(3)
        .map(|b| {
            let x = ((b[0] as u32) << 4) | ((b[1] as u32) >> 4);
            let y = (((b[1] as u32) & 0xf) << 8) | b[2] as u32;
            (x, y)
        })
        .collect())
}
