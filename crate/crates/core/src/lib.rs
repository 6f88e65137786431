//! Descriptor-free interest point detection and matching.
//!
//! A fully convolutional network produces `n` response channels; the global
//! maximum of channel `i` is the `i`-th interest point, and points from two
//! images are matched simply by channel index. This crate contains the
//! network and its training losses, the ground-truth correspondence and
//! labeling machinery, a pyramidal KLT tracker for pair selection and
//! pseudo ground truth, P3P/RANSAC pose verification, descriptor compression
//! baselines, and the evaluation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod compression;
pub mod correspondence;
pub mod eval;
pub mod extraction;
pub mod geometry;
pub mod image;
pub mod klt;
pub mod network;
pub mod numerics;
mod scalar;
pub mod synthetic;
pub mod training;

pub use crate::image::{Image, ImageError};
pub use crate::scalar::Scalar;
pub use extraction::{InterestPoint, InterestPointSet, MatchSet, ResponseStack};
pub use network::{NetworkConfig, NetworkParams};
