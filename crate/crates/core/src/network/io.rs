//! Binary parameter files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "IMIP" | version: u32 | config block | crc32: u32 | layer tensors
//! ```
//!
//! The config block holds `n_channels, depth, hidden_a, hidden_b: u32`,
//! `leaky_slope: f64`, `seed: u64`, `scalar_bytes: u32` and
//! `input_normalization: u32` (0 = intensities scaled to [0, 1], no mean
//! subtraction). Each layer is `c_in: u32, c_out: u32`, then kernels in
//! `(ky, kx, c_in, c_out)` order and the bias. The checksum covers the
//! config block and the layer tensors.

use std::fs;
use std::path::Path;

use super::{NetworkConfig, NetworkError, NetworkParams};
use crate::numerics::ConvLayerParams;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"IMIP";
pub const FORMAT_VERSION: u32 = 1;
const CONFIG_BLOCK_LEN: usize = 4 * 4 + 8 + 8 + 4 + 4;
const INPUT_UNIT_RANGE: u32 = 0;

pub fn write_params<T: Scalar>(params: &NetworkParams<T>) -> Vec<u8> {
    let c = &params.config;
    let mut body = Vec::with_capacity(CONFIG_BLOCK_LEN + params.parameter_count() * T::BYTES);
    for v in [c.n_channels, c.depth, c.intermediate_channels.0, c.intermediate_channels.1] {
        body.extend_from_slice(&(v as u32).to_le_bytes());
    }
    body.extend_from_slice(&c.leaky_slope.to_le_bytes());
    body.extend_from_slice(&c.seed.to_le_bytes());
    body.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    body.extend_from_slice(&INPUT_UNIT_RANGE.to_le_bytes());
    let config_len = body.len();
    for l in &params.layers {
        body.extend_from_slice(&(l.c_in as u32).to_le_bytes());
        body.extend_from_slice(&(l.c_out as u32).to_le_bytes());
        for &v in l.kernels.iter().chain(&l.bias) {
            v.write_le(&mut body);
        }
    }
    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&body[..config_len]);
    out.extend_from_slice(&crc.to_le_bytes());
    out.extend_from_slice(&body[config_len..]);
    out
}

pub fn save_params<T: Scalar>(params: &NetworkParams<T>, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    fs::write(path, write_params(params))?;
    Ok(())
}

pub fn load_params<T: Scalar>(path: impl AsRef<Path>) -> Result<NetworkParams<T>, NetworkError> {
    read_params(&fs::read(path)?)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a parameter file. Values stored at another precision are converted.
pub fn read_params<T: Scalar>(bytes: &[u8]) -> Result<NetworkParams<T>, NetworkError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(NetworkError::BadMagic);
    }
    let header_len = 8 + CONFIG_BLOCK_LEN + 4;
    if bytes.len() < 8 {
        return Err(NetworkError::Truncated { expected: header_len, actual: bytes.len() });
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(NetworkError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < header_len {
        return Err(NetworkError::Truncated { expected: header_len, actual: bytes.len() });
    }
    let cfg = &bytes[8..8 + CONFIG_BLOCK_LEN];
    let stored_crc = u32_at(bytes, 8 + CONFIG_BLOCK_LEN);
    let payload = &bytes[header_len..];

    let config = NetworkConfig {
        n_channels: u32_at(cfg, 0) as usize,
        depth: u32_at(cfg, 4) as usize,
        intermediate_channels: (u32_at(cfg, 8) as usize, u32_at(cfg, 12) as usize),
        leaky_slope: f64::from_le_bytes(cfg[16..24].try_into().expect("8 bytes")),
        seed: u64::from_le_bytes(cfg[24..32].try_into().expect("8 bytes")),
    };
    let scalar_bytes = u32_at(cfg, 32) as usize;
    let normalization = u32_at(cfg, 36);

    // Sizes come from the (not yet verified) config; guard against absurd values
    // so corruption there surfaces as a checksum failure rather than a panic.
    let plan = if config.depth <= 4096 { config.channel_plan() } else { Vec::new() };
    let expected_payload = plan
        .iter()
        .try_fold(0usize, |acc, &(ci, co)| {
            ci.checked_mul(co)?.checked_mul(9)?.checked_add(co)?.checked_mul(scalar_bytes)?.checked_add(acc + 8)
        });
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(cfg);
    hasher.update(payload);
    let computed = hasher.finalize();
    match expected_payload {
        Some(n) if payload.len() < n && (scalar_bytes == 4 || scalar_bytes == 8) && computed != stored_crc => {
            return Err(NetworkError::Truncated { expected: header_len + n, actual: bytes.len() });
        }
        _ => {}
    }
    if computed != stored_crc {
        return Err(NetworkError::Checksum { stored: stored_crc, computed });
    }
    if scalar_bytes != 4 && scalar_bytes != 8 {
        return Err(NetworkError::Format(format!("unsupported scalar width {scalar_bytes}")));
    }
    if normalization != INPUT_UNIT_RANGE {
        return Err(NetworkError::Format(format!("unknown input normalization tag {normalization}")));
    }
    config.validate()?;
    let expected_payload = expected_payload.ok_or_else(|| NetworkError::Format("layer sizes overflow".into()))?;
    if payload.len() > expected_payload {
        return Err(NetworkError::TrailingData(payload.len() - expected_payload));
    }

    let read = |chunk: &[u8]| -> T {
        if scalar_bytes == T::BYTES {
            T::read_le(chunk)
        } else if scalar_bytes == 4 {
            T::lit(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64)
        } else {
            T::lit(f64::from_le_bytes(chunk.try_into().expect("8 bytes")))
        }
    };
    let mut at = 0;
    let mut layers = Vec::with_capacity(plan.len());
    for (i, &(c_in, c_out)) in plan.iter().enumerate() {
        let (fi, fo) = (u32_at(payload, at) as usize, u32_at(payload, at + 4) as usize);
        if (fi, fo) != (c_in, c_out) {
            return Err(NetworkError::Format(format!(
                "layer {i} stored as {fi}->{fo}, config implies {c_in}->{c_out}"
            )));
        }
        at += 8;
        let nk = 9 * c_in * c_out;
        let kernels = payload[at..at + nk * scalar_bytes].chunks_exact(scalar_bytes).map(read).collect();
        at += nk * scalar_bytes;
        let bias = payload[at..at + c_out * scalar_bytes].chunks_exact(scalar_bytes).map(read).collect();
        at += c_out * scalar_bytes;
        layers.push(ConvLayerParams { c_in, c_out, kernels, bias });
    }
    let params = NetworkParams { config, layers };
    params.validate()?;
    Ok(params)
}
