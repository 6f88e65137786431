//! The fully convolutional detector.
//!
//! `depth` layers of 3x3 stride-1 convolutions with leaky ReLU activations
//! and a final sigmoid. Full images are run with zero padding so the output
//! has the input's resolution; training patches of exactly one receptive
//! field are run without padding and collapse to a single output pixel.

mod io;

pub use io::{load_params, read_params, save_params, write_params, FORMAT_VERSION, MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::extraction::ResponseStack;
use crate::image::Image;
use crate::numerics::{
    conv::conv2d_backward_impl, conv2d_forward, sigmoid, sigmoid_backward, ConvLayerParams,
    NumericsError, Padding, Tensor4, DEFAULT_LEAKY_SLOPE,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("image {width}x{height} is smaller than the {receptive_field}px receptive field")]
    ImageTooSmall { width: usize, height: usize, receptive_field: usize },
    #[error("patches must be {expected}x{expected}x1, got {got:?}")]
    PatchShape { expected: usize, got: [usize; 4] },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a parameter file (bad magic)")]
    BadMagic,
    #[error("unsupported parameter file version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("parameter file truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("parameter file has {0} unexpected trailing bytes")]
    TrailingData(usize),
    #[error("parameter file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed parameter file: {0}")]
    Format(String),
}

/// Architecture and initialization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Output channels, one interest point each.
    pub n_channels: usize,
    pub depth: usize,
    /// Channel counts of the first and second half of the hidden layers.
    pub intermediate_channels: (usize, usize),
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::with_channels(128)
    }
}

impl NetworkConfig {
    /// 14-layer variant with `n` outputs. The 256-channel network doubles
    /// every hidden layer; other sizes keep (64, 128).
    pub fn with_channels(n: usize) -> Self {
        let intermediate_channels = if n == 256 { (128, 256) } else { (64, 128) };
        Self {
            n_channels: n,
            depth: 14,
            intermediate_channels,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.n_channels == 0 {
            return Err(NetworkError::Config("n_channels must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(NetworkError::Config("depth must be at least 1".into()));
        }
        let (a, b) = self.intermediate_channels;
        if self.depth > 1 && (a == 0 || (self.depth > 2 && b == 0)) {
            return Err(NetworkError::Config("intermediate channel counts must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(NetworkError::Config(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// `(c_in, c_out)` of every layer, grayscale input first.
    pub fn channel_plan(&self) -> Vec<(usize, usize)> {
        let half = self.depth / 2;
        let mut plan = Vec::with_capacity(self.depth);
        let mut c_in = 1;
        for l in 0..self.depth {
            let c_out = if l + 1 == self.depth {
                self.n_channels
            } else if l < half {
                self.intermediate_channels.0
            } else {
                self.intermediate_channels.1
            };
            plan.push((c_in, c_out));
            c_in = c_out;
        }
        plan
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self)
    }

    /// Border band in which full-image responses see zero padding.
    pub fn border_margin(&self) -> usize {
        (self.receptive_field() - 1) / 2
    }
}

/// Side of the square input window that influences one output pixel.
pub fn receptive_field(config: &NetworkConfig) -> usize {
    1 + config.depth * 2
}

/// Network weights; immutable during inference.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub config: NetworkConfig,
    pub layers: Vec<ConvLayerParams<T>>,
}

/// Parameter gradients, one `(kernels, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradients<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> NetworkGradients<T> {
    pub fn zeros_like(params: &NetworkParams<T>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.kernels.len()], vec![T::zero(); l.bias.len()]))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|(k, b)| k.iter().chain(b).copied()).collect()
    }

    pub fn blocks(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|(k, b)| [k.as_slice(), b.as_slice()]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(k, b)| k.iter().chain(b))
            .fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }
}

/// Intermediate activations of a patch forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct PatchForward<T> {
    /// Input of every layer; `inputs[0]` are the patches themselves.
    inputs: Vec<Tensor4<T>>,
    /// Sigmoid output `[m, 1, 1, n]`.
    pub output: Tensor4<T>,
}

/// Initial output bias; responses start near `sigmoid(-2) = 0.12`, so the
/// inlier term is not swamped by suppression on the other channels.
pub const OUTPUT_BIAS_INIT: f64 = -2.0;

pub fn init_weights<T: Scalar>(config: &NetworkConfig) -> Result<NetworkParams<T>, NetworkError> {
    NetworkParams::init(config)
}

impl<T: Scalar> NetworkParams<T> {
    /// Fan-in scaled Gaussian weights (`std = sqrt(2 / fan_in)`), zero hidden
    /// biases and [`OUTPUT_BIAS_INIT`] on the output layer, deterministic in
    /// `config.seed`.
    pub fn init(config: &NetworkConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .channel_plan()
            .into_iter()
            .enumerate()
            .map(|(i, (c_in, c_out))| {
                let fan_in = (9 * c_in) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                let kernels = (0..9 * c_in * c_out).map(|_| T::lit(normal.sample(&mut rng))).collect();
                let b = if i + 1 == config.depth { T::lit(OUTPUT_BIAS_INIT) } else { T::zero() };
                ConvLayerParams { c_in, c_out, kernels, bias: vec![b; c_out] }
            })
            .collect();
        Ok(Self { config: config.clone(), layers })
    }

    /// Checks the layer list against the configured channel plan.
    pub fn validate(&self) -> Result<(), NetworkError> {
        self.config.validate()?;
        let plan = self.config.channel_plan();
        if plan.len() != self.layers.len() {
            return Err(NetworkError::Config(format!(
                "config has depth {}, params have {} layers",
                plan.len(),
                self.layers.len()
            )));
        }
        for (i, ((c_in, c_out), l)) in plan.iter().zip(&self.layers).enumerate() {
            if l.c_in != *c_in || l.c_out != *c_out || l.kernels.len() != 9 * c_in * c_out || l.bias.len() != *c_out {
                return Err(NetworkError::Config(format!(
                    "layer {i} is {}->{}, expected {c_in}->{c_out}",
                    l.c_in, l.c_out
                )));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.config.n_channels
    }

    pub fn receptive_field(&self) -> usize {
        self.config.receptive_field()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernels.len() + l.bias.len()).sum()
    }

    /// Names and sizes of the parameter blocks in [`Self::blocks_mut`] order.
    pub fn block_layout(&self) -> Vec<(String, usize)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [(format!("layer{i}.kernels"), l.kernels.len()), (format!("layer{i}.bias"), l.bias.len())]
            })
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.kernels.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.kernels.iter().chain(&l.bias).copied()).collect()
    }

    /// Inverse of [`Self::flatten`].
    pub fn set_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.parameter_count());
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for v in l.kernels.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayerParams {
                    c_in: l.c_in,
                    c_out: l.c_out,
                    kernels: l.kernels.iter().map(|v| U::lit(v.as_f64())).collect(),
                    bias: l.bias.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn activate(&self, z: Tensor4<T>, last: bool) -> Tensor4<T> {
        if last {
            sigmoid(&z)
        } else {
            let slope = T::lit(self.config.leaky_slope);
            let mut z = z;
            for v in z.data_mut() {
                if *v <= T::zero() {
                    *v = slope * *v;
                }
            }
            z
        }
    }

    /// Dense responses for a whole image; output resolution equals input.
    pub fn forward_full(&self, image: &Image) -> Result<ResponseStack<T>, NetworkError> {
        let r = self.receptive_field();
        if image.width() < r || image.height() < r {
            return Err(NetworkError::ImageTooSmall {
                width: image.width(),
                height: image.height(),
                receptive_field: r,
            });
        }
        let data = image.data().iter().map(|&v| T::lit(v as f64)).collect();
        let mut x = Tensor4::from_vec([1, image.height(), image.width(), 1], data)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = conv2d_forward(&x, layer, Padding::ZeroSame)?;
            x = self.activate(z, i == last);
        }
        Ok(ResponseStack::new(image.height(), image.width(), self.n_channels(), x.into_data()))
    }

    fn check_patches(&self, patches: &Tensor4<T>) -> Result<(), NetworkError> {
        let r = self.receptive_field();
        let s = patches.shape();
        if s[1] != r || s[2] != r || s[3] != 1 {
            return Err(NetworkError::PatchShape { expected: r, got: s });
        }
        Ok(())
    }

    /// Runs `[m, r, r, 1]` patches without padding, giving `[m, 1, 1, n]`.
    pub fn forward_patches(&self, patches: &Tensor4<T>) -> Result<Tensor4<T>, NetworkError> {
        Ok(self.forward_patches_cached(patches)?.output)
    }

    pub fn forward_patches_cached(&self, patches: &Tensor4<T>) -> Result<PatchForward<T>, NetworkError> {
        self.check_patches(patches)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = patches.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = conv2d_forward(&x, layer, Padding::Valid)?;
            inputs.push(x);
            x = self.activate(z, i == last);
        }
        Ok(PatchForward { inputs, output: x })
    }

    /// Backpropagates `upstream = dL/d(output)` through a cached patch pass.
    pub fn backward_patches(
        &self,
        forward: &PatchForward<T>,
        upstream: &Tensor4<T>,
    ) -> Result<NetworkGradients<T>, NetworkError> {
        if upstream.shape() != forward.output.shape() {
            return Err(NetworkError::Numerics(NumericsError::Shape(format!(
                "upstream {:?} does not match output {:?}",
                upstream.shape(),
                forward.output.shape()
            ))));
        }
        let slope = T::lit(self.config.leaky_slope);
        let mut grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        let mut g = sigmoid_backward(&forward.output, upstream);
        for i in (0..self.layers.len()).rev() {
            let input = &forward.inputs[i];
            let (gk, gb, gi) = conv2d_backward_impl(input, &self.layers[i], &g, Padding::Valid, i > 0)?;
            grads[i] = (gk, gb);
            if let Some(mut gi) = gi {
                // input of layer i is lrelu(z); its sign equals the sign of z
                for (gv, &a) in gi.data_mut().iter_mut().zip(input.data()) {
                    if a <= T::zero() {
                        *gv = *gv * slope;
                    }
                }
                g = gi;
            }
        }
        Ok(NetworkGradients { layers: grads })
    }
}
