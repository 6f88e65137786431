use rayon::prelude::*;

use crate::scalar::Scalar;

use super::{NumericsError, Tensor4};

/// Spatial extent of every convolution kernel.
pub const KERNEL_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; each spatial dimension shrinks by 2.
    Valid,
    /// One pixel of zeros on every side; spatial size is preserved.
    ZeroSame,
}

impl Padding {
    fn offset(self) -> isize {
        match self {
            Padding::Valid => 0,
            Padding::ZeroSame => 1,
        }
    }
}

/// Weights of one 3x3 convolution: kernels laid out `(ky, kx, c_in, c_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayerParams<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            kernels: vec![T::zero(); KERNEL_SIZE * KERNEL_SIZE * c_in * c_out],
            bias: vec![T::zero(); c_out],
        }
    }

    pub fn new(c_in: usize, c_out: usize, kernels: Vec<T>, bias: Vec<T>) -> Result<Self, NumericsError> {
        if kernels.len() != KERNEL_SIZE * KERNEL_SIZE * c_in * c_out || bias.len() != c_out {
            return Err(NumericsError::Shape(format!(
                "expected {} kernel weights and {} biases for a 3x3x{}x{} layer, got {} and {}",
                KERNEL_SIZE * KERNEL_SIZE * c_in * c_out,
                c_out,
                c_in,
                c_out,
                kernels.len(),
                bias.len()
            )));
        }
        Ok(Self { c_in, c_out, kernels, bias })
    }

    #[inline]
    pub fn kernel_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * KERNEL_SIZE + kx) * self.c_in + ci) * self.c_out + co
    }
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients<T> {
    pub input: Tensor4<T>,
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

fn output_dims(h: usize, w: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => (h - 2, w - 2),
        Padding::ZeroSame => (h, w),
    }
}

fn check_input<T: Scalar>(
    input: &Tensor4<T>,
    params: &ConvLayerParams<T>,
    padding: Padding,
) -> Result<(), NumericsError> {
    if input.channels() != params.c_in {
        return Err(NumericsError::Shape(format!(
            "input has {} channels, layer expects {}",
            input.channels(),
            params.c_in
        )));
    }
    if padding == Padding::Valid && (input.height() < KERNEL_SIZE || input.width() < KERNEL_SIZE) {
        return Err(NumericsError::Shape(format!(
            "valid convolution needs at least 3x3 input, got {}x{}",
            input.height(),
            input.width()
        )));
    }
    Ok(())
}

/// Stride-1 3x3 cross-correlation plus bias.
///
/// Each output element accumulates its taps in a fixed order, so results do
/// not depend on how rows are distributed over threads.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor4<T>,
    params: &ConvLayerParams<T>,
    padding: Padding,
) -> Result<Tensor4<T>, NumericsError> {
    check_input(input, params, padding)?;
    let [batch, h, w, c_in] = input.shape();
    let c_out = params.c_out;
    let (oh, ow) = output_dims(h, w, padding);
    let mut out = Tensor4::zeros([batch, oh, ow, c_out]);
    if out.is_empty() {
        return Ok(out);
    }
    let off = padding.offset();
    let src = input.data();
    let k = &params.kernels;

    out.data_mut()
        .par_chunks_mut(ow * c_out)
        .enumerate()
        .for_each(|(row, out_row)| {
            let b = row / oh;
            let oy = row % oh;
            for ox in 0..ow {
                let acc = &mut out_row[ox * c_out..(ox + 1) * c_out];
                acc.copy_from_slice(&params.bias);
                for ky in 0..KERNEL_SIZE {
                    let iy = oy as isize + ky as isize - off;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..KERNEL_SIZE {
                        let ix = ox as isize + kx as isize - off;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let base = ((b * h + iy as usize) * w + ix as usize) * c_in;
                        let pix = &src[base..base + c_in];
                        let kbase = (ky * KERNEL_SIZE + kx) * c_in * c_out;
                        for (ci, &v) in pix.iter().enumerate() {
                            let krow = &k[kbase + ci * c_out..kbase + (ci + 1) * c_out];
                            for (a, &kv) in acc.iter_mut().zip(krow) {
                                *a = *a + v * kv;
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] given the upstream gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    params: &ConvLayerParams<T>,
    upstream: &Tensor4<T>,
    padding: Padding,
) -> Result<ConvGradients<T>, NumericsError> {
    let (kernels, bias, grad_input) = conv2d_backward_impl(input, params, upstream, padding, true)?;
    Ok(ConvGradients { input: grad_input.expect("requested"), kernels, bias })
}

type BackwardParts<T> = (Vec<T>, Vec<T>, Option<Tensor4<T>>);

/// Parameter gradients, plus the input gradient when `need_input` is set.
pub(crate) fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor4<T>,
    params: &ConvLayerParams<T>,
    upstream: &Tensor4<T>,
    padding: Padding,
    need_input: bool,
) -> Result<BackwardParts<T>, NumericsError> {
    check_input(input, params, padding)?;
    let [batch, h, w, c_in] = input.shape();
    let c_out = params.c_out;
    let (oh, ow) = output_dims(h, w, padding);
    if upstream.shape() != [batch, oh, ow, c_out] {
        return Err(NumericsError::Shape(format!(
            "upstream gradient has shape {:?}, forward output is {:?}",
            upstream.shape(),
            [batch, oh, ow, c_out]
        )));
    }
    let off = padding.offset();
    let src = input.data();
    let g = upstream.data();

    let mut bias = vec![T::zero(); c_out];
    for pix in g.chunks_exact(c_out.max(1)) {
        for (b, &v) in bias.iter_mut().zip(pix) {
            *b = *b + v;
        }
    }

    let mut kernels = vec![T::zero(); KERNEL_SIZE * KERNEL_SIZE * c_in * c_out];
    kernels
        .par_chunks_mut((c_in * c_out).max(1))
        .enumerate()
        .for_each(|(tap, acc)| {
            if c_in * c_out == 0 {
                return;
            }
            let ky = (tap / KERNEL_SIZE) as isize;
            let kx = (tap % KERNEL_SIZE) as isize;
            for b in 0..batch {
                for oy in 0..oh {
                    let iy = oy as isize + ky - off;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = ox as isize + kx - off;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let gbase = ((b * oh + oy) * ow + ox) * c_out;
                        let grow = &g[gbase..gbase + c_out];
                        let ibase = ((b * h + iy as usize) * w + ix as usize) * c_in;
                        for (ci, &v) in src[ibase..ibase + c_in].iter().enumerate() {
                            let arow = &mut acc[ci * c_out..(ci + 1) * c_out];
                            for (a, &gv) in arow.iter_mut().zip(grow) {
                                *a = *a + v * gv;
                            }
                        }
                    }
                }
            }
        });

    let grad_input = if need_input {
        let mut gi = Tensor4::zeros([batch, h, w, c_in]);
        let k = &params.kernels;
        if !gi.is_empty() {
            gi.data_mut()
                .par_chunks_mut(w * c_in)
                .enumerate()
                .for_each(|(row, gi_row)| {
                    let b = row / h;
                    let iy = row % h;
                    for ix in 0..w {
                        let out_pix = &mut gi_row[ix * c_in..(ix + 1) * c_in];
                        for ky in 0..KERNEL_SIZE {
                            let oy = iy as isize - ky as isize + off;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..KERNEL_SIZE {
                                let ox = ix as isize - kx as isize + off;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let gbase = ((b * oh + oy as usize) * ow + ox as usize) * c_out;
                                let grow = &g[gbase..gbase + c_out];
                                let kbase = (ky * KERNEL_SIZE + kx) * c_in * c_out;
                                for (ci, o) in out_pix.iter_mut().enumerate() {
                                    let krow = &k[kbase + ci * c_out..kbase + (ci + 1) * c_out];
                                    let mut s = T::zero();
                                    for (&kv, &gv) in krow.iter().zip(grow) {
                                        s = s + kv * gv;
                                    }
                                    *o = *o + s;
                                }
                            }
                        }
                    }
                });
        }
        Some(gi)
    } else {
        None
    };

    Ok((kernels, bias, grad_input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4<f64> {
        let n = shape.iter().product();
        Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_layer(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> ConvLayerParams<f64> {
        let k = (0..9 * c_in * c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = (0..c_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        ConvLayerParams::new(c_in, c_out, k, b).unwrap()
    }

    /// Direct summation written independently of the kernel above.
    fn brute_force(input: &Tensor4<f64>, p: &ConvLayerParams<f64>, padding: Padding) -> Tensor4<f64> {
        let [n, h, w, _] = input.shape();
        let pad = if padding == Padding::ZeroSame { 1i64 } else { 0 };
        let oh = (h as i64 + 2 * pad - 2) as usize;
        let ow = (w as i64 + 2 * pad - 2) as usize;
        let mut out = Tensor4::zeros([n, oh, ow, p.c_out]);
        for b in 0..n {
            for y in 0..oh {
                for x in 0..ow {
                    for co in 0..p.c_out {
                        let mut s = p.bias[co];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = y as i64 + ky as i64 - pad;
                                let ix = x as i64 + kx as i64 - pad;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                for ci in 0..p.c_in {
                                    s += input.get(b, iy as usize, ix as usize, ci)
                                        * p.kernels[p.kernel_index(ky, kx, ci, co)];
                                }
                            }
                        }
                        out.set(b, y, x, co, s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_same_padding_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, [2, 5, 6, 1]);
        let mut p = ConvLayerParams::<f64>::zeros(1, 1);
        let i = p.kernel_index(1, 1, 0, 0);
        p.kernels[i] = 1.0;
        let y = conv2d_forward(&x, &p, Padding::ZeroSame).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, [1, 6, 6, 3]);
        let mut p = ConvLayerParams::<f64>::zeros(3, 2);
        p.bias = vec![0.25, -1.5];
        let y = conv2d_forward(&x, &p, Padding::Valid).unwrap();
        assert_eq!(y.shape(), [1, 4, 4, 2]);
        for px in y.data().chunks(2) {
            assert_eq!(px, &[0.25, -1.5]);
        }
    }

    #[test]
    fn matches_brute_force_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, [1, 5, 5, 2]);
        let p = random_layer(&mut rng, 2, 3);
        for padding in [Padding::Valid, Padding::ZeroSame] {
            let fast = conv2d_forward(&x, &p, padding).unwrap();
            let slow = brute_force(&x, &p, padding);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor4::<f64>::zeros([1, 5, 5, 2]);
        let p = ConvLayerParams::<f64>::zeros(3, 1);
        assert!(matches!(conv2d_forward(&x, &p, Padding::Valid), Err(NumericsError::Shape(_))));
        let small = Tensor4::<f64>::zeros([1, 2, 5, 3]);
        assert!(conv2d_forward(&small, &p, Padding::Valid).is_err());
        assert!(conv2d_forward(&small, &p, Padding::ZeroSame).is_ok());
        let p = ConvLayerParams::<f64>::zeros(2, 1);
        let bad = Tensor4::<f64>::zeros([1, 4, 4, 1]);
        assert!(conv2d_backward(&x, &p, &bad, Padding::Valid).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, [2, 5, 5, 2]);
        let p = random_layer(&mut rng, 2, 3);
        let g = conv2d_backward(&x, &p, &Tensor4::zeros([2, 3, 3, 3]), Padding::Valid).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernels.iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_backward_passes_ones() {
        let x = Tensor4::<f64>::filled([1, 4, 4, 1], 0.3);
        let mut p = ConvLayerParams::<f64>::zeros(1, 1);
        let i = p.kernel_index(1, 1, 0, 0);
        p.kernels[i] = 1.0;
        let g = conv2d_backward(&x, &p, &Tensor4::filled([1, 4, 4, 1], 1.0), Padding::ZeroSame).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 1.0));
        assert_eq!(g.bias, vec![16.0]);
        // center tap sees every input pixel, corner taps miss a row and a column
        assert!((g.kernels[i] - 16.0 * 0.3).abs() < 1e-12);
        assert!((g.kernels[p.kernel_index(0, 0, 0, 0)] - 9.0 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn bias_gradient_is_upstream_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&mut rng, [3, 6, 5, 2]);
        let p = random_layer(&mut rng, 2, 4);
        let up = random_tensor(&mut rng, [3, 6, 5, 4]);
        let g = conv2d_backward(&x, &p, &up, Padding::ZeroSame).unwrap();
        for c in 0..4 {
            let s: f64 = up.data().iter().skip(c).step_by(4).sum();
            assert!((s - g.bias[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for padding in [Padding::Valid, Padding::ZeroSame] {
            let x = random_tensor(&mut rng, [2, 5, 4, 2]);
            let p = random_layer(&mut rng, 2, 3);
            let out_shape = conv2d_forward(&x, &p, padding).unwrap().shape();
            let u = random_tensor(&mut rng, out_shape);
            let g = conv2d_backward(&x, &p, &u, padding).unwrap();
            // L = <u, conv(x)> so dL/dθ is exactly what backward computes
            let err_x = finite_difference_check(
                |v| {
                    let xx = Tensor4::from_vec(x.shape(), v.to_vec()).unwrap();
                    Ok(conv2d_forward(&xx, &p, padding)?.dot(&u))
                },
                x.data(),
                g.input.data(),
                1e-5,
            )
            .unwrap();
            let err_k = finite_difference_check(
                |v| {
                    let pp = ConvLayerParams::new(2, 3, v.to_vec(), p.bias.clone())?;
                    Ok(conv2d_forward(&x, &pp, padding)?.dot(&u))
                },
                &p.kernels,
                &g.kernels,
                1e-5,
            )
            .unwrap();
            let err_b = finite_difference_check(
                |v| {
                    let pp = ConvLayerParams::new(2, 3, p.kernels.clone(), v.to_vec())?;
                    Ok(conv2d_forward(&x, &pp, padding)?.dot(&u))
                },
                &p.bias,
                &g.bias,
                1e-5,
            )
            .unwrap();
            assert!(err_x < 1e-6 && err_k < 1e-6 && err_b < 1e-6, "{err_x} {err_k} {err_b}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for padding in [Padding::Valid, Padding::ZeroSame] {
            let x = random_tensor(&mut rng, [2, 6, 7, 3]);
            let mut p = random_layer(&mut rng, 3, 2);
            p.bias = vec![0.0; 2];
            let v = random_tensor(&mut rng, x.shape());
            let jv = conv2d_forward(&v, &p, padding).unwrap();
            let u = random_tensor(&mut rng, jv.shape());
            let jtu = conv2d_backward(&x, &p, &u, padding).unwrap().input;
            assert!((u.dot(&jv) - jtu.dot(&v)).abs() < 1e-10);
        }
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Tensor4<f32> = {
            let t = random_tensor(&mut rng, [2, 17, 19, 4]);
            Tensor4::from_vec(t.shape(), t.data().iter().map(|&v| v as f32).collect()).unwrap()
        };
        let pl = random_layer(&mut rng, 4, 8);
        let p = ConvLayerParams::new(
            4,
            8,
            pl.kernels.iter().map(|&v| v as f32).collect(),
            pl.bias.iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = single.install(|| conv2d_forward(&x, &p, Padding::ZeroSame).unwrap());
        let b = multi.install(|| conv2d_forward(&x, &p, Padding::ZeroSame).unwrap());
        assert_eq!(a, b);
        let ga = single.install(|| conv2d_backward(&x, &p, &a, Padding::ZeroSame).unwrap());
        let gb = multi.install(|| conv2d_backward(&x, &p, &a, Padding::ZeroSame).unwrap());
        assert_eq!(ga, gb);
    }
}
