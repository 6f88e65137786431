use crate::scalar::Scalar;

use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates for a list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
    block_names: Vec<String>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments for blocks of the given names and sizes.
    pub fn new(config: AdamConfig, blocks: &[(String, usize)]) -> Self {
        Self {
            config,
            first_moment: blocks.iter().map(|(_, n)| vec![T::zero(); *n]).collect(),
            second_moment: blocks.iter().map(|(_, n)| vec![T::zero(); *n]).collect(),
            step_count: 0,
            block_names: blocks.iter().map(|(name, _)| name.clone()).collect(),
        }
    }

    pub fn block_names(&self) -> &[String] {
        &self.block_names
    }
}

/// One bias-corrected Adam update.
///
/// Gradients are validated before anything is modified, so an error leaves
/// both `params` and `state` untouched.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
) -> Result<(), NumericsError> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(NumericsError::Shape(format!(
            "{} parameter blocks, {} gradient blocks, optimizer tracks {}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[i].len() {
            return Err(NumericsError::Shape(format!(
                "block `{}`: {} parameters, {} gradients, {} moments",
                state.block_names[i],
                p.len(),
                g.len(),
                state.first_moment[i].len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteGradient { block: state.block_names[i].clone() });
        }
    }

    state.step_count += 1;
    let c = state.config;
    let t = state.step_count as i32;
    let b1 = T::lit(c.beta1);
    let b2 = T::lit(c.beta2);
    let one = T::one();
    let correction1 = T::lit(1.0 - c.beta1.powi(t));
    let correction2 = T::lit(1.0 - c.beta2.powi(t));
    let lr = T::lit(c.lr);
    let eps = T::lit(c.epsilon);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            p[j] = p[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
