//! Adam with bias correction, plus a small helper that keeps one state per
//! parameter tensor for the training loops.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct AdamState<F> {
    first_moment: Tensor<F>,
    second_moment: Tensor<F>,
    step: u64,
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Real> AdamState<F> {
    /// Default hyperparameters: beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn new(dims: &[usize], learning_rate: f64) -> Self {
        AdamState {
            first_moment: Tensor::zeros(dims.to_vec()),
            second_moment: Tensor::zeros(dims.to_vec()),
            step: 0,
            learning_rate: F::cast(learning_rate),
            beta1: F::cast(0.9),
            beta2: F::cast(0.999),
            epsilon: F::cast(1e-8),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Tensor<F> {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Tensor<F> {
        &self.second_moment
    }
}

/// One Adam update. Moments decay, the step counter increments, and the
/// parameter moves against the bias-corrected moment ratio.
pub fn adam_step<F: Real>(
    param: &mut Tensor<F>,
    grad: &Tensor<F>,
    state: &mut AdamState<F>,
) -> Result<()> {
    if param.dims() != grad.dims() || param.dims() != state.first_moment.dims() {
        return Err(Error::shape(format!(
            "adam_step: param dims {:?}, grad dims {:?}, moment dims {:?}",
            param.dims(),
            grad.dims(),
            state.first_moment.dims()
        )));
    }
    state.step += 1;
    adam_step_slices(
        param.data_mut(),
        grad.data(),
        state.first_moment.data_mut(),
        state.second_moment.data_mut(),
        state.step,
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.epsilon,
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn adam_step_slices<F: Real>(
    param: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    step: u64,
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
) {
    let one = F::one();
    let bc1 = one - beta1.powi(step as i32);
    let bc2 = one - beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (one - beta1) * g;
        v[i] = beta2 * v[i] + (one - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam state per parameter tensor, stepped in registration order.
pub struct AdamSet<F> {
    states: Vec<AdamState<F>>,
}

impl<F: Real> AdamSet<F> {
    pub fn new(dims: &[Vec<usize>], learning_rate: f64) -> Self {
        AdamSet {
            states: dims.iter().map(|d| AdamState::new(d, learning_rate)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[Vec<F>]) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::shape(format!(
                "adam set: {} params, {} grads, {} states",
                params.len(),
                grads.len(),
                self.states.len()
            )));
        }
        for ((param, grad), state) in params.iter_mut().zip(grads).zip(&mut self.states) {
            let g = Tensor::new(param.dims().to_vec(), grad.clone())?;
            adam_step(param, &g, state)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_never_moves_parameters() {
        let mut p = Tensor::vector(vec![1.5f64, -2.0]);
        let g = Tensor::zeros(vec![2]);
        let mut st = AdamState::new(&[2], 1e-3);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert_eq!(p.data(), &[1.5, -2.0]);
        assert_eq!(st.step_count(), 10);
        assert!(st.first_moment().data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::scalar(0.0f64);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(&[1], 1e-3);
        adam_step(&mut p, &g, &mut st).unwrap();
        let delta = p.data()[0];
        assert!((delta + 1e-3).abs() < 1e-6, "delta = {delta}");
    }

    #[test]
    fn repeated_identical_gradients_decrease_monotonically() {
        let mut p = Tensor::scalar(1.0f64);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(&[1], 1e-3);
        let mut last = p.data()[0];
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st).unwrap();
            assert!(p.data()[0] < last);
            last = p.data()[0];
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = Tensor::vector(vec![0.0f64; 2]);
        let g = Tensor::vector(vec![0.0f64; 3]);
        let mut st = AdamState::new(&[2], 1e-3);
        assert!(adam_step(&mut p, &g, &mut st).is_err());
    }
}
