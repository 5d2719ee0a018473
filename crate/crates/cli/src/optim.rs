//! Adam optimizer with bias correction, moments held per parameter tensor.

use metaslot_core::Tensor64;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First/second moment accumulators, one pair per parameter tensor, in the
/// model's fixed parameter order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Number of completed steps (drives bias correction).
    pub t: u64,
}

impl AdamState {
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }
}

/// One Adam step over aligned (parameter, gradient) pairs; moments update in
/// place.
pub fn adam_step(
    params: &mut [&mut Tensor64],
    grads: &[Tensor64],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CliError::config(
            "adam_step: parameter/gradient/moment counts differ",
        ));
    }
    state.t += 1;
    let bias1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bias2 = 1.0 - hyper.beta2.powi(state.t as i32);
    for ((param, grad), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if param.len() != grad.len() {
            return Err(CliError::config("adam_step: shape mismatch"));
        }
        let p = param.data_mut();
        let g = grad.data();
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(lr: f64) -> AdamHyper {
        AdamHyper {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = Tensor64::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor64::zeros(1, 3);
        let mut state = AdamState::new(&[3]);
        // seed the moments so the decay is observable
        state.m[0] = vec![0.4, 0.4, 0.4];
        state.v[0] = vec![0.2, 0.2, 0.2];
        let m_before = state.m[0].clone();
        adam_step(&mut [&mut p], &[g], &mut state, &hyper(0.1)).unwrap();
        // m decays toward zero, v decays toward zero, but with a zero
        // gradient m_hat is nonzero — parameters only stay put when the
        // moments are zero as well
        assert!(state.m[0][0] < m_before[0]);
        let mut p2 = Tensor64::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let mut fresh = AdamState::new(&[3]);
        adam_step(
            &mut [&mut p2],
            &[Tensor64::zeros(1, 3)],
            &mut fresh,
            &hyper(0.1),
        )
        .unwrap();
        assert_eq!(p2.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn single_step_on_quadratic_moves_by_learning_rate() {
        // f(x) = x^2 at x = 1: g = 2; after bias correction the first step
        // is lr * g / (|g| + eps) = lr (up to eps)
        let mut x = Tensor64::scalar(1.0);
        let g = Tensor64::scalar(2.0);
        let mut state = AdamState::new(&[1]);
        adam_step(&mut [&mut x], &[g], &mut state, &hyper(0.1)).unwrap();
        let delta = 1.0 - x.data()[0];
        assert!((delta - 0.1).abs() < 1e-6, "step {delta}");
        assert!(x.data()[0] < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(x) = sum x_i^2 / 2, gradient x; 500 steps must drive the
        // gradient norm below 1e-6
        let mut x = Tensor64::from_vec(1, 4, vec![0.9, -0.4, 0.2, -0.7]).unwrap();
        let mut state = AdamState::new(&[4]);
        let h = hyper(0.05);
        for _ in 0..500 {
            let g = x.clone();
            adam_step(&mut [&mut x], &[g], &mut state, &h).unwrap();
        }
        let norm: f64 = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm after 500 steps: {norm:e}");
    }
}
