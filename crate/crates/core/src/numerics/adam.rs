use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Bias-corrected Adam state: first/second moment accumulators per
/// parameter tensor plus the shared step counter.
pub struct AdamState {
    hyper: AdamParams,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(param_shapes: &[&[usize]], hyper: AdamParams) -> Self {
        let m = param_shapes.iter().map(|s| vec![0.0; s.iter().product()]).collect();
        let v = param_shapes.iter().map(|s| vec![0.0; s.iter().product()]).collect();
        Self { hyper, m, v, step: 0 }
    }

    pub fn for_params(params: &[Tensor], hyper: AdamParams) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        Self::new(&shapes, hyper)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over all parameter tensors, in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "adam param {i}: {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("adam gradient {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamParams { lr, beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                pd[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let grads = vec![Tensor::zeros(vec![3])];
        let mut state = AdamState::for_params(&params, AdamParams::default());
        let before = params[0].clone();
        for _ in 0..5 {
            state.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params[0], before);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // grad = 1, lr = 1e-3: bias correction gives m_hat = v_hat = 1,
        // so the update is -lr / (1 + eps) ~ -1e-3.
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::for_params(&params, AdamParams::default());
        state.step(&mut params, &grads).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((params[0].item() - expect).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut rng = crate::rng::stream(11, "adam");
            let mut params = vec![Tensor::randn(vec![4, 4], &mut rng)];
            let mut state = AdamState::for_params(&params, AdamParams::default());
            for _ in 0..100 {
                let grads = vec![Tensor::randn(vec![4, 4], &mut rng)];
                state.step(&mut params, &grads).unwrap();
            }
            params[0].data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut params = vec![Tensor::zeros(vec![3])];
        let grads = vec![Tensor::zeros(vec![4])];
        let mut state = AdamState::for_params(&params, AdamParams::default());
        assert!(state.step(&mut params, &grads).is_err());
    }

    #[test]
    fn non_finite_gradient_is_error() {
        let mut params = vec![Tensor::zeros(vec![1])];
        let mut bad = Tensor::zeros(vec![1]);
        bad.data_mut()[0] = f64::NAN;
        let mut state = AdamState::for_params(&params, AdamParams::default());
        assert!(state.step(&mut params, std::slice::from_ref(&bad)).is_err());
    }
}
