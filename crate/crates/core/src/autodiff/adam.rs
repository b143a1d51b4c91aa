use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        AdamState {
            config,
            first,
            second,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), AutodiffError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(AutodiffError::ParamCount {
                expected: self.first.len(),
                got: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(AutodiffError::NonFinite("adam gradient"));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(lr: f64, grad: &[f64], steps: usize) -> (Tensor, AdamState) {
        let mut p = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        let mut state = AdamState::new(AdamConfig::with_lr(lr), [&p]);
        let g = Tensor::from_vec(grad.to_vec());
        for _ in 0..steps {
            state.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        }
        (p, state)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (p, state) = run(0.1, &[0.0; 3], 3);
        assert_eq!(p.data(), [1.0, -2.0, 0.5]);
        assert_eq!(state.steps(), 3);
    }

    #[test]
    fn first_step_is_a_sign_step() {
        let g = [0.3, -4.0, 1e-3];
        let (p, _) = run(1e-3, &g, 1);
        for ((after, before), gv) in p.data().iter().zip([1.0, -2.0, 0.5]).zip(g) {
            // m_hat = g, v_hat = g^2 on the first step
            let expected = 1e-3 * gv / (gv.abs() + 1e-8);
            assert!(((before - after) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let (p, _) = run(0.0, &[0.7, -0.1, 3.0], 5);
        assert_eq!(p.data(), [1.0, -2.0, 0.5]);
    }

    #[test]
    fn deterministic() {
        let (a, _) = run(1e-2, &[0.7, -0.1, 3.0], 2);
        let (b, _) = run(1e-2, &[0.7, -0.1, 3.0], 2);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = Tensor::from_vec(vec![1.0, 2.0]);
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        let bad_shape = Tensor::from_vec(vec![1.0]);
        assert!(state.step(&mut [&mut p], &[bad_shape]).is_err());
        let nan = Tensor::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(
            state.step(&mut [&mut p], &[nan]),
            Err(AutodiffError::NonFinite(_))
        ));
        assert_eq!(state.steps(), 0);
    }
}
