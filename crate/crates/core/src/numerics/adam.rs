use super::{Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed, ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
    step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let (first, second) = params
            .into_iter()
            .map(|p| (vec![F::zero(); p.data().len()], vec![F::zero(); p.data().len()]))
            .unzip();
        Self {
            config,
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter tensor.
    pub fn step(&mut self, params: Vec<&mut Tensor<F>>, grads: Vec<&Tensor<F>>) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first) {
            if p.data().len() != m.len() || !p.same_shape(g) {
                return Err(Error::Shape(format!(
                    "adam parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (F::lit(beta1), F::lit(beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - beta1), F::lit(1.0 - beta2));
        let step_size = F::lit(lr / bias1);
        let bias2_sqrt = F::lit(bias2.sqrt());
        let eps = F::lit(eps);

        for ((param, grad), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((p, &g), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                *p -= step_size * *mi / ((*vi).sqrt() / bias2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::from_vec(1, 1, vec![0.0f64]).unwrap();
        let g = Tensor::from_vec(1, 1, vec![1.0f64]).unwrap();
        let mut state = AdamState::new(AdamConfig::with_lr(0.001), [&p]);
        state.step(vec![&mut p], vec![&g]).unwrap();
        assert!((p.get(0, 0) + 0.001).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = Tensor::from_vec(1, 3, vec![1.0f32, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(1, 3);
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        for _ in 0..5 {
            state.step(vec![&mut p], vec![&g]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn identical_state_copies_give_identical_results() {
        let p0 = Tensor::from_vec(1, 2, vec![0.5f32, -0.5]).unwrap();
        let g = Tensor::from_vec(1, 2, vec![0.1f32, 0.3]).unwrap();
        let state = AdamState::new(AdamConfig::default(), [&p0]);
        let (mut a, mut b) = (p0.clone(), p0.clone());
        let (mut sa, mut sb) = (state.clone(), state);
        sa.step(vec![&mut a], vec![&g]).unwrap();
        sb.step(vec![&mut b], vec![&g]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f32>::zeros(1, 2);
        let g = Tensor::<f32>::zeros(2, 1);
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        assert!(matches!(
            state.step(vec![&mut p], vec![&g]),
            Err(Error::Shape(_))
        ));
    }
}
