use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};
use crate::{Error, Result};

/// Negative slope of the LeakyReLU used by the neighbor attention logits.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == F::zero() {
                continue;
            }
            let brow = b.row(k);
            for (o, &bkj) in out.row_mut(i).iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::Numeric("matmul produced a non-finite value".into()));
    }
    Ok(out)
}

pub fn concat<F: Real>(parts: &[&[F]]) -> Vec<F> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

pub fn add<F: Real>(a: &[F], b: &[F]) -> Result<Vec<F>> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("add {} vs {}", a.len(), b.len())));
    }
    let out: Vec<F> = a.iter().zip(b).map(|(&x, &y)| x + y).collect();
    super::ensure_finite(&out, "add")?;
    Ok(out)
}

pub fn l1_norm<F: Real>(x: &[F]) -> F {
    x.iter().map(|v| v.abs()).sum()
}

pub fn l2_norm<F: Real>(x: &[F]) -> F {
    x.iter().map(|&v| v * v).sum::<F>().sqrt()
}

/// Overflow-safe softmax (max subtraction). Empty input yields empty output.
pub fn softmax<F: Real>(x: &[F]) -> Vec<F> {
    let Some(max) = x.iter().copied().reduce(F::max) else {
        return Vec::new();
    };
    let mut out: Vec<F> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: F = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

#[inline]
pub fn leaky_relu<F: Real>(x: F, slope: F) -> F {
    if x > F::zero() {
        x
    } else {
        x * slope
    }
}

#[inline]
pub fn leaky_relu_grad<F: Real>(x: F, slope: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        slope
    }
}

#[inline]
pub fn elu<F: Real>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of ELU evaluated at the pre-activation `x`.
#[inline]
pub fn elu_grad<F: Real>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        x.exp()
    }
}

#[inline]
pub fn relu<F: Real>(x: F) -> F {
    x.max(F::zero())
}

/// Per-element inverted-dropout factors: `0` for dropped units and
/// `1 / (1 - p)` for survivors. The identity mask stores nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<F> {
    factors: Option<Vec<F>>,
}

impl<F: Real> DropoutMask<F> {
    pub fn identity() -> Self {
        Self { factors: None }
    }

    pub fn sample<R: Rng>(len: usize, p: f64, rng: &mut R) -> Self {
        if p <= 0.0 {
            return Self::identity();
        }
        let keep = F::lit(1.0 / (1.0 - p));
        let factors = (0..len)
            .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
            .collect();
        Self {
            factors: Some(factors),
        }
    }

    pub fn apply(&self, x: &mut [F]) {
        if let Some(f) = &self.factors {
            x.iter_mut().zip(f).for_each(|(v, &k)| *v *= k);
        }
    }

    pub fn is_identity(&self) -> bool {
        self.factors.is_none()
    }
}

/// Inverted dropout. Identity in eval mode.
pub fn dropout<F: Real>(x: &[F], p: f64, seed: u64, train: bool) -> Result<Vec<F>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Argument(format!("dropout probability {p} not in [0, 1)")));
    }
    let mut out = x.to_vec();
    if train {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DropoutMask::sample(x.len(), p, &mut rng).apply(&mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        assert_eq!(softmax(&[0.0f64, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn leaky_relu_negative_side() {
        assert!((leaky_relu(-1.0f64, LEAKY_SLOPE) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn activations_fix_zero() {
        assert_eq!(elu(0.0f32), 0.0);
        assert_eq!(relu(0.0f32), 0.0);
        assert_eq!(leaky_relu(0.0f32, 0.2), 0.0);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales_survivors() {
        let x = vec![1.0f32; 1000];
        assert_eq!(dropout(&x, 0.3, 7, false).unwrap(), x);
        let y = dropout(&x, 0.3, 7, true).unwrap();
        let keep = 1.0 / 0.7;
        assert!(y.iter().all(|&v| v == 0.0 || (v - keep).abs() < 1e-6));
        assert_eq!(y, dropout(&x, 0.3, 7, true).unwrap());
        assert!(dropout(&x, 1.0, 7, true).is_err());
    }

    #[test]
    fn matmul_shape_error() {
        let a = Tensor::<f32>::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
        let b = Tensor::from_vec(3, 1, vec![1.0f32, 1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().shape(), (2, 1));
    }

    #[test]
    fn norms() {
        assert_eq!(l1_norm(&[3.0f64, -4.0]), 7.0);
        assert_eq!(l2_norm(&[3.0f64, -4.0]), 5.0);
        assert!(add(&[1.0f32], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_probability_vector(x in prop::collection::vec(-1e4f64..1e4, 1..20)) {
            let p = softmax(&x);
            prop_assert!(p.iter().all(|&v| v >= 0.0 && v.is_finite()));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn softmax_f32_large_inputs(x in prop::collection::vec(-3e4f32..3e4, 1..20)) {
            let p = softmax(&x);
            prop_assert!((p.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
        }
    }
}
