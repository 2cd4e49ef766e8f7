//! Dense numerics shared by every learned stage: a small row-major tensor
//! type, elementwise nonlinearities, initialization, Adam and a central
//! finite-difference gradient checker.
//!
//! All model code is generic over [`Real`] so the same forward/backward
//! implementation runs in `f32` for training and in `f64` when gradients are
//! verified numerically.

mod adam;
mod gradcheck;
mod init;
mod ops;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error};
pub use init::{glorot_init, uniform_init};
pub use ops::{
    add, concat, dropout, elu, elu_grad, l1_norm, l2_norm, leaky_relu, leaky_relu_grad, matmul,
    relu, softmax, DropoutMask, LEAKY_SLOPE,
};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

/// Floating-point scalar used throughout the crate.
pub trait Real:
    num_traits::Float
    + Default
    + Debug
    + Display
    + FromStr
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Fails with a numeric error naming `what` if any value is NaN or infinite.
pub fn ensure_finite<F: Real>(values: &[F], what: &str) -> crate::Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::Numeric(what.to_string()))
    }
}

/// Items per parallel work unit; fixed so reductions do not depend on the
/// thread count.
const CHUNK: usize = 16;
/// Chunks reduced per wave, bounding how many partial results are alive.
const WAVE: usize = 64;

/// Maps fixed-size chunks of `items` in parallel and folds the results
/// sequentially in chunk order, so floating-point sums are reproducible.
pub(crate) fn chunked_reduce<T, R>(
    items: &[T],
    map: impl Fn(&[T]) -> crate::Result<R> + Sync,
    mut fold: impl FnMut(R),
) -> crate::Result<()>
where
    T: Sync,
    R: Send,
{
    use rayon::prelude::*;
    for wave in items.chunks(CHUNK * WAVE) {
        let parts: Vec<R> = wave.par_chunks(CHUNK).map(&map).collect::<crate::Result<_>>()?;
        parts.into_iter().for_each(&mut fold);
    }
    Ok(())
}
