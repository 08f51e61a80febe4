//! Scalar abstraction for the probabilistic parts of the crate.
//!
//! Fusion posteriors, confusion matrices and metric reductions are written
//! against [`Scalar`] so they run in `f32` or `f64`; the pipeline uses `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossless-enough conversion from a literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + 'static
{
}

/// Log-sum-exp of a slice; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<F: Scalar>(xs: &[F]) -> F {
    let m = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if m == F::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<F>().ln()
}

/// Normalizes log weights into a probability vector in place.
pub fn softmax_in_place<F: Scalar>(xs: &mut [F]) {
    let z = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x = (*x - z).exp();
    }
    let total: F = xs.iter().copied().sum();
    for x in xs.iter_mut() {
        *x = *x / total;
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax<F: Scalar>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Top-1 minus top-2 of a probability vector (1 for a single entry).
pub fn top_two_margin<F: Scalar>(xs: &[F]) -> F {
    let mut first = F::neg_infinity();
    let mut second = F::neg_infinity();
    for &x in xs {
        if x > first {
            second = first;
            first = x;
        } else if x > second {
            second = x;
        }
    }
    if second == F::neg_infinity() {
        F::one()
    } else {
        first - second
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_in_both_widths() {
        let mut a = vec![1.0f64, 2.0, -3.0];
        softmax_in_place(&mut a);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut b = vec![1.0f32, 2.0, -3.0];
        softmax_in_place(&mut b);
        assert!((b.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2f64, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5f64, 0.5]), 0);
    }

    #[test]
    fn margin_of_one_hot_is_one() {
        assert_eq!(top_two_margin(&[0.0f64, 1.0, 0.0]), 1.0);
        assert!((top_two_margin(&[0.5f64, 0.3, 0.2]) - 0.2).abs() < 1e-12);
        assert_eq!(top_two_margin(&[0.5f64, 0.5]), 0.0);
    }
}
