//! Number abstraction shared by the floating-point and exact-rational routes.
//!
//! Every closed form and the chain oracle are written once over [`Real`], so
//! the same code path can be run in `f64` for sweeps and in [`BigRational`]
//! when route identities must be certified exactly.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

use crate::error::{Error, Result};

pub trait Real: Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive {
    /// Tolerance to use where the floating-point route would accept `float_tol`.
    /// Exact types return zero.
    fn agreement_tolerance(float_tol: f64) -> Self;
}

impl Real for f64 {
    fn agreement_tolerance(float_tol: f64) -> Self {
        float_tol
    }
}

impl Real for BigRational {
    fn agreement_tolerance(_float_tol: f64) -> Self {
        BigRational::from_integer(BigInt::from(0))
    }
}

pub(crate) fn int<T: Real>(n: i64) -> T {
    T::from_i64(n).expect("integer fits every Real")
}

pub(crate) fn powi<T: Real>(x: &T, n: usize) -> T {
    num_traits::pow::pow(x.clone(), n)
}

/// `(-1)^n`.
pub(crate) fn neg_one_pow<T: Real>(n: i64) -> T {
    if n.rem_euclid(2) == 0 {
        T::one()
    } else {
        -T::one()
    }
}

pub(crate) fn to_f64<T: Real>(x: &T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub(crate) fn check_prob<T: Real>(name: &'static str, x: &T) -> Result<()> {
    if *x > T::zero() && *x < T::one() {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange {
            name,
            value: to_f64(x),
        })
    }
}

/// `|a - b| <= tol`, with `tol` mapped through [`Real::agreement_tolerance`].
pub(crate) fn agree<T: Real>(a: &T, b: &T, float_tol: f64) -> bool {
    (a.clone() - b.clone()).abs() <= T::agreement_tolerance(float_tol)
}

/// Builds the rational `num / den`.
pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neg_one_pow_handles_negative_exponents() {
        assert_eq!(neg_one_pow::<f64>(-3), -1.0);
        assert_eq!(neg_one_pow::<f64>(4), 1.0);
    }

    #[test]
    fn exact_tolerance_is_zero() {
        assert!(agree(&ratio(1, 3), &ratio(2, 6), 1e-3));
        assert!(!agree(&ratio(1, 3), &ratio(1, 4), 1.0));
        assert!(agree(&0.1, &0.1000001, 1e-6));
    }

    #[test]
    fn prob_bounds_are_open() {
        assert!(check_prob("q", &0.5).is_ok());
        assert!(check_prob("q", &0.0).is_err());
        assert!(check_prob("q", &ratio(1, 1)).is_err());
    }
}
