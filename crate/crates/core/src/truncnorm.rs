//! Standard normal distribution functions and one-sided truncated normal moments.
//!
//! Every tail quantity is routed through the scaled complementary error
//! function `erfcx(x) = exp(x²) erfc(x)`, so the inverse Mills ratio
//! (the hazard `φ(a) / (1 − Φ(a))`) never divides two underflowed numbers.
//! Past a standardized bound of 38 the hazard and the variance factor switch
//! to their asymptotic expansions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Standardized bound beyond which asymptotic tail expansions are used.
pub const ASYMPTOTIC_TAIL: f64 = 38.0;

/// Below this argument `erfcx` is evaluated from the power series of `erf`.
const SERIES_LIMIT: f64 = 2.5;

/// Moments of a one-sided truncated normal law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncMoments<F> {
    pub mean: F,
    pub variance: F,
    /// Log probability of the truncation region under the untruncated law.
    pub log_mass: F,
    /// Differential entropy of the truncated law.
    pub entropy: F,
}

fn check_finite<F: Real>(x: F, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be finite, got {x}")))
    }
}

/// Power series `erf(x) = 2x/√π · e^{-x²} Σ (2x²)^n / (2n+1)!!`, all terms positive.
fn erf_series<F: Real>(x: F) -> F {
    let x2 = x * x;
    let mut term = F::one();
    let mut sum = F::one();
    let mut n = 0usize;
    loop {
        n += 1;
        term = term * F::two() * x2 / F::count(2 * n + 1);
        sum += term;
        if term <= F::epsilon() * sum || n > 500 {
            break;
        }
    }
    F::two() * x / F::PI().sqrt() * (-x2).exp() * sum
}

/// Continued fraction `erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))`
/// evaluated with the modified Lentz method; returns the scaled value `erfcx(x)`.
fn erfcx_continued_fraction<F: Real>(x: F) -> F {
    let tiny = F::min_positive_value().sqrt();
    let mut f = x;
    let mut c = f;
    let mut d = F::zero();
    for k in 1..10_000usize {
        let a = F::count(k) * F::half();
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = F::one() / d;
        let delta = c * d;
        f = f * delta;
        if (delta - F::one()).abs() <= F::epsilon() {
            break;
        }
    }
    F::one() / (F::PI().sqrt() * f)
}

/// Scaled complementary error function `exp(x²)·erfc(x)` for `x ≥ 0`.
///
/// Always evaluated in double precision: near the series limit `1 − erf(x)`
/// cancels to a few correct digits in single precision.
pub(crate) fn erfcx_nonneg<F: Real>(x: F) -> F {
    debug_assert!(x >= F::zero());
    let x = x.as_f64();
    let v = if x < SERIES_LIMIT {
        (x * x).exp() * (1.0 - erf_series(x))
    } else {
        erfcx_continued_fraction(x)
    };
    F::lit(v)
}

/// Upper tail probability `Q(a) = 1 − Φ(a)`.
fn upper_tail_prob<F: Real>(a: F) -> F {
    if a >= F::zero() {
        F::half() * erfcx_nonneg(a / F::SQRT_2()) * (-(a * a) * F::half()).exp()
    } else {
        F::one() - upper_tail_prob(-a)
    }
}

/// `ln Q(a)` without underflow for large positive `a`.
fn log_upper_tail_prob<F: Real>(a: F) -> F {
    if a >= F::zero() {
        (F::half() * erfcx_nonneg(a / F::SQRT_2())).ln() - a * a * F::half()
    } else {
        (-upper_tail_prob(-a)).ln_1p()
    }
}

/// Hazard (inverse Mills ratio) `φ(a) / Q(a)`.
fn hazard<F: Real>(a: F) -> F {
    if a > F::lit(ASYMPTOTIC_TAIL) {
        let inv = a.recip();
        let inv2 = inv * inv;
        a + inv * (F::one() + inv2 * (-F::two() + inv2 * (F::lit(10.0) - F::lit(74.0) * inv2)))
    } else if a >= F::zero() {
        (F::two() / F::PI()).sqrt() / erfcx_nonneg(a / F::SQRT_2())
    } else {
        pdf_unchecked(a) / upper_tail_prob(a)
    }
}

/// Variance factor `1 + aλ − λ²` of the standard normal truncated to `(a, ∞)`.
fn variance_factor<F: Real>(a: F, lambda: F) -> F {
    if a > F::lit(ASYMPTOTIC_TAIL) {
        let inv2 = (a * a).recip();
        inv2 * (F::one() + inv2 * (-F::lit(6.0) + F::lit(50.0) * inv2))
    } else {
        let v = F::one() + a * lambda - lambda * lambda;
        // Rounding can only bite when v is already far below one.
        v.max(F::min_positive_value())
    }
}

fn pdf_unchecked<F: Real>(x: F) -> F {
    (-(x * x) * F::half()).exp() / (F::two() * F::PI()).sqrt()
}

/// Standard normal density.
pub fn std_normal_pdf<F: Real>(x: F) -> Result<F> {
    check_finite(x, "argument")?;
    Ok(pdf_unchecked(x))
}

/// Standard normal distribution function `Φ(x)`.
pub fn std_normal_cdf<F: Real>(x: F) -> Result<F> {
    check_finite(x, "argument")?;
    Ok(upper_tail_prob(-x))
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn std_normal_logcdf<F: Real>(x: F) -> Result<F> {
    check_finite(x, "argument")?;
    Ok(log_upper_tail_prob(-x))
}

/// Moments of the standard normal truncated to `(a, ∞)`.
fn standard_upper<F: Real>(a: F) -> (F, F, F, F) {
    let lambda = hazard(a);
    let v = variance_factor(a, lambda);
    let log_mass = log_upper_tail_prob(a);
    (lambda, v, log_mass, a * lambda)
}

/// Law of `N(mu, var)` conditioned on exceeding `lower`.
pub fn upper_tail_moments<F: Real>(mu: F, var: F, lower: F) -> Result<TruncMoments<F>> {
    check_finite(mu, "mean")?;
    check_finite(var, "variance")?;
    if var <= F::zero() {
        return Err(Error::Domain(format!("variance must be positive, got {var}")));
    }
    if lower.is_nan() || lower == F::infinity() {
        return Err(Error::Domain(format!("lower bound must be < +inf, got {lower}")));
    }
    let sd = var.sqrt();
    let entropy_base = F::half() * (F::two() * F::PI() * F::one().exp() * var).ln();
    if lower == F::neg_infinity() {
        return Ok(TruncMoments {
            mean: mu,
            variance: var,
            log_mass: F::zero(),
            entropy: entropy_base,
        });
    }
    let a = (lower - mu) / sd;
    let (lambda, v, log_mass, a_lambda) = standard_upper(a);
    Ok(TruncMoments {
        mean: mu + sd * lambda,
        variance: var * v,
        log_mass,
        entropy: entropy_base + log_mass + F::half() * a_lambda,
    })
}

/// Law of `N(mu, var)` conditioned on not exceeding `upper`.
pub fn lower_tail_moments<F: Real>(mu: F, var: F, upper: F) -> Result<TruncMoments<F>> {
    if upper.is_nan() || upper == F::neg_infinity() {
        return Err(Error::Domain(format!("upper bound must be > -inf, got {upper}")));
    }
    let reflected = upper_tail_moments(-mu, var, -upper)?;
    Ok(TruncMoments {
        mean: -reflected.mean,
        ..reflected
    })
}
