//! Small dense helpers: Cholesky factorization of symmetric positive-definite
//! matrices stored row-major, and log-sum-exp.

use crate::error::{Error, Result};
use crate::real::Real;

/// In-place lower Cholesky factor of an `n × n` row-major SPD matrix.
///
/// The strict upper triangle is zeroed on success.
pub fn cholesky<F: Real>(a: &mut [F], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > F::zero()) || !d.is_finite() {
            return Err(Error::numerical(
                "cholesky",
                format!("matrix is not positive definite at pivot {j}"),
            ));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = F::zero();
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` in place given the lower factor `L`.
pub fn cholesky_solve<F: Real>(l: &[F], n: usize, b: &mut [F]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// `ln |A|` from the lower factor of `A`.
pub fn cholesky_log_det<F: Real>(l: &[F], n: usize) -> F {
    (0..n).map(|i| l[i * n + i].ln()).sum::<F>() * F::two()
}

/// Computes `L z` for a lower factor, e.g. to color a standard normal draw.
pub fn lower_mul<F: Real>(l: &[F], n: usize, z: &[F], out: &mut [F]) {
    for i in 0..n {
        let mut s = F::zero();
        for k in 0..=i {
            s += l[i * n + k] * z[k];
        }
        out[i] = s;
    }
}

/// `ln Σ exp(v)`; `-∞` for an empty slice.
pub fn log_sum_exp<F: Real>(v: &[F]) -> F {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<F>().ln()
}
