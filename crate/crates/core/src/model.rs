//! Hyperparameters, model parameters and the exact joint density, including
//! a brute-force posterior over indicator configurations for tiny instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{IndexMap, SurvivalDataset};
use crate::linalg::{cholesky, cholesky_log_det, cholesky_solve, log_sum_exp};
use crate::real::Real;
use crate::truncnorm::std_normal_logcdf;

/// Largest coefficient count accepted by [`exact_posterior_small`].
pub const ENUMERATION_MAX_COEFFICIENTS: usize = 12;
/// Largest block count accepted by [`exact_posterior_small`].
pub const ENUMERATION_MAX_BLOCKS: usize = 4;

/// Slab and spike variances of both prior levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams<F> {
    /// Lower-level slab variance.
    pub r1: F,
    /// Lower-level spike variance.
    pub r2: F,
    /// Higher-level slab variance.
    pub s1: F,
    /// Higher-level spike variance.
    pub s2: F,
}

impl<F: Real> Hyperparams<F> {
    /// Unit slab variances with the given spike variances.
    pub fn with_spikes(r2: F, s2: F) -> Result<Self> {
        let h = Hyperparams {
            r1: F::one(),
            r2,
            s1: F::one(),
            s2,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |a: F, b: F| a.is_finite() && b > F::zero() && a > b;
        if !ok(self.r1, self.r2) {
            return Err(Error::Domain(format!(
                "need r1 > r2 > 0, got r1 = {}, r2 = {}",
                self.r1, self.r2
            )));
        }
        if !ok(self.s1, self.s2) {
            return Err(Error::Domain(format!(
                "need s1 > s2 > 0, got s1 = {}, s2 = {}",
                self.s1, self.s2
            )));
        }
        Ok(())
    }
}

impl<F: Real> Default for Hyperparams<F> {
    /// Unit slabs and spikes of `1e-3`, the centre of the default tuning grid.
    fn default() -> Self {
        Hyperparams {
            r1: F::one(),
            r2: F::lit(1e-3),
            s1: F::one(),
            s2: F::lit(1e-3),
        }
    }
}

/// Parameters estimated in the M-step: error precision and prior inclusion rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<F> {
    pub tau: F,
    pub zeta1: F,
    pub zeta2: F,
}

impl<F: Real> ModelParams<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > F::zero() && self.tau.is_finite()) {
            return Err(Error::Domain(format!("tau must be positive, got {}", self.tau)));
        }
        for (name, z) in [("zeta1", self.zeta1), ("zeta2", self.zeta2)] {
            if !(z > F::zero() && z < F::one()) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1), got {z}")));
            }
        }
        Ok(())
    }
}

/// One joint configuration of all latent quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig<F> {
    pub w: Vec<F>,
    pub beta: Vec<bool>,
    pub alpha: Vec<bool>,
    /// Latent log-times of the censored subjects, in ascending subject order.
    pub z: Vec<F>,
}

#[inline]
pub(crate) fn ln_gauss0<F: Real>(x: F, var: F) -> F {
    -F::half() * (F::TAU() * var).ln() - x * x / (F::two() * var)
}

fn check_w<F: Real>(data: &SurvivalDataset<F>, w: &[F]) -> Result<()> {
    if w.len() != data.index().len() {
        return Err(Error::Structural(format!(
            "coefficient vector has length {}, expected {}",
            w.len(),
            data.index().len()
        )));
    }
    Ok(())
}

/// Completed response: `y*` for observed subjects, `z` for censored ones.
fn completed_response<F: Real>(data: &SurvivalDataset<F>, z: &[F]) -> Result<Vec<F>> {
    let censored = data.censored();
    if z.len() != censored.len() {
        return Err(Error::Structural(format!(
            "{} latent times for {} censored subjects",
            z.len(),
            censored.len()
        )));
    }
    let mut y = data.time().to_vec();
    for (&i, &zi) in censored.iter().zip(z) {
        if !(zi > data.time()[i]) {
            return Err(Error::Domain(format!(
                "latent time {zi} of subject {i} does not exceed its bound {}",
                data.time()[i]
            )));
        }
        y[i] = zi;
    }
    Ok(y)
}

/// Log joint density of `(y*, z, δ)` given `w`, after the censoring
/// probabilities cancel: `Σ_i ln N(ỹ_i | x̃_i w, 1/τ)`.
pub fn log_likelihood<F: Real>(
    data: &SurvivalDataset<F>,
    w: &[F],
    z: &[F],
    params: &ModelParams<F>,
) -> Result<F> {
    check_w(data, w)?;
    let y = completed_response(data, z)?;
    let mu = data.linear_predictor(w);
    let var = params.tau.recip();
    Ok(y.iter().zip(&mu).map(|(&yi, &m)| ln_gauss0(yi - m, var)).sum())
}

/// The same joint density assembled factor by factor: event indicators,
/// truncated observed times and truncated latent times.
///
/// `bounds[i]` is the censoring bound of every subject; for observed subjects
/// it must be at least `y*_i`, for censored ones it must equal the stored time.
pub fn log_likelihood_factored<F: Real>(
    data: &SurvivalDataset<F>,
    w: &[F],
    z: &[F],
    params: &ModelParams<F>,
    bounds: &[F],
) -> Result<F> {
    check_w(data, w)?;
    if bounds.len() != data.n() {
        return Err(Error::Structural("one censoring bound per subject required".into()));
    }
    let y = completed_response(data, z)?;
    let mu = data.linear_predictor(w);
    let sd = params.tau.recip().sqrt();
    let mut total = F::zero();
    for i in 0..data.n() {
        let c = bounds[i];
        let s = (c - mu[i]) / sd;
        let dens = ln_gauss0(y[i] - mu[i], sd * sd);
        if data.delta()[i] {
            if y[i] > c {
                return Err(Error::Domain(format!(
                    "observed time of subject {i} exceeds its bound"
                )));
            }
            let ln_f = std_normal_logcdf(s)?;
            total += ln_f + (dens - ln_f);
        } else {
            if c != data.time()[i] {
                return Err(Error::Domain(format!(
                    "bound of censored subject {i} differs from its recorded time"
                )));
            }
            let ln_1mf = std_normal_logcdf(-s)?;
            total += ln_1mf + (dens - ln_1mf);
        }
    }
    Ok(total)
}

/// Log prior of a configuration: both spike-and-slab levels, the interaction
/// prior tied to the parent indicators, and the Bernoulli indicator priors.
pub fn log_prior<F: Real>(
    config: &LatentConfig<F>,
    hyper: &Hyperparams<F>,
    params: &ModelParams<F>,
    map: &IndexMap,
) -> Result<F> {
    let p_all = map.len();
    if config.w.len() != p_all || config.beta.len() != p_all {
        return Err(Error::Structural("w and beta must have one entry per coefficient".into()));
    }
    if config.alpha.len() != map.blocks().len() {
        return Err(Error::Structural("alpha must have one entry per block".into()));
    }
    let (ln_z1, ln_1mz1) = (params.zeta1.ln(), (-params.zeta1).ln_1p());
    let (ln_z2, ln_1mz2) = (params.zeta2.ln(), (-params.zeta2).ln_1p());
    let mut total = F::zero();
    for (j, (&w, &b)) in config.w.iter().zip(&config.beta).enumerate() {
        let (v, lz) = if b { (hyper.r1, ln_z1) } else { (hyper.r2, ln_1mz1) };
        total += ln_gauss0(w, v) + lz;
        if !map.is_main(j) {
            let (u, t) = map.columns(j);
            let on = config.beta[u] && config.beta[t];
            total += ln_gauss0(w, if on { hyper.r1 } else { hyper.r2 });
        }
    }
    for (block, &a) in map.blocks().iter().zip(&config.alpha) {
        let (v, lz) = if a { (hyper.s1, ln_z2) } else { (hyper.s2, ln_1mz2) };
        total += lz;
        for j in block.coefficients() {
            total += ln_gauss0(config.w[j], v);
        }
    }
    Ok(total)
}

/// Exact posterior summaries from enumerating every indicator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPosterior<F> {
    /// `E(β_j | data)`.
    pub eta: Vec<F>,
    /// `E(α_b | data)`.
    pub r_hl: Vec<F>,
    /// `E(w_j | data)`.
    pub mean: Vec<F>,
    /// `ln p(y* | X; Φ)` with `w`, `β`, `α` integrated out.
    pub log_evidence: F,
}

/// Exact marginal inclusion probabilities on a tiny uncensored instance.
///
/// Given every indicator the prior on `w` is a product of Gaussians, so the
/// marginal likelihood of each configuration is a closed-form Gaussian integral.
pub fn exact_posterior_small<F: Real>(
    data: &SurvivalDataset<F>,
    hyper: &Hyperparams<F>,
    params: &ModelParams<F>,
    map: &IndexMap,
) -> Result<ExactPosterior<F>> {
    hyper.validate()?;
    params.validate()?;
    let pc = map.len();
    let nb = map.blocks().len();
    if pc > ENUMERATION_MAX_COEFFICIENTS || nb > ENUMERATION_MAX_BLOCKS {
        return Err(Error::Capacity(format!(
            "{pc} coefficients and {nb} blocks exceed the enumeration limit of \
             {ENUMERATION_MAX_COEFFICIENTS} and {ENUMERATION_MAX_BLOCKS}"
        )));
    }
    if data.delta().iter().any(|&d| !d) {
        return Err(Error::Unsupported(
            "exact enumeration requires fully observed times".into(),
        ));
    }
    let n = data.n();
    let tau = params.tau;
    let cols: Vec<Vec<F>> = (0..pc).map(|j| data.interaction_column(j)).collect::<Result<_>>()?;
    let y = data.time();
    let mut gram = vec![F::zero(); pc * pc];
    for a in 0..pc {
        for b in a..pc {
            let g: F = cols[a].iter().zip(&cols[b]).map(|(&u, &v)| u * v).sum();
            gram[a * pc + b] = g;
            gram[b * pc + a] = g;
        }
    }
    let xty: Vec<F> = cols.iter().map(|c| c.iter().zip(y).map(|(&u, &v)| u * v).sum()).collect();
    let yty: F = y.iter().map(|&v| v * v).sum();
    let block_of: Vec<usize> = (0..pc).map(|j| map.block_of(j)).collect();
    let pairs: Vec<(usize, usize)> = (0..pc).map(|j| map.columns(j)).collect();

    let ln2pi = F::TAU().ln();
    let base = F::half() * F::count(n) * (tau / F::TAU()).ln() - F::half() * tau * yty
        + F::half() * F::count(pc) * ln2pi;
    let lnv = |v: F| -F::half() * (F::TAU() * v).ln();
    let (ln_z1, ln_1mz1) = (params.zeta1.ln(), (-params.zeta1).ln_1p());
    let (ln_z2, ln_1mz2) = (params.zeta2.ln(), (-params.zeta2).ln_1p());

    let n_cfg = 1usize << (pc + nb);
    let evaluated: Vec<(F, Vec<F>)> = (0..n_cfg)
        .into_par_iter()
        .map(|cfg| {
            let beta = |j: usize| cfg >> j & 1 == 1;
            let alpha = |b: usize| cfg >> (pc + b) & 1 == 1;
            let mut log_w = F::zero();
            let mut a = gram.iter().map(|&g| tau * g).collect::<Vec<F>>();
            for j in 0..pc {
                let mut prec = F::zero();
                let mut add = |v: F| {
                    prec += v.recip();
                    log_w += lnv(v);
                };
                add(if beta(j) { hyper.r1 } else { hyper.r2 });
                add(if alpha(block_of[j]) { hyper.s1 } else { hyper.s2 });
                let (u, v) = pairs[j];
                if u != v {
                    add(if beta(u) && beta(v) { hyper.r1 } else { hyper.r2 });
                }
                a[j * pc + j] += prec;
                log_w += if beta(j) { ln_z1 } else { ln_1mz1 };
            }
            for b in 0..nb {
                log_w += if alpha(b) { ln_z2 } else { ln_1mz2 };
            }
            cholesky(&mut a, pc).expect("prior precision keeps the system positive definite");
            let mut mean: Vec<F> = xty.iter().map(|&v| tau * v).collect();
            cholesky_solve(&a, pc, &mut mean);
            let quad: F = mean.iter().zip(&xty).map(|(&m, &v)| m * tau * v).sum();
            let log_ev = log_w + base + F::half() * quad - F::half() * cholesky_log_det(&a, pc);
            (log_ev, mean)
        })
        .collect();

    let logs: Vec<F> = evaluated.iter().map(|(l, _)| *l).collect();
    let log_evidence = log_sum_exp(&logs);
    if !log_evidence.is_finite() {
        return Err(Error::numerical("exact_posterior_small", "log evidence is not finite"));
    }
    let mut eta = vec![F::zero(); pc];
    let mut r_hl = vec![F::zero(); nb];
    let mut mean = vec![F::zero(); pc];
    for (cfg, (l, m)) in evaluated.iter().enumerate() {
        let wgt = (*l - log_evidence).exp();
        for j in 0..pc {
            if cfg >> j & 1 == 1 {
                eta[j] += wgt;
            }
            mean[j] += wgt * m[j];
        }
        for (b, r) in r_hl.iter_mut().enumerate() {
            if cfg >> (pc + b) & 1 == 1 {
                *r += wgt;
            }
        }
    }
    for p in eta.iter_mut().chain(r_hl.iter_mut()) {
        *p = p.min(F::one());
    }
    Ok(ExactPosterior {
        eta,
        r_hl,
        mean,
        log_evidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::PathwayLayout;
    use std::sync::Arc;

    fn one_pathway(n: usize, p: usize, x: Vec<f64>, y: Vec<f64>, d: Vec<bool>) -> SurvivalDataset<f64> {
        let lay = PathwayLayout::new(vec![(0..p).collect()], p).unwrap();
        assert_eq!(x.len(), n * p);
        SurvivalDataset::from_columns(Arc::new(lay), x, y, d).unwrap()
    }

    #[test]
    fn hyperparams_require_ordering() {
        assert!(Hyperparams::with_spikes(1e-3, 1e-3).is_ok());
        assert!(Hyperparams::with_spikes(1.0, 1e-3).is_err());
        assert!(Hyperparams::with_spikes(1e-3, 0.0).is_err());
        assert!(Hyperparams::<f64>::default().validate().is_ok());
    }

    #[test]
    fn uncensored_zero_coefficients() {
        let y = vec![0.3, -1.2, 2.0];
        let data = one_pathway(3, 1, vec![1.0, 2.0, 3.0], y.clone(), vec![true; 3]);
        let params = ModelParams { tau: 1.0, zeta1: 0.5, zeta2: 0.5 };
        let ll = log_likelihood(&data, &[0.0], &[], &params).unwrap();
        let direct: f64 = y.iter().map(|v| -0.5 * (2.0 * std::f64::consts::PI).ln() - v * v / 2.0).sum();
        assert!((ll - direct).abs() < 1e-12);
    }

    #[test]
    fn censored_contribution_ignores_bound() {
        let params = ModelParams { tau: 2.0, zeta1: 0.5, zeta2: 0.5 };
        let a = one_pathway(1, 1, vec![1.0], vec![0.1], vec![false]);
        let b = one_pathway(1, 1, vec![1.0], vec![-3.0], vec![false]);
        let la = log_likelihood(&a, &[0.4], &[0.9], &params).unwrap();
        let lb = log_likelihood(&b, &[0.4], &[0.9], &params).unwrap();
        assert_eq!(la, lb);
        assert!(log_likelihood(&a, &[0.4], &[0.05], &params).is_err());
    }

    #[test]
    fn hierarchy_violation_is_heavily_penalized() {
        let lay = PathwayLayout::new(vec![vec![0, 1]], 2).unwrap();
        let map = IndexMap::build(&lay).unwrap();
        let hyper = Hyperparams { r1: 1.0, r2: 1e-6, s1: 1.0, s2: 1e-6 };
        let params = ModelParams { tau: 1.0, zeta1: 0.5, zeta2: 0.5 };
        let mut cfg = LatentConfig {
            w: vec![0.8, 0.0, 0.0],
            beta: vec![true, false, false],
            alpha: vec![true],
            z: vec![],
        };
        let good = log_prior(&cfg, &hyper, &params, &map).unwrap();
        cfg.alpha[0] = false;
        let bad = log_prior(&cfg, &hyper, &params, &map).unwrap();
        assert!(good - bad >= 1e5);
    }

    #[test]
    fn capacity_and_censoring_are_rejected() {
        let params = ModelParams { tau: 1.0, zeta1: 0.5, zeta2: 0.5 };
        let hyper = Hyperparams::default();
        let big = one_pathway(2, 5, vec![0.5; 10], vec![0.0; 2], vec![true; 2]);
        assert!(matches!(
            exact_posterior_small(&big, &hyper, &params, big.index()),
            Err(Error::Capacity(_))
        ));
        let cens = one_pathway(2, 1, vec![0.5, 1.0], vec![0.0; 2], vec![true, false]);
        assert!(matches!(
            exact_posterior_small(&cens, &hyper, &params, cens.index()),
            Err(Error::Unsupported(_))
        ));
    }
}
