//! Thresholded selections and BIC-based choice of the spike variances.
//!
//! The information criterion is `−2 ℓ̂ + df · ln n`. By default `ℓ̂` is the
//! censored log-normal log-likelihood at the thresholded means (observed
//! subjects contribute their Gaussian density, censored ones their survival
//! probability) and `df` is the number of selected coefficients. A variant
//! that replaces `ℓ̂` by the evidence lower bound is available.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::SurvivalDataset;
use crate::model::Hyperparams;
use crate::real::Real;
use crate::truncnorm::std_normal_logcdf;
use crate::vbem::{fit, FitConfig, FitResult};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Spike variances tried for both levels by default.
pub const DEFAULT_SPIKES: [f64; 3] = [1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSets<F> {
    /// Flat indices with `η_j` strictly above the threshold, ascending.
    pub selected_lower: Vec<usize>,
    /// Block ids with `r_b` strictly above the threshold, ascending.
    pub selected_higher: Vec<usize>,
    /// `m_j` on selected coefficients, zero elsewhere.
    pub coefficients: Vec<F>,
}

pub fn select<F: Real>(result: &FitResult<F>, threshold: F) -> SelectionSets<F> {
    let st = &result.state;
    let selected_lower: Vec<usize> = (0..st.eta.len()).filter(|&j| st.eta[j] > threshold).collect();
    let mut coefficients = vec![F::zero(); st.m.len()];
    for &j in &selected_lower {
        coefficients[j] = st.m[j];
    }
    SelectionSets {
        selected_lower,
        selected_higher: (0..st.r_hl.len()).filter(|&b| st.r_hl[b] > threshold).collect(),
        coefficients,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BicKind {
    #[default]
    PlugIn,
    Elbo,
}

/// Censored log-normal log-likelihood at coefficients `w` and precision `tau`.
pub fn censored_log_likelihood<F: Real>(data: &SurvivalDataset<F>, w: &[F], tau: F) -> Result<F> {
    let mu = data.linear_predictor(w);
    let sd = tau.recip().sqrt();
    let ln_norm = -F::half() * (F::TAU() / tau).ln();
    let mut total = F::zero();
    for i in 0..data.n() {
        let s = (data.time()[i] - mu[i]) / sd;
        total += if data.delta()[i] {
            ln_norm - F::half() * s * s
        } else {
            std_normal_logcdf(-s)?
        };
    }
    Ok(total)
}

pub fn bic<F: Real>(result: &FitResult<F>, data: &SurvivalDataset<F>) -> Result<F> {
    bic_with(result, data, BicKind::PlugIn)
}

pub fn bic_with<F: Real>(result: &FitResult<F>, data: &SurvivalDataset<F>, kind: BicKind) -> Result<F> {
    let sel = select(result, F::lit(DEFAULT_THRESHOLD));
    let fit_term = match kind {
        BicKind::PlugIn => censored_log_likelihood(data, &sel.coefficients, result.params.tau)?,
        BicKind::Elbo => result.elbo(),
    };
    let df = F::count(sel.selected_lower.len());
    let value = -F::two() * fit_term + df * F::count(data.n()).ln();
    if !value.is_finite() {
        return Err(Error::numerical("bic", format!("value {value}")));
    }
    Ok(value)
}

/// The default grid: every pair of [`DEFAULT_SPIKES`], as `(s2, r2)`.
pub fn default_grid<F: Real>() -> Vec<(F, F)> {
    DEFAULT_SPIKES
        .iter()
        .flat_map(|&s| DEFAULT_SPIKES.iter().map(move |&r| (F::lit(s), F::lit(r))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint<F> {
    pub s2: F,
    pub r2: F,
    pub bic: Option<F>,
    pub iterations: usize,
    pub converged: bool,
    pub n_selected: usize,
    /// Reason the fit at this point failed, if it did.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome<F> {
    pub best: FitResult<F>,
    pub best_index: usize,
    pub table: Vec<GridPoint<F>>,
}

/// Fits every `(s2, r2)` grid point, keeping slab variances from `base`, and
/// returns the fit with the smallest BIC. Ties go to the larger `s2`, then
/// the larger `r2`.
pub fn tune<F: Real>(
    data: &SurvivalDataset<F>,
    grid: &[(F, F)],
    base: &Hyperparams<F>,
    config: &FitConfig,
    kind: BicKind,
) -> Result<TuneOutcome<F>> {
    if grid.is_empty() {
        return Err(Error::Config("tuning grid is empty".into()));
    }
    let runs: Vec<Result<(FitResult<F>, F)>> = grid
        .par_iter()
        .map(|&(s2, r2)| {
            let hyper = Hyperparams { r2, s2, ..*base };
            hyper.validate()?;
            let result = fit(data, &hyper, config)?;
            let b = bic_with(&result, data, kind)?;
            Ok((result, b))
        })
        .collect();

    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, F)> = None;
    for (idx, (run, &(s2, r2))) in runs.iter().zip(grid).enumerate() {
        let point = match run {
            Ok((res, b)) => {
                let better = match best {
                    None => true,
                    Some((k, bk)) => *b < bk || (*b == bk && (s2, r2) > grid[k]),
                };
                if better {
                    best = Some((idx, *b));
                }
                GridPoint {
                    s2,
                    r2,
                    bic: Some(*b),
                    iterations: res.iterations,
                    converged: res.converged,
                    n_selected: select(res, F::lit(DEFAULT_THRESHOLD)).selected_lower.len(),
                    error: None,
                }
            }
            Err(e) => GridPoint {
                s2,
                r2,
                bic: None,
                iterations: 0,
                converged: false,
                n_selected: 0,
                error: Some(e.to_string()),
            },
        };
        table.push(point);
    }
    let (best_index, _) = best.ok_or_else(|| {
        let reasons: Vec<String> = table.iter().filter_map(|p| p.error.clone()).collect();
        Error::numerical("tune", format!("every grid point failed: {}", reasons.join("; ")))
    })?;
    let best = runs
        .into_iter()
        .nth(best_index)
        .expect("index within grid")
        .expect("best point fitted")
        .0;
    Ok(TuneOutcome {
        best,
        best_index,
        table,
    })
}
