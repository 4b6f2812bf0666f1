//! Marginal gene screen by a log-normal AFT score test.
//!
//! The null model is an intercept-only censored log-normal regression, fitted
//! by EM. For each gene the score for its coefficient at zero is compared with
//! the expected information, with the gene centered by information weights so
//! that the intercept is profiled out. The scale parameter is held at its null
//! estimate.

use pathvb::truncnorm::{std_normal_cdf, std_normal_logcdf, upper_tail_moments};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::GeneTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullFit {
    pub mu: f64,
    pub sigma: f64,
    pub iterations: usize,
}

/// Intercept and scale of a censored normal sample on the log-time scale.
pub fn fit_null(log_time: &[f64], delta: &[bool]) -> CliResult<NullFit> {
    let n = log_time.len() as f64;
    if delta.iter().all(|&d| !d) {
        return Err(CliError::Data("screening needs at least one observed event".into()));
    }
    let mut mu = log_time.iter().sum::<f64>() / n;
    let mut var = (log_time.iter().map(|t| (t - mu) * (t - mu)).sum::<f64>() / n).max(1e-12);
    for it in 1..=10_000 {
        let mut first = 0.0;
        let mut second = 0.0;
        for (&t, &d) in log_time.iter().zip(delta) {
            if d {
                first += t;
                second += t * t;
            } else {
                let m = upper_tail_moments(mu, var, t)?;
                first += m.mean;
                second += m.variance + m.mean * m.mean;
            }
        }
        let new_mu = first / n;
        let new_var = (second / n - new_mu * new_mu).max(1e-12);
        let done = (new_mu - mu).abs() <= 1e-12 * (1.0 + mu.abs()) && (new_var - var).abs() <= 1e-12 * var;
        mu = new_mu;
        var = new_var;
        if done {
            return Ok(NullFit { mu, sigma: var.sqrt(), iterations: it });
        }
    }
    Err(CliError::Numerical("null model for screening did not converge".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneScore {
    pub gene: String,
    pub statistic: f64,
    pub p_value: f64,
    /// 1 for the strongest association.
    pub rank: usize,
}

/// Score statistics for every gene column of `table`, in column order.
pub fn score_genes(table: &GeneTable, log_time: &[f64], delta: &[bool]) -> CliResult<(NullFit, Vec<GeneScore>)> {
    let null = fit_null(log_time, delta)?;
    let s2 = null.sigma * null.sigma;
    // Per-subject score and information with respect to the linear predictor.
    let mut g = Vec::with_capacity(log_time.len());
    let mut h = Vec::with_capacity(log_time.len());
    for (&t, &d) in log_time.iter().zip(delta) {
        let s = (t - null.mu) / null.sigma;
        if d {
            g.push(s / null.sigma);
            h.push(1.0 / s2);
        } else {
            let ln_phi = -0.5 * s * s - 0.5 * std::f64::consts::TAU.ln();
            let lambda = (ln_phi - std_normal_logcdf(-s)?).exp();
            g.push(lambda / null.sigma);
            h.push((lambda * (lambda - s)).max(0.0) / s2);
        }
    }
    let h_total: f64 = h.iter().sum();
    let n_genes = table.genes.len();
    let mut scores: Vec<GeneScore> = (0..n_genes)
        .map(|c| {
            let x = |i: usize| table.values[i * n_genes + c];
            let centre = (0..g.len()).map(|i| h[i] * x(i)).sum::<f64>() / h_total;
            let u: f64 = (0..g.len()).map(|i| g[i] * (x(i) - centre)).sum();
            let v: f64 = (0..g.len()).map(|i| h[i] * (x(i) - centre) * (x(i) - centre)).sum();
            let statistic = if v > 0.0 { u * u / v } else { 0.0 };
            let p_value = (2.0 * std_normal_cdf(-statistic.sqrt()).unwrap_or(0.0)).min(1.0);
            GeneScore { gene: table.genes[c].clone(), statistic, p_value, rank: 0 }
        })
        .collect();
    let mut order: Vec<usize> = (0..n_genes).collect();
    order.sort_by(|&a, &b| scores[b].statistic.total_cmp(&scores[a].statistic).then(a.cmp(&b)));
    for (r, &c) in order.iter().enumerate() {
        scores[c].rank = r + 1;
    }
    Ok((null, scores))
}
