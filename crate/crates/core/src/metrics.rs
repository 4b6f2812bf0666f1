//! Evaluation of a fit against a known truth: selection counts at both
//! levels, coefficient estimation error, Uno's concordance statistic and
//! resampling selection frequencies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{IndexMap, SurvivalDataset};
use crate::real::Real;
use crate::selection::SelectionSets;
use crate::simgen::GroundTruth;

/// Selection counts per stratum plus estimation and prediction accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub lm_tp: usize,
    pub lm_fp: usize,
    pub li_tp: usize,
    pub li_fp: usize,
    pub hm_tp: usize,
    pub hm_fp: usize,
    pub hi_tp: usize,
    pub hi_fp: usize,
    pub m_rsse: f64,
    pub i_rsse: f64,
    /// Missing when no test data were supplied.
    pub c_statistic: Option<f64>,
}

/// True and false positives for the four strata, in the order lower main,
/// lower interaction, higher main, higher interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Counts {
    pub lm_tp: usize,
    pub lm_fp: usize,
    pub li_tp: usize,
    pub li_fp: usize,
    pub hm_tp: usize,
    pub hm_fp: usize,
    pub hi_tp: usize,
    pub hi_fp: usize,
}

pub fn tp_fp<F: Real>(selected: &SelectionSets<F>, truth: &GroundTruth, map: &IndexMap) -> Result<Counts> {
    let pc = map.len();
    let nb = map.blocks().len();
    if truth.w0.len() != pc || selected.coefficients.len() != pc {
        return Err(Error::Structural(format!(
            "selection has {} coefficients and truth {}, layout expects {pc}",
            selected.coefficients.len(),
            truth.w0.len()
        )));
    }
    let lower_active = membership(
        pc,
        truth.active_lower_main.iter().chain(&truth.active_lower_inter),
        "truth coefficient",
    )?;
    let higher_active = membership(
        nb,
        truth.active_higher_main.iter().chain(&truth.active_higher_inter),
        "truth block",
    )?;

    let mut c = Counts::default();
    for &j in &selected.selected_lower {
        if j >= pc {
            return Err(Error::Structural(format!("selected coefficient {j} outside layout of {pc}")));
        }
        match (map.is_main(j), lower_active[j]) {
            (true, true) => c.lm_tp += 1,
            (true, false) => c.lm_fp += 1,
            (false, true) => c.li_tp += 1,
            (false, false) => c.li_fp += 1,
        }
    }
    for &b in &selected.selected_higher {
        if b >= nb {
            return Err(Error::Structural(format!("selected block {b} outside layout of {nb}")));
        }
        match (map.block(b).is_pathway(), higher_active[b]) {
            (true, true) => c.hm_tp += 1,
            (true, false) => c.hm_fp += 1,
            (false, true) => c.hi_tp += 1,
            (false, false) => c.hi_fp += 1,
        }
    }
    Ok(c)
}

fn membership<'a>(len: usize, ids: impl Iterator<Item = &'a usize>, what: &str) -> Result<Vec<bool>> {
    let mut out = vec![false; len];
    for &i in ids {
        if i >= len {
            return Err(Error::Structural(format!("{what} {i} outside layout of {len}")));
        }
        out[i] = true;
    }
    Ok(out)
}

/// Euclidean error norms over the main-effect and interaction coordinates.
pub fn rsse<F: Real>(estimated: &[F], w0: &[f64], map: &IndexMap) -> Result<(f64, f64)> {
    if estimated.len() != w0.len() || w0.len() != map.len() {
        return Err(Error::Structural(format!(
            "estimate of length {} against truth of length {} (layout {})",
            estimated.len(),
            w0.len(),
            map.len()
        )));
    }
    let (mut main, mut inter) = (0.0, 0.0);
    for (j, (&e, &t)) in estimated.iter().zip(w0).enumerate() {
        let d = e.as_f64() - t;
        if map.is_main(j) {
            main += d * d;
        } else {
            inter += d * d;
        }
    }
    Ok((main.sqrt(), inter.sqrt()))
}

/// Right-continuous step function with value 1 before the first jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction<F> {
    /// Jump locations, strictly increasing.
    pub times: Vec<F>,
    /// Value on `[times[k], times[k + 1])`.
    pub values: Vec<F>,
}

impl<F: Real> StepFunction<F> {
    pub fn eval(&self, t: F) -> F {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            F::one()
        } else {
            self.values[k - 1]
        }
    }
}

/// Kaplan–Meier estimate of the censoring survival function `G(t) = P(C > t)`.
///
/// Censorings (`delta = false`) are the events here. Subjects whose event is
/// observed at a censoring time leave the risk set first, so they do not
/// count as at risk of censoring at that time.
pub fn km_censoring_survival<F: Real>(times: &[F], delta: &[bool]) -> Result<StepFunction<F>> {
    if times.len() != delta.len() {
        return Err(Error::Structural(format!(
            "{} times against {} status flags",
            times.len(),
            delta.len()
        )));
    }
    if times.len() < 2 {
        return Err(Error::Domain("at least two subjects are required".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("times must be finite".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).expect("finite times"));

    let mut at_risk = times.len();
    let mut g = F::one();
    let mut out = StepFunction {
        times: Vec::new(),
        values: Vec::new(),
    };
    let mut k = 0;
    while k < order.len() {
        let t = times[order[k]];
        let mut events = 0;
        let mut censored = 0;
        while k < order.len() && times[order[k]] == t {
            if delta[order[k]] {
                events += 1;
            } else {
                censored += 1;
            }
            k += 1;
        }
        at_risk -= events;
        if censored > 0 {
            g *= F::one() - F::count(censored) / F::count(at_risk);
            out.times.push(t);
            out.values.push(g);
        }
        at_risk -= censored;
    }
    Ok(out)
}

/// Options for [`uno_c`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct UnoOptions<F> {
    /// Only events at or before this time enter as the earlier member of a
    /// pair; defaults to the largest observed test event time.
    pub horizon: Option<F>,
}

/// Uno's inverse-probability-of-censoring weighted concordance.
///
/// `risk` is one score per test subject where larger means earlier failure;
/// use `−x̃ m` for fitted log-time means. Each comparable pair `t_i < t_j`
/// with `δ_i = 1` carries weight `G(t_i)⁻²`, `G` estimated on the training
/// outcomes. Tied scores count one half. Events where `G` has already
/// dropped to zero carry no finite weight and are left out.
pub fn uno_c<F: Real>(
    train: (&[F], &[bool]),
    test: (&[F], &[bool]),
    risk: &[F],
    options: UnoOptions<F>,
) -> Result<F> {
    let (tt, td) = test;
    if tt.len() != td.len() || tt.len() != risk.len() {
        return Err(Error::Structural(format!(
            "test set has {} times, {} flags and {} scores",
            tt.len(),
            td.len(),
            risk.len()
        )));
    }
    if risk.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain("risk scores must be finite".into()));
    }
    let g = km_censoring_survival(train.0, train.1)?;
    let horizon = match options.horizon {
        Some(h) => h,
        None => tt
            .iter()
            .zip(td)
            .filter(|(_, &d)| d)
            .map(|(&t, _)| t)
            .fold(F::neg_infinity(), F::max),
    };

    let mut num = F::zero();
    let mut den = F::zero();
    for i in 0..tt.len() {
        if !td[i] || tt[i] > horizon {
            continue;
        }
        let gi = g.eval(tt[i]);
        if !(gi > F::zero()) {
            continue;
        }
        let w = (gi * gi).recip();
        for j in 0..tt.len() {
            if tt[i] < tt[j] {
                den += w;
                if risk[i] > risk[j] {
                    num += w;
                } else if risk[i] == risk[j] {
                    num += F::half() * w;
                }
            }
        }
    }
    if !(den > F::zero()) {
        return Err(Error::UndefinedMetric("no comparable pairs in the test set".into()));
    }
    Ok(num / den)
}

/// Risk scores `−x̃_i w` for every subject of `data`.
pub fn risk_scores<F: Real>(data: &SurvivalDataset<F>, w: &[F]) -> Vec<F> {
    data.linear_predictor(w).into_iter().map(|v| -v).collect()
}

/// Counts, estimation error and (given a test set) concordance of one fit.
pub fn evaluate<F: Real>(
    selected: &SelectionSets<F>,
    truth: &GroundTruth,
    train: &SurvivalDataset<F>,
    test: Option<&SurvivalDataset<F>>,
) -> Result<EvalReport> {
    let map = train.index();
    let c = tp_fp(selected, truth, map)?;
    let (m_rsse, i_rsse) = rsse(&selected.coefficients, &truth.w0, map)?;
    let c_statistic = match test {
        Some(test) => {
            if test.index().len() != map.len() {
                return Err(Error::Structural("test set layout differs from training layout".into()));
            }
            let risk = risk_scores(test, &selected.coefficients);
            let v = uno_c(
                (train.time(), train.delta()),
                (test.time(), test.delta()),
                &risk,
                UnoOptions::default(),
            )?;
            Some(v.as_f64())
        }
        None => None,
    };
    Ok(EvalReport {
        lm_tp: c.lm_tp,
        lm_fp: c.lm_fp,
        li_tp: c.li_tp,
        li_fp: c.li_fp,
        hm_tp: c.hm_tp,
        hm_fp: c.hm_fp,
        hi_tp: c.hi_tp,
        hi_fp: c.hi_fp,
        m_rsse,
        i_rsse,
        c_statistic,
    })
}

/// Selection frequencies over random training subsamples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OoiReport {
    /// Per coefficient: selections over successful resamples.
    pub frequency: Vec<f64>,
    /// Per block, same denominator.
    pub block_frequency: Vec<f64>,
    pub successes: usize,
    /// Resample number and error message of every failed fit.
    pub failures: Vec<(usize, String)>,
    /// For each successful resample, the mean frequency over its selected set
    /// (`None` when it selected nothing).
    pub run_mean_ooi: Vec<Option<f64>>,
    /// Average of the defined entries of `run_mean_ooi`.
    pub mean_ooi: Option<f64>,
}

/// Refits on `n_resamples` random subsets holding a `split` fraction of the
/// subjects and records how often each coefficient and block is selected.
///
/// Resample `r` shuffles with a ChaCha8 generator seeded from `seed` on
/// stream `r`, so results do not depend on scheduling.
pub fn ooi<F, R>(
    fit_runner: R,
    data: &SurvivalDataset<F>,
    n_resamples: usize,
    split: f64,
    seed: u64,
) -> Result<OoiReport>
where
    F: Real,
    R: Fn(&SurvivalDataset<F>) -> Result<SelectionSets<F>> + Sync,
{
    if n_resamples == 0 {
        return Err(Error::Config("at least one resample is required".into()));
    }
    if !(split > 0.0 && split <= 1.0) {
        return Err(Error::Config("split fraction must lie in (0, 1]".into()));
    }
    let n = data.n();
    let n_train = ((split * n as f64).floor() as usize).max(2).min(n);
    let map = data.index();
    let (pc, nb) = (map.len(), map.blocks().len());

    let runs: Vec<Result<SelectionSets<F>>> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            let mut rows = rows[..n_train].to_vec();
            rows.sort_unstable();
            let sub = data.subset(&rows)?;
            let sel = fit_runner(&sub)?;
            if sel.coefficients.len() != pc {
                return Err(Error::Structural("fit returned a selection of the wrong size".into()));
            }
            Ok(sel)
        })
        .collect();

    let mut counts = vec![0usize; pc];
    let mut block_counts = vec![0usize; nb];
    let mut failures = Vec::new();
    let mut successes = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(sel) => {
                for &j in &sel.selected_lower {
                    counts[j] += 1;
                }
                for &b in &sel.selected_higher {
                    block_counts[b] += 1;
                }
                successes.push(sel);
            }
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    let denom = successes.len().max(1) as f64;
    let frequency: Vec<f64> = counts.iter().map(|&c| c as f64 / denom).collect();
    let block_frequency = block_counts.iter().map(|&c| c as f64 / denom).collect();
    let run_mean_ooi: Vec<Option<f64>> = successes
        .iter()
        .map(|sel| {
            (!sel.selected_lower.is_empty()).then(|| {
                sel.selected_lower.iter().map(|&j| frequency[j]).sum::<f64>() / sel.selected_lower.len() as f64
            })
        })
        .collect();
    let defined: Vec<f64> = run_mean_ooi.iter().flatten().copied().collect();
    let mean_ooi = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(OoiReport {
        frequency,
        block_frequency,
        successes: successes.len(),
        failures,
        run_mean_ooi,
        mean_ooi,
    })
}
