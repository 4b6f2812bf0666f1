//! Simulated pathway data with known active effects.
//!
//! Each distinct gene has a home pathway (the first pathway it was placed
//! in). Correlations are defined between genes through their home pathways,
//! so a gene shared by several pathways is one random variable copied into
//! every pathway that lists it. Under the autoregressive structure the gene
//! covariance is block diagonal by home pathway; under the confounding
//! structures every gene homed in an active pathway is additionally
//! correlated with every gene homed in one confounding pathway.
//!
//! Active effects sit in pathways `0..4`: five main effects per pathway on
//! positions not shared with other pathways, four within-pathway interactions
//! per active pathway, and four cross interactions in each of the pathway
//! pairs `(0, 1)` and `(2, 3)`.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{CoefficientIndex, IndexMap, PathwayLayout, SurvivalDataset};
use crate::linalg::{cholesky, lower_mul};

pub const ACTIVE_PATHWAYS: usize = 4;
pub const MAINS_PER_PATHWAY: usize = 5;
pub const WITHIN_INTERACTIONS: usize = 4;
pub const CROSS_INTERACTIONS: usize = 4;
pub const ACTIVE_PAIRS: [(usize, usize); 2] = [(0, 1), (2, 3)];
/// Pathway whose genes correlate with the active ones under `Cr1`/`Cr2`.
pub const CONFOUNDER: usize = ACTIVE_PATHWAYS;
pub const CONFOUNDING_CORRELATION: f64 = 0.1;
pub const EFFECT_RANGE: (f64, f64) = (0.8, 1.2);
pub const GAMMA_SHAPE: f64 = 2.0;
pub const CALIBRATION_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Correlation {
    /// Within-pathway `ρ^|j−j'|`, independent across pathways.
    Ar { rho: f64 },
    /// Within-pathway 0.2 plus confounding cross correlation.
    Cr1,
    /// Within-pathway `0.6^|j−j'|` plus confounding cross correlation.
    Cr2,
}

impl Correlation {
    pub fn label(&self) -> String {
        match self {
            Correlation::Ar { rho } => format!("AR({rho})"),
            Correlation::Cr1 => "CR1".into(),
            Correlation::Cr2 => "CR2".into(),
        }
    }

    fn within(&self, gap: usize) -> f64 {
        match *self {
            Correlation::Ar { rho } => rho.powi(gap as i32),
            Correlation::Cr1 => 0.2,
            Correlation::Cr2 => 0.6f64.powi(gap as i32),
        }
    }

    fn confounded(&self) -> bool {
        !matches!(self, Correlation::Ar { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectPattern {
    /// Every active effect positive.
    S1,
    /// Pathway 0 (mains and within interactions) and pair `(0, 1)` negative.
    S2,
    /// Independent fair-coin sign per coefficient.
    S3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    /// Size of the independent test sample drawn alongside each replicate.
    pub n_test: usize,
    pub n_genes: usize,
    pub k: usize,
    /// Inclusive pathway size bounds.
    pub size_range: (usize, usize),
    /// Number of genes listed in more than one pathway.
    pub overlap_genes: usize,
    /// Inclusive bounds on how many pathways an overlapping gene joins.
    pub multiplicity: (usize, usize),
    pub correlation: Correlation,
    pub effect_pattern: EffectPattern,
    /// Target censoring fraction; `None` leaves every subject observed.
    pub censor_rate: Option<f64>,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Full-size scenario: 400 subjects, 1000 genes of which 22 join 2 to 6
    /// pathways, pathway sizes 10–13 for `K = 100` and 20–23 otherwise.
    pub fn standard(
        k: usize,
        correlation: Correlation,
        effect_pattern: EffectPattern,
        censor_rate: Option<f64>,
        seed: u64,
    ) -> Self {
        let size_range = if k >= 100 { (10, 13) } else { (20, 23) };
        ScenarioSpec {
            n: 400,
            n_test: 100,
            n_genes: 1000,
            k,
            size_range,
            overlap_genes: 22,
            multiplicity: (2, 6),
            correlation,
            effect_pattern,
            censor_rate,
            seed,
        }
    }

    /// Reduced scenario for quick runs, with the same effect placement.
    pub fn small(n: usize, k: usize, size: usize, correlation: Correlation, pattern: EffectPattern, censor_rate: Option<f64>, seed: u64) -> Self {
        let overlap = (k / 4).max(1);
        ScenarioSpec {
            n,
            n_test: 100,
            n_genes: k * size - overlap,
            k,
            size_range: (size, size + 1),
            overlap_genes: overlap,
            multiplicity: (2, 2),
            correlation,
            effect_pattern: pattern,
            censor_rate,
            seed,
        }
    }

    pub fn label(&self) -> String {
        let rate = self.censor_rate.map_or("none".to_string(), |r| format!("{:.0}%", r * 100.0));
        format!(
            "{}/K={}/{:?}/censor={}",
            self.correlation.label(),
            self.k,
            self.effect_pattern,
            rate
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_range;
        let (mlo, mhi) = self.multiplicity;
        if self.n < 2 || self.k == 0 || lo == 0 || lo > hi || mlo < 2 || mlo > mhi {
            return Err(Error::Config(format!("invalid scenario {}", self.label())));
        }
        if self.overlap_genes > self.n_genes || mhi > self.k {
            return Err(Error::Config("overlap exceeds genes or pathways".into()));
        }
        if let Some(r) = self.censor_rate {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("censoring rate {r} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// The 42 full-size scenarios: four correlation structures, two pathway
/// counts, three effect patterns and two censoring rates, without the
/// confounded `0.6`-autoregressive structure at `K = 50`, whose covariance is
/// not positive definite.
pub fn scenario_grid(seed: u64) -> Vec<ScenarioSpec> {
    let corrs = [Correlation::Ar { rho: 0.6 }, Correlation::Ar { rho: 0.4 }, Correlation::Cr1, Correlation::Cr2];
    let mut out = Vec::new();
    for corr in corrs {
        for k in [100, 50] {
            if corr == Correlation::Cr2 && k == 50 {
                continue;
            }
            for pattern in [EffectPattern::S1, EffectPattern::S2, EffectPattern::S3] {
                for rate in [0.2, 0.4] {
                    out.push(ScenarioSpec::standard(k, corr, pattern, Some(rate), seed));
                }
            }
        }
    }
    out
}

/// Layout plus each gene's home pathway and position there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLayout {
    pub layout: PathwayLayout,
    pub home: Vec<usize>,
    pub home_position: Vec<usize>,
}

fn stream(seed: u64, replicate: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ replicate.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(purpose);
    rng
}

pub fn gen_layout<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Result<SimLayout> {
    spec.validate()?;
    let (lo, hi) = spec.size_range;
    let (mlo, mhi) = spec.multiplicity;
    let shared: Vec<usize> = index::sample(rng, spec.n_genes, spec.overlap_genes).into_vec();
    let mult: Vec<usize> = shared.iter().map(|_| rng.random_range(mlo..=mhi)).collect();
    let total = spec.n_genes + mult.iter().map(|m| m - 1).sum::<usize>();
    if total < spec.k * lo || total > spec.k * hi {
        return Err(Error::Config(format!(
            "{total} pathway slots cannot be split into {} pathways of size {lo}..={hi}",
            spec.k
        )));
    }
    let mut sizes = vec![lo; spec.k];
    for _ in 0..total - spec.k * lo {
        let open: Vec<usize> = (0..spec.k).filter(|&k| sizes[k] < hi).collect();
        sizes[open[rng.random_range(0..open.len())]] += 1;
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); spec.k];
    for (&g, &m) in shared.iter().zip(&mult) {
        let open: Vec<usize> = (0..spec.k).filter(|&k| members[k].len() < sizes[k]).collect();
        if open.len() < m {
            return Err(Error::Config("not enough pathways to place a shared gene".into()));
        }
        for pick in index::sample(rng, open.len(), m) {
            members[open[pick]].push(g);
        }
    }
    let shared_set: BTreeSet<usize> = shared.iter().copied().collect();
    let mut singles: Vec<usize> = (0..spec.n_genes).filter(|g| !shared_set.contains(g)).collect();
    singles.shuffle(rng);
    let mut it = singles.into_iter();
    for k in 0..spec.k {
        while members[k].len() < sizes[k] {
            members[k].push(it.next().expect("slot count matches gene count"));
        }
        members[k].shuffle(rng);
    }

    let mut home = vec![usize::MAX; spec.n_genes];
    let mut home_position = vec![0; spec.n_genes];
    for (k, genes) in members.iter().enumerate() {
        for (pos, &g) in genes.iter().enumerate() {
            if home[g] == usize::MAX {
                home[g] = k;
                home_position[g] = pos;
            }
        }
    }
    Ok(SimLayout {
        layout: PathwayLayout::new(members, spec.n_genes)?,
        home,
        home_position,
    })
}

/// Target correlation between two distinct genes.
pub fn gene_correlation(corr: Correlation, sim: &SimLayout, g: usize, h: usize) -> f64 {
    if g == h {
        return 1.0;
    }
    let (kg, kh) = (sim.home[g], sim.home[h]);
    if kg == kh {
        return corr.within(sim.home_position[g].abs_diff(sim.home_position[h]));
    }
    if corr.confounded() {
        let active = |k: usize| k < ACTIVE_PATHWAYS;
        if (active(kg) && kh == CONFOUNDER) || (active(kh) && kg == CONFOUNDER) {
            return CONFOUNDING_CORRELATION;
        }
    }
    0.0
}

/// Groups of genes that may be correlated with each other, ascending within each group.
fn correlation_components(corr: Correlation, sim: &SimLayout, k: usize) -> Vec<Vec<usize>> {
    let mut group_of: Vec<usize> = (0..k).collect();
    if corr.confounded() && CONFOUNDER < k {
        for a in 0..ACTIVE_PATHWAYS.min(k) {
            group_of[a] = CONFOUNDER;
        }
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (g, &home) in sim.home.iter().enumerate() {
        groups[group_of[home]].push(g);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

/// Cholesky factors of every correlated gene group; fails if a group's
/// correlation matrix is not positive definite.
pub fn covariance_factors(corr: Correlation, sim: &SimLayout) -> Result<Vec<(Vec<usize>, Vec<f64>)>> {
    let k = sim.layout.n_pathways();
    correlation_components(corr, sim, k)
        .into_iter()
        .map(|genes| {
            let d = genes.len();
            let mut a = vec![0.0; d * d];
            for (r, &g) in genes.iter().enumerate() {
                for (c, &h) in genes.iter().enumerate() {
                    a[r * d + c] = gene_correlation(corr, sim, g, h);
                }
            }
            cholesky(&mut a, d).map_err(|_| {
                Error::Config(format!(
                    "{} gene covariance is not positive definite",
                    corr.label()
                ))
            })?;
            Ok((genes, a))
        })
        .collect()
}

/// Draws `n` gene-expression rows (row-major `n × n_genes`).
pub fn gen_covariates<R: Rng>(corr: Correlation, sim: &SimLayout, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let factors = covariance_factors(corr, sim)?;
    let g = sim.layout.n_genes();
    let mut x = vec![0.0; n * g];
    let mut z = Vec::new();
    let mut out = Vec::new();
    for i in 0..n {
        for (genes, l) in &factors {
            let d = genes.len();
            z.clear();
            z.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            out.resize(d, 0.0);
            lower_mul(l, d, &z, &mut out);
            for (&gene, &v) in genes.iter().zip(&out) {
                x[i * g + gene] = v;
            }
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub w0: Vec<f64>,
    pub active_lower_main: Vec<usize>,
    pub active_lower_inter: Vec<usize>,
    /// Block ids of active pathways.
    pub active_higher_main: Vec<usize>,
    /// Block ids of active pathway pairs.
    pub active_higher_inter: Vec<usize>,
}

pub fn gen_effects<R: Rng>(pattern: EffectPattern, sim: &SimLayout, map: &IndexMap, rng: &mut R) -> Result<GroundTruth> {
    let layout = &sim.layout;
    if layout.n_pathways() < ACTIVE_PATHWAYS.max(CONFOUNDER + 1) {
        return Err(Error::Config(format!(
            "need at least {} pathways to place active effects",
            CONFOUNDER + 1
        )));
    }
    let mut active_pos: Vec<Vec<usize>> = Vec::new();
    for k in 0..ACTIVE_PATHWAYS {
        let own: Vec<usize> = (0..layout.pathway(k).len())
            .filter(|&j| {
                let g = layout.pathway(k)[j];
                sim.home[g] == k && (0..layout.n_pathways()).filter(|&q| layout.pathway(q).contains(&g)).count() == 1
            })
            .collect();
        if own.len() < MAINS_PER_PATHWAY {
            return Err(Error::Config(format!("pathway {k} has too few unshared genes")));
        }
        let mut picked: Vec<usize> = index::sample(rng, own.len(), MAINS_PER_PATHWAY)
            .into_iter()
            .map(|i| own[i])
            .collect();
        picked.sort_unstable();
        active_pos.push(picked);
    }

    let mut mains = Vec::new();
    for (k, pos) in active_pos.iter().enumerate() {
        for &j in pos {
            mains.push(map.flatten(CoefficientIndex::Main { k, j })?);
        }
    }
    let mut inters = Vec::new();
    for (k, pos) in active_pos.iter().enumerate() {
        let pairs: Vec<(usize, usize)> = (0..pos.len())
            .flat_map(|a| (a + 1..pos.len()).map(move |b| (a, b)))
            .collect();
        for pick in index::sample(rng, pairs.len(), WITHIN_INTERACTIONS) {
            let (a, b) = pairs[pick];
            inters.push(map.flatten(CoefficientIndex::Interaction { k, k2: k, j: pos[a], l: pos[b] })?);
        }
    }
    for &(k, k2) in &ACTIVE_PAIRS {
        let (pa, pb) = (&active_pos[k], &active_pos[k2]);
        for pick in index::sample(rng, pa.len() * pb.len(), CROSS_INTERACTIONS) {
            let (j, l) = (pa[pick / pb.len()], pb[pick % pb.len()]);
            inters.push(map.flatten(CoefficientIndex::Interaction { k, k2, j, l })?);
        }
    }
    mains.sort_unstable();
    inters.sort_unstable();

    let magnitude = Uniform::new_inclusive(EFFECT_RANGE.0, EFFECT_RANGE.1).map_err(|e| Error::Config(e.to_string()))?;
    let mut w0 = vec![0.0; map.len()];
    for &j in mains.iter().chain(&inters) {
        let v: f64 = magnitude.sample(rng);
        let negative = match pattern {
            EffectPattern::S1 => false,
            EffectPattern::S2 => {
                let b = map.block(map.block_of(j));
                (b.k, b.k2) == (0, 0) || (b.k, b.k2) == ACTIVE_PAIRS[0]
            }
            EffectPattern::S3 => rng.random_bool(0.5),
        };
        w0[j] = if negative { -v } else { v };
    }
    let mut active_higher_main: Vec<usize> = (0..ACTIVE_PATHWAYS).map(|k| map.block_id(k, k)).collect::<Result<_>>()?;
    active_higher_main.sort_unstable();
    let mut active_higher_inter: Vec<usize> = ACTIVE_PAIRS.iter().map(|&(a, b)| map.block_id(a, b)).collect::<Result<_>>()?;
    active_higher_inter.sort_unstable();
    Ok(GroundTruth {
        w0,
        active_lower_main: mains,
        active_lower_inter: inters,
        active_higher_main,
        active_higher_inter,
    })
}

/// Gamma law of the censoring times on the original time scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringLaw {
    pub shape: f64,
    pub scale: f64,
}

fn std_gamma_draws<R: Rng>(rng: &mut R, count: usize) -> Vec<f64> {
    let g = Gamma::new(GAMMA_SHAPE, 1.0).expect("valid gamma");
    (0..count).map(|_| g.sample(rng)).collect()
}

/// Chooses the Gamma scale (shape fixed at 2) so that the probability of a
/// censored outcome matches `target`, by bisection on `ln scale` over a fixed
/// Monte-Carlo sample of subjects, errors and standard Gamma draws.
pub fn calibrate_censoring<R: Rng>(linear_predictor: &[f64], target: f64, rng: &mut R) -> Result<CensoringLaw> {
    if !(target > 0.0 && target < 1.0) || linear_predictor.is_empty() {
        return Err(Error::Config(format!("cannot calibrate to censoring rate {target}")));
    }
    let y: Vec<f64> = (0..CALIBRATION_DRAWS)
        .map(|_| {
            let i = rng.random_range(0..linear_predictor.len());
            linear_predictor[i] + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let log_g: Vec<f64> = std_gamma_draws(rng, CALIBRATION_DRAWS).iter().map(|g| g.ln()).collect();
    let rate = |log_scale: f64| {
        y.iter().zip(&log_g).filter(|(&yi, &lg)| yi > log_scale + lg).count() as f64 / CALIBRATION_DRAWS as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    if !(rate(lo) >= target && rate(hi) <= target) {
        return Err(Error::Config(format!("censoring rate {target} not bracketed")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(CensoringLaw {
        shape: GAMMA_SHAPE,
        scale: (0.5 * (lo + hi)).exp(),
    })
}

/// Log-times before censoring and the censored observation of each subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub y: Vec<f64>,
    /// `min(y, c)`.
    pub time: Vec<f64>,
    pub delta: Vec<bool>,
}

pub fn gen_response<R: Rng>(linear_predictor: &[f64], law: Option<CensoringLaw>, rng: &mut R) -> Result<Response> {
    let y: Vec<f64> = linear_predictor
        .iter()
        .map(|&mu| mu + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let Some(law) = law else {
        return Ok(Response {
            time: y.clone(),
            delta: vec![true; y.len()],
            y,
        });
    };
    let gamma = Gamma::new(law.shape, law.scale).map_err(|e| Error::Config(e.to_string()))?;
    let mut time = Vec::with_capacity(y.len());
    let mut delta = Vec::with_capacity(y.len());
    for &yi in &y {
        let c = gamma.sample(rng).ln();
        delta.push(yi <= c);
        time.push(yi.min(c));
    }
    Ok(Response { y, time, delta })
}

/// One simulated data set with its independent test sample.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub spec: ScenarioSpec,
    pub replicate: u64,
    pub sim: SimLayout,
    pub truth: GroundTruth,
    pub train: SurvivalDataset<f64>,
    pub test: SurvivalDataset<f64>,
    pub train_response: Response,
    pub test_response: Response,
    pub censoring: Option<CensoringLaw>,
}

impl Replicate {
    pub fn censoring_fraction(&self) -> f64 {
        let d = self.train.delta();
        d.iter().filter(|&&v| !v).count() as f64 / d.len() as f64
    }
}

/// Generates replicate `replicate` of a scenario; fully determined by
/// `(spec.seed, replicate)`.
pub fn generate_replicate(spec: &ScenarioSpec, replicate: u64) -> Result<Replicate> {
    spec.validate()?;
    let seed = spec.seed;
    let sim = gen_layout(spec, &mut stream(seed, replicate, 0))?;
    let layout = Arc::new(sim.layout.clone());
    let map = IndexMap::build(&layout)?;
    let truth = gen_effects(spec.effect_pattern, &sim, &map, &mut stream(seed, replicate, 1))?;

    let build = |n: usize, purpose: u64| -> Result<(SurvivalDataset<f64>, Vec<f64>)> {
        let genes = gen_covariates(spec.correlation, &sim, n, &mut stream(seed, replicate, purpose))?;
        let placeholder = SurvivalDataset::from_gene_matrix(sim.layout.clone(), &genes, vec![0.0; n], vec![true; n])?;
        let mu = placeholder.linear_predictor(&truth.w0);
        Ok((placeholder, mu))
    };
    let (train_x, train_mu) = build(spec.n, 2)?;
    let (test_x, test_mu) = build(spec.n_test, 3)?;
    let censoring = match spec.censor_rate {
        Some(rate) => Some(calibrate_censoring(&train_mu, rate, &mut stream(seed, replicate, 4))?),
        None => None,
    };
    let train_response = gen_response(&train_mu, censoring, &mut stream(seed, replicate, 5))?;
    let test_response = gen_response(&test_mu, censoring, &mut stream(seed, replicate, 6))?;
    let attach = |x: SurvivalDataset<f64>, r: &Response| {
        SurvivalDataset::from_columns(x.layout_arc().clone(), x.x_col_major().to_vec(), r.time.clone(), r.delta.clone())
    };
    Ok(Replicate {
        spec: spec.clone(),
        replicate,
        train: attach(train_x, &train_response)?,
        test: attach(test_x, &test_response)?,
        sim,
        truth,
        train_response,
        test_response,
        censoring,
    })
}
