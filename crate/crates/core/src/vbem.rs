//! Variational Bayesian EM.
//!
//! The approximate posterior is fully factorized: a Gaussian `N(m_j, σ_j²)`
//! per coefficient, Bernoulli factors `η_j` and `r_b` for the two indicator
//! levels, and a truncated normal for each censored latent log-time. One
//! iteration updates every latent time, then every coefficient in flat
//! order, then every block, then re-estimates `τ`, `ζ1`, `ζ2`.
//!
//! Each E-step update is the exact maximizer of the evidence lower bound in
//! its own coordinates, so the bound never decreases. The engine is generic
//! over a const flag: with `CENSORED = false` every latent-time code path is
//! compiled out.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::SurvivalDataset;
use crate::model::{Hyperparams, ModelParams};
use crate::real::{bernoulli_entropy, Real};
use crate::truncnorm::upper_tail_moments;

/// Lower and upper clamp applied to `ζ1` and `ζ2` after every M-step
/// (widened to machine epsilon for single precision).
pub const ZETA_CLAMP: f64 = 1e-8;

/// How the initial coefficient means are set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitScheme {
    /// All means start at zero.
    #[default]
    Zero,
    /// Means drawn from `N(0, scale²)` with the configured seed.
    Jitter { scale: f64 },
}

/// Update rule for the error precision in the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauRule {
    /// Maximizer of the bound: every subject contributes, censored ones
    /// through the first two moments of their latent time.
    #[default]
    Exact,
    /// Event count over the observed-subject residual sum of squares plus the
    /// coefficient-uncertainty trace over all subjects. Does not maximize the
    /// bound when some subjects are censored.
    ObservedOnly,
}

/// How a coefficient's mean, variance and indicator are refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateRule {
    /// Mean and variance at the current indicator, then the indicator at the
    /// new mean and variance.
    Sequential,
    /// Global maximum over all three at once.
    #[default]
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop once `|ΔL| / |L|` falls below this value.
    pub elbo_rel_tol: f64,
    pub seed: u64,
    pub init_scheme: InitScheme,
    /// Step size for the indicator updates in logit space; `1` takes the full step.
    pub damping: f64,
    pub tau_rule: TauRule,
    pub coordinate_rule: CoordinateRule,
    /// Starting value of every lower-level inclusion probability.
    pub initial_eta: f64,
    /// Starting value of every block inclusion probability.
    pub initial_block: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iterations: 500,
            elbo_rel_tol: 1e-6,
            seed: 0,
            init_scheme: InitScheme::Zero,
            damping: 1.0,
            tau_rule: TauRule::Exact,
            coordinate_rule: CoordinateRule::Joint,
            initial_eta: 0.5,
            initial_block: 1.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.elbo_rel_tol > 0.0) {
            return Err(Error::Config("elbo_rel_tol must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        for (name, v) in [("initial_eta", self.initial_eta), ("initial_block", self.initial_block)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if let InitScheme::Jitter { scale } = self.init_scheme {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::Config("jitter scale must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Parameters of the mean-field approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState<F> {
    pub m: Vec<F>,
    pub sigma2: Vec<F>,
    pub eta: Vec<F>,
    pub r_hl: Vec<F>,
    /// Censored subjects, ascending; the latent-time vectors follow this order.
    pub censored: Vec<usize>,
    pub z_mean: Vec<F>,
    pub z_var: Vec<F>,
    pub z_entropy: Vec<F>,
    /// `ỹ_i − x̃_i m`, with `ỹ_i = E z_i` for censored subjects.
    pub residual: Vec<F>,
}

/// Outcome of a converged or truncated fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<F> {
    pub state: VariationalState<F>,
    pub params: ModelParams<F>,
    pub hyper: Hyperparams<F>,
    /// Bound at initialization followed by its value after every iteration.
    pub elbo_trace: Vec<F>,
    pub iterations: usize,
    pub converged: bool,
}

impl<F: Real> FitResult<F> {
    pub fn elbo(&self) -> F {
        *self.elbo_trace.last().expect("trace holds the initial bound")
    }
}

/// Additive pieces of the evidence lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms<F> {
    pub likelihood: F,
    pub latent_entropy: F,
    pub lower_prior: F,
    pub interaction_prior: F,
    pub higher_prior: F,
    pub indicator_prior: F,
    pub indicator_entropy: F,
    pub coefficient_entropy: F,
}

impl<F: Real> ElboTerms<F> {
    fn named(&self) -> [(&'static str, F); 8] {
        [
            ("likelihood", self.likelihood),
            ("latent_entropy", self.latent_entropy),
            ("lower_prior", self.lower_prior),
            ("interaction_prior", self.interaction_prior),
            ("higher_prior", self.higher_prior),
            ("indicator_prior", self.indicator_prior),
            ("indicator_entropy", self.indicator_entropy),
            ("coefficient_entropy", self.coefficient_entropy),
        ]
    }

    pub fn total(&self) -> Result<F> {
        let mut sum = F::zero();
        for (name, v) in self.named() {
            if !v.is_finite() {
                return Err(Error::numerical(format!("elbo term {name}"), format!("value {v}")));
            }
            sum += v;
        }
        Ok(sum)
    }
}

/// A single update inside an iteration, reported to observers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Position in [`VariationalState::censored`].
    Latent(usize),
    Coefficient(usize),
    Block(usize),
    MStep,
}

#[inline]
fn ln_norm_const<F: Real>(v: F) -> F {
    -F::half() * (F::TAU() * v).ln()
}

fn clamp_zeta<F: Real>(z: F) -> F {
    let e = F::lit(ZETA_CLAMP).max(F::epsilon());
    z.max(e).min(F::one() - e)
}

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
fn dot3<F: Real>(a: &[F], b: &[F], c: &[F]) -> F {
    a.iter().zip(b).zip(c).map(|((&x, &y), &z)| x * y * z).sum()
}

/// Precision update with the observed-subject rule, given a state whose
/// residual cache is consistent with the data.
pub fn m_step<F: Real>(state: &VariationalState<F>, data: &SurvivalDataset<F>) -> Result<ModelParams<F>> {
    let d = data.gram_diag();
    m_step_with(state, data, &d, TauRule::ObservedOnly)
}

fn m_step_with<F: Real>(
    state: &VariationalState<F>,
    data: &SurvivalDataset<F>,
    gram_diag: &[F],
    rule: TauRule,
) -> Result<ModelParams<F>> {
    let trace: F = gram_diag.iter().zip(&state.sigma2).map(|(&d, &s)| d * s).sum();
    let (count, rss) = match rule {
        TauRule::ObservedOnly => {
            let rss: F = state
                .residual
                .iter()
                .zip(data.delta())
                .filter(|(_, &obs)| obs)
                .map(|(&r, _)| r * r)
                .sum();
            (data.n_events(), rss)
        }
        TauRule::Exact => {
            let rss: F = state.residual.iter().map(|&r| r * r).sum::<F>()
                + state.z_var.iter().copied().sum::<F>();
            (data.n(), rss)
        }
    };
    let denom = rss + trace;
    if !(denom > F::zero()) || !denom.is_finite() {
        return Err(Error::numerical("m_step tau", format!("denominator {denom}")));
    }
    let zeta1 = state.eta.iter().copied().sum::<F>() / F::count(state.eta.len());
    let zeta2 = state.r_hl.iter().copied().sum::<F>() / F::count(state.r_hl.len());
    Ok(ModelParams {
        tau: F::count(count) / denom,
        zeta1: clamp_zeta(zeta1),
        zeta2: clamp_zeta(zeta2),
    })
}

/// Maximizes, over `η ∈ [0, 1]`, the bound restricted to one coefficient
/// after profiling out its mean and variance:
///
/// `f(η) = pull² / 2(t + P(η)) − ½ ln(t + P(η)) + η·offset + H(η)`,
///
/// where `P(η)` is the expected prior precision. Its stationary points are
/// the fixed points of `η = sigmoid(offset + c1·S(η))` with `S` the profiled
/// second moment. That map is increasing, so iterating it from 0 and from 1
/// reaches the smallest and largest fixed points, which are the only
/// candidates for the global maximum. The previous value is kept as a third
/// candidate so the bound cannot decrease if an iteration is cut short.
fn joint_indicator<F: Real>(pull: F, t: F, offset: F, c1: F, eta_old: F, precision: &impl Fn(F) -> F) -> F {
    let second = |e: F| {
        let s2 = (t + precision(e)).recip();
        let m = pull * s2;
        m * m + s2
    };
    let map = |e: F| (offset + c1 * second(e)).sigmoid();
    let profile = |e: F| {
        let q = t + precision(e);
        pull * pull / (F::two() * q) - F::half() * q.ln() + e * offset + bernoulli_entropy(e)
    };
    let fixed_point = |mut e: F| {
        for _ in 0..JOINT_MAX_STEPS {
            let next = map(e);
            let done = (next - e).abs() <= F::epsilon();
            e = next;
            if done {
                break;
            }
        }
        e
    };
    let lo = fixed_point(F::zero());
    let hi = fixed_point(F::one());
    let mut best = eta_old;
    let mut best_value = profile(eta_old);
    for cand in [lo, hi] {
        let v = profile(cand);
        if v > best_value {
            best = cand;
            best_value = v;
        }
    }
    best
}

const JOINT_MAX_STEPS: usize = 200;

/// Coordinate-ascent engine over one dataset.
#[derive(Debug, Clone)]
pub struct VbemEngine<'a, F, const CENSORED: bool> {
    data: &'a SurvivalDataset<F>,
    hyper: Hyperparams<F>,
    config: FitConfig,
    state: VariationalState<F>,
    params: ModelParams<F>,
    gram_diag: Vec<F>,
    logit_zeta1: F,
    logit_zeta2: F,
    lower_occ: (F, F),
    higher_occ: (F, F),
}

/// Engine that models censoring.
pub type Engine<'a, F> = VbemEngine<'a, F, true>;
/// Engine for fully observed data with all latent-time code removed.
pub type UncensoredEngine<'a, F> = VbemEngine<'a, F, false>;

impl<'a, F: Real, const CENSORED: bool> VbemEngine<'a, F, CENSORED> {
    /// Builds the initial state: zero (or jittered) means, slab variances,
    /// the configured starting indicator probabilities, prior rates of one
    /// half, and `τ` equal to the inverse sample variance of the observed
    /// log-times.
    pub fn new(data: &'a SurvivalDataset<F>, hyper: Hyperparams<F>, config: FitConfig) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        let censored = data.censored();
        if !CENSORED && !censored.is_empty() {
            return Err(Error::Unsupported(
                "censored subjects passed to the uncensored engine".into(),
            ));
        }
        let n1 = data.n_events();
        if n1 == 0 {
            return Err(Error::Unsupported("no observed event times".into()));
        }
        if n1 < 2 {
            return Err(Error::Unsupported("at least two observed event times are required".into()));
        }
        let obs: Vec<F> = data
            .time()
            .iter()
            .zip(data.delta())
            .filter(|(_, &d)| d)
            .map(|(&t, _)| t)
            .collect();
        let mean = obs.iter().copied().sum::<F>() / F::count(n1);
        let var = obs.iter().map(|&t| (t - mean) * (t - mean)).sum::<F>() / F::count(n1 - 1);
        if !(var > F::zero()) {
            return Err(Error::Domain("observed log-times have zero variance".into()));
        }
        let params = ModelParams {
            tau: var.recip(),
            zeta1: F::half(),
            zeta2: F::half(),
        };

        let map = data.index();
        let pc = map.len();
        let m = match config.init_scheme {
            InitScheme::Zero => vec![F::zero(); pc],
            InitScheme::Jitter { scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                let normal = Normal::new(0.0, scale).map_err(|e| Error::Config(e.to_string()))?;
                (0..pc).map(|_| F::lit(normal.sample(&mut rng))).collect()
            }
        };
        let mut residual = data.time().to_vec();
        let eta0 = data.linear_predictor(&m);
        for (r, &e) in residual.iter_mut().zip(&eta0) {
            *r -= e;
        }
        let mut engine = VbemEngine {
            data,
            hyper,
            config,
            state: VariationalState {
                m,
                sigma2: vec![hyper.r1; pc],
                eta: vec![F::lit(config.initial_eta); pc],
                r_hl: vec![F::lit(config.initial_block); map.blocks().len()],
                z_mean: vec![F::zero(); censored.len()],
                z_var: vec![F::zero(); censored.len()],
                z_entropy: vec![F::zero(); censored.len()],
                censored,
                residual,
            },
            params,
            gram_diag: data.gram_diag(),
            logit_zeta1: F::zero(),
            logit_zeta2: F::zero(),
            lower_occ: Self::occupancy(hyper.r1, hyper.r2),
            higher_occ: Self::occupancy(hyper.s1, hyper.s2),
        };
        engine.refresh_logits();
        if CENSORED {
            // Residuals of censored subjects currently hold c_i − x̃_i m; seed
            // the latent moments from the untruncated location x̃_i m.
            for ci in 0..engine.state.censored.len() {
                let i = engine.state.censored[ci];
                let loc = data.time()[i] - engine.state.residual[i];
                engine.set_latent(ci, loc)?;
            }
        }
        Ok(engine)
    }

    /// `(½ ln(v2/v1), ½ (1/v2 − 1/v1))`: the log-ratio of slab to spike
    /// density at a coefficient with second moment `S` is `c0 + S c1`.
    fn occupancy(v1: F, v2: F) -> (F, F) {
        (F::half() * (v2 / v1).ln(), F::half() * (v2.recip() - v1.recip()))
    }

    fn refresh_logits(&mut self) {
        self.logit_zeta1 = self.params.zeta1.logit();
        self.logit_zeta2 = self.params.zeta2.logit();
    }

    pub fn state(&self) -> &VariationalState<F> {
        &self.state
    }

    pub fn params(&self) -> &ModelParams<F> {
        &self.params
    }

    pub fn hyper(&self) -> &Hyperparams<F> {
        &self.hyper
    }

    pub fn data(&self) -> &SurvivalDataset<F> {
        self.data
    }

    /// Replaces the model parameters, e.g. to probe the bound at fixed `Φ`.
    pub fn set_params(&mut self, params: ModelParams<F>) -> Result<()> {
        params.validate()?;
        self.params = params;
        self.refresh_logits();
        Ok(())
    }

    fn set_latent(&mut self, ci: usize, loc: F) -> Result<()> {
        let i = self.state.censored[ci];
        let tm = upper_tail_moments(loc, self.params.tau.recip(), self.data.time()[i])
            .map_err(|e| Error::numerical(format!("latent time of subject {i}"), e.to_string()))?;
        self.state.z_mean[ci] = tm.mean;
        self.state.z_var[ci] = tm.variance;
        self.state.z_entropy[ci] = tm.entropy;
        self.state.residual[i] = tm.mean - loc;
        Ok(())
    }

    /// Refits `q(z_i)` for the `ci`-th censored subject: the normal law centred
    /// at `x̃_i m` with variance `1/τ`, truncated below at `c_i`.
    pub fn update_z(&mut self, ci: usize) -> Result<()> {
        if !CENSORED {
            return Err(Error::Unsupported("latent times are excised in this engine".into()));
        }
        let i = self.state.censored[ci];
        let loc = self.state.z_mean[ci] - self.state.residual[i];
        self.set_latent(ci, loc)
    }

    /// Expected prior precision of coefficient `j` from every term except
    /// its own lower-level indicator.
    fn shared_precision(&self, j: usize) -> F {
        let h = &self.hyper;
        let st = &self.state;
        let map = self.data.index();
        let rb = st.r_hl[map.block_of(j)];
        let mut prec = rb / h.s1 + (F::one() - rb) / h.s2;
        let (u, v) = map.columns(j);
        if u != v {
            let pi = st.eta[u] * st.eta[v];
            prec += pi / h.r1 + (F::one() - pi) / h.r2;
        }
        prec
    }

    fn damped(&self, old: F, target: F) -> F {
        if self.config.damping >= 1.0 {
            return target;
        }
        let eps = F::lit(1e-12);
        let clamp = |p: F| p.max(eps).min(F::one() - eps);
        let old_logit = clamp(old).logit();
        (old_logit + F::lit(self.config.damping) * (clamp(target).logit() - old_logit)).sigmoid()
    }

    /// Updates the factor of coefficient `j`: `m_j`, `σ_j²` and `η_j`.
    pub fn update_coordinate(&mut self, j: usize) -> Result<()> {
        let map = self.data.index();
        let (u, v) = map.columns(j);
        let h = self.hyper;
        let tau = self.params.tau;
        let d = self.gram_diag[j];
        let cu = self.data.col(u);
        let xr = if u == v {
            dot(cu, &self.state.residual)
        } else {
            dot3(cu, self.data.col(v), &self.state.residual)
        };
        let m_old = self.state.m[j];
        let t = tau * d;
        // τ x̃_jᵀ(ỹ − Σ_{j'≠j} x̃_j' m_j')
        let pull = tau * (xr + d * m_old);
        let shared = self.shared_precision(j);
        let precision = |e: F| shared + e / h.r1 + (F::one() - e) / h.r2;

        let (c0, c1) = self.lower_occ;
        let mut offset = self.logit_zeta1 + c0;
        if u == v {
            for &(it, partner) in map.incident(j) {
                let it = it as usize;
                let second = self.state.m[it] * self.state.m[it] + self.state.sigma2[it];
                offset += self.state.eta[partner as usize] * (c0 + c1 * second);
            }
        }
        let eta_old = self.state.eta[j];
        let (eta_new, sigma2) = match self.config.coordinate_rule {
            CoordinateRule::Sequential => {
                let s2 = (t + precision(eta_old)).recip();
                let m = pull * s2;
                let e = self.damped(eta_old, (offset + c1 * (m * m + s2)).sigmoid());
                (e, s2)
            }
            CoordinateRule::Joint => {
                let e = joint_indicator(pull, t, offset, c1, eta_old, &precision);
                let e = self.damped(eta_old, e);
                (e, (t + precision(e)).recip())
            }
        };
        let m_new = pull * sigma2;
        if !m_new.is_finite() || !(sigma2 > F::zero()) || !eta_new.is_finite() {
            return Err(Error::numerical(
                format!("coefficient {j}"),
                format!("mean {m_new}, variance {sigma2}, indicator {eta_new}"),
            ));
        }
        let delta = m_old - m_new;
        if delta != F::zero() {
            let res = &mut self.state.residual;
            if u == v {
                for (r, &a) in res.iter_mut().zip(cu) {
                    *r += delta * a;
                }
            } else {
                for ((r, &a), &b) in res.iter_mut().zip(cu).zip(self.data.col(v)) {
                    *r += delta * (a * b);
                }
            }
        }
        self.state.m[j] = m_new;
        self.state.sigma2[j] = sigma2;
        self.state.eta[j] = eta_new;
        Ok(())
    }

    /// Updates the higher-level inclusion probability of block `b`.
    pub fn update_alpha_block(&mut self, b: usize) -> Result<()> {
        let block = self.data.index().block(b);
        let (c0, c1) = self.higher_occ;
        let mut logit = self.logit_zeta2;
        for j in block.coefficients() {
            logit += c0 + c1 * (self.state.m[j] * self.state.m[j] + self.state.sigma2[j]);
        }
        if !logit.is_finite() {
            return Err(Error::numerical(format!("block {b}"), format!("indicator logit {logit}")));
        }
        self.state.r_hl[b] = self.damped(self.state.r_hl[b], logit.sigmoid());
        Ok(())
    }

    /// Re-estimates `Φ` with the configured precision rule.
    pub fn m_step(&mut self) -> Result<()> {
        self.params = m_step_with(&self.state, self.data, &self.gram_diag, self.config.tau_rule)?;
        self.refresh_logits();
        Ok(())
    }

    pub fn elbo_terms(&self) -> ElboTerms<F> {
        let h = &self.hyper;
        let st = &self.state;
        let map = self.data.index();
        let tau = self.params.tau;
        let n = self.data.n();
        let half = F::half();

        let mut spread: F = st.residual.iter().map(|&r| r * r).sum();
        if CENSORED {
            spread += st.z_var.iter().copied().sum::<F>();
        }
        spread += self.gram_diag.iter().zip(&st.sigma2).map(|(&d, &s)| d * s).sum::<F>();
        let likelihood = half * F::count(n) * (tau / F::TAU()).ln() - half * tau * spread;
        let latent_entropy = if CENSORED {
            st.z_entropy.iter().copied().sum()
        } else {
            F::zero()
        };

        let (gr1, gr2) = (ln_norm_const(h.r1), ln_norm_const(h.r2));
        let (gs1, gs2) = (ln_norm_const(h.s1), ln_norm_const(h.s2));
        let lower = |p: F, s: F| p * (gr1 - s / (F::two() * h.r1)) + (F::one() - p) * (gr2 - s / (F::two() * h.r2));
        let (z1, z2) = (self.params.zeta1, self.params.zeta2);
        let (ln_z1, ln_1mz1) = (z1.ln(), (-z1).ln_1p());
        let (ln_z2, ln_1mz2) = (z2.ln(), (-z2).ln_1p());

        let mut lower_prior = F::zero();
        let mut interaction_prior = F::zero();
        let mut indicator_prior = F::zero();
        let mut indicator_entropy = F::zero();
        let mut coefficient_entropy = F::zero();
        let ln2pie = (F::TAU() * F::one().exp()).ln();
        for j in 0..map.len() {
            let s = st.m[j] * st.m[j] + st.sigma2[j];
            let e = st.eta[j];
            lower_prior += lower(e, s);
            let (u, v) = map.columns(j);
            if u != v {
                interaction_prior += lower(st.eta[u] * st.eta[v], s);
            }
            indicator_prior += e * ln_z1 + (F::one() - e) * ln_1mz1;
            indicator_entropy += bernoulli_entropy(e);
            coefficient_entropy += half * (ln2pie + st.sigma2[j].ln());
        }
        let mut higher_prior = F::zero();
        for (b, block) in map.blocks().iter().enumerate() {
            let r = st.r_hl[b];
            let s: F = block
                .coefficients()
                .map(|j| st.m[j] * st.m[j] + st.sigma2[j])
                .sum();
            let len = F::count(block.len());
            higher_prior += r * (len * gs1 - s / (F::two() * h.s1))
                + (F::one() - r) * (len * gs2 - s / (F::two() * h.s2));
            indicator_prior += r * ln_z2 + (F::one() - r) * ln_1mz2;
            indicator_entropy += bernoulli_entropy(r);
        }
        ElboTerms {
            likelihood,
            latent_entropy,
            lower_prior,
            interaction_prior,
            higher_prior,
            indicator_prior,
            indicator_entropy,
            coefficient_entropy,
        }
    }

    /// Evidence lower bound at the current state and parameters.
    pub fn elbo(&self) -> Result<F> {
        self.elbo_terms().total()
    }

    /// One full iteration, calling `observer` after every single update.
    pub fn iterate_with<O>(&mut self, mut observer: O) -> Result<()>
    where
        O: FnMut(Step, &Self) -> Result<()>,
    {
        if CENSORED {
            for ci in 0..self.state.censored.len() {
                self.update_z(ci)?;
                observer(Step::Latent(ci), self)?;
            }
        }
        for j in 0..self.state.m.len() {
            self.update_coordinate(j)?;
            observer(Step::Coefficient(j), self)?;
        }
        for b in 0..self.state.r_hl.len() {
            self.update_alpha_block(b)?;
            observer(Step::Block(b), self)?;
        }
        self.m_step()?;
        observer(Step::MStep, self)
    }

    pub fn iterate(&mut self) -> Result<()> {
        self.iterate_with(|_, _| Ok(()))
    }

    /// Residuals recomputed from scratch, for drift checks.
    pub fn fresh_residuals(&self) -> Vec<F> {
        let mut y = self.data.time().to_vec();
        if CENSORED {
            for (&i, &z) in self.state.censored.iter().zip(&self.state.z_mean) {
                y[i] = z;
            }
        }
        let eta = self.data.linear_predictor(&self.state.m);
        y.iter().zip(&eta).map(|(&a, &b)| a - b).collect()
    }

    /// Sets `m_j`, keeping the residual cache consistent.
    pub fn set_mean(&mut self, j: usize, value: F) {
        let delta = self.state.m[j] - value;
        let (u, v) = self.data.index().columns(j);
        for (i, r) in self.state.residual.iter_mut().enumerate() {
            *r += delta * self.data.col(u)[i] * if u == v { F::one() } else { self.data.col(v)[i] };
        }
        self.state.m[j] = value;
    }

    pub fn set_variance(&mut self, j: usize, value: F) {
        self.state.sigma2[j] = value;
    }

    pub fn set_eta(&mut self, j: usize, value: F) {
        self.state.eta[j] = value;
    }

    pub fn set_r_hl(&mut self, b: usize, value: F) {
        self.state.r_hl[b] = value;
    }

    /// Runs iterations until the relative change of the bound drops below
    /// the tolerance or the iteration budget is spent.
    pub fn run<O>(mut self, mut on_iteration: O) -> Result<FitResult<F>>
    where
        O: FnMut(usize, F),
    {
        let mut trace = vec![self.elbo()?];
        let mut converged = false;
        let tol = F::lit(self.config.elbo_rel_tol);
        for it in 1..=self.config.max_iterations {
            let step = self.iterate().and_then(|_| self.elbo());
            let value = match step {
                Ok(v) => v,
                Err(e) => {
                    return Err(Error::FitAborted {
                        source: Box::new(e),
                        elbo_trace: trace.iter().map(|v| v.as_f64()).collect(),
                    })
                }
            };
            let prev = *trace.last().expect("non-empty trace");
            trace.push(value);
            on_iteration(it, value);
            if ((value - prev) / prev.abs().max(F::min_positive_value())).abs() < tol {
                converged = true;
                break;
            }
        }
        Ok(FitResult {
            iterations: trace.len() - 1,
            state: self.state,
            params: self.params,
            hyper: self.hyper,
            elbo_trace: trace,
            converged,
        })
    }
}

/// Fits the model, modelling censored subjects through latent log-times.
pub fn fit<F: Real>(data: &SurvivalDataset<F>, hyper: &Hyperparams<F>, config: &FitConfig) -> Result<FitResult<F>> {
    fit_with_observer(data, hyper, config, |_, _| {})
}

/// As [`fit`], reporting `(iteration, bound)` after every iteration.
pub fn fit_with_observer<F: Real, O: FnMut(usize, F)>(
    data: &SurvivalDataset<F>,
    hyper: &Hyperparams<F>,
    config: &FitConfig,
    observer: O,
) -> Result<FitResult<F>> {
    Engine::new(data, *hyper, *config)?.run(observer)
}

/// Fits fully observed data with every latent-time code path removed.
pub fn fit_uncensored<F: Real>(
    data: &SurvivalDataset<F>,
    hyper: &Hyperparams<F>,
    config: &FitConfig,
) -> Result<FitResult<F>> {
    UncensoredEngine::new(data, *hyper, *config)?.run(|_, _| {})
}
