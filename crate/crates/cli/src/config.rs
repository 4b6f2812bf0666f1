//! Run configuration: a TOML file whose every field can be overridden by a
//! command-line flag. The merged value is echoed into every output document.

use std::path::{Path, PathBuf};

use clap::Args;
use pathvb::simgen::{Correlation, EffectPattern, ScenarioSpec};
use pathvb::{BicKind, CoordinateRule, FitConfig, Hyper, InitScheme, TauRule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the simulator, jittered initialization and resampling.
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
    /// Inclusion probability above which a coefficient or block is selected.
    pub threshold: f64,
    pub data: DataConfig,
    pub hyper: HyperConfig,
    pub fit: FitConfig,
    pub grid: GridConfig,
    pub simulate: ScenarioConfig,
    pub evaluate: EvaluateConfig,
    pub replicate: ReplicateConfig,
    pub screen: ScreenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: None,
            threshold: 0.5,
            data: DataConfig::default(),
            hyper: HyperConfig::default(),
            fit: FitConfig::default(),
            grid: GridConfig::default(),
            simulate: ScenarioConfig::default(),
            evaluate: EvaluateConfig::default(),
            replicate: ReplicateConfig::default(),
            screen: ScreenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub covariates: Option<PathBuf>,
    pub membership: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
    /// Center and scale every pathway-aligned column before fitting.
    pub standardize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub r1: f64,
    pub r2: f64,
    pub s1: f64,
    pub s2: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        let h = Hyper::default();
        HyperConfig { r1: h.r1, r2: h.r2, s1: h.s1, s2: h.s2 }
    }
}

impl HyperConfig {
    pub fn to_hyper(self) -> CliResult<Hyper> {
        let h = Hyper { r1: self.r1, r2: self.r2, s1: self.s1, s2: self.s2 };
        h.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub s2: Vec<f64>,
    pub r2: Vec<f64>,
    pub bic: BicKind,
}

impl Default for GridConfig {
    fn default() -> Self {
        let spikes = pathvb::selection::DEFAULT_SPIKES.to_vec();
        GridConfig { s2: spikes.clone(), r2: spikes, bic: BicKind::PlugIn }
    }
}

impl GridConfig {
    /// All `(s2, r2)` pairs, `s2` varying slowest.
    pub fn points(&self) -> CliResult<Vec<(f64, f64)>> {
        if self.s2.is_empty() || self.r2.is_empty() {
            return Err(CliError::Config("tuning grid needs at least one s2 and one r2".into()));
        }
        Ok(self.s2.iter().flat_map(|&s| self.r2.iter().map(move |&r| (s, r))).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 400 subjects, 1000 genes, pathways of 20 to 23 genes (10 to 13 when K = 100).
    #[default]
    Standard,
    /// Pathways of `size` or `size + 1` genes with a quarter of K shared genes.
    Small,
}

/// A simulated scenario described by a preset plus overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub k: usize,
    /// Pathway size for the small preset.
    pub size: usize,
    pub n: Option<usize>,
    pub n_test: Option<usize>,
    /// `ar0.6`, `ar0.4` (any `ar<rho>`), `cr1` or `cr2`.
    pub correlation: String,
    pub pattern: EffectPattern,
    /// Target censoring fraction; absent means no censoring.
    pub censor_rate: Option<f64>,
    pub replicate: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            preset: Preset::Standard,
            k: 100,
            size: 8,
            n: None,
            n_test: None,
            correlation: "ar0.6".into(),
            pattern: EffectPattern::S1,
            censor_rate: Some(0.2),
            replicate: 0,
        }
    }
}

pub fn parse_correlation(s: &str) -> CliResult<Correlation> {
    let lower = s.trim().to_ascii_lowercase();
    match lower.as_str() {
        "cr1" => Ok(Correlation::Cr1),
        "cr2" => Ok(Correlation::Cr2),
        other => {
            let rho = other
                .strip_prefix("ar")
                .map(|r| r.trim_start_matches(['(', ':']).trim_end_matches(')'))
                .and_then(|r| r.parse::<f64>().ok())
                .filter(|r| r.abs() < 1.0)
                .ok_or_else(|| CliError::Config(format!("unknown correlation `{s}`; use ar<rho>, cr1 or cr2")))?;
            Ok(Correlation::Ar { rho })
        }
    }
}

impl ScenarioConfig {
    pub fn to_spec(&self, seed: u64) -> CliResult<ScenarioSpec> {
        let corr = parse_correlation(&self.correlation)?;
        let mut spec = match self.preset {
            Preset::Standard => ScenarioSpec::standard(self.k, corr, self.pattern, self.censor_rate, seed),
            Preset::Small => ScenarioSpec::small(400, self.k, self.size, corr, self.pattern, self.censor_rate, seed),
        };
        if let Some(n) = self.n {
            spec.n = n;
        }
        if let Some(n) = self.n_test {
            spec.n_test = n;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub result: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Training outcomes, for the censoring distribution of the C-statistic.
    pub train_outcomes: Option<PathBuf>,
    pub test_covariates: Option<PathBuf>,
    pub test_outcomes: Option<PathBuf>,
    /// Concordance horizon on the log-time scale; the largest test event time when absent.
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicateConfig {
    pub reps: usize,
    /// Cells to run; `[simulate]` alone when empty.
    pub scenarios: Vec<ScenarioConfig>,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig { reps: 100, scenarios: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    /// Number of genes kept.
    pub top: usize,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig { top: 2000 }
    }
}

pub fn load(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
}

impl GlobalArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        set(&mut c.seed, self.seed);
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        set(&mut c.threshold, self.threshold);
    }
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub membership: Option<PathBuf>,
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    #[arg(long)]
    pub standardize: bool,
}

impl DataArgs {
    pub fn apply(&self, c: &mut DataConfig) {
        for (slot, v) in [
            (&mut c.covariates, &self.covariates),
            (&mut c.membership, &self.membership),
            (&mut c.outcomes, &self.outcomes),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        c.standardize |= self.standardize;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TauArg {
    Exact,
    ObservedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RuleArg {
    Joint,
    Sequential,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub r1: Option<f64>,
    #[arg(long)]
    pub r2: Option<f64>,
    #[arg(long)]
    pub s1: Option<f64>,
    #[arg(long)]
    pub s2: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Relative ELBO change at which iteration stops.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum)]
    pub tau_rule: Option<TauArg>,
    #[arg(long, value_enum)]
    pub coordinate_rule: Option<RuleArg>,
    /// Draw initial means from N(0, scale²) instead of starting at zero.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub damping: Option<f64>,
}

impl ModelArgs {
    pub fn apply(&self, h: &mut HyperConfig, f: &mut FitConfig) {
        set(&mut h.r1, self.r1);
        set(&mut h.r2, self.r2);
        set(&mut h.s1, self.s1);
        set(&mut h.s2, self.s2);
        set(&mut f.max_iterations, self.max_iterations);
        set(&mut f.elbo_rel_tol, self.tol);
        set(&mut f.damping, self.damping);
        if let Some(t) = self.tau_rule {
            f.tau_rule = match t {
                TauArg::Exact => TauRule::Exact,
                TauArg::ObservedOnly => TauRule::ObservedOnly,
            };
        }
        if let Some(r) = self.coordinate_rule {
            f.coordinate_rule = match r {
                RuleArg::Joint => CoordinateRule::Joint,
                RuleArg::Sequential => CoordinateRule::Sequential,
            };
        }
        if let Some(scale) = self.jitter {
            f.init_scheme = InitScheme::Jitter { scale };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BicArg {
    PlugIn,
    Elbo,
}

#[derive(Debug, Args, Default)]
pub struct GridArgs {
    /// Higher-level spike variances, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub s2_grid: Option<Vec<f64>>,
    /// Lower-level spike variances, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub r2_grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub bic: Option<BicArg>,
}

impl GridArgs {
    pub fn apply(&self, g: &mut GridConfig) {
        if let Some(v) = &self.s2_grid {
            g.s2.clone_from(v);
        }
        if let Some(v) = &self.r2_grid {
            g.r2.clone_from(v);
        }
        if let Some(b) = self.bic {
            g.bic = match b {
                BicArg::PlugIn => BicKind::PlugIn,
                BicArg::Elbo => BicKind::Elbo,
            };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PatternArg {
    S1,
    S2,
    S3,
}

#[derive(Debug, Args, Default)]
pub struct ScenarioArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// ar<rho> (for example ar0.6), cr1 or cr2.
    #[arg(long)]
    pub correlation: Option<String>,
    #[arg(long, value_enum)]
    pub pattern: Option<PatternArg>,
    #[arg(long, conflicts_with = "no_censoring")]
    pub censor_rate: Option<f64>,
    #[arg(long)]
    pub no_censoring: bool,
    #[arg(long)]
    pub replicate: Option<u64>,
}

impl ScenarioArgs {
    pub fn apply(&self, s: &mut ScenarioConfig) {
        set(&mut s.preset, self.preset);
        set(&mut s.k, self.k);
        set(&mut s.size, self.size);
        set(&mut s.replicate, self.replicate);
        if self.n.is_some() {
            s.n = self.n;
        }
        if self.n_test.is_some() {
            s.n_test = self.n_test;
        }
        if let Some(c) = &self.correlation {
            s.correlation.clone_from(c);
        }
        if let Some(p) = self.pattern {
            s.pattern = match p {
                PatternArg::S1 => EffectPattern::S1,
                PatternArg::S2 => EffectPattern::S2,
                PatternArg::S3 => EffectPattern::S3,
            };
        }
        if self.censor_rate.is_some() {
            s.censor_rate = self.censor_rate;
        }
        if self.no_censoring {
            s.censor_rate = None;
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}
