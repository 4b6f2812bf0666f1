//! Pathway-structured main effect and interaction selection for right-censored
//! survival data under a log-normal accelerated failure time model, fitted by
//! variational Bayesian EM with a two-level spike-and-slab prior.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what the simulator and the
//! command-line tool use.

pub mod error;
pub mod layout;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod real;
pub mod selection;
pub mod simgen;
pub mod truncnorm;
pub mod vbem;

pub use error::{Error, Result};
pub use layout::{Block, CoefficientIndex, IndexMap, PathwayLayout, SurvivalDataset};
pub use metrics::{evaluate, km_censoring_survival, ooi, rsse, tp_fp, uno_c, EvalReport, OoiReport};
pub use model::{ExactPosterior, Hyperparams, LatentConfig, ModelParams};
pub use real::Real;
pub use selection::{bic, select, tune, BicKind, SelectionSets, TuneOutcome};
pub use vbem::{
    fit, fit_uncensored, CoordinateRule, FitConfig, FitResult, InitScheme, TauRule, VariationalState,
};

pub type Dataset = SurvivalDataset<f64>;
pub type Fit = FitResult<f64>;
pub type State = VariationalState<f64>;
pub type Hyper = Hyperparams<f64>;
pub type Params = ModelParams<f64>;
pub type Selection = SelectionSets<f64>;
