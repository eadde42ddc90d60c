//! Numerical laboratory for estimation in Gaussian limit experiments with
//! weak instruments.
//!
//! The observation is a single draw from a Gaussian process `g ~ GP(m, Sigma)`
//! whose mean vanishes at the true parameter. Two concrete families are
//! implemented: the linear IV experiment, where `g(theta) = xi0 - xi1 * theta`
//! and `(xi0, xi1)` is jointly normal, and a finite parameter grid, where `g`
//! is a single `s * k` normal vector. On top of the samplers sit the classical
//! minimum-distance estimators (TSLS, CUE, LIML, finite GMM), their bagged
//! versions, and quasi-Bayes posterior means under flat and invariant priors,
//! together with a Monte Carlo harness for normalized-RMSE comparisons and a
//! verification suite for the continuity properties that separate these
//! estimators.

pub mod bagging;
pub mod calibration;
pub mod error;
pub mod estimators;
pub mod functionals;
pub mod lipschitz;
pub mod model;
pub mod montecarlo;
pub mod numeric;
pub mod quasibayes;
pub mod verify;

pub use bagging::{bag, BagConfig};
pub use calibration::{
    generate_records, load_calibration, parse_calibration, save_calibration, DesignRecord,
    LoadedCalibration, SyntheticConfig,
};
pub use error::{Error, Result};
pub use estimators::{
    cue, finite_gmm, liml, plug_in, tsls, EstimatorKind, EstimatorSpec, ThetaGrid, TieBreak,
};
pub use functionals::{Functional, FunctionalKind};
pub use lipschitz::{
    empirical_lipschitz, finite_prior_posterior_mean, moment_distance,
    posterior_mean_bound_check, scale_invariance_check, straddle_pair, FinitePrior,
    LipschitzReport, SupportPoint,
};
pub use model::{
    draw_finite, draw_iv, g_eval, sigma_kernel, FiniteThetaModel, IvDesign, MomentDraw, RngStream,
};
pub use montecarlo::{
    aggregate, effective_f, parse_reports_csv, reports_to_csv, run_spec, spec_stream,
    AggregateCell, AggregateTable, Binning, EstimatorId, FunctionalId, SimConfig, SimReport,
};
pub use quasibayes::{
    cue_objective, flat_prior, invariant_info, invariant_info_general, invariant_prior,
    posterior_mean_from_objective, qb_mean, qb_mean_finite, Prior,
};
pub use verify::{run_verification, CheckResult, VerifyReport};
