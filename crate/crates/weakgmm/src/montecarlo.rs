//! Monte Carlo harness: repeated draws, estimator evaluation, and binned
//! normalized-RMSE tables.
//!
//! One *spec* is an [`IvDesign`]; one *replication* draws a single
//! observation from it and evaluates every configured estimator under
//! every configured functional. A run produces one [`SimReport`] per
//! (estimator, functional): the root mean squared error of the estimates
//! around the true functional value, normalized by the design's reference
//! standard error, together with the mean effective F statistic of the
//! draws. Reports serialize to CSV and aggregate into tables binned by
//! identification strength or instrument count.
//!
//! # Determinism
//!
//! Every random quantity is addressed by `(master seed, spec,
//! replication, purpose)` through [`RngStream`], so a run is a pure
//! function of the design and configuration. Replications are evaluated
//! in parallel but collected in replication order, error accumulation is
//! pairwise in that order, and the bagging noise of a replication is
//! shared by all bagged estimators. Two runs with the same inputs produce
//! byte-identical CSVs regardless of thread count, and dropping
//! estimators from the configuration does not change the reports of the
//! estimators that remain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bagging::BagConfig;
use crate::error::{Error, Result};
use crate::estimators::{plug_in, tsls, ThetaGrid};
use crate::functionals::{Functional, FunctionalKind};
use crate::model::{draw_iv, IvDesign, MomentDraw, RngStream};
use crate::numeric::pairwise_mean;
use crate::quasibayes::{flat_prior, invariant_prior, posterior_mean_from_objective, Prior};

/// The estimators the harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimatorId {
    /// Two-stage least squares, clipped to the parameter interval.
    Tsls,
    /// Bagged two-stage least squares.
    BaggedTsls,
    /// Continuously-updating GMM by grid minimization.
    Cue,
    /// Bagged continuously-updating GMM.
    BaggedCue,
    /// Limited-information maximum likelihood.
    Liml,
    /// Quasi-Bayes posterior mean under the flat prior.
    QbFlat,
    /// Quasi-Bayes posterior mean under the invariant prior.
    QbInvariant,
}

impl EstimatorId {
    /// Every estimator, in canonical table order.
    pub const ALL: [EstimatorId; 7] = [
        EstimatorId::Tsls,
        EstimatorId::BaggedTsls,
        EstimatorId::Cue,
        EstimatorId::BaggedCue,
        EstimatorId::Liml,
        EstimatorId::QbFlat,
        EstimatorId::QbInvariant,
    ];

    /// Stable identifier used in CSV files and CLI flags.
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorId::Tsls => "tsls",
            EstimatorId::BaggedTsls => "btsls",
            EstimatorId::Cue => "cue",
            EstimatorId::BaggedCue => "bcue",
            EstimatorId::Liml => "liml",
            EstimatorId::QbFlat => "qb-flat",
            EstimatorId::QbInvariant => "qb-inv",
        }
    }
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown estimator `{s}`; expected one of tsls, btsls, cue, bcue, liml, qb-flat, qb-inv"
                ))
            })
    }
}

/// The functionals a table can be computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FunctionalId {
    /// The parameter itself.
    Identity,
    /// The endogeneity correlation implied by the parameter.
    EndogCorr,
}

impl FunctionalId {
    /// Every functional, in canonical table order.
    pub const ALL: [FunctionalId; 2] = [FunctionalId::Identity, FunctionalId::EndogCorr];

    /// Stable identifier used in CSV files and CLI flags.
    pub fn as_str(&self) -> &'static str {
        match self {
            FunctionalId::Identity => "identity",
            FunctionalId::EndogCorr => "corr",
        }
    }

    fn kind(&self) -> FunctionalKind {
        match self {
            FunctionalId::Identity => FunctionalKind::Identity,
            FunctionalId::EndogCorr => FunctionalKind::EndogCorr,
        }
    }

    /// Builds the concrete functional for `design`.
    pub fn build(&self, design: &IvDesign) -> Result<Functional> {
        Functional::new(self.kind(), design)
    }
}

impl std::fmt::Display for FunctionalId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FunctionalId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FunctionalId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown functional `{s}`; expected identity or corr"
                ))
            })
    }
}

/// Configuration of a Monte Carlo run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Number of independent replications per spec.
    pub replications: usize,
    /// Number of noise draws averaged by the bagged estimators.
    pub bag_draws: usize,
    /// Master seed; together with the spec id and replication index it
    /// addresses every random draw of the run.
    pub master_seed: u64,
    /// Grid size for objective minimization and posterior means.
    pub grid_points: usize,
    /// Estimators to evaluate, in output order.
    pub estimators: Vec<EstimatorId>,
    /// Functionals to evaluate, in output order.
    pub functionals: Vec<FunctionalId>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replications: 10_000,
            bag_draws: 400,
            master_seed: 42,
            grid_points: 2001,
            estimators: EstimatorId::ALL.to_vec(),
            functionals: vec![FunctionalId::Identity],
        }
    }
}

impl SimConfig {
    /// Checks the configuration before a run.
    ///
    /// # Errors
    ///
    /// Returns [`Error::InvalidConfig`] on zero replications, zero bag
    /// draws, a grid with fewer than three points, or an empty or
    /// duplicated estimator or functional list.
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("need at least one replication".into()));
        }
        if self.bag_draws == 0 {
            return Err(Error::InvalidConfig("need at least one bag draw".into()));
        }
        if self.grid_points < 3 {
            return Err(Error::InvalidConfig(format!(
                "grid needs at least three points, got {}",
                self.grid_points
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimators selected".into()));
        }
        for (i, e) in self.estimators.iter().enumerate() {
            if self.estimators[..i].contains(e) {
                return Err(Error::InvalidConfig(format!(
                    "estimator `{e}` listed twice"
                )));
            }
        }
        if self.functionals.is_empty() {
            return Err(Error::InvalidConfig("no functionals selected".into()));
        }
        for (i, f) in self.functionals.iter().enumerate() {
            if self.functionals[..i].contains(f) {
                return Err(Error::InvalidConfig(format!(
                    "functional `{f}` listed twice"
                )));
            }
        }
        Ok(())
    }
}

/// Summary of one (estimator, functional) pair over a full run of a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    /// Design identifier.
    pub spec_id: String,
    /// Which estimator produced the estimates.
    pub estimator: EstimatorId,
    /// Which functional the estimates target.
    pub functional: FunctionalId,
    /// Root mean squared error around the true functional value, divided
    /// by the design's reference standard error.
    pub rmse_normalized: f64,
    /// Mean effective F statistic over the run's draws.
    pub mean_eff_f: f64,
    /// Number of instruments of the design.
    pub k: usize,
    /// Replications the summary averages over.
    pub replications: usize,
    /// Master seed of the run.
    pub seed: u64,
}

/// Effective first-stage F statistic of a draw: `xi1' W xi1 / tr(W
/// Omega11)` with the design's TSLS weighting. For one instrument this is
/// the squared first-stage t statistic `xi1^2 / Var(xi1)`.
pub fn effective_f(draw: &MomentDraw, design: &IvDesign) -> f64 {
    let w = design.qzz_inv();
    let quad = draw.xi1.dot(&(w * &draw.xi1));
    let scale = (w * design.omega_block(1, 1)).trace();
    quad / scale
}

/// Root stream for a spec: the master seed with the spec id folded in as
/// the first path element, so different specs never share draws.
pub fn spec_stream(master_seed: u64, spec_id: &str) -> RngStream {
    RngStream::new(master_seed).child(fnv1a(spec_id))
}

/// FNV-1a hash, fixed here so stream addressing never changes across
/// toolchain releases (the standard library's default hasher gives no
/// such guarantee).
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Precomputed per-spec state shared by all replications.
struct SpecContext<'a> {
    design: &'a IvDesign,
    cfg: &'a SimConfig,
    base: RngStream,
    grid: Option<ThetaGrid>,
    functionals: Vec<Functional>,
    targets: Vec<f64>,
    /// Functional values on the grid, per functional; only filled when a
    /// posterior-mean estimator is requested.
    r_on_grid: Vec<Vec<f64>>,
    flat: Option<Prior>,
    invariant: Option<Prior>,
    bag_cfg: BagConfig,
}

impl<'a> SpecContext<'a> {
    fn new(design: &'a IvDesign, cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate()?;
        let wants = |e: EstimatorId| cfg.estimators.contains(&e);
        let needs_grid = wants(EstimatorId::Cue)
            || wants(EstimatorId::BaggedCue)
            || wants(EstimatorId::Liml)
            || wants(EstimatorId::QbFlat)
            || wants(EstimatorId::QbInvariant);
        let needs_posterior = wants(EstimatorId::QbFlat) || wants(EstimatorId::QbInvariant);
        let grid = if needs_grid {
            Some(ThetaGrid::new(design, cfg.grid_points)?)
        } else {
            None
        };
        let functionals: Vec<Functional> = cfg
            .functionals
            .iter()
            .map(|f| f.build(design))
            .collect::<Result<_>>()?;
        let targets: Vec<f64> = functionals
            .iter()
            .map(|f| f.eval(design.theta_star()))
            .collect();
        let r_on_grid = if needs_posterior {
            let thetas = grid
                .as_ref()
                .expect("posterior estimators use the grid")
                .thetas();
            functionals
                .iter()
                .map(|f| thetas.iter().map(|&t| f.eval(t)).collect())
                .collect()
        } else {
            Vec::new()
        };
        let flat = wants(EstimatorId::QbFlat).then(|| flat_prior(design, cfg.grid_points));
        let invariant =
            wants(EstimatorId::QbInvariant).then(|| invariant_prior(design, cfg.grid_points));
        Ok(Self {
            design,
            cfg,
            base: spec_stream(cfg.master_seed, design.id()),
            grid,
            functionals,
            targets,
            r_on_grid,
            flat,
            invariant,
            bag_cfg: BagConfig::new(cfg.bag_draws, 1.0)?,
        })
    }

    fn wants(&self, e: EstimatorId) -> bool {
        self.cfg.estimators.contains(&e)
    }

    fn posterior(
        &self,
        q: &[f64],
        prior: &Prior,
        fi: usize,
        id: EstimatorId,
        rep: usize,
    ) -> Result<f64> {
        posterior_mean_from_objective(q, prior, &self.r_on_grid[fi]).map_err(|e| {
            Error::EstimatorFailure {
                estimator: id.as_str().into(),
                spec_id: self.design.id().into(),
                replication: rep,
                source: Box::new(e),
            }
        })
    }

    /// Evaluates every configured estimator on replication `rep`. Returns
    /// the draw's effective F and the estimates in (estimator-major,
    /// functional-minor) configuration order.
    fn replication(&self, rep: usize) -> Result<(f64, Vec<f64>)> {
        let design = self.design;
        let nf = self.functionals.len();
        let rep_stream = self.base.child(rep as u64);
        let draw = draw_iv(design, &rep_stream);
        let eff_f = effective_f(&draw, design);

        let tsls_theta = self.wants(EstimatorId::Tsls).then(|| tsls(&draw, design));
        let cue_theta = self.wants(EstimatorId::Cue).then(|| {
            self.grid
                .as_ref()
                .expect("grid present for cue")
                .cue_minimize(&draw, design)
        });
        let liml_theta = self.wants(EstimatorId::Liml).then(|| {
            self.grid
                .as_ref()
                .expect("grid present for liml")
                .liml_minimize(&draw, design)
        });

        // Bagged estimators share one noise sequence per replication,
        // addressed by (spec, replication, bag index), so every bagged
        // estimator sees the same perturbed draws and removing one from
        // the configuration never shifts another's inputs.
        let want_btsls = self.wants(EstimatorId::BaggedTsls);
        let want_bcue = self.wants(EstimatorId::BaggedCue);
        let mut acc_btsls: Vec<Vec<f64>> = vec![Vec::new(); if want_btsls { nf } else { 0 }];
        let mut acc_bcue: Vec<Vec<f64>> = vec![Vec::new(); if want_bcue { nf } else { 0 }];
        if want_btsls || want_bcue {
            let scale = self.bag_cfg.noise_scale();
            for b in 0..self.bag_cfg.draws() {
                let mut rng = rep_stream.child(b as u64).rng();
                let (n0, n1) = design.sample_noise(&mut rng);
                let shifted = MomentDraw {
                    xi0: &draw.xi0 + n0 * scale,
                    xi1: &draw.xi1 + n1 * scale,
                };
                if want_btsls {
                    let th = tsls(&shifted, design);
                    for (fi, f) in self.functionals.iter().enumerate() {
                        acc_btsls[fi].push(plug_in(th, f));
                    }
                }
                if want_bcue {
                    let th = self
                        .grid
                        .as_ref()
                        .expect("grid present for bagged cue")
                        .cue_minimize(&shifted, design);
                    for (fi, f) in self.functionals.iter().enumerate() {
                        acc_bcue[fi].push(plug_in(th, f));
                    }
                }
            }
        }

        let mut qb_flat_vals = Vec::new();
        let mut qb_inv_vals = Vec::new();
        if self.flat.is_some() || self.invariant.is_some() {
            let grid = self
                .grid
                .as_ref()
                .expect("grid present for posterior means");
            let mut q = Vec::new();
            grid.cue_objective_values(&draw, &mut q);
            if let Some(prior) = &self.flat {
                for fi in 0..nf {
                    qb_flat_vals.push(self.posterior(&q, prior, fi, EstimatorId::QbFlat, rep)?);
                }
            }
            if let Some(prior) = &self.invariant {
                for fi in 0..nf {
                    qb_inv_vals
                        .push(self.posterior(&q, prior, fi, EstimatorId::QbInvariant, rep)?);
                }
            }
        }

        let mut estimates = Vec::with_capacity(self.cfg.estimators.len() * nf);
        for est in &self.cfg.estimators {
            for fi in 0..nf {
                let f = &self.functionals[fi];
                let value = match est {
                    EstimatorId::Tsls => plug_in(tsls_theta.unwrap(), f),
                    EstimatorId::BaggedTsls => pairwise_mean(&acc_btsls[fi]),
                    EstimatorId::Cue => plug_in(cue_theta.unwrap(), f),
                    EstimatorId::BaggedCue => pairwise_mean(&acc_bcue[fi]),
                    EstimatorId::Liml => plug_in(liml_theta.unwrap(), f),
                    EstimatorId::QbFlat => qb_flat_vals[fi],
                    EstimatorId::QbInvariant => qb_inv_vals[fi],
                };
                estimates.push(value);
            }
        }
        Ok((eff_f, estimates))
    }
}

/// Runs the full Monte Carlo for one spec.
///
/// Replications are evaluated in parallel; the summary statistics are
/// accumulated in replication order with pairwise summation, so the
/// output is bitwise identical across thread counts.
///
/// # Errors
///
/// Returns configuration and grid-construction errors up front, and
/// [`Error::EstimatorFailure`] naming the spec, replication, and
/// estimator if an evaluation fails mid-run.
pub fn run_spec(design: &IvDesign, cfg: &SimConfig) -> Result<Vec<SimReport>> {
    let ctx = SpecContext::new(design, cfg)?;
    let outcomes: Vec<(f64, Vec<f64>)> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| ctx.replication(rep))
        .collect::<Result<_>>()?;
    let eff: Vec<f64> = outcomes.iter().map(|(f, _)| *f).collect();
    let mean_eff_f = pairwise_mean(&eff);
    let se = design.se_ref();
    let nf = cfg.functionals.len();
    let mut reports = Vec::with_capacity(cfg.estimators.len() * nf);
    for (ei, est) in cfg.estimators.iter().enumerate() {
        for (fi, func) in cfg.functionals.iter().enumerate() {
            let idx = ei * nf + fi;
            let z2: Vec<f64> = outcomes
                .iter()
                .map(|(_, vals)| {
                    let z = (vals[idx] - ctx.targets[fi]) / se;
                    z * z
                })
                .collect();
            reports.push(SimReport {
                spec_id: design.id().to_string(),
                estimator: *est,
                functional: *func,
                rmse_normalized: pairwise_mean(&z2).sqrt(),
                mean_eff_f,
                k: design.k(),
                replications: cfg.replications,
                seed: cfg.master_seed,
            });
        }
    }
    Ok(reports)
}

/// How reports are grouped into table columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binning {
    /// By mean effective F: at most 10, 10–20, 20–50, above 50.
    EffF,
    /// By instrument count: 1, 2, 3, at least 4.
    K,
}

impl Binning {
    /// Number of columns; the same for both binnings.
    pub const BIN_COUNT: usize = 4;

    /// Column index for a report.
    pub fn index(&self, report: &SimReport) -> usize {
        match self {
            Binning::EffF => {
                let f = report.mean_eff_f;
                if f <= 10.0 {
                    0
                } else if f <= 20.0 {
                    1
                } else if f <= 50.0 {
                    2
                } else {
                    3
                }
            }
            Binning::K => report.k.clamp(1, 4) - 1,
        }
    }

    /// Column label, safe for CSV headers (no commas).
    pub fn label(&self, bin: usize) -> &'static str {
        match self {
            Binning::EffF => ["f<=10", "10<f<=20", "20<f<=50", "f>50"][bin],
            Binning::K => ["k=1", "k=2", "k=3", "k>=4"][bin],
        }
    }
}

impl std::fmt::Display for Binning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Binning::EffF => "f",
            Binning::K => "k",
        })
    }
}

impl FromStr for Binning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f" => Ok(Binning::EffF),
            "k" => Ok(Binning::K),
            other => Err(Error::InvalidConfig(format!(
                "unknown binning `{other}`; expected `f` or `k`"
            ))),
        }
    }
}

/// One populated cell of an aggregate table.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCell {
    /// Column index under the table's binning.
    pub bin: usize,
    /// Estimator of the pooled reports.
    pub estimator: EstimatorId,
    /// Functional of the pooled reports.
    pub functional: FunctionalId,
    /// Number of specs pooled into the cell.
    pub spec_count: usize,
    /// Mean normalized RMSE over those specs.
    pub mean_rmse: f64,
}

/// Normalized-RMSE table: estimators by bins, one block per functional.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTable {
    binning: Binning,
    bin_specs: [usize; Binning::BIN_COUNT],
    estimators: Vec<EstimatorId>,
    functionals: Vec<FunctionalId>,
    cells: Vec<AggregateCell>,
}

impl AggregateTable {
    /// The binning the columns use.
    pub fn binning(&self) -> Binning {
        self.binning
    }

    /// Number of distinct specs that landed in column `bin`.
    pub fn specs_in_bin(&self, bin: usize) -> usize {
        self.bin_specs[bin]
    }

    /// All populated cells, ordered by (functional, estimator, bin).
    pub fn cells(&self) -> &[AggregateCell] {
        &self.cells
    }

    /// Mean normalized RMSE in one cell, if the cell is populated.
    pub fn mean_rmse(
        &self,
        bin: usize,
        estimator: EstimatorId,
        functional: FunctionalId,
    ) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.bin == bin && c.estimator == estimator && c.functional == functional)
            .map(|c| c.mean_rmse)
    }

    /// Plain-text rendering with aligned columns; empty cells print `-`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "normalized RMSE (root mean square of (estimate - truth) / reference SE), mean over specs"
        );
        for func in &self.functionals {
            let _ = writeln!(out, "\nfunctional: {func}");
            let _ = write!(out, "{:<12}", "estimator");
            for bin in 0..Binning::BIN_COUNT {
                let _ = write!(out, "{:>12}", self.binning.label(bin));
            }
            let _ = writeln!(out);
            for est in &self.estimators {
                let _ = write!(out, "{:<12}", est.as_str());
                for bin in 0..Binning::BIN_COUNT {
                    match self.mean_rmse(bin, *est, *func) {
                        Some(v) => {
                            let _ = write!(out, "{:>12.4}", v);
                        }
                        None => {
                            let _ = write!(out, "{:>12}", "-");
                        }
                    }
                }
                let _ = writeln!(out);
            }
        }
        let _ = write!(out, "\nspecs per bin:");
        for bin in 0..Binning::BIN_COUNT {
            let _ = write!(out, " {}={}", self.binning.label(bin), self.bin_specs[bin]);
        }
        let _ = writeln!(out);
        out
    }

    /// CSV rendering: one row per (functional, estimator) plus one
    /// `specs` row per functional carrying the per-column spec counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("functional,estimator");
        for bin in 0..Binning::BIN_COUNT {
            out.push(',');
            out.push_str(self.binning.label(bin));
        }
        out.push('\n');
        for func in &self.functionals {
            for est in &self.estimators {
                let _ = write!(out, "{func},{est}");
                for bin in 0..Binning::BIN_COUNT {
                    out.push(',');
                    if let Some(v) = self.mean_rmse(bin, *est, *func) {
                        let _ = write!(out, "{v}");
                    }
                }
                out.push('\n');
            }
            let _ = write!(out, "{func},specs");
            for bin in 0..Binning::BIN_COUNT {
                let _ = write!(out, ",{}", self.bin_specs[bin]);
            }
            out.push('\n');
        }
        out
    }
}

/// Pools per-spec reports into a binned table of mean normalized RMSE.
///
/// Every report of one spec must agree on the spec's mean effective F and
/// instrument count — they do when the rows come from the same run.
///
/// # Errors
///
/// Returns [`Error::InvalidConfig`] if `reports` is empty or rows for the
/// same spec disagree on its summary fields (a sign that different runs
/// were mixed).
pub fn aggregate(reports: &[SimReport], binning: Binning) -> Result<AggregateTable> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no reports to aggregate".into()));
    }
    let mut spec_info: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in reports {
        match spec_info.get(r.spec_id.as_str()) {
            None => {
                spec_info.insert(&r.spec_id, (r.mean_eff_f, r.k));
            }
            Some(&(eff, k)) => {
                if eff.to_bits() != r.mean_eff_f.to_bits() || k != r.k {
                    return Err(Error::InvalidConfig(format!(
                        "spec `{}` appears with conflicting summaries; were reports from different runs mixed?",
                        r.spec_id
                    )));
                }
            }
        }
    }
    let mut bin_sets: [BTreeSet<&str>; Binning::BIN_COUNT] = Default::default();
    let mut pools: BTreeMap<(usize, EstimatorId, FunctionalId), Vec<f64>> = BTreeMap::new();
    for r in reports {
        let bin = binning.index(r);
        bin_sets[bin].insert(&r.spec_id);
        pools
            .entry((bin, r.estimator, r.functional))
            .or_default()
            .push(r.rmse_normalized);
    }
    let estimators: Vec<EstimatorId> = EstimatorId::ALL
        .into_iter()
        .filter(|e| reports.iter().any(|r| r.estimator == *e))
        .collect();
    let functionals: Vec<FunctionalId> = FunctionalId::ALL
        .into_iter()
        .filter(|f| reports.iter().any(|r| r.functional == *f))
        .collect();
    let mut cells = Vec::with_capacity(pools.len());
    for func in &functionals {
        for est in &estimators {
            for bin in 0..Binning::BIN_COUNT {
                if let Some(values) = pools.get(&(bin, *est, *func)) {
                    cells.push(AggregateCell {
                        bin,
                        estimator: *est,
                        functional: *func,
                        spec_count: values.len(),
                        mean_rmse: pairwise_mean(values),
                    });
                }
            }
        }
    }
    let mut bin_specs = [0usize; Binning::BIN_COUNT];
    for (i, set) in bin_sets.iter().enumerate() {
        bin_specs[i] = set.len();
    }
    Ok(AggregateTable {
        binning,
        bin_specs,
        estimators,
        functionals,
        cells,
    })
}

const CSV_HEADER: &str =
    "spec_id,estimator,functional,rmse_normalized,mean_eff_f,k,replications,seed";

/// Serializes reports to CSV with a fixed header. Floats use the shortest
/// representation that round-trips, so parsing the output recovers the
/// reports exactly.
pub fn reports_to_csv(reports: &[SimReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        debug_assert!(
            !r.spec_id.contains(',') && !r.spec_id.contains('\n'),
            "spec ids must be CSV-safe"
        );
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.spec_id,
            r.estimator,
            r.functional,
            r.rmse_normalized,
            r.mean_eff_f,
            r.k,
            r.replications,
            r.seed
        );
    }
    out
}

/// Parses a report CSV produced by [`reports_to_csv`].
///
/// `source` names the input in diagnostics.
///
/// # Errors
///
/// Returns [`Error::MalformedCsv`] with a line number and reason for a
/// wrong header, a row with the wrong number of fields, or a field that
/// does not parse.
pub fn parse_reports_csv(text: &str, source: &str) -> Result<Vec<SimReport>> {
    let bad = |line: usize, reason: String| Error::MalformedCsv {
        path: source.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(bad(
                1,
                format!("expected header `{CSV_HEADER}`, got `{header}`"),
            ));
        }
        None => return Err(bad(1, "empty input".into())),
    }
    let mut reports = Vec::new();
    for (idx, row) in lines {
        if row.is_empty() {
            continue;
        }
        let line = idx + 1;
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(
                line,
                format!("expected 8 comma-separated fields, got {}", fields.len()),
            ));
        }
        let float = |name: &str, raw: &str| -> Result<f64> {
            raw.parse::<f64>()
                .map_err(|_| bad(line, format!("field `{name}` is not a number: `{raw}`")))
        };
        let integer = |name: &str, raw: &str| -> Result<u64> {
            raw.parse::<u64>()
                .map_err(|_| bad(line, format!("field `{name}` is not an integer: `{raw}`")))
        };
        reports.push(SimReport {
            spec_id: fields[0].to_string(),
            estimator: fields[1]
                .parse()
                .map_err(|_| bad(line, format!("unknown estimator `{}`", fields[1])))?,
            functional: fields[2]
                .parse()
                .map_err(|_| bad(line, format!("unknown functional `{}`", fields[2])))?,
            rmse_normalized: float("rmse_normalized", fields[3])?,
            mean_eff_f: float("mean_eff_f", fields[4])?,
            k: integer("k", fields[5])? as usize,
            replications: integer("replications", fields[6])? as usize,
            seed: integer("seed", fields[7])?,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagging::bag;
    use nalgebra::{DMatrix, DVector};

    fn small_design(id: &str, pi: f64, suv: f64) -> IvDesign {
        IvDesign::new(
            id,
            DVector::from_vec(vec![pi]),
            0.4,
            DMatrix::from_row_slice(2, 2, &[1.0, suv, suv, 1.0]),
            1.0,
            1.0,
            suv,
            None,
            0.8,
            (-4.0, 4.0),
        )
        .unwrap()
    }

    fn small_config() -> SimConfig {
        SimConfig {
            replications: 4,
            bag_draws: 8,
            master_seed: 7,
            grid_points: 201,
            estimators: EstimatorId::ALL.to_vec(),
            functionals: FunctionalId::ALL.to_vec(),
        }
    }

    fn report(id: &str, est: EstimatorId, rmse: f64, eff: f64, k: usize) -> SimReport {
        SimReport {
            spec_id: id.into(),
            estimator: est,
            functional: FunctionalId::Identity,
            rmse_normalized: rmse,
            mean_eff_f: eff,
            k,
            replications: 100,
            seed: 1,
        }
    }

    #[test]
    fn effective_f_matches_the_stated_normalization() {
        let design = small_design("f", 1.0, 0.0);
        let draw = MomentDraw::new(
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![3.0]),
        )
        .unwrap();
        assert!((effective_f(&draw, &design) - 9.0).abs() < 1e-12);

        let design2 = IvDesign::new(
            "f2",
            DVector::from_vec(vec![1.0, 1.0]),
            0.0,
            DMatrix::identity(4, 4),
            1.0,
            1.0,
            0.0,
            None,
            1.0,
            (-4.0, 4.0),
        )
        .unwrap();
        let draw2 = MomentDraw::new(DVector::zeros(2), DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert!((effective_f(&draw2, &design2) - 12.5).abs() < 1e-12);
    }

    #[test]
    fn binning_matches_the_table_columns() {
        let at = |eff: f64| report("s", EstimatorId::Tsls, 1.0, eff, 1);
        assert_eq!(Binning::EffF.index(&at(9.0)), 0);
        assert_eq!(Binning::EffF.index(&at(10.0)), 0);
        assert_eq!(Binning::EffF.index(&at(11.0)), 1);
        assert_eq!(Binning::EffF.index(&at(20.0)), 1);
        assert_eq!(Binning::EffF.index(&at(50.0)), 2);
        assert_eq!(Binning::EffF.index(&at(51.0)), 3);
        let with_k = |k: usize| report("s", EstimatorId::Tsls, 1.0, 5.0, k);
        assert_eq!(Binning::K.index(&with_k(1)), 0);
        assert_eq!(Binning::K.index(&with_k(2)), 1);
        assert_eq!(Binning::K.index(&with_k(3)), 2);
        assert_eq!(Binning::K.index(&with_k(4)), 3);
        assert_eq!(Binning::K.index(&with_k(9)), 3);
        assert_eq!("f".parse::<Binning>().unwrap(), Binning::EffF);
        assert_eq!("k".parse::<Binning>().unwrap(), Binning::K);
        assert!("x".parse::<Binning>().is_err());
    }

    #[test]
    fn identifier_strings_round_trip() {
        for est in EstimatorId::ALL {
            assert_eq!(est.as_str().parse::<EstimatorId>().unwrap(), est);
        }
        for f in FunctionalId::ALL {
            assert_eq!(f.as_str().parse::<FunctionalId>().unwrap(), f);
        }
        assert!("ols".parse::<EstimatorId>().is_err());
        assert!("identity2".parse::<FunctionalId>().is_err());
    }

    #[test]
    fn run_spec_is_reproducible_and_ordered() {
        let design = small_design("unit", 0.6, 0.3);
        let cfg = small_config();
        let first = run_spec(&design, &cfg).unwrap();
        let second = run_spec(&design, &cfg).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.len(), 14);
        // Estimator-major, functional-minor order matching the config.
        assert_eq!(first[0].estimator, EstimatorId::Tsls);
        assert_eq!(first[0].functional, FunctionalId::Identity);
        assert_eq!(first[1].estimator, EstimatorId::Tsls);
        assert_eq!(first[1].functional, FunctionalId::EndogCorr);
        assert_eq!(first[2].estimator, EstimatorId::BaggedTsls);
        for r in &first {
            assert_eq!(r.spec_id, "unit");
            assert_eq!(r.k, 1);
            assert_eq!(r.replications, 4);
            assert_eq!(r.seed, 7);
            assert_eq!(r.mean_eff_f.to_bits(), first[0].mean_eff_f.to_bits());
            assert!(r.rmse_normalized.is_finite());
        }
    }

    #[test]
    fn single_replication_reduces_to_one_normalized_error() {
        let design = small_design("one", 0.9, 0.2);
        let cfg = SimConfig {
            replications: 1,
            estimators: vec![EstimatorId::Tsls],
            functionals: vec![FunctionalId::Identity],
            ..small_config()
        };
        let reports = run_spec(&design, &cfg).unwrap();
        assert_eq!(reports.len(), 1);
        let draw = draw_iv(&design, &spec_stream(cfg.master_seed, "one").child(0));
        let z = (tsls(&draw, &design) - design.theta_star()) / design.se_ref();
        let expect = pairwise_mean(&[z * z]).sqrt();
        assert_eq!(reports[0].rmse_normalized, expect);
        assert_eq!(reports[0].mean_eff_f, effective_f(&draw, &design));
    }

    #[test]
    fn harness_bagging_matches_the_public_wrapper() {
        let design = small_design("bagcheck", 0.5, 0.4);
        let cfg = SimConfig {
            replications: 1,
            estimators: vec![EstimatorId::BaggedTsls],
            functionals: vec![FunctionalId::Identity],
            ..small_config()
        };
        let reports = run_spec(&design, &cfg).unwrap();
        let rep_stream = spec_stream(cfg.master_seed, "bagcheck").child(0);
        let draw = draw_iv(&design, &rep_stream);
        let bag_cfg = BagConfig::new(cfg.bag_draws, 1.0).unwrap();
        let bagged = bag(|d| tsls(d, &design), &draw, &design, &bag_cfg, &rep_stream);
        let z = (bagged - design.theta_star()) / design.se_ref();
        let expect = pairwise_mean(&[z * z]).sqrt();
        assert_eq!(reports[0].rmse_normalized, expect);
    }

    #[test]
    fn estimator_subsets_do_not_change_shared_reports() {
        let design = small_design("subset", 0.4, -0.3);
        let full = run_spec(&design, &small_config()).unwrap();
        let only = SimConfig {
            estimators: vec![EstimatorId::BaggedCue],
            functionals: vec![FunctionalId::Identity],
            ..small_config()
        };
        let subset = run_spec(&design, &only).unwrap();
        assert_eq!(subset.len(), 1);
        let matching = full
            .iter()
            .find(|r| {
                r.estimator == EstimatorId::BaggedCue && r.functional == FunctionalId::Identity
            })
            .unwrap();
        assert_eq!(&subset[0], matching);
    }

    #[test]
    fn aggregate_pools_specs_by_bin() {
        let reports = vec![
            report("s1", EstimatorId::Tsls, 1.0, 5.0, 1),
            report("s2", EstimatorId::Tsls, 1.5, 8.0, 1),
            report("s3", EstimatorId::Tsls, 0.5, 60.0, 1),
        ];
        let table = aggregate(&reports, Binning::EffF).unwrap();
        assert_eq!(table.specs_in_bin(0), 2);
        assert_eq!(table.specs_in_bin(1), 0);
        assert_eq!(table.specs_in_bin(3), 1);
        let weak = table
            .mean_rmse(0, EstimatorId::Tsls, FunctionalId::Identity)
            .unwrap();
        assert_eq!(weak, 1.25);
        let strong = table
            .mean_rmse(3, EstimatorId::Tsls, FunctionalId::Identity)
            .unwrap();
        assert_eq!(strong, 0.5);
        assert!(table
            .mean_rmse(1, EstimatorId::Tsls, FunctionalId::Identity)
            .is_none());
        let text = table.render();
        assert!(text.contains("f<=10") && text.contains("tsls"));
        let csv = table.to_csv();
        assert!(csv.starts_with("functional,estimator,f<=10,"));
        assert!(csv.contains("identity,specs,2,0,0,1"));
    }

    #[test]
    fn aggregate_rejects_empty_and_mixed_inputs() {
        assert!(aggregate(&[], Binning::EffF).is_err());
        let mixed = vec![
            report("s1", EstimatorId::Tsls, 1.0, 5.0, 1),
            report("s1", EstimatorId::Liml, 1.1, 6.0, 1),
        ];
        assert!(aggregate(&mixed, Binning::EffF).is_err());
    }

    #[test]
    fn csv_round_trips_exactly() {
        let design = small_design("csv", 0.7, 0.25);
        let cfg = SimConfig {
            replications: 2,
            ..small_config()
        };
        let reports = run_spec(&design, &cfg).unwrap();
        let text = reports_to_csv(&reports);
        let parsed = parse_reports_csv(&text, "memory").unwrap();
        assert_eq!(parsed, reports);
    }

    #[test]
    fn malformed_csv_reports_line_numbers() {
        let err = parse_reports_csv("nope\n", "x.csv").unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { line: 1, .. }));

        let mut text = String::from(CSV_HEADER);
        text.push_str("\ns,tsls,identity,1.0,2.0,1,10,42\ns,tsls,identity,1.0\n");
        let err = parse_reports_csv(&text, "x.csv").unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { line: 3, .. }));

        let mut text = String::from(CSV_HEADER);
        text.push_str("\ns,tsls,identity,abc,2.0,1,10,42\n");
        let err = parse_reports_csv(&text, "x.csv").unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { line: 2, .. }));

        let mut text = String::from(CSV_HEADER);
        text.push_str("\ns,ols,identity,1.0,2.0,1,10,42\n");
        let err = parse_reports_csv(&text, "x.csv").unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { line: 2, .. }));
    }
}
