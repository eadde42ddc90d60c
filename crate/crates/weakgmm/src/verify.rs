//! Numerical verification of the structural identities the library rests
//! on: slope and decay behavior of two-point posterior means, the
//! objective-space Lipschitz bound, closed-form versus finite-difference
//! information, invariance of the information density under smooth
//! reparameterization and invertible linear transforms of the moments,
//! scale invariance of argmin estimators (and its deliberate failure for
//! smoothed ones), and grid-refinement stability of posterior means.
//!
//! Every check is deterministic: randomized sweeps draw from a fixed
//! [`RngStream`] seed, so a report is reproducible bit for bit. Checks
//! never panic on bad numerics; a check that cannot complete reports
//! itself as failed with the error in its detail line. The whole suite is
//! sized to run in a few seconds, so it can gate a build.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bagging::{bag, BagConfig};
use crate::error::{Error, Result};
use crate::estimators::{finite_gmm, tsls, ThetaGrid};
use crate::functionals::Functional;
use crate::lipschitz::{
    finite_prior_posterior_mean, moment_distance, posterior_mean_bound_check,
    scale_invariance_check, straddle_pair, FinitePrior, SupportPoint,
};
use crate::model::{
    draw_iv, sigma_kernel, FiniteThetaModel, IvDesign, MomentDraw, RngStream,
};
use crate::numeric::{linspace, pairwise_mean, pairwise_sum};
use crate::quasibayes::{
    flat_prior, invariant_info, invariant_info_general, invariant_prior,
    posterior_mean_from_objective, qb_mean, qb_mean_finite, Prior,
};

/// Master seed for every randomized sweep in the suite.
const VERIFY_SEED: u64 = 1729;

/// Outcome of a single verification check.
///
/// `observed` is the one number the check compared against `bound` —
/// usually a maximal error or ratio, for the counting checks a count. The
/// direction of the comparison is the check's own business; `passed` is
/// authoritative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub bound: f64,
    pub detail: String,
}

/// Results of the full verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    checks: Vec<CheckResult>,
    all_passed: bool,
}

impl VerifyReport {
    fn new(checks: Vec<CheckResult>) -> Self {
        let all_passed = checks.iter().all(|c| c.passed);
        Self { checks, all_passed }
    }

    /// Individual check outcomes, in the order they ran.
    pub fn checks(&self) -> &[CheckResult] {
        &self.checks
    }

    /// Whether every check passed.
    pub fn all_passed(&self) -> bool {
        self.all_passed
    }

    /// Plain-text report: one `PASS`/`FAIL` line per check plus a summary
    /// line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{status} {:<32} observed {:>13.6e}  bound {:>13.6e}  {}",
                c.name, c.observed, c.bound, c.detail
            );
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        if failed == 0 {
            let _ = writeln!(out, "all {} checks passed", self.checks.len());
        } else {
            let _ = writeln!(out, "{failed} of {} checks failed", self.checks.len());
        }
        out
    }
}

/// Runs `body`, converting an error into a failed check so the suite
/// always produces a complete report.
fn run_check(
    name: &'static str,
    body: impl FnOnce(&'static str) -> Result<CheckResult>,
) -> CheckResult {
    body(name).unwrap_or_else(|e| CheckResult {
        name: name.to_owned(),
        passed: false,
        observed: f64::NAN,
        bound: f64::NAN,
        detail: format!("aborted: {e}"),
    })
}

fn result(name: &str, passed: bool, observed: f64, bound: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_owned(),
        passed,
        observed,
        bound,
        detail,
    }
}

/// Runs the whole suite and collects the report.
pub fn run_verification() -> VerifyReport {
    VerifyReport::new(vec![
        run_check("two-point-slope", check_two_point_slope),
        run_check("far-field-slope-growth", check_far_field_slope_growth),
        run_check("bounded-region-ratio", check_bounded_region_ratio),
        run_check("two-point-prior-decay", check_two_point_prior_decay),
        run_check("objective-space-lipschitz", check_objective_space_lipschitz),
        run_check("posterior-mean-range", check_posterior_mean_range),
        run_check("flat-prior-centering", check_flat_prior_centering),
        run_check(
            "posterior-bound-random-priors",
            check_posterior_bound_random_priors,
        ),
        run_check("info-unit-and-tail", check_info_unit_and_tail),
        run_check("info-kernel-agreement", check_info_kernel_agreement),
        run_check("info-score-variance", check_info_score_variance),
        run_check("constant-kernel-zero-info", check_constant_kernel_zero_info),
        run_check("scalar-determinant-form", check_scalar_determinant_form),
        run_check(
            "inverse-root-info-quadratic",
            check_inverse_root_info_quadratic,
        ),
        run_check("invariant-prior-mode", check_invariant_prior_mode),
        run_check("symmetric-design-prior", check_symmetric_design_prior),
        run_check(
            "reparameterization-invariance",
            check_reparameterization_invariance,
        ),
        run_check(
            "linear-transform-invariance",
            check_linear_transform_invariance,
        ),
        run_check("scale-invariance-argmin", check_scale_invariance_argmin),
        run_check("scale-sensitivity-smoothed", check_scale_sensitivity_smoothed),
        run_check("straddle-divergence", check_straddle_divergence),
        run_check("grid-refinement-agreement", check_grid_refinement_agreement),
    ])
}

// ---------------------------------------------------------------------------
// Fixtures.

/// Builds a design from a full moment covariance, deriving the three
/// scalar summaries as block traces over `k`.
fn design_from_omega(
    id: &str,
    k: usize,
    pi: DVector<f64>,
    theta_star: f64,
    omega: DMatrix<f64>,
    bounds: (f64, f64),
) -> Result<IvDesign> {
    let kf = k as f64;
    let su2 = (0..k).map(|i| omega[(i, i)]).sum::<f64>() / kf;
    let sv2 = (0..k).map(|i| omega[(k + i, k + i)]).sum::<f64>() / kf;
    let suv = (0..k).map(|i| omega[(i, k + i)]).sum::<f64>() / kf;
    IvDesign::new(id, pi, theta_star, omega, su2, sv2, suv, None, 1.0, bounds)
}

/// Homoskedastic design with `omega = [[su2, suv], [suv, sv2]] (x) I_k`.
fn homoskedastic_design(
    id: &str,
    k: usize,
    pi: f64,
    theta_star: f64,
    su2: f64,
    sv2: f64,
    suv: f64,
    bounds: (f64, f64),
) -> Result<IvDesign> {
    let n = 2 * k;
    let mut omega = DMatrix::zeros(n, n);
    for j in 0..k {
        omega[(j, j)] = su2;
        omega[(k + j, k + j)] = sv2;
        omega[(j, k + j)] = suv;
        omega[(k + j, j)] = suv;
    }
    design_from_omega(
        id,
        k,
        DVector::from_element(k, pi),
        theta_star,
        omega,
        bounds,
    )
}

/// Fixed heteroskedastic two-instrument design, `omega = L L'` for a
/// dense lower-triangular `L`, so all four blocks are full and none is a
/// scaled identity.
fn hetero_design() -> Result<IvDesign> {
    let l = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, 0.0, 0.0, //
            0.3, 0.9, 0.0, 0.0, //
            0.45, -0.2, 1.1, 0.0, //
            -0.15, 0.35, 0.25, 0.8,
        ],
    );
    let omega = &l * l.transpose();
    design_from_omega(
        "verify-hetero",
        2,
        DVector::from_vec(vec![0.9, -0.4]),
        0.3,
        omega,
        (-4.0, 4.0),
    )
}

/// Random full-covariance design drawn from `stream`.
fn random_design(id: &str, k: usize, stream: &RngStream) -> Result<IvDesign> {
    let mut rng = stream.rng();
    let n = 2 * k;
    let a = DMatrix::from_fn(n, n, |_, _| 0.6 * rng.sample::<f64, _>(StandardNormal));
    let omega = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
    let pi = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    design_from_omega(id, k, pi, 0.0, omega, (-4.0, 4.0))
}

/// Two support points at parameter values 0 and 1 with unit covariance:
/// the smallest model in which a posterior mean is a genuine decision
/// between parameter values.
fn two_point_model() -> Result<FiniteThetaModel> {
    FiniteThetaModel::with_identity_weights(
        vec![0.0, 1.0],
        1,
        DVector::zeros(2),
        DMatrix::identity(2, 2),
    )
}

/// Posterior mean of the two-point model under equal prior weights.
fn two_point_delta(model: &FiniteThetaModel, g0: f64, g1: f64) -> f64 {
    qb_mean_finite(&DVector::from_vec(vec![g0, g1]), model, &[0.5, 0.5])[0]
}

// ---------------------------------------------------------------------------
// Posterior-mean smoothness.

/// At the balanced far point `(8, 8)` the two-point posterior mean has
/// slope `8 / 4 = 2` in the first coordinate.
fn check_two_point_slope(name: &'static str) -> Result<CheckResult> {
    let model = two_point_model()?;
    let h = 1e-4;
    let m = 8.0;
    let slope =
        (two_point_delta(&model, m + h, m) - two_point_delta(&model, m - h, m)) / (2.0 * h);
    let observed = (slope - 2.0).abs();
    let bound = 1e-3;
    Ok(result(
        name,
        observed <= bound,
        observed,
        bound,
        format!("central slope {slope:.7} at the balanced point (8, 8), target 2"),
    ))
}

/// The balanced-point slope grows linearly: `M / 4` at `(M, M)`, checked
/// at `M = 8, 16, 32` and strictly increasing across them.
fn check_far_field_slope_growth(name: &'static str) -> Result<CheckResult> {
    let model = two_point_model()?;
    let h = 1e-4;
    let mut slopes = Vec::new();
    let mut worst = 0.0f64;
    for &m in &[8.0, 16.0, 32.0] {
        let slope =
            (two_point_delta(&model, m + h, m) - two_point_delta(&model, m - h, m)) / (2.0 * h);
        worst = worst.max((slope / (m / 4.0) - 1.0).abs());
        slopes.push(slope);
    }
    let monotone = slopes[0] < slopes[1] && slopes[1] < slopes[2];
    let bound = 0.02;
    Ok(result(
        name,
        monotone && worst <= bound,
        worst,
        bound,
        format!(
            "slopes {:.4}, {:.4}, {:.4} at M = 8, 16, 32 against M/4{}",
            slopes[0],
            slopes[1],
            slopes[2],
            if monotone { "" } else { "; not increasing" }
        ),
    ))
}

/// Where at least one coordinate stays within `[-2, 2]` the two-point
/// posterior mean changes slowly: the l1 difference ratio stays small
/// even though the unrestricted slope grows without bound.
fn check_bounded_region_ratio(name: &'static str) -> Result<CheckResult> {
    let model = two_point_model()?;
    let stream = RngStream::new(VERIFY_SEED).child(3);

    fn region_point(rng: &mut impl Rng) -> (f64, f64) {
        let small = rng.gen_range(-2.0..2.0);
        let large = rng.gen_range(-8.0..8.0);
        if rng.gen::<bool>() {
            (small, large)
        } else {
            (large, small)
        }
    }

    fn clamp_into_region(mut g: (f64, f64)) -> (f64, f64) {
        if g.0.abs().min(g.1.abs()) > 2.0 {
            if g.0.abs() <= g.1.abs() {
                g.0 = 2.0f64.copysign(g.0);
            } else {
                g.1 = 2.0f64.copysign(g.1);
            }
        }
        g
    }

    let mut max_ratio = 0.0f64;
    for i in 0..10_000u64 {
        let mut rng = stream.child(i).rng();
        let a = region_point(&mut rng);
        let b = if i % 2 == 0 {
            region_point(&mut rng)
        } else {
            clamp_into_region((
                a.0 + rng.gen_range(-0.3..0.3),
                a.1 + rng.gen_range(-0.3..0.3),
            ))
        };
        let dist = (a.0 - b.0).abs() + (a.1 - b.1).abs();
        if dist == 0.0 {
            continue;
        }
        let da = two_point_delta(&model, a.0, a.1);
        let db = two_point_delta(&model, b.0, b.1);
        max_ratio = max_ratio.max((da - db).abs() / dist);
    }
    let bound = 6.0;
    Ok(result(
        name,
        max_ratio <= bound,
        max_ratio,
        bound,
        "largest l1 difference ratio over 10000 pairs with min(|g0|, |g1|) <= 2".to_owned(),
    ))
}

/// Crossed two-point location priors at separation `C` pin the posterior
/// mean down at rate `1 / (1 + e^C)`: strictly decreasing in `C` and
/// below `1e-6` by `C = 50`.
fn check_two_point_prior_decay(name: &'static str) -> Result<CheckResult> {
    let model = two_point_model()?;
    let obs = DVector::from_vec(vec![0.0, 1.0]);
    let mut values = Vec::new();
    for &c in &[5.0, 10.0, 20.0, 50.0] {
        let prior = FinitePrior::new(
            vec![
                SupportPoint {
                    theta_index: 0,
                    mean: DVector::from_vec(vec![0.0, c]),
                    weight: 0.5,
                },
                SupportPoint {
                    theta_index: 1,
                    mean: DVector::from_vec(vec![c, 0.0]),
                    weight: 0.5,
                },
            ],
            &model,
        )?;
        values.push(finite_prior_posterior_mean(&obs, &model, &prior)[0]);
    }
    let monotone = values.windows(2).all(|w| w[1] < w[0]);
    let observed = values[3];
    let bound = 1e-6;
    Ok(result(
        name,
        monotone && observed <= bound,
        observed,
        bound,
        format!(
            "posterior means {:.3e}, {:.3e}, {:.3e}, {:.3e} at separations 5, 10, 20, 50{}",
            values[0],
            values[1],
            values[2],
            values[3],
            if monotone { "" } else { "; not decreasing" }
        ),
    ))
}

// ---------------------------------------------------------------------------
// Posterior means as functions of the objective.

/// With functional values in `[-1, 1]`, moving the objective moves the
/// posterior mean by at most half the sup-norm move: the softmax gradient
/// in each objective coordinate is half the posterior-weighted absolute
/// deviation of the functional, which the value range caps at one.
fn check_objective_space_lipschitz(name: &'static str) -> Result<CheckResult> {
    let stream = RngStream::new(VERIFY_SEED).child(5);
    let s = 20;
    let local_scales = [1e-1, 1e-3, 1e-6];
    let mut max_ratio = 0.0f64;
    for i in 0..10_000u64 {
        let mut rng = stream.child(i).rng();
        let weights: Vec<f64> = (0..s).map(|_| rng.gen_range(0.01..1.0)).collect();
        let prior = Prior::from_weights(weights)?;
        let r: Vec<f64> = (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..40.0)).collect();
        let q2: Vec<f64> = if i % 2 == 0 {
            (0..s).map(|_| rng.gen_range(0.0..40.0)).collect()
        } else {
            let c = local_scales[((i / 2) as usize) % local_scales.len()];
            q.iter().map(|&v| v + c * rng.gen_range(-1.0..1.0)).collect()
        };
        let dist = q
            .iter()
            .zip(&q2)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if dist == 0.0 {
            continue;
        }
        let da = posterior_mean_from_objective(&q, &prior, &r)?;
        let db = posterior_mean_from_objective(&q2, &prior, &r)?;
        max_ratio = max_ratio.max((da - db).abs() / dist);
    }
    let bound = 0.5;
    Ok(result(
        name,
        max_ratio <= bound,
        max_ratio,
        bound,
        "largest |mean change| / |objective change|_inf over 10000 random pairs".to_owned(),
    ))
}

/// A posterior mean is a convex combination: it cannot leave the range of
/// the functional values.
fn check_posterior_mean_range(name: &'static str) -> Result<CheckResult> {
    let stream = RngStream::new(VERIFY_SEED).child(6);
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = stream.child(case).rng();
        let s = 5 + (case as usize % 20);
        let weights: Vec<f64> = (0..s).map(|_| rng.gen_range(0.1..1.0)).collect();
        let prior = Prior::from_weights(weights)?;
        let q: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..60.0)).collect();
        let r: Vec<f64> = (0..s).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mean = posterior_mean_from_objective(&q, &prior, &r)?;
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((lo - mean).max(mean - hi).max(0.0));
    }
    let bound = 1e-12;
    Ok(result(
        name,
        worst <= bound,
        worst,
        bound,
        "largest excursion outside the functional's value range over 100 cases".to_owned(),
    ))
}

/// A constant objective leaves the flat prior untouched, so the posterior
/// mean of the parameter is the interval midpoint — the trapezoid masses
/// average a linear function exactly.
fn check_flat_prior_centering(name: &'static str) -> Result<CheckResult> {
    let design = homoskedastic_design(
        "verify-center",
        1,
        1.0,
        0.5,
        1.0,
        1.0,
        0.2,
        (-1.0, 3.0),
    )?;
    let n = 2001;
    let prior = flat_prior(&design, n);
    let q = vec![0.0; n];
    let r = linspace(-1.0, 3.0, n);
    let mean = posterior_mean_from_objective(&q, &prior, &r)?;
    let observed = (mean - 1.0).abs();
    let bound = 1e-10;
    Ok(result(
        name,
        observed <= bound,
        observed,
        bound,
        format!("flat posterior mean {mean:.12} on a constant objective over (-1, 3)"),
    ))
}

/// The explicit Lipschitz constant for finite Gaussian-location priors
/// holds on randomized pair sweeps for twenty random models and priors.
fn check_posterior_bound_random_priors(name: &'static str) -> Result<CheckResult> {
    let stream = RngStream::new(VERIFY_SEED).child(7);
    let mut worst_fraction = 0.0f64;
    let mut violations = 0usize;
    for p in 0..20u64 {
        let mut rng = stream.child(p).rng();
        let s = 2 + (p as usize % 2);
        let k = 1 + ((p / 2) as usize % 2);
        let dim = s * k;
        let a = DMatrix::from_fn(dim, dim, |_, _| {
            0.7 * rng.sample::<f64, _>(StandardNormal)
        });
        let sigma = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.6;
        let theta_values: Vec<f64> = (0..s).map(|j| j as f64).collect();
        let model =
            FiniteThetaModel::with_identity_weights(theta_values, k, DVector::zeros(dim), sigma)?;
        let points: Vec<SupportPoint> = (0..s)
            .map(|j| {
                let mean = DVector::from_fn(dim, |i, _| {
                    if i / k == j {
                        0.0
                    } else {
                        1.5 * rng.sample::<f64, _>(StandardNormal)
                    }
                });
                SupportPoint {
                    theta_index: j,
                    mean,
                    weight: rng.gen_range(0.5..2.0),
                }
            })
            .collect();
        let prior = FinitePrior::new(points, &model)?;
        let w_bound = prior.max_alpha_norm1() * 1.2;
        let report =
            posterior_mean_bound_check(&model, &prior, w_bound, 5_000, &stream.child(100 + p))?;
        if report.violated {
            violations += 1;
        }
        if let Some(b) = report.bound {
            worst_fraction = worst_fraction.max(report.max_ratio / b);
        }
    }
    let bound = 1.0;
    Ok(result(
        name,
        violations == 0,
        worst_fraction,
        bound,
        format!(
            "largest ratio-to-constant fraction over 20 priors x 5000 pairs; {violations} violation(s)"
        ),
    ))
}

// ---------------------------------------------------------------------------
// Information density.

/// On the unit design the information is exactly one at the origin and
/// decays like `theta^-4` far out.
fn check_info_unit_and_tail(name: &'static str) -> Result<CheckResult> {
    let design =
        homoskedastic_design("verify-unit", 1, 1.0, 0.0, 1.0, 1.0, 0.0, (-4.0, 4.0))?;
    let at_zero = (invariant_info(&design, 0.0) - 1.0).abs();
    let tail = invariant_info(&design, 1e6).max(invariant_info(&design, -1e6));
    let observed = at_zero.max(tail);
    let bound = 1e-6;
    Ok(result(
        name,
        observed <= bound,
        observed,
        bound,
        format!("|i(0) - 1| = {at_zero:.2e}, i(+-1e6) <= {tail:.2e}"),
    ))
}

/// The finite-difference information of the raw moment kernel matches the
/// closed form on a dense heteroskedastic design.
fn check_info_kernel_agreement(name: &'static str) -> Result<CheckResult> {
    let design = hetero_design()?;
    let (lo, hi) = design.theta_bounds();
    let step = 1e-4 * (hi - lo);
    let kernel = |a: f64, b: f64| sigma_kernel(&design, a, b);
    let mut worst = 0.0f64;
    for &t in &[-1.2, 0.0, 0.7, 1.5] {
        let exact = invariant_info(&design, t);
        let fd = invariant_info_general(kernel, t, step)?;
        worst = worst.max(((fd - exact) / exact).abs());
    }
    let bound = 1e-4;
    Ok(result(
        name,
        worst <= bound,
        worst,
        bound,
        "largest relative gap between kernel differencing and the closed form".to_owned(),
    ))
}

/// The information equals a quarter of the variance of the objective's
/// parameter derivative under the centered Gaussian draw, estimated by
/// Monte Carlo on five random designs.
fn check_info_score_variance(name: &'static str) -> Result<CheckResult> {
    let stream = RngStream::new(VERIFY_SEED).child(9);
    let draws = 300_000;
    let h = 1e-4;
    let mut worst = 0.0f64;
    for case in 0..5u64 {
        let k = 1 + (case as usize % 2);
        let design = random_design(
            &format!("verify-score-{case}"),
            k,
            &stream.child(100 + case),
        )?;
        let theta = stream.child(200 + case).rng().gen_range(-1.5..1.5);
        let exact = invariant_info(&design, theta);
        let chol_up = design
            .var_g(theta + h)
            .cholesky()
            .ok_or(Error::SingularKernel { theta: theta + h })?;
        let chol_dn = design
            .var_g(theta - h)
            .cholesky()
            .ok_or(Error::SingularKernel { theta: theta - h })?;
        let mut rng = stream.child(300 + case).rng();
        let mut scores = Vec::with_capacity(draws);
        for _ in 0..draws {
            let (xi0, xi1) = design.sample_noise(&mut rng);
            let g_up = &xi0 - &xi1 * (theta + h);
            let g_dn = &xi0 - &xi1 * (theta - h);
            let q_up = g_up.dot(&chol_up.solve(&g_up));
            let q_dn = g_dn.dot(&chol_dn.solve(&g_dn));
            scores.push((q_up - q_dn) / (2.0 * h));
        }
        let mean = pairwise_mean(&scores);
        let centered: Vec<f64> = scores.iter().map(|v| (v - mean) * (v - mean)).collect();
        let mc = 0.25 * pairwise_mean(&centered);
        worst = worst.max(((mc - exact) / exact).abs());
    }
    let bound = 0.02;
    Ok(result(
        name,
        worst <= bound,
        worst,
        bound,
        format!("largest relative gap over 5 designs x {draws} draws"),
    ))
}

/// A parameter-free kernel carries no information; the finite-difference
/// formula returns exactly zero on it.
fn check_constant_kernel_zero_info(name: &'static str) -> Result<CheckResult> {
    let fixed = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let kernel = |_a: f64, _b: f64| fixed.clone();
    let observed = invariant_info_general(kernel, 0.7, 1e-3)?.abs();
    let bound = 1e-12;
    Ok(result(
        name,
        observed <= bound,
        observed,
        bound,
        "information of a constant positive definite kernel".to_owned(),
    ))
}

/// For a single instrument the information is the ratio of the
/// conditional derivative variance to the moment variance; the two
/// arithmetic routes agree to rounding.
fn check_scalar_determinant_form(name: &'static str) -> Result<CheckResult> {
    let design = homoskedastic_design(
        "verify-scalar",
        1,
        1.0,
        0.375,
        1.4,
        0.8,
        0.3,
        (-6.0, 6.0),
    )?;
    let omega = design.omega();
    let (o00, o01, o11) = (omega[(0, 0)], omega[(0, 1)], omega[(1, 1)]);
    let mut lo_ratio = f64::INFINITY;
    let mut hi_ratio = f64::NEG_INFINITY;
    for &t in &linspace(-6.0, 6.0, 401) {
        let v = o00 - 2.0 * t * o01 + t * t * o11;
        let a = o01 - t * o11;
        let cond_var = o11 - a * a / v;
        let ratio = (cond_var / v).sqrt() / invariant_info(&design, t).sqrt();
        lo_ratio = lo_ratio.min(ratio);
        hi_ratio = hi_ratio.max(ratio);
    }
    let observed = hi_ratio / lo_ratio - 1.0;
    let bound = 1e-6;
    Ok(result(
        name,
        observed <= bound,
        observed,
        bound,
        "spread of sqrt(conditional variance / variance) / sqrt(i) over 401 points".to_owned(),
    ))
}

/// For homoskedastic designs the reciprocal root information is an exact
/// quadratic in the parameter: a three-node fit reproduces it everywhere.
fn check_inverse_root_info_quadratic(name: &'static str) -> Result<CheckResult> {
    let design =
        homoskedastic_design("verify-quad", 2, 0.8, 0.2, 1.1, 0.7, 0.2, (-4.0, 4.0))?;
    let f = |t: f64| 1.0 / invariant_info(&design, t).sqrt();
    let nodes = [-3.0, 0.0, 3.0];
    let values = [f(nodes[0]), f(nodes[1]), f(nodes[2])];
    let fit = |t: f64| {
        let l0 = (t - nodes[1]) * (t - nodes[2]) / ((nodes[0] - nodes[1]) * (nodes[0] - nodes[2]));
        let l1 = (t - nodes[0]) * (t - nodes[2]) / ((nodes[1] - nodes[0]) * (nodes[1] - nodes[2]));
        let l2 = (t - nodes[0]) * (t - nodes[1]) / ((nodes[2] - nodes[0]) * (nodes[2] - nodes[1]));
        values[0] * l0 + values[1] * l1 + values[2] * l2
    };
    let mut worst = 0.0f64;
    for &t in &linspace(-4.0, 4.0, 401) {
        worst = worst.max(((fit(t) - f(t)) / f(t)).abs());
    }
    let bound = 1e-6;
    Ok(result(
        name,
        worst <= bound,
        worst,
        bound,
        "largest relative residual of a three-node quadratic fit to 1/sqrt(i)".to_owned(),
    ))
}

/// On a homoskedastic single-instrument design the invariant prior peaks
/// at the regression limit point `suv / sv2`.
fn check_invariant_prior_mode(name: &'static str) -> Result<CheckResult> {
    let design = homoskedastic_design(
        "verify-mode",
        1,
        1.0,
        0.5,
        1.3,
        0.9,
        0.45,
        (-4.0, 4.0),
    )?;
    let n = 2001;
    let prior = invariant_prior(&design, n);
    let thetas = linspace(-4.0, 4.0, n);
    let (j_max, _) = prior
        .weights()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("prior weights are finite"))
        .expect("prior is nonempty");
    let mode = thetas[j_max];
    let target = 0.45 / 0.9;
    let grid_step = 8.0 / (n as f64 - 1.0);
    let observed = (mode - target).abs();
    let bound = grid_step + 1e-12;
    Ok(result(
        name,
        observed <= bound,
        observed,
        bound,
        format!("prior mode {mode:.4} against the regression limit {target:.4}"),
    ))
}

/// With uncorrelated noise blocks the design is symmetric about zero, and
/// so is the invariant prior.
fn check_symmetric_design_prior(name: &'static str) -> Result<CheckResult> {
    let design =
        homoskedastic_design("verify-sym", 1, 1.0, 0.0, 1.0, 1.0, 0.0, (-4.0, 4.0))?;
    let prior = invariant_prior(&design, 2001);
    let w = prior.weights();
    let n = w.len();
    let mut worst = 0.0f64;
    for j in 0..n {
        worst = worst.max((w[j] - w[n - 1 - j]).abs());
    }
    let bound = 1e-10;
    Ok(result(
        name,
        worst <= bound,
        worst,
        bound,
        "largest asymmetry of the invariant prior weights".to_owned(),
    ))
}

/// The invariant prior is a genuine density: pushing the parameter
/// through `tan` and rebuilding the prior from the composed kernel lands
/// on the pushforward of the original, up to finite-difference error.
fn check_reparameterization_invariance(name: &'static str) -> Result<CheckResult> {
    let design = homoskedastic_design(
        "verify-reparam",
        1,
        1.0,
        0.35,
        1.2,
        1.0,
        0.35,
        (-4.0, 4.0),
    )?;
    let (lo, hi) = design.theta_bounds();
    let (p_lo, p_hi) = (lo.atan(), hi.atan());
    let n = 801;
    let psis = linspace(p_lo, p_hi, n);
    let h_psi = (p_hi - p_lo) / (n as f64 - 1.0);
    let step = 1e-4 * (p_hi - p_lo);
    let kernel = |a: f64, b: f64| sigma_kernel(&design, a.tan(), b.tan());
    let mut w_composed = Vec::with_capacity(n);
    let mut w_pushed = Vec::with_capacity(n);
    for (j, &psi) in psis.iter().enumerate() {
        let mass = if j == 0 || j == n - 1 { 0.5 * h_psi } else { h_psi };
        let info_composed = invariant_info_general(kernel, psi, step)?;
        w_composed.push(info_composed.max(0.0).sqrt() * mass);
        let sec2 = 1.0 / (psi.cos() * psi.cos());
        w_pushed.push(invariant_info(&design, psi.tan()).sqrt() * sec2 * mass);
    }
    let total_composed = pairwise_sum(&w_composed);
    let total_pushed = pairwise_sum(&w_pushed);
    let diffs: Vec<f64> = w_composed
        .iter()
        .zip(&w_pushed)
        .map(|(a, b)| (a / total_composed - b / total_pushed).abs())
        .collect();
    let observed = 0.5 * pairwise_sum(&diffs);
    let bound = 1e-4;
    Ok(result(
        name,
        observed <= bound,
        observed,
        bound,
        "total variation between the composed-kernel prior and the pushforward".to_owned(),
    ))
}

/// Multiplying the moments by a smooth invertible matrix function of the
/// parameter leaves the information untouched.
fn check_linear_transform_invariance(name: &'static str) -> Result<CheckResult> {
    let design = hetero_design()?;
    let (lo, hi) = design.theta_bounds();
    let step = 1e-4 * (hi - lo);
    let b_mat = |t: f64| {
        let s0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let s1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -1.0]);
        DMatrix::identity(2, 2)
            + s0 * (0.05 * (0.4 * t + 0.3).sin())
            + s1 * (0.03 * (0.3 * t - 0.7).cos())
    };
    let kernel = |a: f64, b: f64| b_mat(a) * sigma_kernel(&design, a, b) * b_mat(b).transpose();
    let mut worst = 0.0f64;
    for &t in &[-2.0, 0.3, 1.9] {
        let exact = invariant_info(&design, t);
        let transformed = invariant_info_general(kernel, t, step)?;
        worst = worst.max(((transformed - exact) / exact).abs());
    }
    let bound = 1e-6;
    Ok(result(
        name,
        worst <= bound,
        worst,
        bound,
        "largest relative information change under a smooth invertible transform".to_owned(),
    ))
}

// ---------------------------------------------------------------------------
// Scale behavior and discontinuities.

/// Argmin estimators ignore a positive rescaling of the moments: the
/// closed-form ratio exactly, grid minimizers up to refinement rounding,
/// and the finite-grid argmin exactly.
fn check_scale_invariance_argmin(name: &'static str) -> Result<CheckResult> {
    let design = homoskedastic_design(
        "verify-scale",
        1,
        0.6,
        0.1,
        1.0,
        1.0,
        0.25,
        (-4.0, 4.0),
    )?;
    let grid = ThetaGrid::new(&design, 2001)?;
    let stream = RngStream::new(VERIFY_SEED).child(11);
    let scales = [0.5, 3.0, 100.0];
    let draws = 32;

    let ok_tsls = scale_invariance_check(
        |d: &MomentDraw| tsls(d, &design),
        |i| draw_iv(&design, &stream.child(i as u64)),
        |d: &MomentDraw, c| d.scaled(c),
        draws,
        &scales,
        1e-12,
    );
    let ok_cue = scale_invariance_check(
        |d: &MomentDraw| grid.cue_minimize(d, &design),
        |i| draw_iv(&design, &stream.child(i as u64)),
        |d: &MomentDraw, c| d.scaled(c),
        draws,
        &scales,
        1e-10,
    );
    let ok_liml = scale_invariance_check(
        |d: &MomentDraw| grid.liml_minimize(d, &design),
        |i| draw_iv(&design, &stream.child(i as u64)),
        |d: &MomentDraw, c| d.scaled(c),
        draws,
        &scales,
        1e-10,
    );

    let f_stream = RngStream::new(VERIFY_SEED).child(12);
    let mut f_rng = f_stream.rng();
    let dim = 5;
    let a = DMatrix::from_fn(dim, dim, |_, _| {
        0.4 * f_rng.sample::<f64, _>(StandardNormal)
    });
    let sigma = &a * a.transpose() + DMatrix::identity(dim, dim);
    let f_model = FiniteThetaModel::with_identity_weights(
        vec![-1.0, -0.3, 0.2, 0.8, 1.5],
        1,
        DVector::zeros(dim),
        sigma,
    )?;
    let ok_finite = scale_invariance_check(
        |g: &DVector<f64>| f_model.theta_values()[finite_gmm(g, &f_model)],
        |i| {
            let mut rng = f_stream.child(i as u64).rng();
            f_model.sample_noise(&mut rng)
        },
        |g: &DVector<f64>, c| g * c,
        draws,
        &scales,
        1e-12,
    );

    let passes = [ok_tsls, ok_cue, ok_liml, ok_finite];
    let observed = passes.iter().filter(|&&p| p).count() as f64;
    let bound = 4.0;
    Ok(result(
        name,
        observed == bound,
        observed,
        bound,
        format!(
            "invariant: closed-form {ok_tsls}, grid continuous {ok_cue}, grid weighted {ok_liml}, finite argmin {ok_finite}"
        ),
    ))
}

/// Smoothed estimators are deliberately not scale invariant: bagging
/// perturbs with fixed-size noise and the quasi-posterior tempers with
/// the squared scale, so both must fail the invariance probe.
fn check_scale_sensitivity_smoothed(name: &'static str) -> Result<CheckResult> {
    let design = homoskedastic_design(
        "verify-smooth",
        1,
        0.2,
        0.1,
        1.0,
        1.0,
        0.3,
        (-4.0, 4.0),
    )?;
    let stream = RngStream::new(VERIFY_SEED).child(13);
    let noise = stream.child(1);
    let bag_cfg = BagConfig::new(400, 1.0)?;
    let bag_invariant = scale_invariance_check(
        |d: &MomentDraw| bag(|x| tsls(x, &design), d, &design, &bag_cfg, &noise),
        |i| draw_iv(&design, &stream.child(100 + i as u64)),
        |d: &MomentDraw, c| d.scaled(c),
        12,
        &[3.0],
        1e-3,
    );
    let flat = flat_prior(&design, 801);
    let functional = Functional::identity(&design)?;
    let qb_invariant = scale_invariance_check(
        |d: &MomentDraw| {
            qb_mean(d, &design, &flat, &functional)
                .expect("the objective is finite on the whole grid")[0]
        },
        |i| draw_iv(&design, &stream.child(100 + i as u64)),
        |d: &MomentDraw, c| d.scaled(c),
        12,
        &[3.0],
        1e-3,
    );
    let observed = [!bag_invariant, !qb_invariant]
        .iter()
        .filter(|&&sensitive| sensitive)
        .count() as f64;
    let bound = 2.0;
    Ok(result(
        name,
        observed == bound,
        observed,
        bound,
        format!(
            "scale sensitive: bagged {}, quasi-posterior {}",
            !bag_invariant, !qb_invariant
        ),
    ))
}

/// A sign-straddling pair with a tiny first stage throws the closed-form
/// ratio across the whole interval, while the bagged version moves in
/// proportion to its ordinary local variation.
fn check_straddle_divergence(name: &'static str) -> Result<CheckResult> {
    let design = homoskedastic_design(
        "verify-straddle",
        1,
        1.0,
        0.0,
        1.0,
        1.0,
        0.0,
        (-4.0, 4.0),
    )?;
    let (lo, hi) = design.theta_bounds();
    let epsilon = 1e-6;
    let (up, down) = straddle_pair(epsilon, 1);
    let dist = moment_distance(&up, &down, (lo, hi));
    let raw_ratio = (tsls(&up, &design) - tsls(&down, &design)).abs() / dist;
    let raw_bound = 1e4 * (hi - lo);

    let stream = RngStream::new(VERIFY_SEED).child(14);
    let noise = stream.child(1);
    let bag_cfg = BagConfig::new(400, 1.0)?;
    let bagged = |d: &MomentDraw| bag(|x| tsls(x, &design), d, &design, &bag_cfg, &noise);
    let bag_straddle = (bagged(&up) - bagged(&down)).abs() / dist;

    let mut local_ratios = Vec::new();
    for i in 0..101u64 {
        let mut rng = stream.child(10 + i).rng();
        let base = design.sample(&mut rng);
        let (n0, n1) = design.sample_noise(&mut rng);
        let perturbed = MomentDraw {
            xi0: &base.xi0 + n0 * 0.01,
            xi1: &base.xi1 + n1 * 0.01,
        };
        let d = moment_distance(&base, &perturbed, (lo, hi));
        if d == 0.0 {
            continue;
        }
        local_ratios.push((bagged(&base) - bagged(&perturbed)).abs() / d);
    }
    local_ratios.sort_by(|a, b| a.partial_cmp(b).expect("ratios are finite"));
    let median = local_ratios[local_ratios.len() / 2];

    let observed = bag_straddle / median;
    let bound = 100.0;
    let raw_ok = raw_ratio >= raw_bound;
    Ok(result(
        name,
        raw_ok && observed <= bound,
        observed,
        bound,
        format!(
            "closed-form straddle ratio {raw_ratio:.3e} (needs >= {raw_bound:.1e}); bagged straddle {bag_straddle:.3} against local median {median:.3}"
        ),
    ))
}

/// Tenfold grid refinement moves flat-prior posterior means by less than
/// the reporting tolerance.
fn check_grid_refinement_agreement(name: &'static str) -> Result<CheckResult> {
    let design = homoskedastic_design(
        "verify-grid",
        1,
        1.0,
        0.3,
        1.0,
        1.0,
        0.25,
        (-4.0, 4.0),
    )?;
    let functional = Functional::identity(&design)?;
    let coarse = flat_prior(&design, 2_001);
    let fine = flat_prior(&design, 20_001);
    let stream = RngStream::new(VERIFY_SEED).child(15);
    let mut worst = 0.0f64;
    for r in 0..100u64 {
        let draw = draw_iv(&design, &stream.child(r));
        let mean_coarse = qb_mean(&draw, &design, &coarse, &functional)?[0];
        let mean_fine = qb_mean(&draw, &design, &fine, &functional)?[0];
        worst = worst.max((mean_coarse - mean_fine).abs());
    }
    let bound = 1e-4;
    Ok(result(
        name,
        worst <= bound,
        worst,
        bound,
        "largest posterior-mean shift from 2001 to 20001 grid points over 100 draws".to_owned(),
    ))
}
