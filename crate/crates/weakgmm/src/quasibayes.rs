//! Quasi-Bayes posterior means built from the continuously-updating
//! objective.
//!
//! The quasi-posterior treats `exp(-Q(theta)/2)` as a likelihood, where
//! `Q(theta) = g(theta)' Sigma(theta,theta)^{-1} g(theta)` is the
//! continuously-updating objective. Combined with a prior on a parameter
//! grid it yields a posterior mean of any bounded functional. Because the
//! objective enters through a bounded exponential, the posterior mean is a
//! smooth functional of the observation — in contrast to argmin-style
//! estimators, which can jump when the objective has near-tied minima.
//!
//! Two priors get dedicated constructors: the flat prior and the invariant
//! prior proportional to the square root of the local information of the
//! experiment. The information is available in closed form for the linear
//! IV model ([`invariant_info`]) and through finite differences of an
//! arbitrary covariance kernel ([`invariant_info_general`]).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::ThetaGrid;
use crate::functionals::Functional;
use crate::model::{sigma_kernel, FiniteThetaModel, IvDesign, MomentDraw};
use crate::numeric::pairwise_sum;

/// Continuously-updating objective `g(theta)' Sigma(theta,theta)^{-1}
/// g(theta)` at a single parameter value.
///
/// # Errors
///
/// Returns [`Error::SingularKernel`] if the covariance at `theta` cannot be
/// factored. For a validated design this only happens when `theta` is not a
/// finite number.
pub fn cue_objective(draw: &MomentDraw, design: &IvDesign, theta: f64) -> Result<f64> {
    let sigma = sigma_kernel(design, theta, theta);
    let chol = sigma
        .cholesky()
        .ok_or(Error::SingularKernel { theta })?;
    let g = draw.g(theta);
    let sol = chol.solve(&g);
    Ok(g.dot(&sol))
}

/// A prior distribution over a fixed parameter grid, stored as normalized
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    weights: Vec<f64>,
}

impl Prior {
    /// Normalizes `weights` into a prior.
    ///
    /// # Errors
    ///
    /// Returns [`Error::InvalidPrior`] if the vector is empty, any entry is
    /// negative or non-finite, or all entries are zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidPrior("prior has no support points".into()));
        }
        for (j, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidPrior(format!(
                    "prior weight {j} is {w}; weights must be finite and non-negative"
                )));
            }
        }
        let total = pairwise_sum(&weights);
        if total <= 0.0 {
            return Err(Error::InvalidPrior("all prior weights are zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { weights })
    }

    /// Normalized weights, in grid order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    /// Whether the prior has no support points (never true for a
    /// constructed prior).
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Trapezoid-rule masses for a uniform grid of `n` points, normalized to
/// sum to one: half weight at the two endpoints.
fn trapezoid_masses(n: usize) -> Vec<f64> {
    assert!(n >= 3, "quadrature grids need at least three points");
    let h = 1.0 / (n - 1) as f64;
    let mut masses = vec![h; n];
    masses[0] = 0.5 * h;
    masses[n - 1] = 0.5 * h;
    masses
}

/// Flat prior over a uniform `grid_points`-point grid on the design's
/// parameter interval: constant density integrated by the trapezoid rule,
/// so the two endpoints carry half the interior mass.
///
/// # Panics
///
/// Panics if `grid_points < 3`.
pub fn flat_prior(design: &IvDesign, grid_points: usize) -> Prior {
    let (lo, hi) = design.theta_bounds();
    debug_assert!(lo < hi);
    Prior {
        weights: trapezoid_masses(grid_points),
    }
}

/// Prior with density proportional to the square root of the local
/// information, on a uniform `grid_points`-point grid over the design's
/// parameter interval with trapezoid quadrature masses.
///
/// The weights are positive for every finite `theta` because the moment
/// covariance of a validated design is positive definite everywhere.
///
/// # Panics
///
/// Panics if `grid_points < 3`.
pub fn invariant_prior(design: &IvDesign, grid_points: usize) -> Prior {
    let (lo, hi) = design.theta_bounds();
    let thetas = crate::numeric::linspace(lo, hi, grid_points);
    let masses = trapezoid_masses(grid_points);
    let weights: Vec<f64> = thetas
        .iter()
        .zip(&masses)
        .map(|(&t, &mass)| invariant_info(design, t).sqrt() * mass)
        .collect();
    let total = pairwise_sum(&weights);
    Prior {
        weights: weights.into_iter().map(|w| w / total).collect(),
    }
}

/// Local information of the linear IV experiment at `theta`, in closed
/// form.
///
/// The observation restricted to a single parameter value is Gaussian with
/// variance `V(theta)`; the derivative of the moment function carries the
/// extra information `Omega11 - C V^{-1} C'` with `C = Omega10 - theta *
/// Omega11`, which is the conditional variance of the derivative given the
/// level. The information is the trace of that conditional variance
/// whitened by `V(theta)`. It is strictly positive for every finite
/// `theta` and decays like `theta^{-2}` in the tails, so its square root
/// integrates to a heavy-tailed, Cauchy-like prior.
pub fn invariant_info(design: &IvDesign, theta: f64) -> f64 {
    let k = design.k();
    let omega11 = design.omega_block(1, 1);
    let omega01 = design.omega_block(0, 1);
    // A = Omega01 - theta * Omega11, so Cov(xi1, g(theta)) = A'.
    let a = &omega01 - &omega11 * theta;
    let chol = design
        .var_g(theta)
        .cholesky()
        .expect("moment covariance is positive definite for every finite theta");
    let lead = chol.solve(&omega11).trace();
    let va_t = chol.solve(&a.transpose());
    let va = chol.solve(&a);
    let correction = (va_t * va).trace();
    debug_assert!(k > 0);
    lead - correction
}

/// Local information computed from a covariance kernel by central finite
/// differences.
///
/// `kernel(s, t)` must return the `k x k` covariance of `(g(s), g(t))`.
/// Writing `S` for the variance at `theta`, `d10`/`d01` for the mixed
/// first derivatives and `d11` for the cross second derivative, the
/// information is `tr(S^{-1} (d11 - d10 S^{-1} d01))`. The differences are
/// exact when the kernel is bilinear in its arguments, which covers the
/// linear IV family.
///
/// # Errors
///
/// Returns [`Error::InvalidConfig`] if `step` is not a positive finite
/// number and [`Error::SingularKernel`] if the variance at `theta` cannot
/// be factored.
pub fn invariant_info_general<K>(kernel: K, theta: f64, step: f64) -> Result<f64>
where
    K: Fn(f64, f64) -> DMatrix<f64>,
{
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive and finite, got {step}"
        )));
    }
    let h = step;
    let s = kernel(theta, theta);
    let s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(Error::SingularKernel { theta })?;
    let d10 = (kernel(theta + h, theta) - kernel(theta - h, theta)) / (2.0 * h);
    let d01 = (kernel(theta, theta + h) - kernel(theta, theta - h)) / (2.0 * h);
    let d11 = (kernel(theta + h, theta + h) - kernel(theta + h, theta - h)
        - kernel(theta - h, theta + h)
        + kernel(theta - h, theta - h))
        / (4.0 * h * h);
    let inner = &d11 - &d10 * chol.solve(&d01);
    Ok(chol.solve(&inner).trace())
}

/// Posterior mean of `r_values` under quasi-posterior weights
/// `prior_j * exp(-Q_j / 2)`.
///
/// The objective values are shifted by their minimum over the prior's
/// support before exponentiating, so arbitrarily large objectives are
/// handled without overflow. Entries with `Q_j = +inf` (for example grid
/// points a caller had to skip) receive zero weight.
///
/// # Errors
///
/// Returns [`Error::InvalidPrior`] on a length mismatch and
/// [`Error::DegenerateObjective`] if an objective value is NaN or the
/// whole support has infinite objective.
pub fn posterior_mean_from_objective(
    q_values: &[f64],
    prior: &Prior,
    r_values: &[f64],
) -> Result<f64> {
    let n = q_values.len();
    if prior.len() != n || r_values.len() != n {
        return Err(Error::InvalidPrior(format!(
            "posterior mean needs matching lengths, got {} objective values, {} prior weights, {} functional values",
            n,
            prior.len(),
            r_values.len()
        )));
    }
    let mut q_min = f64::INFINITY;
    for (&q, &w) in q_values.iter().zip(prior.weights()) {
        if q.is_nan() {
            return Err(Error::DegenerateObjective(
                "objective value is NaN".into(),
            ));
        }
        if w > 0.0 && q < q_min {
            q_min = q;
        }
    }
    if !q_min.is_finite() {
        return Err(Error::DegenerateObjective(
            "objective is infinite on the prior's whole support".into(),
        ));
    }
    let mut weighted = vec![0.0; n];
    let mut weighted_r = vec![0.0; n];
    for j in 0..n {
        let p = prior.weights()[j];
        // Skip the exponential when the prior vanishes: `Q_j` may lie below
        // the support minimum there, and `0 * exp(large)` would be NaN.
        if p == 0.0 {
            continue;
        }
        let w = p * (-0.5 * (q_values[j] - q_min)).exp();
        weighted[j] = w;
        weighted_r[j] = w * r_values[j];
    }
    let den = pairwise_sum(&weighted);
    let num = pairwise_sum(&weighted_r);
    Ok(num / den)
}

/// Quasi-Bayes posterior mean of `functional` under `prior`.
///
/// The prior lives on a uniform grid over the design's parameter interval
/// with as many points as the prior has weights; the continuously-updating
/// objective is evaluated at every grid point and the functional is
/// averaged under the resulting quasi-posterior. The output has one
/// coordinate per functional dimension.
///
/// # Errors
///
/// Propagates grid-construction failures and the errors of
/// [`posterior_mean_from_objective`], with [`Error::DegenerateObjective`]
/// when the objective could not be evaluated anywhere on the grid.
pub fn qb_mean(
    draw: &MomentDraw,
    design: &IvDesign,
    prior: &Prior,
    functional: &Functional,
) -> Result<DVector<f64>> {
    let grid = ThetaGrid::new(design, prior.len())?;
    let mut q = Vec::new();
    grid.cue_objective_values(draw, &mut q);
    let r: Vec<f64> = grid.thetas().iter().map(|&t| functional.eval(t)).collect();
    let mean = posterior_mean_from_objective(&q, prior, &r)?;
    Ok(DVector::from_element(1, mean))
}

/// Quasi-Bayes posterior mean on a finite parameter grid.
///
/// The objective at support point `j` is the block quadratic form
/// `g_j' Sigma_jj^{-1} g_j`. Returns the posterior mean of the model's
/// functional values, one coordinate per functional dimension.
///
/// # Panics
///
/// Panics unless `prior_weights` is a nonnegative vector with `model.s()`
/// entries and positive total mass.
pub fn qb_mean_finite(
    g: &DVector<f64>,
    model: &FiniteThetaModel,
    prior_weights: &[f64],
) -> DVector<f64> {
    let s = model.s();
    assert_eq!(
        prior_weights.len(),
        s,
        "prior weights must cover every support point"
    );
    let total = pairwise_sum(prior_weights);
    assert!(
        prior_weights.iter().all(|w| w.is_finite() && *w >= 0.0) && total > 0.0,
        "prior weights must be a nonnegative vector with positive mass"
    );
    let q: Vec<f64> = (0..s).map(|j| model.block_q(g, j)).collect();
    let mut q_min = f64::INFINITY;
    for (&qj, &w) in q.iter().zip(prior_weights) {
        if w > 0.0 && qj < q_min {
            q_min = qj;
        }
    }
    let p = model.p();
    let mut num = DVector::zeros(p);
    let mut den = 0.0;
    for j in 0..s {
        let pj = prior_weights[j] / total;
        if pj == 0.0 {
            continue;
        }
        let w = pj * (-0.5 * (q[j] - q_min)).exp();
        den += w;
        num += &model.r_values()[j] * w;
    }
    num / den
}
