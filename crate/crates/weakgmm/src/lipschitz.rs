//! Stability laboratory: empirical Lipschitz ratios, posterior-mean bound
//! checks, and scale-invariance probes for estimators of the Gaussian
//! experiment.
//!
//! The central quantity is the ratio `|delta(g) - delta(g')| / d(g, g')`
//! over sampled pairs of observations, where `d` is the sup norm of the
//! moment-function difference over the parameter interval. Estimators that
//! jump (argmin rules near ties, clipped ratios near a zero denominator)
//! produce unbounded ratios as pairs straddle the discontinuity; smoothed
//! estimators keep the ratio bounded. For posterior means under a finite
//! Gaussian-location prior the bound is explicit, and
//! [`posterior_mean_bound_check`] verifies it on randomized pairs.
//!
//! [`scale_invariance_check`] probes the complementary property: argmin
//! estimators do not react to a positive rescaling of the observed
//! moments, while averaged and posterior-mean estimators do. The
//! combination — scale invariance plus a bounded difference ratio — is
//! exactly what the discontinuous estimators here fail.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{FiniteThetaModel, MomentDraw, RngStream};

/// Relative slack applied when comparing an observed ratio against a
/// theoretical bound, absorbing the rounding of the ratio itself.
const BOUND_SLACK: f64 = 1e-8;

/// One support point of a [`FinitePrior`]: a mean vector for the stacked
/// observation together with the index of the parameter value it declares
/// true and a prior weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPoint {
    /// Index into the model's `theta_values` that this point treats as the
    /// true parameter.
    pub theta_index: usize,
    /// Mean of the stacked observation vector, length `s * k`. The block
    /// belonging to `theta_index` must be zero: the moment condition holds
    /// exactly at the parameter value the point identifies.
    pub mean: DVector<f64>,
    /// Prior mass, strictly positive; weights are normalized on
    /// construction.
    pub weight: f64,
}

/// A finitely supported prior over mean vectors of the stacked Gaussian
/// observation of a [`FiniteThetaModel`].
///
/// Each support point pins a parameter index and a full mean vector whose
/// own block vanishes. The posterior over support points after observing
/// `g ~ N(m_j, Sigma)` has log weights `log w_j + m_j' Sigma^{-1} g - 0.5
/// m_j' Sigma^{-1} m_j`, which [`finite_prior_posterior_mean`] evaluates
/// in log space. The whitened means `Sigma^{-1} m_j` are solved once at
/// construction, so a prior is bound to the model it was built from.
#[derive(Debug, Clone)]
pub struct FinitePrior {
    points: Vec<SupportPoint>,
    /// `Sigma^{-1} m_j` per support point.
    alphas: Vec<DVector<f64>>,
    /// `log w_j - 0.5 m_j' Sigma^{-1} m_j` per support point.
    offsets: Vec<f64>,
    /// l1 norms of the whitened means.
    norms: Vec<f64>,
    dim: usize,
    p: usize,
    r_bar: f64,
}

impl FinitePrior {
    /// Validates `points` against `model` and normalizes their weights.
    ///
    /// # Errors
    ///
    /// Returns [`Error::InvalidPrior`] if `points` is empty, a point's
    /// parameter index is out of range, a mean has the wrong length or a
    /// non-finite entry, the mean's own parameter block is not identically
    /// zero, or a weight is not strictly positive and finite.
    pub fn new(points: Vec<SupportPoint>, model: &FiniteThetaModel) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidPrior("prior has no support points".into()));
        }
        let s = model.s();
        let k = model.k();
        let dim = s * k;
        let mut total = 0.0;
        for (j, pt) in points.iter().enumerate() {
            if pt.theta_index >= s {
                return Err(Error::InvalidPrior(format!(
                    "support point {j} refers to parameter index {} but the model has {s} values",
                    pt.theta_index
                )));
            }
            if pt.mean.len() != dim {
                return Err(Error::InvalidPrior(format!(
                    "support point {j} has mean length {}, expected {dim}",
                    pt.mean.len()
                )));
            }
            if pt.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPrior(format!(
                    "support point {j} has a non-finite mean entry"
                )));
            }
            let own = pt.mean.rows(pt.theta_index * k, k);
            if own.iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidPrior(format!(
                    "support point {j} must have a zero mean block at its own parameter index {}",
                    pt.theta_index
                )));
            }
            if !pt.weight.is_finite() || pt.weight <= 0.0 {
                return Err(Error::InvalidPrior(format!(
                    "support point {j} has weight {}; weights must be positive",
                    pt.weight
                )));
            }
            total += pt.weight;
        }
        let mut points = points;
        for pt in &mut points {
            pt.weight /= total;
        }
        let alphas: Vec<DVector<f64>> =
            points.iter().map(|pt| model.sigma_solve(&pt.mean)).collect();
        let offsets: Vec<f64> = points
            .iter()
            .zip(&alphas)
            .map(|(pt, a)| pt.weight.ln() - 0.5 * pt.mean.dot(a))
            .collect();
        let norms: Vec<f64> = alphas
            .iter()
            .map(|a| a.iter().map(|v| v.abs()).sum())
            .collect();
        let r_bar = points
            .iter()
            .map(|pt| model.r_values()[pt.theta_index].amax())
            .fold(0.0, f64::max);
        Ok(Self {
            points,
            alphas,
            offsets,
            norms,
            dim,
            p: model.p(),
            r_bar,
        })
    }

    /// Support points with normalized weights.
    pub fn points(&self) -> &[SupportPoint] {
        &self.points
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Whether the prior is empty (never true for a constructed prior).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Length of the stacked observation vector this prior expects.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest l1 norm of the whitened means `Sigma^{-1} m_j` — the
    /// identification strength of the prior's most informative point.
    pub fn max_alpha_norm1(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }

    /// Sup norm of the functional over the prior's support.
    pub fn r_bar(&self) -> f64 {
        self.r_bar
    }

    /// Lipschitz constant `r_bar * sqrt(p) * w_bound`, valid for the
    /// posterior mean whenever every whitened mean has l1 norm at most
    /// `w_bound`: each coordinate's gradient in `g` is a posterior
    /// covariance between values bounded by `r_bar` and log-weight slopes
    /// bounded by `w_bound` per unit sup-norm move.
    pub fn lipschitz_constant(&self, w_bound: f64) -> f64 {
        self.r_bar * (self.p as f64).sqrt() * w_bound
    }
}

/// Posterior mean of the model's functional after observing `g` under a
/// finite Gaussian-location prior.
///
/// Weights are formed in log space with a max shift, so support points
/// arbitrarily far from the observation underflow to zero weight instead
/// of poisoning the average.
///
/// # Panics
///
/// Panics if `g` or the prior does not match the model's dimensions.
pub fn finite_prior_posterior_mean(
    g: &DVector<f64>,
    model: &FiniteThetaModel,
    prior: &FinitePrior,
) -> DVector<f64> {
    let dim = model.s() * model.k();
    assert_eq!(g.len(), dim, "observation length must match the model");
    assert_eq!(prior.dim, dim, "prior was built for a different model shape");
    assert_eq!(prior.p, model.p(), "prior was built for a different functional");
    let logs: Vec<f64> = prior
        .alphas
        .iter()
        .zip(&prior.offsets)
        .map(|(a, off)| off + a.dot(g))
        .collect();
    let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = DVector::zeros(model.p());
    let mut den = 0.0;
    for (j, &lw) in logs.iter().enumerate() {
        let w = (lw - shift).exp();
        den += w;
        num += &model.r_values()[prior.points[j].theta_index] * w;
    }
    num / den
}

/// Outcome of a Lipschitz-ratio sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    /// Largest observed ratio `|delta(a) - delta(b)| / d(a, b)`.
    pub max_ratio: f64,
    /// Number of pairs that entered the sweep (zero-distance pairs are
    /// skipped and not counted).
    pub pair_count: usize,
    /// Theoretical constant the ratios were compared against, when one
    /// applies.
    pub bound: Option<f64>,
    /// Whether `max_ratio` exceeds the bound beyond relative slack
    /// `1e-8`; always `false` without a bound.
    pub violated: bool,
}

impl LipschitzReport {
    fn new(max_ratio: f64, pair_count: usize, bound: Option<f64>) -> Self {
        let violated = match bound {
            Some(b) => max_ratio > b * (1.0 + BOUND_SLACK),
            None => false,
        };
        Self {
            max_ratio,
            pair_count,
            bound,
            violated,
        }
    }

    /// Attaches a theoretical bound to a report produced without one and
    /// re-evaluates the violation flag.
    pub fn with_bound(self, bound: f64) -> Self {
        Self::new(self.max_ratio, self.pair_count, Some(bound))
    }
}

/// Sup-norm distance between two moment draws: the largest difference of
/// the implied moment functions over the parameter interval.
///
/// The moment function is affine in `theta`, so the supremum over
/// `[theta_l, theta_u]` is attained at an endpoint and is computed
/// exactly.
pub fn moment_distance(a: &MomentDraw, b: &MomentDraw, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = bounds;
    let d0 = &a.xi0 - &b.xi0;
    let d1 = &a.xi1 - &b.xi1;
    let mut dist = 0.0f64;
    for j in 0..d0.len() {
        let at_lo = (d0[j] - lo * d1[j]).abs();
        let at_hi = (d0[j] - hi * d1[j]).abs();
        dist = dist.max(at_lo).max(at_hi);
    }
    dist
}

/// A pair of draws separated by `epsilon` in the first-stage coordinate
/// that straddles the zero of the first stage: `xi0` is a unit vector and
/// `xi1` flips sign between the two draws. Ratio-type estimators jump
/// across the whole parameter interval between these two inputs.
pub fn straddle_pair(epsilon: f64, k: usize) -> (MomentDraw, MomentDraw) {
    assert!(epsilon > 0.0 && epsilon.is_finite());
    assert!(k > 0);
    let mut xi0 = DVector::zeros(k);
    xi0[0] = 1.0;
    let mut xi1 = DVector::zeros(k);
    xi1[0] = 0.5 * epsilon;
    let up = MomentDraw::new(xi0.clone(), xi1.clone()).unwrap();
    let down = MomentDraw::new(xi0, -xi1).unwrap();
    (up, down)
}

/// Sweeps `pairs` sampled pairs of draws and records the largest ratio of
/// estimate change to observation distance.
///
/// `sampler(i)` produces the `i`-th pair; pairs at exactly zero distance
/// are skipped, since the ratio is undefined there, and do not count
/// towards `pair_count`. The report carries no theoretical bound; attach
/// one with [`LipschitzReport::with_bound`] if a constant applies to the
/// estimator under test.
///
/// # Panics
///
/// Panics if `pairs` is zero or `bounds` is not an ordered finite pair.
pub fn empirical_lipschitz<T, S>(
    estimator: T,
    mut sampler: S,
    pairs: usize,
    bounds: (f64, f64),
) -> LipschitzReport
where
    T: Fn(&MomentDraw) -> f64,
    S: FnMut(usize) -> (MomentDraw, MomentDraw),
{
    assert!(pairs > 0, "need at least one pair");
    assert!(
        bounds.0.is_finite() && bounds.1.is_finite() && bounds.0 < bounds.1,
        "parameter bounds must be an ordered finite pair"
    );
    let mut max_ratio = 0.0f64;
    let mut used = 0;
    for i in 0..pairs {
        let (a, b) = sampler(i);
        let dist = moment_distance(&a, &b, bounds);
        if dist == 0.0 {
            continue;
        }
        used += 1;
        let ratio = (estimator(&a) - estimator(&b)).abs() / dist;
        max_ratio = max_ratio.max(ratio);
    }
    LipschitzReport::new(max_ratio, used, None)
}

/// Checks the posterior-mean Lipschitz bound on randomized pairs of
/// stacked observations.
///
/// Requires every support point of `prior` to have whitened-mean l1 norm
/// at most `w_bound`; the posterior mean is then Lipschitz in the sup norm
/// with constant `r_bar * sqrt(p) * w_bound`. Pairs alternate between
/// independent draws from the model's noise distribution and local
/// perturbations at distances `1e-2`, `1e-4`, `1e-6`, all derived from
/// `stream` so the sweep is reproducible.
///
/// # Errors
///
/// Returns [`Error::InvalidPrior`] if a support point exceeds `w_bound`
/// and [`Error::InvalidConfig`] for a non-positive `w_bound` or zero
/// `pairs`.
pub fn posterior_mean_bound_check(
    model: &FiniteThetaModel,
    prior: &FinitePrior,
    w_bound: f64,
    pairs: usize,
    stream: &RngStream,
) -> Result<LipschitzReport> {
    if !w_bound.is_finite() || w_bound <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "the identification bound must be positive and finite, got {w_bound}"
        )));
    }
    if pairs == 0 {
        return Err(Error::InvalidConfig("need at least one pair".into()));
    }
    for (j, &norm) in prior.norms.iter().enumerate() {
        if norm > w_bound {
            return Err(Error::InvalidPrior(format!(
                "support point {j} has whitened-mean l1 norm {norm}, above the stated bound {w_bound}"
            )));
        }
    }
    let bound = prior.lipschitz_constant(w_bound);
    let local_scales = [1e-2, 1e-4, 1e-6];
    let mut max_ratio = 0.0f64;
    let mut used = 0;
    for i in 0..pairs {
        let mut rng = stream.child(i as u64).rng();
        let a = model.sample_noise(&mut rng);
        let b = match i % 4 {
            0 => model.sample_noise(&mut rng),
            m => {
                let dir = model.sample_noise(&mut rng);
                let span = dir.amax();
                if span == 0.0 {
                    continue;
                }
                &a + dir * (local_scales[m - 1] / span)
            }
        };
        let dist = (&a - &b).amax();
        if dist == 0.0 {
            continue;
        }
        used += 1;
        let da = finite_prior_posterior_mean(&a, model, prior);
        let db = finite_prior_posterior_mean(&b, model, prior);
        max_ratio = max_ratio.max((da - db).norm() / dist);
    }
    Ok(LipschitzReport::new(max_ratio, used, Some(bound)))
}

/// Whether an estimator is invariant to positive rescaling of its input.
///
/// Draws `draws` observations from `sampler` and compares the estimate on
/// each observation against the estimate on `rescale(obs, c)` for every
/// `c` in `scales`, up to relative tolerance `tol` (use `1e-12` for
/// closed-form estimators, `1e-10` for grid minimizers whose refinement
/// path depends weakly on scale).
///
/// # Panics
///
/// Panics if `draws` is zero, `scales` is empty or contains a
/// non-positive or non-finite entry, or `tol` is negative.
pub fn scale_invariance_check<G, T, S, C>(
    estimator: T,
    mut sampler: S,
    rescale: C,
    draws: usize,
    scales: &[f64],
    tol: f64,
) -> bool
where
    T: Fn(&G) -> f64,
    S: FnMut(usize) -> G,
    C: Fn(&G, f64) -> G,
{
    assert!(draws > 0, "need at least one draw");
    assert!(
        !scales.is_empty() && scales.iter().all(|c| c.is_finite() && *c > 0.0),
        "scales must be positive finite numbers"
    );
    assert!(tol.is_finite() && tol >= 0.0, "tolerance must be nonnegative");
    for i in 0..draws {
        let obs = sampler(i);
        let base = estimator(&obs);
        for &c in scales {
            let scaled = estimator(&rescale(&obs, c));
            if (scaled - base).abs() > tol * (1.0 + base.abs()) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagging::{bag, BagConfig};
    use crate::estimators::{finite_gmm, tsls};
    use crate::model::IvDesign;
    use nalgebra::DMatrix;

    fn two_point_model() -> FiniteThetaModel {
        FiniteThetaModel::with_identity_weights(
            vec![0.0, 1.0],
            1,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    /// Prior with support `{theta_0, theta_1}` whose means sit at distance
    /// `c` in the coordinate belonging to the other parameter value.
    fn crossed_prior(c: f64, model: &FiniteThetaModel) -> FinitePrior {
        let points = vec![
            SupportPoint {
                theta_index: 0,
                mean: DVector::from_vec(vec![0.0, c]),
                weight: 1.0,
            },
            SupportPoint {
                theta_index: 1,
                mean: DVector::from_vec(vec![c, 0.0]),
                weight: 1.0,
            },
        ];
        FinitePrior::new(points, model).unwrap()
    }

    fn unit_design() -> IvDesign {
        IvDesign::new(
            "lab-unit",
            DVector::from_vec(vec![1.0]),
            0.5,
            DMatrix::identity(2, 2),
            1.0,
            1.0,
            0.0,
            None,
            1.0,
            (-4.0, 4.0),
        )
        .unwrap()
    }

    #[test]
    fn two_point_prior_posterior_matches_the_logistic_formula() {
        let model = two_point_model();
        let prior = crossed_prior(2.0, &model);
        let g = DVector::from_vec(vec![0.0, 1.0]);
        let out = finite_prior_posterior_mean(&g, &model, &prior);
        // The log-weight gap is c * (g[1] - g[0]) = 2, favoring theta = 0.
        let expect = 1.0 / (1.0 + 2.0f64.exp());
        assert!((out[0] - expect).abs() < 1e-14);
        let even = DVector::from_vec(vec![1.0, 1.0]);
        let out = finite_prior_posterior_mean(&even, &model, &prior);
        assert!((out[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn distant_support_points_underflow_without_poisoning_the_mean() {
        let model = two_point_model();
        let prior = crossed_prior(50.0, &model);
        let g = DVector::from_vec(vec![0.0, 1.0]);
        let out = finite_prior_posterior_mean(&g, &model, &prior);
        assert!(out[0].is_finite());
        assert!(
            out[0] > 0.0 && out[0] < 1e-6,
            "posterior {} should collapse towards the favored value",
            out[0]
        );
    }

    #[test]
    fn single_support_point_pins_the_posterior() {
        let model = two_point_model();
        let prior = FinitePrior::new(
            vec![SupportPoint {
                theta_index: 1,
                mean: DVector::from_vec(vec![3.0, 0.0]),
                weight: 0.7,
            }],
            &model,
        )
        .unwrap();
        for g in [
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![-9.0, 4.0]),
        ] {
            let out = finite_prior_posterior_mean(&g, &model, &prior);
            assert_eq!(out[0], 1.0);
        }
        // The single weight normalizes to one.
        assert!((prior.points()[0].weight - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prior_construction_rejects_malformed_support() {
        let model = two_point_model();
        let bad_index = SupportPoint {
            theta_index: 2,
            mean: DVector::zeros(2),
            weight: 1.0,
        };
        assert!(FinitePrior::new(vec![bad_index], &model).is_err());
        let bad_len = SupportPoint {
            theta_index: 0,
            mean: DVector::zeros(3),
            weight: 1.0,
        };
        assert!(FinitePrior::new(vec![bad_len], &model).is_err());
        let nonzero_own_block = SupportPoint {
            theta_index: 0,
            mean: DVector::from_vec(vec![0.5, 0.0]),
            weight: 1.0,
        };
        assert!(FinitePrior::new(vec![nonzero_own_block], &model).is_err());
        let zero_weight = SupportPoint {
            theta_index: 0,
            mean: DVector::zeros(2),
            weight: 0.0,
        };
        assert!(FinitePrior::new(vec![zero_weight], &model).is_err());
        assert!(FinitePrior::new(vec![], &model).is_err());
    }

    #[test]
    fn bound_check_passes_and_enforces_its_precondition() {
        let sigma = DMatrix::from_row_slice(
            6,
            6,
            &[
                2.0, 0.3, 0.1, 0.2, 0.0, 0.1, //
                0.3, 1.5, 0.2, 0.1, 0.1, 0.0, //
                0.1, 0.2, 1.8, 0.3, 0.2, 0.1, //
                0.2, 0.1, 0.3, 1.6, 0.1, 0.2, //
                0.0, 0.1, 0.2, 0.1, 1.4, 0.3, //
                0.1, 0.0, 0.1, 0.2, 0.3, 1.7,
            ],
        );
        let model = FiniteThetaModel::with_identity_weights(
            vec![-1.0, 0.0, 1.0],
            2,
            DVector::zeros(6),
            sigma,
        )
        .unwrap();
        let points = vec![
            SupportPoint {
                theta_index: 0,
                mean: DVector::from_vec(vec![0.0, 0.0, 0.8, -0.3, 0.5, 0.2]),
                weight: 1.0,
            },
            SupportPoint {
                theta_index: 1,
                mean: DVector::from_vec(vec![-0.4, 0.6, 0.0, 0.0, 0.3, -0.5]),
                weight: 2.0,
            },
            SupportPoint {
                theta_index: 2,
                mean: DVector::from_vec(vec![0.5, 0.1, -0.6, 0.4, 0.0, 0.0]),
                weight: 1.5,
            },
        ];
        let prior = FinitePrior::new(points, &model).unwrap();
        let w_bound = prior.max_alpha_norm1() * 1.01;
        let stream = RngStream::new(2024).child(7);
        let report =
            posterior_mean_bound_check(&model, &prior, w_bound, 400, &stream).unwrap();
        assert_eq!(report.pair_count, 400);
        assert!(
            !report.violated,
            "max ratio {} vs bound {:?}",
            report.max_ratio, report.bound
        );
        assert!(report.max_ratio > 0.0);
        assert_eq!(report.bound, Some(prior.lipschitz_constant(w_bound)));

        let too_small = prior.max_alpha_norm1() * 0.5;
        assert!(
            posterior_mean_bound_check(&model, &prior, too_small, 10, &stream).is_err()
        );
    }

    #[test]
    fn empirical_sweep_skips_zero_distance_pairs() {
        let design = unit_design();
        let base = MomentDraw::new(
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![0.5]),
        )
        .unwrap();
        let shifted = MomentDraw::new(
            DVector::from_vec(vec![1.5]),
            DVector::from_vec(vec![0.5]),
        )
        .unwrap();
        let report = empirical_lipschitz(
            |d| tsls(d, &design),
            |i| {
                if i % 2 == 0 {
                    (base.clone(), base.clone())
                } else {
                    (base.clone(), shifted.clone())
                }
            },
            10,
            design.theta_bounds(),
        );
        assert_eq!(report.pair_count, 5);
        assert!(report.bound.is_none() && !report.violated);
    }

    #[test]
    fn straddle_pairs_blow_up_tsls_but_not_its_bagged_version() {
        let design = unit_design();
        let eps = 1e-6;
        let raw = empirical_lipschitz(
            |d| tsls(d, &design),
            |_| straddle_pair(eps, 1),
            1,
            design.theta_bounds(),
        );
        let (lo, hi) = design.theta_bounds();
        assert!(
            raw.max_ratio > 1e4 * (hi - lo),
            "raw ratio {} should diverge",
            raw.max_ratio
        );

        let cfg = BagConfig::new(48, 1.0).unwrap();
        let stream = RngStream::new(5).child(0);
        let bagged = empirical_lipschitz(
            |d| bag(|x| tsls(x, &design), d, &design, &cfg, &stream),
            |_| straddle_pair(eps, 1),
            1,
            design.theta_bounds(),
        );
        assert!(
            bagged.max_ratio < 1e4,
            "bagged ratio {} should stay bounded",
            bagged.max_ratio
        );
    }

    #[test]
    fn argmin_rules_are_scale_invariant_but_averages_are_not() {
        let design = unit_design();
        let stream = RngStream::new(77).child(3);
        let sampler = |i: usize| crate::model::draw_iv(&design, &stream.child(i as u64));
        let rescale = |d: &MomentDraw, c: f64| d.scaled(c);
        let scales = [3.0, 100.0];
        assert!(scale_invariance_check(
            |d| tsls(d, &design),
            sampler,
            rescale,
            32,
            &scales,
            1e-12,
        ));

        let model = two_point_model();
        let finite_sampler = |i: usize| {
            let mut rng = stream.child(1000 + i as u64).rng();
            model.sample_noise(&mut rng)
        };
        assert!(scale_invariance_check(
            |g| model.theta_values()[finite_gmm(g, &model)],
            finite_sampler,
            |g: &DVector<f64>, c: f64| g * c,
            32,
            &scales,
            1e-12,
        ));

        let cfg = BagConfig::new(16, 1.0).unwrap();
        let noise = RngStream::new(78).child(0);
        assert!(!scale_invariance_check(
            |d| bag(|x| tsls(x, &design), d, &design, &cfg, &noise),
            sampler,
            rescale,
            32,
            &scales,
            1e-3,
        ));
    }
}
