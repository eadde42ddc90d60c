//! Estimator oracles: the closed-form ratio against a bracketing search,
//! the grid minimizers against exact objective roots and against each
//! other where their objectives coincide, and the finite-grid argmin
//! against hand-picked observations.

mod common;

use common::{golden_section, homoskedastic_design, quadratic_objective_dd, random_design};
use nalgebra::{DMatrix, DVector};
use weakgmm::{draw_iv, finite_gmm, tsls, FiniteThetaModel, RngStream, ThetaGrid};

const SEED: u64 = 9_117;

/// The 2SLS ratio minimizes its quadratic objective: golden-section search
/// over the interval lands on the same point to well below 1e-8.
#[test]
fn tsls_matches_a_bracketing_minimizer() {
    let stream = RngStream::new(SEED).child(1);
    let designs: Vec<_> = (1..=3)
        .map(|k| random_design(&format!("oracle-tsls-{k}"), k, &stream.child(k as u64)))
        .collect();
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let design = &designs[(i % 3) as usize];
        let draw = draw_iv(design, &stream.child(10 + i));
        let (lo, hi) = design.theta_bounds();
        let w = design.qzz_inv();
        // Compensated evaluation: a plain f64 objective is flat to within
        // cancellation noise around a weakly curved vertex, which caps a
        // value-comparison search near 1e-7 accuracy.
        let objective = |theta: f64| quadratic_objective_dd(&draw, w, theta);
        let oracle = golden_section(objective, lo, hi, 90);
        worst = worst.max((tsls(&draw, design) - oracle).abs());
    }
    assert!(worst < 1e-8, "largest gap to the bracketing oracle: {worst:.2e}");
}

/// With one instrument both grid objectives vanish exactly at the ratio
/// `xi0 / xi1`, so whenever that root is interior the minimizers must
/// recover it to refinement accuracy.
#[test]
fn grid_minimizers_recover_interior_objective_roots() {
    let design = homoskedastic_design("oracle-root", 1, 0.8, 0.2, 1.2, 0.9, 0.3, (-4.0, 4.0));
    let grid = ThetaGrid::new(&design, 2001).expect("grid builds");
    let stream = RngStream::new(SEED).child(2);
    let mut tested = 0;
    let mut worst_cue = 0.0f64;
    let mut worst_liml = 0.0f64;
    for i in 0..300u64 {
        let draw = draw_iv(&design, &stream.child(i));
        let root = draw.xi0[0] / draw.xi1[0];
        if !(-3.9..=3.9).contains(&root) {
            continue;
        }
        tested += 1;
        worst_cue = worst_cue.max((grid.cue_minimize(&draw, &design) - root).abs());
        worst_liml = worst_liml.max((grid.liml_minimize(&draw, &design) - root).abs());
    }
    assert!(tested > 150, "only {tested} interior roots in the sweep");
    // The objectives are smooth ratios, not exact parabolas, so the
    // three-point refinement is accurate to O(step^2), not exact.
    assert!(worst_cue < 1e-4, "cue missed the root by {worst_cue:.2e}");
    assert!(worst_liml < 1e-4, "liml missed the root by {worst_liml:.2e}");
}

/// On a homoskedastic design the continuously-updating covariance is a
/// scalar multiple of the identity, so the CUE and LIML objectives
/// coincide: pointwise on the grid to rounding, and at the minimizer far
/// below grid resolution. The minimizers are not compared at rounding
/// accuracy because the two evaluation paths (a Cholesky solve versus a
/// scalar division) round differently, which perturbs the parabolic
/// refinement step by a few 1e-8.
#[test]
fn cue_equals_liml_on_homoskedastic_designs() {
    let design = homoskedastic_design("oracle-homo", 2, 0.7, 0.1, 1.3, 0.8, 0.25, (-4.0, 4.0));
    let grid = ThetaGrid::new(&design, 2001).expect("grid builds");
    let stream = RngStream::new(SEED).child(3);
    let w = design.qzz_inv();
    let mut cue_values = Vec::new();
    let mut worst_value = 0.0f64;
    let mut worst_argmin = 0.0f64;
    for i in 0..50u64 {
        let draw = draw_iv(&design, &stream.child(i));
        grid.cue_objective_values(&draw, &mut cue_values);
        for (&theta, &cue_q) in grid.thetas().iter().zip(&cue_values) {
            let g = draw.g(theta);
            let sigma = design.sigma_u2() - 2.0 * theta * design.sigma_uv()
                + theta * theta * design.sigma_v2();
            let liml_q = g.dot(&(w * &g)) / sigma;
            worst_value = worst_value.max((cue_q - liml_q).abs() / liml_q.abs().max(1.0));
        }
        let gap = (grid.cue_minimize(&draw, &design) - grid.liml_minimize(&draw, &design)).abs();
        worst_argmin = worst_argmin.max(gap);
    }
    assert!(worst_value < 1e-12, "objectives split by {worst_value:.2e}");
    assert!(worst_argmin < 1e-6, "minimizers split by {worst_argmin:.2e}");
}

/// The finite-grid argmin picks the support point whose moment block was
/// zeroed by hand, for every choice of that point.
#[test]
fn finite_gmm_picks_the_zeroed_block() {
    let s = 4;
    let k = 2;
    let model = FiniteThetaModel::with_identity_weights(
        vec![-1.0, 0.0, 0.5, 2.0],
        k,
        DVector::zeros(s * k),
        DMatrix::identity(s * k, s * k),
    )
    .expect("model is valid");
    for j in 0..s {
        let g = DVector::from_fn(s * k, |i, _| {
            if i / k == j {
                0.0
            } else {
                1.5 - (i as f64) * 0.1
            }
        });
        assert_eq!(finite_gmm(&g, &model), j, "zeroed block {j} not selected");
    }
}
