//! Point estimators for the limit experiment.
//!
//! TSLS has a closed form (a clipped ratio of quadratic forms); CUE and LIML
//! minimize their objectives by a uniform grid scan over the parameter
//! interval followed by three rounds of local parabolic refinement. On the
//! finite grid, GMM is an exhaustive argmin. All continuous estimators map
//! into the closed parameter interval and break exact ties toward the lowest
//! parameter value.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::model::{FiniteThetaModel, IvDesign, MomentDraw};
use crate::numeric::linspace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Tsls,
    Cue,
    Liml,
    FiniteGmm,
}

/// Tie-breaking rule for objective minimization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// Exact objective ties resolve to the smallest parameter value
    /// (lowest index on finite grids).
    #[default]
    LowestTheta,
}

/// How a grid-based estimator is run.
#[derive(Clone, Copy, Debug)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub grid_points: usize,
    pub tie_break: TieBreak,
}

impl EstimatorSpec {
    /// Default settings: 2001 grid points, lowest-theta ties.
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            grid_points: 2001,
            tie_break: TieBreak::LowestTheta,
        }
    }

    pub fn with_grid_points(mut self, grid_points: usize) -> Self {
        self.grid_points = grid_points;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.grid_points < 3 {
            return Err(Error::InvalidConfig(format!(
                "grid_points must be at least 3, got {}",
                self.grid_points
            )));
        }
        Ok(())
    }
}

/// In-place Cholesky of a row-major symmetric matrix (lower triangle is
/// read and overwritten with the factor). Returns false when a pivot is not
/// strictly positive.
fn cholesky_in_place(a: &mut [f64], k: usize) -> bool {
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for t in 0..j {
                s -= a[i * k + t] * a[j * k + t];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                a[i * k + i] = s.sqrt();
            } else {
                a[i * k + j] = s / a[j * k + j];
            }
        }
    }
    true
}

/// Solves `L y = g` in place and returns `|y|^2 = g' (L L')^{-1} g`.
fn forward_solve_squared(l: &[f64], k: usize, g: &mut [f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..k {
        let mut s = g[i];
        for j in 0..i {
            s -= l[i * k + j] * g[j];
        }
        let y = s / l[i * k + i];
        g[i] = y;
        q += y * y;
    }
    q
}

/// Writes `Var(g(theta))` for `design` into `buf` (row-major `k x k`).
fn var_g_into(design: &IvDesign, theta: f64, buf: &mut [f64]) {
    let k = design.k();
    let omega = design.omega();
    for i in 0..k {
        for j in 0..k {
            buf[i * k + j] = omega[(i, j)] - theta * (omega[(i, k + j)] + omega[(k + i, j)])
                + theta * theta * omega[(k + i, k + j)];
        }
    }
}

/// Precomputed per-grid-point state for CUE/LIML/quasi-Bayes evaluation on a
/// fixed design: the parameter grid, a Cholesky factor of
/// `Sigma(theta_j, theta_j)` per point, and the scalar LIML weight.
///
/// Grid points where the covariance fails to factor (impossible for a
/// positive definite `omega`, but guarded against) are skipped during
/// minimization and counted in [`ThetaGrid::skipped_points`].
#[derive(Clone, Debug)]
pub struct ThetaGrid {
    k: usize,
    thetas: Vec<f64>,
    /// Row-major `k x k` lower factors, one slot per grid point.
    factors: Vec<f64>,
    valid: Vec<bool>,
    /// `sigma_u2 - 2 theta sigma_uv + theta^2 sigma_v2` per point.
    liml_scale: Vec<f64>,
    skipped: usize,
}

impl ThetaGrid {
    /// Uniform grid over the design's parameter interval.
    pub fn new(design: &IvDesign, points: usize) -> Result<Self> {
        if points < 3 {
            return Err(Error::InvalidConfig(format!(
                "grid needs at least 3 points, got {points}"
            )));
        }
        let (lo, hi) = design.theta_bounds();
        Self::from_thetas(design, linspace(lo, hi, points))
    }

    /// Grid on caller-chosen points (must be strictly increasing).
    pub fn from_thetas(design: &IvDesign, thetas: Vec<f64>) -> Result<Self> {
        if thetas.len() < 2 || thetas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "grid points must be strictly increasing".into(),
            ));
        }
        let k = design.k();
        let mut factors = vec![0.0; thetas.len() * k * k];
        let mut valid = vec![false; thetas.len()];
        let mut liml_scale = Vec::with_capacity(thetas.len());
        let mut skipped = 0;
        for (j, &theta) in thetas.iter().enumerate() {
            let slot = &mut factors[j * k * k..(j + 1) * k * k];
            var_g_into(design, theta, slot);
            if cholesky_in_place(slot, k) {
                valid[j] = true;
            } else {
                skipped += 1;
            }
            let q = design.sigma_u2() - 2.0 * theta * design.sigma_uv()
                + theta * theta * design.sigma_v2();
            assert!(
                q > 0.0,
                "LIML error variance vanished at theta = {theta}; \
                 design error covariance is degenerate"
            );
            liml_scale.push(q);
        }
        if skipped == thetas.len() {
            return Err(Error::DegenerateObjective(
                "covariance kernel is singular at every grid point".into(),
            ));
        }
        Ok(Self {
            k,
            thetas,
            factors,
            valid,
            liml_scale,
            skipped,
        })
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// Number of grid points dropped because the kernel failed to factor.
    pub fn skipped_points(&self) -> usize {
        self.skipped
    }

    /// CUE objective `Q(theta_j) = g(theta_j)' Sigma(theta_j,theta_j)^{-1}
    /// g(theta_j)` at every grid point; skipped points get `+inf`.
    pub fn cue_objective_values(&self, draw: &MomentDraw, out: &mut Vec<f64>) {
        assert_eq!(draw.k(), self.k, "draw dimension does not match grid");
        out.clear();
        out.reserve(self.thetas.len());
        let k = self.k;
        let mut g = vec![0.0; k];
        for (j, &theta) in self.thetas.iter().enumerate() {
            if !self.valid[j] {
                out.push(f64::INFINITY);
                continue;
            }
            for i in 0..k {
                g[i] = draw.xi0[i] - theta * draw.xi1[i];
            }
            out.push(forward_solve_squared(
                &self.factors[j * k * k..(j + 1) * k * k],
                k,
                &mut g,
            ));
        }
    }

    /// Grid argmin of the CUE objective plus parabolic refinement.
    pub fn cue_minimize(&self, draw: &MomentDraw, design: &IvDesign) -> f64 {
        assert_eq!(draw.k(), self.k, "draw dimension does not match grid");
        let k = self.k;
        let mut g = vec![0.0; k];
        let mut best: Option<(usize, f64)> = None;
        for (j, &theta) in self.thetas.iter().enumerate() {
            if !self.valid[j] {
                continue;
            }
            for i in 0..k {
                g[i] = draw.xi0[i] - theta * draw.xi1[i];
            }
            let q = forward_solve_squared(&self.factors[j * k * k..(j + 1) * k * k], k, &mut g);
            if best.map_or(true, |(_, bq)| q < bq) {
                best = Some((j, q));
            }
        }
        let (j, q) = best.expect("grid has at least one valid point");
        let f = |theta: f64| cue_objective_raw(draw, design, theta).unwrap_or(f64::INFINITY);
        self.refine(j, q, f)
    }

    /// Grid argmin of the LIML objective plus parabolic refinement.
    pub fn liml_minimize(&self, draw: &MomentDraw, design: &IvDesign) -> f64 {
        assert_eq!(draw.k(), self.k, "draw dimension does not match grid");
        let w = design.qzz_inv();
        let mut best: Option<(usize, f64)> = None;
        for (j, &theta) in self.thetas.iter().enumerate() {
            let q = liml_objective_raw(draw, w, self.liml_scale[j], theta);
            if best.map_or(true, |(_, bq)| q < bq) {
                best = Some((j, q));
            }
        }
        let (j, q) = best.expect("grid is non-empty");
        let f = |theta: f64| {
            let scale = design.sigma_u2() - 2.0 * theta * design.sigma_uv()
                + theta * theta * design.sigma_v2();
            liml_objective_raw(draw, w, scale, theta)
        };
        self.refine(j, q, f)
    }

    /// Three rounds of local parabolic interpolation around grid point `j`.
    ///
    /// Each round probes one step to either side of the incumbent, fits a
    /// parabola through the (possibly boundary-clamped, hence uneven) triple,
    /// and moves only to strict improvements. The probe radius contracts to
    /// the distance just moved, which makes the landing error shrink roughly
    /// quartically in the grid step — enough to pin interior roots of
    /// ratio-type objectives to near machine precision. Never leaves the
    /// parameter interval.
    fn refine(&self, j: usize, q: f64, f: impl Fn(f64) -> f64) -> f64 {
        let n = self.thetas.len();
        let lo = self.thetas[0];
        let hi = self.thetas[n - 1];
        let mut xb = self.thetas[j];
        let mut fb = q;
        let mut h = (hi - lo) / (n - 1) as f64;
        for _ in 0..3 {
            if h < 4.0 * f64::EPSILON * (1.0 + xb.abs()) {
                break;
            }
            let xl = (xb - h).max(lo);
            let xr = (xb + h).min(hi);
            let fl = if xl < xb { f(xl) } else { fb };
            let fr = if xr > xb { f(xr) } else { fb };
            let mut cx = xb;
            let mut cf = fb;
            if fl < cf {
                cx = xl;
                cf = fl;
            }
            if fr < cf {
                cx = xr;
                cf = fr;
            }
            // Parabola through (xl, fl), (xb, fb), (xr, fr).
            let d1 = xb - xl;
            let d2 = xr - xb;
            if d1 > 0.0 && d2 > 0.0 {
                let num = d1 * d1 * (fb - fr) - d2 * d2 * (fb - fl);
                let den = d1 * (fb - fr) + d2 * (fb - fl);
                if den != 0.0 {
                    let xv = xb - 0.5 * num / den;
                    if xv.is_finite() {
                        let xv = xv.clamp(xl, xr);
                        if xv != xl && xv != xb && xv != xr {
                            let fv = f(xv);
                            if fv < cf {
                                cx = xv;
                                cf = fv;
                            }
                        }
                    }
                }
            }
            let moved = (cx - xb).abs();
            xb = cx;
            fb = cf;
            h = if moved > 0.0 { moved.min(0.5 * h) } else { 0.5 * h };
        }
        xb
    }
}

fn liml_objective_raw(draw: &MomentDraw, w: &DMatrix<f64>, scale: f64, theta: f64) -> f64 {
    let k = draw.k();
    let mut q = 0.0;
    for a in 0..k {
        let ga = draw.xi0[a] - theta * draw.xi1[a];
        for b in 0..k {
            let gb = draw.xi0[b] - theta * draw.xi1[b];
            q += ga * w[(a, b)] * gb;
        }
    }
    q / scale
}

fn cue_objective_raw(draw: &MomentDraw, design: &IvDesign, theta: f64) -> Option<f64> {
    let k = design.k();
    let mut s = vec![0.0; k * k];
    var_g_into(design, theta, &mut s);
    if !cholesky_in_place(&mut s, k) {
        return None;
    }
    let mut g = vec![0.0; k];
    for i in 0..k {
        g[i] = draw.xi0[i] - theta * draw.xi1[i];
    }
    Some(forward_solve_squared(&s, k, &mut g))
}

/// Two-stage least squares: the ratio `xi1' W xi0 / xi1' W xi1` clipped to
/// the parameter interval. A zero denominator (no first stage at all) maps
/// to the lower bound.
pub fn tsls(draw: &MomentDraw, design: &IvDesign) -> f64 {
    assert_eq!(draw.k(), design.k(), "draw dimension does not match design");
    let w = design.qzz_inv();
    let k = design.k();
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..k {
        for b in 0..k {
            num += draw.xi1[a] * w[(a, b)] * draw.xi0[b];
            den += draw.xi1[a] * w[(a, b)] * draw.xi1[b];
        }
    }
    let (lo, hi) = design.theta_bounds();
    if den == 0.0 {
        return lo;
    }
    (num / den).clamp(lo, hi)
}

/// Continuously-updating GMM: grid minimization of
/// `g(theta)' Sigma(theta,theta)^{-1} g(theta)` with parabolic refinement.
pub fn cue(draw: &MomentDraw, design: &IvDesign, spec: &EstimatorSpec) -> Result<f64> {
    assert_eq!(spec.kind, EstimatorKind::Cue, "spec kind must be Cue");
    spec.validate()?;
    let grid = ThetaGrid::new(design, spec.grid_points)?;
    Ok(grid.cue_minimize(draw, design))
}

/// LIML-weighted minimum distance: grid minimization of
/// `g(theta)' W g(theta) / (sigma_u2 - 2 theta sigma_uv + theta^2 sigma_v2)`
/// with `W = qzz_inv`.
pub fn liml(draw: &MomentDraw, design: &IvDesign, spec: &EstimatorSpec) -> Result<f64> {
    assert_eq!(spec.kind, EstimatorKind::Liml, "spec kind must be Liml");
    spec.validate()?;
    let grid = ThetaGrid::new(design, spec.grid_points)?;
    Ok(grid.liml_minimize(draw, design))
}

/// Finite-grid GMM: index of the grid point minimizing `g_j' W_j g_j`,
/// ties to the lowest index.
pub fn finite_gmm(g: &DVector<f64>, model: &FiniteThetaModel) -> usize {
    assert_eq!(
        g.len(),
        model.s() * model.k(),
        "moment vector length does not match model"
    );
    let mut best = 0;
    let mut best_q = f64::INFINITY;
    for j in 0..model.s() {
        let q = model.weighted_q(g, j);
        if q < best_q {
            best = j;
            best_q = q;
        }
    }
    best
}

/// Applies a functional to a point estimate.
pub fn plug_in(theta_hat: f64, functional: &Functional) -> f64 {
    functional.eval(theta_hat)
}
