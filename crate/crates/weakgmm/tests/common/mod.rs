//! Builders and oracles shared by the integration suites. Each test binary
//! compiles its own copy, so not every helper is used everywhere.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use weakgmm::{IvDesign, MomentDraw, RngStream};

/// Builds a design from a full moment covariance, deriving the scalar
/// noise summaries as block traces.
pub fn design_from_omega(
    id: &str,
    k: usize,
    pi: DVector<f64>,
    theta_star: f64,
    omega: DMatrix<f64>,
    bounds: (f64, f64),
) -> IvDesign {
    let kf = k as f64;
    let su2 = (0..k).map(|i| omega[(i, i)]).sum::<f64>() / kf;
    let sv2 = (0..k).map(|i| omega[(k + i, k + i)]).sum::<f64>() / kf;
    let suv = (0..k).map(|i| omega[(i, k + i)]).sum::<f64>() / kf;
    IvDesign::new(id, pi, theta_star, omega, su2, sv2, suv, None, 1.0, bounds)
        .expect("fixture design is valid")
}

/// Homoskedastic design with `omega = [[su2, suv], [suv, sv2]] (x) I_k`.
pub fn homoskedastic_design(
    id: &str,
    k: usize,
    pi: f64,
    theta_star: f64,
    su2: f64,
    sv2: f64,
    suv: f64,
    bounds: (f64, f64),
) -> IvDesign {
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

/// Random full-covariance design drawn from `stream`.
pub fn random_design(id: &str, k: usize, stream: &RngStream) -> IvDesign {
    let mut rng = stream.rng();
    let n = 2 * k;
    let a = DMatrix::from_fn(n, n, |_, _| 0.6 * rng.sample::<f64, _>(StandardNormal));
    let omega = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
    let pi = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    design_from_omega(id, k, pi, 0.0, omega, (-4.0, 4.0))
}

/// Golden-section search for the minimizer of a unimodal function on
/// `[lo, hi]`; ninety iterations shrink the bracket to about 1e-20 of the
/// interval, far below any tolerance used here. Values only need ordering,
/// so high-precision representations can be compared without rounding.
pub fn golden_section<V: PartialOrd + Copy>(
    f: impl Fn(f64) -> V,
    mut lo: f64,
    mut hi: f64,
    iterations: usize,
) -> f64 {
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..iterations {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

/// `(xi0 - theta xi1)' W (xi0 - theta xi1)` in compensated (double-double)
/// arithmetic, returned as a normalized hi/lo pair whose lexicographic
/// order is the order of the exact values.
///
/// Rounding the value to a single f64 would quantize it to its own ulp,
/// leaving a plateau of width `sqrt(eps * Q / curvature)` around the
/// vertex — around 1e-8 for typical draws — inside which a
/// value-comparison search stalls no matter how many iterations it runs.
/// Carrying the error term of every product and sum, and comparing pairs
/// instead of rounded sums, pushes that floor to order `eps`.
pub fn quadratic_objective_dd(draw: &MomentDraw, w: &DMatrix<f64>, theta: f64) -> (f64, f64) {
    let k = draw.k();
    let mut g_hi = vec![0.0f64; k];
    let mut g_lo = vec![0.0f64; k];
    for a in 0..k {
        let (p, pe) = two_prod(-theta, draw.xi1[a]);
        let (s, se) = two_sum(draw.xi0[a], p);
        g_hi[a] = s;
        g_lo[a] = se + pe;
    }
    let mut acc = 0.0f64;
    let mut comp = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            let (p1, e1) = two_prod(g_hi[a], w[(a, b)]);
            let lo1 = g_lo[a] * w[(a, b)] + e1;
            let (p2, e2) = two_prod(p1, g_hi[b]);
            let lo2 = p1 * g_lo[b] + lo1 * g_hi[b] + e2;
            let (s, e) = two_sum(acc, p2);
            acc = s;
            comp += e + lo2;
        }
    }
    two_sum(acc, comp)
}

/// Error-free sum: returns the rounded sum and its exact remainder.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bp = s - a;
    (s, (a - (s - bp)) + (b - bp))
}

/// Error-free product via fused multiply-add.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}
