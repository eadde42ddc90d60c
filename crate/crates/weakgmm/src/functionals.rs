//! Estimands: smooth scalar functionals of the structural parameter that
//! estimators are plugged into.
//!
//! Besides the identity (the coefficient itself), the correlation functional
//! `r(theta) = (sigma_uv - theta * sigma_v2)
//!             / (sigma_v * sqrt(sigma_u2 - 2 theta sigma_uv + theta^2 sigma_v2))`
//! maps a candidate coefficient to the implied correlation between the
//! structural and first-stage errors.

use crate::error::{Error, Result};
use crate::model::IvDesign;
use crate::numeric::linspace;

/// Points used for the sup-norm scan when a functional is built.
const R_BAR_GRID: usize = 10_000;
/// Relative floor under the correlation functional's radicand; designs that
/// dip below it over the parameter interval are rejected as near-degenerate.
const RADICAND_RTOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionalKind {
    /// `r(theta) = theta`.
    Identity,
    /// Implied endogeneity correlation at `theta`.
    EndogCorr,
}

/// A functional bound to one design: evaluation only needs the design's
/// error variances, which are copied in so evaluation is total and
/// allocation-free.
#[derive(Clone, Debug)]
pub struct Functional {
    kind: FunctionalKind,
    sigma_u2: f64,
    sigma_v2: f64,
    sigma_uv: f64,
    r_bar: f64,
}

impl Functional {
    /// Builds the functional for a design, scanning a dense grid over the
    /// parameter interval for the sup norm `r_bar`.
    ///
    /// For [`FunctionalKind::EndogCorr`] the radicand
    /// `sigma_u2 - 2 theta sigma_uv + theta^2 sigma_v2` is checked at its
    /// interval minimum; a value at or below `1e-14 * sigma_u2` means the
    /// implied error covariance is singular somewhere on the interval and the
    /// design is rejected here rather than mid-evaluation.
    pub fn new(kind: FunctionalKind, design: &IvDesign) -> Result<Self> {
        let (lo, hi) = design.theta_bounds();
        let out = Self {
            kind,
            sigma_u2: design.sigma_u2(),
            sigma_v2: design.sigma_v2(),
            sigma_uv: design.sigma_uv(),
            r_bar: 0.0,
        };
        if kind == FunctionalKind::EndogCorr {
            // The radicand is an upward parabola in theta; its interval
            // minimum is at the vertex when interior, else at an endpoint.
            let vertex = out.sigma_uv / out.sigma_v2;
            let mut min_rad = out.radicand(lo).min(out.radicand(hi));
            if vertex > lo && vertex < hi {
                min_rad = min_rad.min(out.radicand(vertex));
            }
            if min_rad <= RADICAND_RTOL * out.sigma_u2 {
                return Err(Error::InvalidFunctional(format!(
                    "implied error covariance is near-degenerate over the parameter \
                     interval (minimum radicand {min_rad:.3e})"
                )));
            }
        }
        let r_bar = linspace(lo, hi, R_BAR_GRID)
            .into_iter()
            .map(|t| out.eval(t).abs())
            .fold(0.0, f64::max);
        Ok(Self { r_bar, ..out })
    }

    pub fn identity(design: &IvDesign) -> Result<Self> {
        Self::new(FunctionalKind::Identity, design)
    }

    pub fn endog_corr(design: &IvDesign) -> Result<Self> {
        Self::new(FunctionalKind::EndogCorr, design)
    }

    pub fn kind(&self) -> FunctionalKind {
        self.kind
    }

    /// Output dimension; every functional here is scalar.
    pub fn p(&self) -> usize {
        1
    }

    /// Sup norm of the functional over the parameter interval.
    pub fn r_bar(&self) -> f64 {
        self.r_bar
    }

    fn radicand(&self, theta: f64) -> f64 {
        self.sigma_u2 - 2.0 * theta * self.sigma_uv + theta * theta * self.sigma_v2
    }

    /// Evaluates the functional. Total on the parameter interval for any
    /// design that passed construction.
    pub fn eval(&self, theta: f64) -> f64 {
        match self.kind {
            FunctionalKind::Identity => theta,
            FunctionalKind::EndogCorr => {
                let rad = self.radicand(theta);
                debug_assert!(rad > 0.0, "radicand {rad} at theta {theta}");
                (self.sigma_uv - theta * self.sigma_v2) / (self.sigma_v2.sqrt() * rad.sqrt())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn design(sigma_u2: f64, sigma_v2: f64, sigma_uv: f64, bounds: (f64, f64)) -> IvDesign {
        IvDesign::new(
            "func",
            DVector::from_element(1, 1.0),
            0.0,
            DMatrix::identity(2, 2),
            sigma_u2,
            sigma_v2,
            sigma_uv,
            None,
            1.0,
            bounds,
        )
        .unwrap()
    }

    #[test]
    fn identity_is_the_identity_and_r_bar_is_the_farther_endpoint() {
        let f = Functional::identity(&design(1.0, 1.0, 0.0, (-3.0, 7.0))).unwrap();
        assert_eq!(f.eval(1.25), 1.25);
        assert_eq!(f.r_bar(), 7.0);
    }

    #[test]
    fn corr_at_zero_is_the_error_correlation() {
        // theta = 0: r = sigma_uv / (sigma_u sigma_v).
        let f = Functional::endog_corr(&design(4.0, 1.0, 1.0, (-3.0, 3.0))).unwrap();
        assert!((f.eval(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn corr_is_bounded_by_one_and_r_bar_reflects_it() {
        let f = Functional::endog_corr(&design(1.0, 1.0, 0.3, (-6.0, 6.0))).unwrap();
        for t in [-6.0, -1.0, 0.0, 0.3, 5.9] {
            assert!(f.eval(t).abs() <= 1.0 + 1e-12);
        }
        assert!(f.r_bar() <= 1.0 + 1e-12);
        assert!(f.r_bar() > 0.9);
    }

    #[test]
    fn near_degenerate_design_is_rejected_at_construction() {
        // |rho| = 1 puts the radicand's minimum at zero inside the interval.
        let d = design(1.0, 1.0, 1.0 - 1e-16, (-3.0, 3.0));
        let err = Functional::endog_corr(&d).unwrap_err();
        assert!(err.to_string().contains("near-degenerate"), "{err}");
    }
}
