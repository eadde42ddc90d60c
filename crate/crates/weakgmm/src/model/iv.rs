//! Linear IV limit experiment.
//!
//! The data are a single draw `(xi0, xi1)` jointly normal with mean
//! `(pi * theta_star, pi)` and covariance `Omega`; the moment function is
//! `g(theta) = xi0 - xi1 * theta`. `Omega` is laid out in two `k`-blocks in
//! the order `(xi0, xi1)`, so `Cov(g(a), g(b))` is the bilinear kernel
//! `Omega00 - Omega01 * b - a * Omega10 + a * b * Omega11`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::RngStream;

/// Relative tolerance for symmetry checks on input matrices.
const SYMMETRY_RTOL: f64 = 1e-10;
/// An eigenvalue below this fraction of the largest entry magnitude counts as
/// numerically non-positive-definite.
const PD_RTOL: f64 = 1e-10;

/// One calibrated experiment: instrument strength, endogeneity, noise
/// covariance, and the parameter interval estimators are restricted to.
///
/// Immutable after construction; the Cholesky factor of `omega` is computed
/// once and reused by every sampler call.
#[derive(Clone, Debug)]
pub struct IvDesign {
    id: String,
    k: usize,
    pi_star: DVector<f64>,
    theta_star: f64,
    omega: DMatrix<f64>,
    sigma_u2: f64,
    sigma_v2: f64,
    sigma_uv: f64,
    qzz_inv: DMatrix<f64>,
    se_ref: f64,
    theta_bounds: (f64, f64),
    /// Lower Cholesky factor of `omega`, row-major `2k x 2k`.
    chol_lower: Vec<f64>,
}

impl IvDesign {
    /// Validates and builds a design. `qzz_inv = None` means the identity
    /// weight `W = I`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        pi_star: DVector<f64>,
        theta_star: f64,
        omega: DMatrix<f64>,
        sigma_u2: f64,
        sigma_v2: f64,
        sigma_uv: f64,
        qzz_inv: Option<DMatrix<f64>>,
        se_ref: f64,
        theta_bounds: (f64, f64),
    ) -> Result<Self> {
        let id = id.into();
        let fail = |reason: String| Error::InvalidDesign {
            id: id.clone(),
            reason,
        };

        let k = pi_star.len();
        if k == 0 {
            return Err(fail("pi_star must be non-empty".into()));
        }
        if pi_star.iter().any(|x| !x.is_finite()) {
            return Err(fail("pi_star has non-finite entries".into()));
        }
        if !theta_star.is_finite() {
            return Err(fail("theta_star is not finite".into()));
        }
        if omega.nrows() != 2 * k || omega.ncols() != 2 * k {
            return Err(fail(format!(
                "omega must be {n} x {n} for k = {k}, got {r} x {c}",
                n = 2 * k,
                r = omega.nrows(),
                c = omega.ncols(),
            )));
        }
        if omega.iter().any(|x| !x.is_finite()) {
            return Err(fail("omega has non-finite entries".into()));
        }
        let omega_scale = omega.amax();
        if omega_scale == 0.0 {
            return Err(fail("omega is identically zero".into()));
        }
        let asym = (&omega - omega.transpose()).amax();
        if asym > SYMMETRY_RTOL * omega_scale {
            return Err(fail(format!(
                "omega is not symmetric: max |omega - omega'| = {asym:.3e}"
            )));
        }
        // Definiteness check with an explicit eigenvalue diagnostic; the
        // Cholesky factorization below then cannot fail.
        let eigs = omega.clone().symmetric_eigenvalues();
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig <= PD_RTOL * omega_scale {
            return Err(fail(format!(
                "omega is not positive definite: eigenvalue {min_eig:.6e} \
                 is below the tolerance {:.3e}",
                PD_RTOL * omega_scale
            )));
        }
        let chol = Cholesky::new(omega.clone())
            .ok_or_else(|| fail("omega admits no Cholesky factorization".into()))?;

        if !(sigma_u2 > 0.0 && sigma_u2.is_finite()) {
            return Err(fail("sigma_u2 must be positive".into()));
        }
        if !(sigma_v2 > 0.0 && sigma_v2.is_finite()) {
            return Err(fail("sigma_v2 must be positive".into()));
        }
        if !sigma_uv.is_finite() {
            return Err(fail("sigma_uv is not finite".into()));
        }
        if sigma_uv * sigma_uv > sigma_u2 * sigma_v2 * (1.0 + 1e-12) {
            return Err(fail(format!(
                "sigma_uv^2 = {:.6e} exceeds sigma_u2 * sigma_v2 = {:.6e}",
                sigma_uv * sigma_uv,
                sigma_u2 * sigma_v2
            )));
        }
        if !(se_ref > 0.0 && se_ref.is_finite()) {
            return Err(fail("se_ref must be positive".into()));
        }

        let (lo, hi) = theta_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(fail(format!(
                "theta_bounds must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        if theta_star < lo || theta_star > hi {
            return Err(fail(format!(
                "theta_star = {theta_star} lies outside theta_bounds ({lo}, {hi})"
            )));
        }

        let qzz_inv = match qzz_inv {
            Some(m) => {
                if m.nrows() != k || m.ncols() != k {
                    return Err(fail(format!(
                        "qzz_inv must be {k} x {k}, got {} x {}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(fail("qzz_inv has non-finite entries".into()));
                }
                let scale = m.amax();
                if (&m - m.transpose()).amax() > SYMMETRY_RTOL * scale.max(1.0) {
                    return Err(fail("qzz_inv is not symmetric".into()));
                }
                if Cholesky::new(m.clone()).is_none() {
                    return Err(fail("qzz_inv is not positive definite".into()));
                }
                m
            }
            None => DMatrix::identity(k, k),
        };

        let l = chol.l();
        let n = 2 * k;
        let mut chol_lower = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                chol_lower[i * n + j] = l[(i, j)];
            }
        }

        Ok(Self {
            id,
            k,
            pi_star,
            theta_star,
            omega,
            sigma_u2,
            sigma_v2,
            sigma_uv,
            qzz_inv,
            se_ref,
            theta_bounds,
            chol_lower,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pi_star(&self) -> &DVector<f64> {
        &self.pi_star
    }

    pub fn theta_star(&self) -> f64 {
        self.theta_star
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn sigma_u2(&self) -> f64 {
        self.sigma_u2
    }

    pub fn sigma_v2(&self) -> f64 {
        self.sigma_v2
    }

    pub fn sigma_uv(&self) -> f64 {
        self.sigma_uv
    }

    pub fn qzz_inv(&self) -> &DMatrix<f64> {
        &self.qzz_inv
    }

    pub fn se_ref(&self) -> f64 {
        self.se_ref
    }

    pub fn theta_bounds(&self) -> (f64, f64) {
        self.theta_bounds
    }

    /// `k x k` block of `omega`; `row`, `col` index the `(xi0, xi1)` blocks.
    pub fn omega_block(&self, row: usize, col: usize) -> DMatrix<f64> {
        assert!(row < 2 && col < 2, "block indices must be 0 or 1");
        self.omega
            .view((row * self.k, col * self.k), (self.k, self.k))
            .into_owned()
    }

    /// `Var(g(theta))`, i.e. the covariance kernel on the diagonal.
    pub fn var_g(&self, theta: f64) -> DMatrix<f64> {
        sigma_kernel(self, theta, theta)
    }

    /// One draw with the noise term multiplied by `noise_scale`.
    /// `noise_scale = 0` returns the mean `(pi * theta_star, pi)` exactly,
    /// which is the deterministic testing hook.
    pub fn sample_scaled(&self, rng: &mut impl Rng, noise_scale: f64) -> MomentDraw {
        let n = 2 * self.k;
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut xi0 = DVector::zeros(self.k);
        let mut xi1 = DVector::zeros(self.k);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.chol_lower[i * n + j] * z[j];
            }
            let mean = if i < self.k {
                self.pi_star[i] * self.theta_star
            } else {
                self.pi_star[i - self.k]
            };
            let value = mean + noise_scale * acc;
            if i < self.k {
                xi0[i] = value;
            } else {
                xi1[i - self.k] = value;
            }
        }
        MomentDraw { xi0, xi1 }
    }

    /// One draw at the calibrated noise level.
    pub fn sample(&self, rng: &mut impl Rng) -> MomentDraw {
        self.sample_scaled(rng, 1.0)
    }

    /// Mean-zero noise with covariance `omega`, split into the two blocks.
    /// Used by bagging, which perturbs an observed draw.
    pub fn sample_noise(&self, rng: &mut impl Rng) -> (DVector<f64>, DVector<f64>) {
        let n = 2 * self.k;
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut nu0 = DVector::zeros(self.k);
        let mut nu1 = DVector::zeros(self.k);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.chol_lower[i * n + j] * z[j];
            }
            if i < self.k {
                nu0[i] = acc;
            } else {
                nu1[i - self.k] = acc;
            }
        }
        (nu0, nu1)
    }
}

/// One observation of the experiment, in reduced form: `xi0` estimates
/// `pi * theta_star`, `xi1` estimates `pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentDraw {
    pub xi0: DVector<f64>,
    pub xi1: DVector<f64>,
}

impl MomentDraw {
    pub fn new(xi0: DVector<f64>, xi1: DVector<f64>) -> Result<Self> {
        if xi0.len() != xi1.len() {
            return Err(Error::InvalidConfig(format!(
                "moment draw blocks must have equal length, got {} and {}",
                xi0.len(),
                xi1.len()
            )));
        }
        if xi0.iter().chain(xi1.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig(
                "moment draw has non-finite entries".into(),
            ));
        }
        Ok(Self { xi0, xi1 })
    }

    pub fn k(&self) -> usize {
        self.xi0.len()
    }

    /// `g(theta) = xi0 - xi1 * theta`.
    pub fn g(&self, theta: f64) -> DVector<f64> {
        &self.xi0 - &self.xi1 * theta
    }

    /// The draw with both blocks multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            xi0: &self.xi0 * c,
            xi1: &self.xi1 * c,
        }
    }
}

/// Samples the experiment once from the given stream address.
///
/// Pure in `(design, stream)`: the same address always reproduces the same
/// draw, regardless of what else has been sampled.
pub fn draw_iv(design: &IvDesign, stream: &RngStream) -> MomentDraw {
    let mut rng = stream.rng();
    design.sample(&mut rng)
}

/// Moment function evaluation, as a free function mirror of
/// [`MomentDraw::g`].
pub fn g_eval(draw: &MomentDraw, theta: f64) -> DVector<f64> {
    draw.g(theta)
}

/// Covariance kernel `Cov(g(theta), g(theta_t))` implied by `omega`:
/// `Omega00 - Omega01 * theta_t - theta * Omega10 + theta * theta_t * Omega11`.
pub fn sigma_kernel(design: &IvDesign, theta: f64, theta_t: f64) -> DMatrix<f64> {
    let k = design.k();
    let omega = design.omega();
    let mut out = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            out[(i, j)] = omega[(i, j)] - theta_t * omega[(i, k + j)] - theta * omega[(k + i, j)]
                + theta * theta_t * omega[(k + i, k + j)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    pub(crate) fn unit_design() -> IvDesign {
        IvDesign::new(
            "unit",
            dvector![1.0],
            0.0,
            DMatrix::identity(2, 2),
            1.0,
            1.0,
            0.0,
            None,
            1.0,
            (-2.0, 2.0),
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_scale_returns_the_mean_exactly() {
        let design = IvDesign::new(
            "mean",
            dvector![0.5, -1.5],
            2.0,
            DMatrix::identity(4, 4),
            1.0,
            1.0,
            0.3,
            None,
            1.0,
            (-4.0, 4.0),
        )
        .unwrap();
        let mut rng = RngStream::new(1).rng();
        let draw = design.sample_scaled(&mut rng, 0.0);
        assert_eq!(draw.xi0, dvector![1.0, -3.0]);
        assert_eq!(draw.xi1, dvector![0.5, -1.5]);
    }

    #[test]
    fn g_eval_is_linear_in_theta() {
        let draw = MomentDraw::new(dvector![1.0, 2.0], dvector![3.0, -1.0]).unwrap();
        assert_eq!(g_eval(&draw, 0.0), dvector![1.0, 2.0]);
        assert_eq!(g_eval(&draw, 2.0), dvector![-5.0, 4.0]);
    }

    #[test]
    fn sigma_kernel_identity_omega() {
        // Omega = I_{2k}: kernel reduces to (1 + theta * theta_t) * I_k.
        let design = unit_design();
        let s = sigma_kernel(&design, 0.5, -2.0);
        assert!((s[(0, 0)] - (1.0 + 0.5 * -2.0)).abs() < 1e-15);
    }

    #[test]
    fn sigma_kernel_swaps_with_transpose() {
        let omega = dmatrix![
            2.0, 0.3, 0.1, -0.2;
            0.3, 1.5, 0.0, 0.4;
            0.1, 0.0, 1.0, 0.2;
            -0.2, 0.4, 0.2, 2.5
        ];
        let design = IvDesign::new(
            "swap",
            dvector![1.0, 1.0],
            0.0,
            omega,
            1.0,
            1.0,
            0.5,
            None,
            1.0,
            (-10.0, 10.0),
        )
        .unwrap();
        let a = sigma_kernel(&design, 0.7, -1.3);
        let b = sigma_kernel(&design, -1.3, 0.7).transpose();
        assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn rejects_non_positive_definite_omega_naming_the_eigenvalue() {
        let omega = dmatrix![1.0, 1.0; 1.0, 1.0];
        let err = IvDesign::new(
            "degenerate",
            dvector![1.0],
            0.0,
            omega,
            1.0,
            1.0,
            0.0,
            None,
            1.0,
            (-1.0, 1.0),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("not positive definite"), "{msg}");
        assert!(msg.contains("eigenvalue"), "{msg}");
    }

    #[test]
    fn rejects_asymmetric_omega_and_bad_bounds() {
        let omega = dmatrix![1.0, 0.2; 0.0, 1.0];
        assert!(IvDesign::new(
            "asym",
            dvector![1.0],
            0.0,
            omega,
            1.0,
            1.0,
            0.0,
            None,
            1.0,
            (-1.0, 1.0)
        )
        .is_err());
        assert!(IvDesign::new(
            "outside",
            dvector![1.0],
            5.0,
            DMatrix::identity(2, 2),
            1.0,
            1.0,
            0.0,
            None,
            1.0,
            (-1.0, 1.0)
        )
        .is_err());
    }

    #[test]
    fn rejects_incoherent_error_covariance() {
        assert!(IvDesign::new(
            "cov",
            dvector![1.0],
            0.0,
            DMatrix::identity(2, 2),
            1.0,
            1.0,
            1.5,
            None,
            1.0,
            (-1.0, 1.0)
        )
        .is_err());
    }

    #[test]
    fn draw_iv_is_pure_in_the_stream_address() {
        let design = unit_design();
        let stream = RngStream::new(9).child(4).child(2);
        let a = draw_iv(&design, &stream);
        let b = draw_iv(&design, &stream);
        assert_eq!(a, b);
        let c = draw_iv(&design, &stream.child(0));
        assert_ne!(a, c);
    }
}
