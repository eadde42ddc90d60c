//! Bootstrap aggregation of estimators over perturbed moment draws.
//!
//! A bagged estimator replaces a hard decision rule with its average over
//! resampled inputs: the observed draw is perturbed by fresh mean-zero
//! Gaussian noise with the model's own covariance, the base estimator is
//! applied to every perturbed copy, and the results are averaged. Averaging
//! smooths the discontinuities and hard clips of the base rule, which is
//! what makes the aggregate robust to small changes in the input.
//!
//! Noise is drawn from a caller-supplied [`RngStream`] so that a bagged
//! value is a pure function of `(draw, design, config, stream)`. Callers
//! that evaluate several bagged estimators on the same draw should pass the
//! same stream to each so that all of them see identical perturbations.

use crate::error::{Error, Result};
use crate::model::{IvDesign, MomentDraw, RngStream};
use crate::numeric::pairwise_mean;

/// Configuration for bootstrap aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BagConfig {
    draws: usize,
    noise_scale: f64,
}

impl BagConfig {
    /// Creates a configuration with `draws` perturbed copies and noise
    /// standard deviation scaled by `noise_scale`.
    ///
    /// # Errors
    ///
    /// Returns [`Error::InvalidConfig`] if `draws` is zero or `noise_scale`
    /// is not a finite positive number. A tiny positive scale (say `1e-12`)
    /// effectively recovers the base estimator away from its discontinuities
    /// and is the supported way to probe the vanishing-noise limit.
    pub fn new(draws: usize, noise_scale: f64) -> Result<Self> {
        if draws == 0 {
            return Err(Error::InvalidConfig(
                "bagging needs at least one perturbed draw".into(),
            ));
        }
        if !noise_scale.is_finite() || noise_scale <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "bagging noise scale must be finite and positive, got {noise_scale}"
            )));
        }
        Ok(Self { draws, noise_scale })
    }

    /// Number of perturbed copies averaged over.
    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Standard-deviation multiplier applied to the perturbation noise.
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }
}

impl Default for BagConfig {
    /// 400 draws at unit noise scale.
    fn default() -> Self {
        Self {
            draws: 400,
            noise_scale: 1.0,
        }
    }
}

/// Averages `base` over perturbed copies of `draw`.
///
/// Copy `b` adds `noise_scale` times a mean-zero Gaussian vector with the
/// design's moment covariance to the draw, using the RNG addressed by
/// `stream.child(b)`. The average is a pairwise sum, so the result does not
/// depend on evaluation order or thread count.
pub fn bag<F>(
    base: F,
    draw: &MomentDraw,
    design: &IvDesign,
    cfg: &BagConfig,
    stream: &RngStream,
) -> f64
where
    F: Fn(&MomentDraw) -> f64,
{
    let mut values = Vec::with_capacity(cfg.draws);
    for b in 0..cfg.draws {
        let mut rng = stream.child(b as u64).rng();
        let (n0, n1) = design.sample_noise(&mut rng);
        let shifted = MomentDraw {
            xi0: &draw.xi0 + n0 * cfg.noise_scale,
            xi1: &draw.xi1 + n1 * cfg.noise_scale,
        };
        values.push(base(&shifted));
    }
    pairwise_mean(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::tsls;
    use crate::model::draw_iv;
    use nalgebra::{DMatrix, DVector};

    fn unit_design() -> IvDesign {
        IvDesign::new(
            "bag-unit",
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
    fn constant_base_rule_is_unchanged_by_bagging() {
        let design = unit_design();
        let draw = MomentDraw::new(
            DVector::from_vec(vec![0.3]),
            DVector::from_vec(vec![0.8]),
        )
        .unwrap();
        let cfg = BagConfig::new(64, 1.0).unwrap();
        let stream = RngStream::new(7).child(1);
        let out = bag(|_| 2.5, &draw, &design, &cfg, &stream);
        assert_eq!(out, 2.5);
    }

    #[test]
    fn vanishing_noise_scale_recovers_the_base_estimator() {
        let design = unit_design();
        let draw = MomentDraw::new(
            DVector::from_vec(vec![1.1]),
            DVector::from_vec(vec![0.9]),
        )
        .unwrap();
        let cfg = BagConfig::new(1, 1e-12).unwrap();
        let stream = RngStream::new(11).child(2);
        let base = |d: &MomentDraw| tsls(d, &design);
        let bagged = bag(base, &draw, &design, &cfg, &stream);
        assert!((bagged - tsls(&draw, &design)).abs() < 1e-6);
    }

    #[test]
    fn identical_streams_give_identical_bagged_values() {
        let design = unit_design();
        let root = RngStream::new(99).child(5).child(3);
        let draw = draw_iv(&design, &root.child(0));
        let cfg = BagConfig::default();
        let base = |d: &MomentDraw| tsls(d, &design);
        let a = bag(&base, &draw, &design, &cfg, &root.child(1));
        let b = bag(&base, &draw, &design, &cfg, &root.child(1));
        assert_eq!(a, b);
        let c = bag(&base, &draw, &design, &cfg, &root.child(2));
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_empty_and_non_positive_configurations() {
        assert!(BagConfig::new(0, 1.0).is_err());
        assert!(BagConfig::new(10, -0.5).is_err());
        assert!(BagConfig::new(10, 0.0).is_err());
        assert!(BagConfig::new(10, f64::NAN).is_err());
    }
}
