//! Calibration files: reading and writing design records as JSON, and a
//! seeded generator of synthetic designs with a target identification
//! strength.
//!
//! A calibration file is a JSON array of records whose fields mirror
//! [`IvDesign`], with matrices flattened row-major and an explicit `k`.
//! Records may state the parameter interval directly or give a half-width
//! multiplier from which it is derived. Loading validates every record the
//! way [`IvDesign::new`] does, warns about unknown fields, and skips — with
//! a warning rather than an error — records whose true parameter falls
//! outside their own interval, since no estimator restricted to the
//! interval can be consistent for them.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IvDesign, RngStream};

/// Half-width multiplier used when a record states neither `theta_bounds`
/// nor `theta_bound_mult`.
const DEFAULT_BOUND_MULT: f64 = 20.0;

/// One design record as stored in a calibration file.
///
/// `omega` is the full `2k x 2k` noise covariance, row-major; `qzz_inv`,
/// when present, is `k x k` row-major, and omitted means the identity
/// weight. Exactly the fields of [`IvDesign`], plus the bound shorthand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub id: String,
    pub k: usize,
    pub pi_star: Vec<f64>,
    pub theta_star: f64,
    pub omega: Vec<f64>,
    pub sigma_u2: f64,
    pub sigma_v2: f64,
    pub sigma_uv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qzz_inv: Option<Vec<f64>>,
    pub se_ref: f64,
    /// Explicit parameter interval. Omitted means derive the interval
    /// from `theta_bound_mult`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bounds: Option<(f64, f64)>,
    /// Interval half-width as a multiple of `|sigma_uv / sigma_v2|`, the
    /// parameter value the uninstrumented regression converges to.
    /// Defaults to 20 when neither bound field is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_bound_mult: Option<f64>,
}

impl DesignRecord {
    /// The parameter interval the record implies: explicit bounds when
    /// stated, otherwise `[-m, m]` with `m = mult * |sigma_uv / sigma_v2|`.
    pub fn bounds(&self) -> (f64, f64) {
        match self.theta_bounds {
            Some(b) => b,
            None => {
                let mult = self.theta_bound_mult.unwrap_or(DEFAULT_BOUND_MULT);
                let half = mult * (self.sigma_uv / self.sigma_v2).abs();
                (-half, half)
            }
        }
    }

    /// Builds the validated design.
    ///
    /// # Errors
    ///
    /// Returns [`Error::InvalidDesign`] for dimension mismatches and for
    /// everything [`IvDesign::new`] rejects, including a non-positive-
    /// definite `omega` (named with its offending eigenvalue) and a
    /// derived interval that is empty because `sigma_uv` is zero.
    pub fn to_design(&self) -> Result<IvDesign> {
        let fail = |reason: String| Error::InvalidDesign {
            id: self.id.clone(),
            reason,
        };
        if self.k == 0 {
            return Err(fail("k must be at least 1".into()));
        }
        if self.pi_star.len() != self.k {
            return Err(fail(format!(
                "pi_star has {} entries but k = {}",
                self.pi_star.len(),
                self.k
            )));
        }
        let n = 2 * self.k;
        if self.omega.len() != n * n {
            return Err(fail(format!(
                "omega has {} entries; expected {n} x {n} = {}",
                self.omega.len(),
                n * n
            )));
        }
        let qzz_inv = match &self.qzz_inv {
            Some(w) => {
                if w.len() != self.k * self.k {
                    return Err(fail(format!(
                        "qzz_inv has {} entries; expected {k} x {k} = {}",
                        w.len(),
                        self.k * self.k,
                        k = self.k,
                    )));
                }
                Some(DMatrix::from_row_slice(self.k, self.k, w))
            }
            None => None,
        };
        IvDesign::new(
            self.id.clone(),
            DVector::from_vec(self.pi_star.clone()),
            self.theta_star,
            DMatrix::from_row_slice(n, n, &self.omega),
            self.sigma_u2,
            self.sigma_v2,
            self.sigma_uv,
            qzz_inv,
            self.se_ref,
            self.bounds(),
        )
    }
}

/// Result of loading a calibration file: the designs that validated, plus
/// human-readable warnings about fields that were ignored and records
/// that were skipped.
#[derive(Debug, Clone)]
pub struct LoadedCalibration {
    pub designs: Vec<IvDesign>,
    pub warnings: Vec<String>,
}

/// Field names [`DesignRecord`] knows; anything else in a record draws a
/// warning.
const KNOWN_FIELDS: [&str; 12] = [
    "id",
    "k",
    "pi_star",
    "theta_star",
    "omega",
    "sigma_u2",
    "sigma_v2",
    "sigma_uv",
    "qzz_inv",
    "se_ref",
    "theta_bounds",
    "theta_bound_mult",
];

/// Parses calibration JSON from a string; `source` names the input in
/// diagnostics.
///
/// Unknown record fields are ignored with a warning. A record whose true
/// parameter lies outside its own interval is skipped with a warning; any
/// other invalid record is an error.
///
/// # Errors
///
/// Returns [`Error::Calibration`] if the text is not a JSON array of
/// records or a record is missing or mistypes a field, and
/// [`Error::InvalidDesign`] if a record fails design validation.
pub fn parse_calibration(text: &str, source: &str) -> Result<LoadedCalibration> {
    let bad = |reason: String| Error::Calibration {
        path: source.to_string(),
        reason,
    };
    let root: serde_json::Value =
        serde_json::from_str(text).map_err(|e| bad(format!("invalid JSON: {e}")))?;
    let records = root
        .as_array()
        .ok_or_else(|| bad("top level must be an array of design records".into()))?;
    let mut designs = Vec::with_capacity(records.len());
    let mut warnings = Vec::new();
    for (i, value) in records.iter().enumerate() {
        let object = value
            .as_object()
            .ok_or_else(|| bad(format!("record {i} is not an object")))?;
        let name = object
            .get("id")
            .and_then(|v| v.as_str())
            .map_or_else(|| format!("record {i}"), |id| format!("record `{id}`"));
        for key in object.keys() {
            if !KNOWN_FIELDS.contains(&key.as_str()) {
                warnings.push(format!("{name}: unknown field `{key}` ignored"));
            }
        }
        let record: DesignRecord = serde_json::from_value(value.clone())
            .map_err(|e| bad(format!("{name}: {e}")))?;
        let (lo, hi) = record.bounds();
        if record.theta_star < lo || record.theta_star > hi {
            warnings.push(format!(
                "{name}: theta_star = {} lies outside the parameter interval ({lo}, {hi}); \
                 record skipped",
                record.theta_star
            ));
            continue;
        }
        designs.push(record.to_design()?);
    }
    for (i, design) in designs.iter().enumerate() {
        for earlier in &designs[..i] {
            if earlier.id() == design.id() {
                return Err(bad(format!("duplicate design id `{}`", design.id())));
            }
        }
    }
    Ok(LoadedCalibration { designs, warnings })
}

/// Loads and validates a calibration file. See [`parse_calibration`].
///
/// # Errors
///
/// Returns [`Error::Calibration`] if the file cannot be read, plus
/// everything [`parse_calibration`] rejects.
pub fn load_calibration(path: &Path) -> Result<LoadedCalibration> {
    let text = fs::read_to_string(path).map_err(|e| Error::Calibration {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_calibration(&text, &path.display().to_string())
}

/// Writes records as pretty-printed calibration JSON.
///
/// # Errors
///
/// Returns [`Error::Io`] if the file cannot be written.
pub fn save_calibration(records: &[DesignRecord], path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(records).expect("records serialize");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Configuration of the synthetic design generator.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    /// Instruments per design, 1 through 4.
    pub k: usize,
    /// Target mean effective F; the instrument strength is solved so the
    /// population mean of the statistic equals this exactly.
    pub target_f: f64,
    /// Number of designs.
    pub n: usize,
    /// Draw a heteroskedastic noise covariance instead of a homoskedastic
    /// one.
    pub hetero: bool,
    /// Seed; designs are a pure function of the whole configuration.
    pub seed: u64,
}

/// Generates `cfg.n` random designs at the target identification
/// strength.
///
/// Each design draws error variances and a nonzero error correlation,
/// builds the implied noise covariance (heteroskedastic designs rescale
/// it per coordinate, so it is no longer a scaled identity per
/// instrument), and solves the instrument-strength scale so the mean
/// effective F equals `target_f` exactly. The true parameter is placed a
/// random multiple of the uninstrumented-regression limit away from zero,
/// well inside the default interval. The reference standard error is the
/// strong-identification standard error of the weighted minimum-distance
/// estimator, so normalized RMSE tends to one as `target_f` grows.
///
/// # Errors
///
/// Returns [`Error::InvalidConfig`] for `k` outside 1..=4, `target_f`
/// not above 1 (an effective F of 1 means zero instrument strength), or
/// `n = 0`.
pub fn generate_records(cfg: &SyntheticConfig) -> Result<Vec<DesignRecord>> {
    if !(1..=4).contains(&cfg.k) {
        return Err(Error::InvalidConfig(format!(
            "generator supports 1 to 4 instruments, got {}",
            cfg.k
        )));
    }
    if !(cfg.target_f > 1.0 && cfg.target_f.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "target effective F must be a finite number above 1, got {}",
            cfg.target_f
        )));
    }
    if cfg.n == 0 {
        return Err(Error::InvalidConfig("need at least one design".into()));
    }
    let k = cfg.k;
    let root = RngStream::new(cfg.seed);
    let kind = if cfg.hetero { "het" } else { "hom" };
    let mut records = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = root.child(i as u64).rng();
        let sigma_u2: f64 = rng.gen_range(0.5..2.0);
        let sigma_v2: f64 = rng.gen_range(0.5..2.0);
        let corr = rng.gen_range(0.2..0.6) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let sigma_uv = corr * (sigma_u2 * sigma_v2).sqrt();

        // Homoskedastic noise: the 2x2 error covariance repeated over
        // instruments. Heteroskedastic designs rescale each of the 2k
        // coordinates, which preserves definiteness and keeps the error
        // correlation bounded away from zero.
        let mut omega = DMatrix::zeros(2 * k, 2 * k);
        for a in 0..k {
            omega[(a, a)] = sigma_u2;
            omega[(a, k + a)] = sigma_uv;
            omega[(k + a, a)] = sigma_uv;
            omega[(k + a, k + a)] = sigma_v2;
        }
        if cfg.hetero {
            let scales: Vec<f64> = (0..2 * k).map(|_| rng.gen_range(-0.4..0.4f64).exp()).collect();
            for a in 0..2 * k {
                for b in 0..2 * k {
                    omega[(a, b)] *= scales[a] * scales[b];
                }
            }
        }
        // Scalar error moments from the block traces, so the derived
        // parameter interval and the estimators' variance model track the
        // actual covariance in the heteroskedastic case too.
        let su2 = omega.view((0, 0), (k, k)).trace() / k as f64;
        let sv2 = omega.view((k, k), (k, k)).trace() / k as f64;
        let suv = omega.view((0, k), (k, k)).trace() / k as f64;

        // Instrument strength: mean effective F is 1 + pi'pi / tr(Omega11)
        // under the identity weight, so scale a random direction to hit
        // the target exactly.
        let dir = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let omega11 = omega.view((k, k), (k, k)).into_owned();
        let scale = ((cfg.target_f - 1.0) * omega11.trace() / dir.norm_squared()).sqrt();
        let pi_star = dir * scale;

        let mu = suv / sv2;
        let theta_star = mu * (1.0 + rng.gen_range(-1.5..1.5));

        // Strong-identification standard error of the weighted
        // minimum-distance estimator: sqrt(pi' V(theta*) pi) / (pi'pi).
        let v_star = omega.view((0, 0), (k, k))
            - (omega.view((0, k), (k, k)) + omega.view((k, 0), (k, k))) * theta_star
            + omega.view((k, k), (k, k)) * (theta_star * theta_star);
        let se_ref = pi_star.dot(&(&v_star * &pi_star)).sqrt() / pi_star.norm_squared();

        records.push(DesignRecord {
            id: format!("syn-{kind}-k{k}-f{}-s{}-{i:03}", cfg.target_f, cfg.seed),
            k,
            pi_star: pi_star.iter().copied().collect(),
            theta_star,
            omega: omega.transpose().as_slice().to_vec(),
            sigma_u2: su2,
            sigma_v2: sv2,
            sigma_uv: suv,
            qzz_inv: None,
            se_ref,
            theta_bounds: None,
            theta_bound_mult: None,
        });
    }
    Ok(records)
}
