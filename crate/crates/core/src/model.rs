//! Closed-form key-rate model.
//!
//! With `ΔT = sqrt(σ_C² + σ_J² + σ_D²)` and the coincidence window set to
//! `ΔT`:
//!
//! ```text
//! CC   = s·B·η_A·η_B
//! ξ    = (B·η_A + 2·DC_A)·(B·η_B + 2·DC_B)·ΔT
//! E    = (CC·e_o + ξ/2) / (CC + ξ)
//! R_s  = CC_tot·(1 − (1+f)·H₂(E))
//! ```
//!
//! `s = erf(sqrt(ln 2))` is the fraction of a Gaussian peak of FWHM `ΔT`
//! inside a window of the same width. `CC_tot` is `CC + ξ` by default
//! ([`TotalRate::WithAccidentals`]) or `CC` alone.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::binary_entropy;
use crate::physics::{bandwidth_to_wavelength_width, db_to_transmission, LinkScenario, GAUSSIAN_TIME_BANDWIDTH};

const PS: f64 = 1e-12;

/// `erf(sqrt(ln 2))`.
pub fn default_clipping_factor() -> f64 {
    libm::erf(std::f64::consts::LN_2.sqrt())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("curve never exceeds {epsilon} bits/s")]
    NoKey { epsilon: f64 },
    #[error("curve ends above {epsilon} bits/s; extend the sweep")]
    NoCrossing { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TotalRate {
    /// `CC_tot = s·B·η_A·η_B + ξ`
    WithAccidentals,
    /// `CC_tot = s·B·η_A·η_B`
    SignalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub brightness_cps: f64,
    /// Linear transmissions.
    pub eta_a: f64,
    pub eta_b: f64,
    /// Noise counts per detector; each party runs two.
    pub dc_a_cps: f64,
    pub dc_b_cps: f64,
    pub optical_error: f64,
    pub sigma_j_ps: f64,
    pub sigma_c_ps: f64,
    pub error_correction_efficiency: f64,
    pub clipping_factor: f64,
    pub total_rate: TotalRate,
}

impl ModelParameters {
    /// Values fitted to the 6.46 km DCM experiment.
    pub fn fitted_experiment() -> Self {
        Self {
            brightness_cps: 5.75e8,
            eta_a: db_to_transmission(29.05),
            eta_b: db_to_transmission(29.31),
            dc_a_cps: 1.4e5,
            dc_b_cps: 1.75e5,
            optical_error: 0.01,
            sigma_j_ps: 66.0,
            sigma_c_ps: 0.0,
            error_correction_efficiency: 1.1,
            clipping_factor: default_clipping_factor(),
            total_rate: TotalRate::WithAccidentals,
        }
    }

    /// Model view of a simulated link. A party's noise clicks are shared by
    /// its two detectors.
    pub fn from_scenario(scenario: &LinkScenario) -> Self {
        Self {
            brightness_cps: scenario.brightness_cps,
            eta_a: scenario.arm_a.transmission(),
            eta_b: scenario.arm_b.transmission(),
            dc_a_cps: 0.5 * scenario.arm_a.detector.dark_count_cps,
            dc_b_cps: 0.5 * scenario.arm_b.detector.dark_count_cps,
            optical_error: scenario.optical_error,
            sigma_j_ps: scenario.pair_jitter_fwhm_ps(),
            sigma_c_ps: scenario.coherence_fwhm_ps,
            error_correction_efficiency: scenario.error_correction_efficiency,
            clipping_factor: default_clipping_factor(),
            total_rate: TotalRate::WithAccidentals,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParameter(msg));
        if !(self.brightness_cps >= 0.0 && self.brightness_cps.is_finite()) {
            return bad(format!("brightness {} must be >= 0", self.brightness_cps));
        }
        for (name, eta) in [("eta_a", self.eta_a), ("eta_b", self.eta_b)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return bad(format!("{name} {eta} must lie in (0, 1]"));
            }
        }
        for (name, v) in [
            ("dc_a_cps", self.dc_a_cps),
            ("dc_b_cps", self.dc_b_cps),
            ("sigma_j_ps", self.sigma_j_ps),
            ("sigma_c_ps", self.sigma_c_ps),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be >= 0"));
            }
        }
        if !(0.0..=0.5).contains(&self.optical_error) {
            return bad(format!("optical error {} must lie in [0, 0.5]", self.optical_error));
        }
        if !(self.clipping_factor > 0.0 && self.clipping_factor <= 1.0) {
            return bad(format!("clipping factor {} must lie in (0, 1]", self.clipping_factor));
        }
        if !(self.error_correction_efficiency >= 1.0) {
            return bad(format!("f {} must be >= 1", self.error_correction_efficiency));
        }
        Ok(())
    }

    pub fn delta_t_ps(&self, sigma_d_ps: f64) -> f64 {
        (self.sigma_c_ps.powi(2) + self.sigma_j_ps.powi(2) + sigma_d_ps.powi(2)).sqrt()
    }

    pub fn with_brightness(&self, brightness_cps: f64) -> Self {
        Self {
            brightness_cps,
            ..self.clone()
        }
    }
}

/// `ξ`, the accidental coincidence rate inside a window of `ΔT`, cps.
pub fn accidental_rate(p: &ModelParameters, delta_t_ps: f64) -> f64 {
    (p.brightness_cps * p.eta_a + 2.0 * p.dc_a_cps) * (p.brightness_cps * p.eta_b + 2.0 * p.dc_b_cps) * delta_t_ps * PS
}

/// Pair coincidences captured by the window, `s·B·η_A·η_B`, cps.
pub fn model_cc_tot(p: &ModelParameters) -> f64 {
    p.clipping_factor * p.brightness_cps * p.eta_a * p.eta_b
}

pub fn model_qber(p: &ModelParameters, delta_t_ps: f64) -> f64 {
    let cc = model_cc_tot(p);
    let xi = accidental_rate(p, delta_t_ps);
    if cc + xi > 0.0 {
        (cc * p.optical_error + 0.5 * xi) / (cc + xi)
    } else {
        0.5
    }
}

/// Every quantity of the model at one dispersion spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub sigma_d_ps: f64,
    pub delta_t_ps: f64,
    pub t_cc_ps: f64,
    pub cc_signal_cps: f64,
    pub accidental_cps: f64,
    /// Rate entering the key formula, per [`TotalRate`].
    pub cc_tot_cps: f64,
    pub qber: f64,
    pub raw_key_rate: f64,
    pub key_rate: f64,
}

pub fn model_point(p: &ModelParameters, sigma_d_ps: f64) -> ModelPoint {
    let delta_t = p.delta_t_ps(sigma_d_ps);
    let cc = model_cc_tot(p);
    let xi = accidental_rate(p, delta_t);
    let qber = model_qber(p, delta_t);
    let cc_tot = match p.total_rate {
        TotalRate::WithAccidentals => cc + xi,
        TotalRate::SignalOnly => cc,
    };
    let h = binary_entropy(qber.clamp(0.0, 1.0)).expect("clamped");
    let raw = cc_tot * (1.0 - (1.0 + p.error_correction_efficiency) * h);
    ModelPoint {
        sigma_d_ps: sigma_d_ps.abs(),
        delta_t_ps: delta_t,
        t_cc_ps: delta_t,
        cc_signal_cps: cc,
        accidental_cps: xi,
        cc_tot_cps: cc_tot,
        qber,
        raw_key_rate: raw,
        key_rate: raw.max(0.0),
    }
}

/// Secure key rate at a dispersion spread, bits/s, clamped at zero.
pub fn model_key_rate(p: &ModelParameters, sigma_d_ps: f64) -> f64 {
    model_point(p, sigma_d_ps).key_rate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Independent variable: DCM setting (ps/nm) or total distance (km).
    pub x: f64,
    pub brightness_cps: f64,
    pub sigma_d_ps: f64,
    pub delta_t_ps: f64,
    pub t_cc_ps: f64,
    pub cc_tot_cps: f64,
    pub qber: f64,
    pub r_s: f64,
}

impl SweepRow {
    fn from_point(x: f64, brightness_cps: f64, pt: &ModelPoint) -> Self {
        Self {
            x,
            brightness_cps,
            sigma_d_ps: pt.sigma_d_ps,
            delta_t_ps: pt.delta_t_ps,
            t_cc_ps: pt.t_cc_ps,
            cc_tot_cps: pt.cc_tot_cps,
            qber: pt.qber,
            r_s: pt.key_rate,
        }
    }
}

/// Rows ordered by ascending `x`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn peak(&self) -> Option<&SweepRow> {
        self.rows.iter().fold(None, |best: Option<&SweepRow>, r| match best {
            Some(b) if b.r_s >= r.r_s => Some(b),
            _ => Some(r),
        })
    }

    pub fn trough(&self) -> Option<&SweepRow> {
        self.rows.iter().fold(None, |best: Option<&SweepRow>, r| match best {
            Some(b) if b.r_s <= r.r_s => Some(b),
            _ => Some(r),
        })
    }
}

/// Inclusive grid `min, min+step, …, ≤ max`.
pub fn grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, ModelError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(ModelError::InvalidParameter(format!("step {step} must be > 0")));
    }
    if !(max >= min) {
        return Err(ModelError::InvalidParameter(format!("range [{min}, {max}] is empty")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| min + i as f64 * step).collect())
}

/// Key rate at each DCM setting `d`, with `σ_D = σ_λ·|fiber + d + offset|`.
pub fn dcm_sweep(
    p: &ModelParameters,
    fiber_dispersion_ps_per_nm: f64,
    sigma_lambda_nm: f64,
    dcm_min: f64,
    dcm_max: f64,
    step: f64,
    calibration_offset_ps_per_nm: f64,
) -> Result<SweepResult, ModelError> {
    p.validate()?;
    let rows = grid(dcm_min, dcm_max, step)?
        .into_iter()
        .map(|d| {
            let sigma_d = sigma_lambda_nm * (fiber_dispersion_ps_per_nm + d + calibration_offset_ps_per_nm).abs();
            SweepRow::from_point(d, p.brightness_cps, &model_point(p, sigma_d))
        })
        .collect();
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalComparison {
    /// One compensator for both photons.
    pub nonlocal_rs: f64,
    /// A second, equally lossy compensator in the other arm.
    pub local_rs: f64,
    /// `local_rs / nonlocal_rs` (0 when the nonlocal rate is 0).
    pub ratio: f64,
}

/// Key rate at `σ_D = 0` with and without an extra module loss in Bob's arm.
pub fn local_compensation_comparison(
    p: &ModelParameters,
    second_module_loss_db: f64,
) -> Result<LocalComparison, ModelError> {
    p.validate()?;
    if !(second_module_loss_db >= 0.0) {
        return Err(ModelError::InvalidParameter(format!(
            "second module loss {second_module_loss_db} dB must be >= 0"
        )));
    }
    let nonlocal_rs = model_key_rate(p, 0.0);
    let local = ModelParameters {
        eta_b: p.eta_b * db_to_transmission(second_module_loss_db),
        ..p.clone()
    };
    let local_rs = model_key_rate(&local, 0.0);
    Ok(LocalComparison {
        nonlocal_rs,
        local_rs,
        ratio: if nonlocal_rs > 0.0 { local_rs / nonlocal_rs } else { 0.0 },
    })
}

pub const LOG10_BRIGHTNESS_MIN: f64 = 5.0;
pub const LOG10_BRIGHTNESS_MAX: f64 = 11.0;
const BRACKET_TOLERANCE_DECADES: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrightnessOptimum {
    pub brightness_cps: f64,
    pub key_rate: f64,
    pub no_key: bool,
    pub point: ModelPoint,
}

/// Maximizes the key rate over `log₁₀B ∈ [5, 11]` by ternary search.
///
/// The search runs on the unclamped rate so that it still has a slope to
/// follow where the clamped rate is flat at zero.
pub fn optimize_brightness(template: &ModelParameters, sigma_d_ps: f64) -> BrightnessOptimum {
    let raw = |log_b: f64| model_point(&template.with_brightness(10f64.powf(log_b)), sigma_d_ps).raw_key_rate;
    let (mut lo, mut hi) = (LOG10_BRIGHTNESS_MIN, LOG10_BRIGHTNESS_MAX);
    while hi - lo >= BRACKET_TOLERANCE_DECADES {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if raw(m1) < raw(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let best = 10f64.powf(0.5 * (lo + hi));
    let point = model_point(&template.with_brightness(best), sigma_d_ps);
    if point.key_rate > 0.0 {
        BrightnessOptimum {
            brightness_cps: best,
            key_rate: point.key_rate,
            no_key: false,
            point,
        }
    } else {
        let mid = 10f64.powf(0.5 * (LOG10_BRIGHTNESS_MIN + LOG10_BRIGHTNESS_MAX));
        BrightnessOptimum {
            brightness_cps: mid,
            key_rate: 0.0,
            no_key: true,
            point: model_point(&template.with_brightness(mid), sigma_d_ps),
        }
    }
}

/// Symmetric fiber link with the source at the midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceSweepConfig {
    pub widths_ghz: Vec<f64>,
    pub center_wavelength_nm: f64,
    pub attenuation_db_per_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    pub dark_count_cps: f64,
    pub optical_error: f64,
    pub sigma_j_ps: f64,
    pub error_correction_efficiency: f64,
    pub step_km: f64,
    pub max_km: f64,
    /// Rows stop after the first one at or below this rate, bits/s.
    pub epsilon_bits_per_s: f64,
}

impl Default for DistanceSweepConfig {
    fn default() -> Self {
        Self {
            widths_ghz: vec![2.0, 10.0, 100.0],
            center_wavelength_nm: 1550.0,
            attenuation_db_per_km: 0.2,
            dispersion_ps_per_nm_km: 18.0,
            dark_count_cps: 100.0,
            optical_error: 0.01,
            sigma_j_ps: 20.0,
            error_correction_efficiency: 1.1,
            step_km: 5.0,
            max_km: 2000.0,
            epsilon_bits_per_s: 0.0,
        }
    }
}

impl DistanceSweepConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidParameter(msg));
        if self.widths_ghz.iter().any(|w| !(*w > 0.0)) {
            return bad("spectral widths must be > 0".into());
        }
        if !(self.step_km > 0.0) || !(self.max_km >= 0.0) {
            return bad(format!(
                "distance grid step {} / max {} invalid",
                self.step_km, self.max_km
            ));
        }
        if !(self.epsilon_bits_per_s >= 0.0) {
            return bad(format!("epsilon {} must be >= 0", self.epsilon_bits_per_s));
        }
        self.template(self.widths_ghz.first().copied().unwrap_or(1.0), 0.0)
            .validate()
    }

    /// Model parameters at a total distance, brightness left at 1 cps.
    pub fn template(&self, width_ghz: f64, distance_km: f64) -> ModelParameters {
        let eta = db_to_transmission(self.attenuation_db_per_km * distance_km / 2.0);
        ModelParameters {
            brightness_cps: 1.0,
            eta_a: eta,
            eta_b: eta,
            dc_a_cps: self.dark_count_cps,
            dc_b_cps: self.dark_count_cps,
            optical_error: self.optical_error,
            sigma_j_ps: self.sigma_j_ps,
            sigma_c_ps: GAUSSIAN_TIME_BANDWIDTH / width_ghz * 1e3,
            error_correction_efficiency: self.error_correction_efficiency,
            clipping_factor: default_clipping_factor(),
            total_rate: TotalRate::WithAccidentals,
        }
    }

    /// Uncompensated spread: both arms carry `L/2` of equal-signed dispersion,
    /// so the anticorrelated sum is `D·L`.
    pub fn sigma_d_ps(&self, width_ghz: f64, distance_km: f64, compensated: bool) -> f64 {
        if compensated {
            0.0
        } else {
            let sigma_lambda = bandwidth_to_wavelength_width(width_ghz, self.center_wavelength_nm);
            sigma_lambda * self.dispersion_ps_per_nm_km * distance_km
        }
    }

    pub fn optimum_at(&self, width_ghz: f64, compensated: bool, distance_km: f64) -> BrightnessOptimum {
        optimize_brightness(
            &self.template(width_ghz, distance_km),
            self.sigma_d_ps(width_ghz, distance_km, compensated),
        )
    }
}

/// Brightness-optimized key rate against total distance.
pub fn distance_sweep(
    config: &DistanceSweepConfig,
    width_ghz: f64,
    compensated: bool,
) -> Result<SweepResult, ModelError> {
    config.validate()?;
    let mut rows = Vec::new();
    for distance in grid(0.0, config.max_km, config.step_km)? {
        let opt = config.optimum_at(width_ghz, compensated, distance);
        rows.push(SweepRow::from_point(distance, opt.brightness_cps, &opt.point));
        if opt.key_rate <= config.epsilon_bits_per_s {
            break;
        }
    }
    Ok(SweepResult { rows })
}

fn last_crossing(curve: &SweepResult, epsilon: f64) -> Result<(usize, usize), ModelError> {
    let k = curve
        .rows
        .iter()
        .rposition(|r| r.r_s > epsilon)
        .ok_or(ModelError::NoKey { epsilon })?;
    if k + 1 >= curve.rows.len() {
        return Err(ModelError::NoCrossing { epsilon });
    }
    Ok((k, k + 1))
}

fn bisect(mut above: f64, mut below: f64, epsilon: f64, eval: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..100 {
        let mid = 0.5 * (above + below);
        if eval(mid) > epsilon {
            above = mid;
        } else {
            below = mid;
        }
        if (below - above).abs() <= 1e-9 * above.abs().max(1.0) {
            break;
        }
    }
    above
}

/// Largest `x` with `R_s > ε`, bisecting the linear interpolant between
/// the last row above `ε` and its successor.
pub fn max_distance(curve: &SweepResult, epsilon: f64) -> Result<f64, ModelError> {
    let (k, next) = last_crossing(curve, epsilon)?;
    let (a, b) = (curve.rows[k], curve.rows[next]);
    Ok(bisect(a.x, b.x, epsilon, |x| {
        a.r_s + (b.r_s - a.r_s) * (x - a.x) / (b.x - a.x)
    }))
}

/// As [`max_distance`], refining with a model evaluation instead of interpolation.
pub fn max_distance_with(curve: &SweepResult, epsilon: f64, eval: impl Fn(f64) -> f64) -> Result<f64, ModelError> {
    let (k, next) = last_crossing(curve, epsilon)?;
    Ok(bisect(curve.rows[k].x, curve.rows[next].x, epsilon, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCurve {
    pub width_ghz: f64,
    pub compensated: bool,
    pub sweep: SweepResult,
    /// `None` when the curve has no key at all.
    pub max_distance_km: Option<f64>,
}

/// Every width, compensated then uncompensated, with refined maximum distances.
pub fn distance_curves(config: &DistanceSweepConfig) -> Result<Vec<DistanceCurve>, ModelError> {
    config.validate()?;
    let cases: Vec<(f64, bool)> = config
        .widths_ghz
        .iter()
        .flat_map(|&w| [(w, true), (w, false)])
        .collect();
    cases
        .into_par_iter()
        .map(|(width_ghz, compensated)| {
            let sweep = distance_sweep(config, width_ghz, compensated)?;
            let max_distance_km = match max_distance_with(&sweep, config.epsilon_bits_per_s, |d| {
                config.optimum_at(width_ghz, compensated, d).key_rate
            }) {
                Ok(d) => Some(d),
                Err(ModelError::NoKey { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(DistanceCurve {
                width_ghz,
                compensated,
                sweep,
                max_distance_km,
            })
        })
        .collect()
}
