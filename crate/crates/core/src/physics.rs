//! Link description types and the timing-budget formulas.
//!
//! Every timing width in this crate (coherence time, detector jitter,
//! dispersion spread and the total `ΔT`) is the FWHM of a Gaussian, so the
//! widths add in quadrature. Spectral widths are FWHM as well.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FWHM of a Gaussian divided by its standard deviation, `2·sqrt(2·ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

/// Transform-limited time-bandwidth product of a Gaussian pulse (FWHM·FWHM), `2·ln 2/π`.
pub const GAUSSIAN_TIME_BANDWIDTH: f64 = 2.0 * std::f64::consts::LN_2 / std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("{quantity} out of domain: {value} ({reason})")]
    OutOfDomain {
        quantity: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn require(cond: bool, quantity: &'static str, value: f64, reason: &'static str) -> Result<(), DomainError> {
    if cond && value.is_finite() {
        Ok(())
    } else {
        Err(DomainError::OutOfDomain {
            quantity,
            value,
            reason,
        })
    }
}

pub fn sigma_to_fwhm(sigma: f64) -> f64 {
    sigma * FWHM_PER_SIGMA
}

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WidthUnit {
    FrequencyGhz,
    WavelengthNm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralShape {
    Gaussian,
    Tophat,
}

/// Spectrum of one photon of the pair (the partner is mirrored about the
/// degenerate wavelength).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalSpectrum {
    pub center_wavelength_nm: f64,
    pub width_value: f64,
    pub width_unit: WidthUnit,
    pub shape: SpectralShape,
}

impl OpticalSpectrum {
    pub fn new(
        center_wavelength_nm: f64,
        width_value: f64,
        width_unit: WidthUnit,
        shape: SpectralShape,
    ) -> Result<Self, DomainError> {
        require(
            center_wavelength_nm > 0.0,
            "center_wavelength_nm",
            center_wavelength_nm,
            "must be > 0",
        )?;
        require(width_value > 0.0, "width_value", width_value, "must be > 0")?;
        Ok(Self {
            center_wavelength_nm,
            width_value,
            width_unit,
            shape,
        })
    }

    pub fn width_nm(&self) -> f64 {
        match self.width_unit {
            WidthUnit::WavelengthNm => self.width_value,
            WidthUnit::FrequencyGhz => bandwidth_to_wavelength_width(self.width_value, self.center_wavelength_nm),
        }
    }

    pub fn width_ghz(&self) -> f64 {
        match self.width_unit {
            WidthUnit::FrequencyGhz => self.width_value,
            WidthUnit::WavelengthNm => wavelength_to_bandwidth_width(self.width_value, self.center_wavelength_nm),
        }
    }

    /// Transform-limited coherence time of this spectrum, ps FWHM.
    pub fn coherence_fwhm_ps(&self) -> f64 {
        GAUSSIAN_TIME_BANDWIDTH / self.width_ghz() * 1e3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberSegment {
    pub length_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    pub attenuation_db_per_km: f64,
    #[serde(default)]
    pub label: String,
}

impl FiberSegment {
    pub fn new(
        length_km: f64,
        dispersion_ps_per_nm_km: f64,
        attenuation_db_per_km: f64,
        label: impl Into<String>,
    ) -> Result<Self, DomainError> {
        require(length_km >= 0.0, "length_km", length_km, "must be >= 0")?;
        require(
            attenuation_db_per_km >= 0.0,
            "attenuation_db_per_km",
            attenuation_db_per_km,
            "must be >= 0",
        )?;
        require(
            true,
            "dispersion_ps_per_nm_km",
            dispersion_ps_per_nm_km,
            "must be finite",
        )?;
        Ok(Self {
            length_km,
            dispersion_ps_per_nm_km,
            attenuation_db_per_km,
            label: label.into(),
        })
    }

    /// Accumulated dispersion `D·L`, ps/nm.
    pub fn dispersion_ps_per_nm(&self) -> f64 {
        self.dispersion_ps_per_nm_km * self.length_km
    }

    pub fn loss_db(&self) -> f64 {
        self.attenuation_db_per_km * self.length_km
    }
}

/// A tunable dispersion compensation module set to one dispersion value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationModule {
    pub total_dispersion_ps_per_nm: f64,
    pub insertion_loss_db: f64,
    pub range_min_ps_per_nm: f64,
    pub range_max_ps_per_nm: f64,
    pub step_ps_per_nm: f64,
}

impl CompensationModule {
    pub fn new(
        total_dispersion_ps_per_nm: f64,
        insertion_loss_db: f64,
        range_min_ps_per_nm: f64,
        range_max_ps_per_nm: f64,
        step_ps_per_nm: f64,
    ) -> Result<Self, DomainError> {
        require(
            insertion_loss_db >= 0.0,
            "insertion_loss_db",
            insertion_loss_db,
            "must be >= 0",
        )?;
        require(step_ps_per_nm > 0.0, "step_ps_per_nm", step_ps_per_nm, "must be > 0")?;
        require(
            range_min_ps_per_nm <= range_max_ps_per_nm,
            "range_min_ps_per_nm",
            range_min_ps_per_nm,
            "must not exceed range_max_ps_per_nm",
        )?;
        require(
            (range_min_ps_per_nm..=range_max_ps_per_nm).contains(&total_dispersion_ps_per_nm),
            "total_dispersion_ps_per_nm",
            total_dispersion_ps_per_nm,
            "outside the module range",
        )?;
        Ok(Self {
            total_dispersion_ps_per_nm,
            insertion_loss_db,
            range_min_ps_per_nm,
            range_max_ps_per_nm,
            step_ps_per_nm,
        })
    }

    /// Module with a ±170 ps/nm range in 10 ps/nm steps and 4.56 dB insertion loss.
    pub fn tunable_170(setting_ps_per_nm: f64) -> Result<Self, DomainError> {
        Self::new(setting_ps_per_nm, 4.56, -170.0, 170.0, 10.0)
    }

    pub fn with_setting(&self, setting_ps_per_nm: f64) -> Result<Self, DomainError> {
        Self::new(
            setting_ps_per_nm,
            self.insertion_loss_db,
            self.range_min_ps_per_nm,
            self.range_max_ps_per_nm,
            self.step_ps_per_nm,
        )
    }

    /// Settings from `range_min` to `range_max` inclusive.
    pub fn settings(&self) -> Vec<f64> {
        let n = ((self.range_max_ps_per_nm - self.range_min_ps_per_nm) / self.step_ps_per_nm + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.range_min_ps_per_nm + i as f64 * self.step_ps_per_nm)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Timing jitter of this party's detection chain, ps FWHM.
    pub jitter_fwhm_ps: f64,
    /// Noise clicks registered by this party, summed over its detectors.
    pub dark_count_cps: f64,
}

impl DetectorSpec {
    pub fn new(jitter_fwhm_ps: f64, dark_count_cps: f64) -> Result<Self, DomainError> {
        require(jitter_fwhm_ps >= 0.0, "jitter_fwhm_ps", jitter_fwhm_ps, "must be >= 0")?;
        require(dark_count_cps >= 0.0, "dark_count_cps", dark_count_cps, "must be >= 0")?;
        Ok(Self {
            jitter_fwhm_ps,
            dark_count_cps,
        })
    }
}

/// One photon's path from the source to its detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub segments: Vec<FiberSegment>,
    pub compensator: Option<CompensationModule>,
    pub extra_attenuation_db: f64,
    pub detector: DetectorSpec,
    pub propagation_delay_ps: f64,
}

impl ArmConfig {
    pub fn new(detector: DetectorSpec) -> Self {
        Self {
            segments: Vec::new(),
            compensator: None,
            extra_attenuation_db: 0.0,
            detector,
            propagation_delay_ps: 0.0,
        }
    }

    pub fn with_segment(mut self, segment: FiberSegment) -> Self {
        self.segments.push(segment);
        self
    }

    pub fn with_compensator(mut self, module: CompensationModule) -> Self {
        self.compensator = Some(module);
        self
    }

    pub fn with_extra_attenuation_db(mut self, db: f64) -> Self {
        self.extra_attenuation_db = db;
        self
    }

    pub fn with_propagation_delay_ps(mut self, ps: f64) -> Self {
        self.propagation_delay_ps = ps;
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for s in &self.segments {
            FiberSegment::new(s.length_km, s.dispersion_ps_per_nm_km, s.attenuation_db_per_km, "")?;
        }
        if let Some(c) = &self.compensator {
            CompensationModule::new(
                c.total_dispersion_ps_per_nm,
                c.insertion_loss_db,
                c.range_min_ps_per_nm,
                c.range_max_ps_per_nm,
                c.step_ps_per_nm,
            )?;
        }
        require(
            self.extra_attenuation_db >= 0.0,
            "extra_attenuation_db",
            self.extra_attenuation_db,
            "must be >= 0",
        )?;
        require(
            self.propagation_delay_ps >= 0.0,
            "propagation_delay_ps",
            self.propagation_delay_ps,
            "must be >= 0",
        )?;
        DetectorSpec::new(self.detector.jitter_fwhm_ps, self.detector.dark_count_cps)?;
        Ok(())
    }

    /// Fiber-only accumulated dispersion, ps/nm (compensator excluded).
    pub fn fiber_dispersion_ps_per_nm(&self) -> f64 {
        self.segments.iter().map(FiberSegment::dispersion_ps_per_nm).sum()
    }

    /// Linear transmission `10^(−loss/10)`.
    pub fn transmission(&self) -> f64 {
        db_to_transmission(arm_loss_db(self))
    }
}

/// Full physical description of a two-arm entanglement distribution link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkScenario {
    pub brightness_cps: f64,
    pub optical_error: f64,
    pub spectrum: OpticalSpectrum,
    /// Spectral width entering the dispersion spread, nm FWHM.
    pub effective_spectral_width_nm: f64,
    pub arm_a: ArmConfig,
    pub arm_b: ArmConfig,
    pub error_correction_efficiency: f64,
    /// Relative-time coherence contribution, ps FWHM.
    pub coherence_fwhm_ps: f64,
}

impl LinkScenario {
    /// Scenario with the effective width and coherence time derived from `spectrum`.
    pub fn new(
        brightness_cps: f64,
        optical_error: f64,
        spectrum: OpticalSpectrum,
        arm_a: ArmConfig,
        arm_b: ArmConfig,
    ) -> Result<Self, DomainError> {
        let s = Self {
            brightness_cps,
            optical_error,
            effective_spectral_width_nm: spectrum.width_nm(),
            coherence_fwhm_ps: spectrum.coherence_fwhm_ps(),
            spectrum,
            arm_a,
            arm_b,
            error_correction_efficiency: 1.1,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        require(
            self.brightness_cps >= 0.0,
            "brightness_cps",
            self.brightness_cps,
            "must be >= 0",
        )?;
        require(
            (0.0..=0.5).contains(&self.optical_error),
            "optical_error",
            self.optical_error,
            "must lie in [0, 0.5]",
        )?;
        OpticalSpectrum::new(
            self.spectrum.center_wavelength_nm,
            self.spectrum.width_value,
            self.spectrum.width_unit,
            self.spectrum.shape,
        )?;
        require(
            self.effective_spectral_width_nm > 0.0,
            "effective_spectral_width_nm",
            self.effective_spectral_width_nm,
            "must be > 0",
        )?;
        require(
            self.error_correction_efficiency >= 1.0,
            "error_correction_efficiency",
            self.error_correction_efficiency,
            "must be >= 1",
        )?;
        require(
            self.coherence_fwhm_ps >= 0.0,
            "coherence_fwhm_ps",
            self.coherence_fwhm_ps,
            "must be >= 0",
        )?;
        self.arm_a.validate()?;
        self.arm_b.validate()?;
        Ok(())
    }

    /// Signed `D_A·L_A + D_B·L_B` including compensators, ps/nm.
    pub fn total_dispersion_ps_per_nm(&self) -> f64 {
        total_dispersion_ps_per_nm(&self.arm_a, &self.arm_b)
    }

    pub fn pair_jitter_fwhm_ps(&self) -> f64 {
        combine_fwhm(&[self.arm_a.detector.jitter_fwhm_ps, self.arm_b.detector.jitter_fwhm_ps])
    }

    /// Predicted FWHM of the coincidence peak.
    pub fn timing_budget(&self) -> TimingBudget {
        let sigma_d = nonlocal_dispersion(&self.arm_a, &self.arm_b, self.effective_spectral_width_nm);
        TimingBudget::from_components(self.coherence_fwhm_ps, self.pair_jitter_fwhm_ps(), sigma_d)
    }

    /// Expected coincidence-peak position `t_A − t_B`, ps.
    pub fn expected_delay_ps(&self) -> f64 {
        self.arm_a.propagation_delay_ps - self.arm_b.propagation_delay_ps
    }
}

/// Quadrature timing budget, all entries ps FWHM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBudget {
    pub sigma_c: f64,
    pub sigma_j: f64,
    pub sigma_d: f64,
    pub delta_t: f64,
}

impl TimingBudget {
    fn from_components(sigma_c: f64, sigma_j: f64, sigma_d: f64) -> Self {
        let (sigma_c, sigma_j, sigma_d) = (sigma_c.abs(), sigma_j.abs(), sigma_d.abs());
        Self {
            sigma_c,
            sigma_j,
            sigma_d,
            delta_t: (sigma_c * sigma_c + sigma_j * sigma_j + sigma_d * sigma_d).sqrt(),
        }
    }
}

/// Temporal spread `σ_λ·D·L` of a single channel, ps. Sign follows `D`.
pub fn dispersion_spread(width_nm: f64, coefficient_ps_per_nm_km: f64, length_km: f64) -> Result<f64, DomainError> {
    require(width_nm >= 0.0, "width_nm", width_nm, "must be >= 0")?;
    require(length_km >= 0.0, "length_km", length_km, "must be >= 0")?;
    Ok(width_nm * coefficient_ps_per_nm_km * length_km)
}

/// Fiber plus compensator dispersion of one arm, ps/nm.
pub fn arm_dispersion_total(arm: &ArmConfig) -> f64 {
    arm.fiber_dispersion_ps_per_nm() + arm.compensator.as_ref().map_or(0.0, |c| c.total_dispersion_ps_per_nm)
}

/// Signed two-arm dispersion sum for wavelength-anticorrelated pairs, ps/nm.
pub fn total_dispersion_ps_per_nm(arm_a: &ArmConfig, arm_b: &ArmConfig) -> f64 {
    // fiber terms first so a compensator set to −(fiber sum) cancels exactly
    let compensators: f64 = [arm_a, arm_b]
        .iter()
        .filter_map(|arm| arm.compensator.as_ref())
        .map(|c| c.total_dispersion_ps_per_nm)
        .sum();
    (arm_a.fiber_dispersion_ps_per_nm() + arm_b.fiber_dispersion_ps_per_nm()) + compensators
}

/// Magnitude of the nonlocal dispersion spread `σ_λ·|D_A L_A + D_B L_B|`, ps.
pub fn nonlocal_dispersion(arm_a: &ArmConfig, arm_b: &ArmConfig, sigma_lambda_nm: f64) -> f64 {
    sigma_lambda_nm.abs() * total_dispersion_ps_per_nm(arm_a, arm_b).abs()
}

pub fn combined_spread(sigma_c: f64, sigma_j: f64, sigma_d: f64) -> Result<TimingBudget, DomainError> {
    require(sigma_c >= 0.0, "sigma_c", sigma_c, "must be >= 0")?;
    require(sigma_j >= 0.0, "sigma_j", sigma_j, "must be >= 0")?;
    require(sigma_d >= 0.0, "sigma_d", sigma_d, "must be >= 0")?;
    Ok(TimingBudget::from_components(sigma_c, sigma_j, sigma_d))
}

/// Quadrature sum of Gaussian FWHMs.
pub fn combine_fwhm(widths: &[f64]) -> f64 {
    widths.iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// `λ0²·Δν/c`: spectral width in nm for a bandwidth in GHz.
pub fn bandwidth_to_wavelength_width(bandwidth_ghz: f64, center_nm: f64) -> f64 {
    // nm² · GHz / (m/s) = 1e-18 m² · 1e9 /s / (m/s) = 1e-9 m = 1 nm
    center_nm * center_nm * bandwidth_ghz / SPEED_OF_LIGHT
}

pub fn wavelength_to_bandwidth_width(width_nm: f64, center_nm: f64) -> f64 {
    width_nm * SPEED_OF_LIGHT / (center_nm * center_nm)
}

/// Transform-limited coherence time for a bandwidth, ps FWHM.
pub fn coherence_fwhm_from_bandwidth(bandwidth_ghz: f64) -> Result<f64, DomainError> {
    if !(bandwidth_ghz > 0.0) {
        return Err(DomainError::OutOfDomain {
            quantity: "bandwidth_ghz",
            value: bandwidth_ghz,
            reason: "must be > 0",
        });
    }
    Ok(GAUSSIAN_TIME_BANDWIDTH / bandwidth_ghz * 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyCheck {
    /// `|1/λp − 1/λs − 1/λi|` relative to `1/λp`.
    pub deviation: f64,
    pub within_tolerance: bool,
}

pub fn energy_conservation_check(
    signal_nm: f64,
    idler_nm: f64,
    pump_nm: f64,
    tolerance: f64,
) -> Result<EnergyCheck, DomainError> {
    require(signal_nm > 0.0, "signal_nm", signal_nm, "must be > 0")?;
    require(idler_nm > 0.0, "idler_nm", idler_nm, "must be > 0")?;
    require(pump_nm > 0.0, "pump_nm", pump_nm, "must be > 0")?;
    let deviation = (1.0 / pump_nm - 1.0 / signal_nm - 1.0 / idler_nm).abs() * pump_nm;
    Ok(EnergyCheck {
        deviation,
        within_tolerance: deviation <= tolerance,
    })
}

pub fn arm_loss_db(arm: &ArmConfig) -> f64 {
    arm.segments.iter().map(FiberSegment::loss_db).sum::<f64>()
        + arm.compensator.as_ref().map_or(0.0, |c| c.insertion_loss_db)
        + arm.extra_attenuation_db
}

pub fn db_to_transmission(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

pub fn transmission_to_db(eta: f64) -> f64 {
    -10.0 * eta.log10()
}

/// Heralding efficiency `CC / (S − DC)` of the arm opposite the partner.
pub fn klyshko_efficiency(
    coincidence_rate: f64,
    partner_singles_rate: f64,
    partner_noise_rate: f64,
) -> Result<f64, DomainError> {
    let denom = partner_singles_rate - partner_noise_rate;
    require(
        denom > 0.0,
        "partner_singles_rate - partner_noise_rate",
        denom,
        "must be > 0",
    )?;
    require(
        coincidence_rate >= 0.0,
        "coincidence_rate",
        coincidence_rate,
        "must be >= 0",
    )?;
    Ok(coincidence_rate / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn fiber_arm(length_km: f64, d: f64) -> ArmConfig {
        ArmConfig::new(DetectorSpec::new(0.0, 0.0).unwrap())
            .with_segment(FiberSegment::new(length_km, d, 0.2, "spool").unwrap())
    }

    #[test]
    fn spread_examples() {
        assert_relative_eq!(dispersion_spread(0.8, 18.0, 100.0).unwrap(), 1440.0, epsilon = 1e-9);
        assert_relative_eq!(dispersion_spread(0.8, 18.0, 10.0).unwrap(), 144.0, epsilon = 1e-9);
        assert_eq!(dispersion_spread(0.3, -17.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(dispersion_spread(1.0, 16.7, 6.46).unwrap(), 107.882, epsilon = 1e-9);
        assert!(dispersion_spread(1.0, -5.0, 2.0).unwrap() < 0.0);
        assert!(dispersion_spread(-0.1, 1.0, 1.0).is_err());
        assert!(dispersion_spread(0.1, 1.0, -1.0).is_err());
    }

    #[test]
    fn arm_totals() {
        assert_relative_eq!(arm_dispersion_total(&fiber_arm(6.46, 16.7)), 107.882, epsilon = 1e-9);
        assert_eq!(
            arm_dispersion_total(&ArmConfig::new(DetectorSpec::new(0.0, 0.0).unwrap())),
            0.0
        );
        let comp = CompensationModule::tunable_170(-107.882).unwrap();
        let arm = fiber_arm(6.46, 16.7).with_compensator(comp);
        assert!(arm_dispersion_total(&arm).abs() < 1e-12);
    }

    #[test]
    fn nonlocal_examples() {
        let det = DetectorSpec::new(0.0, 0.0).unwrap();
        let b = fiber_arm(6.46, 16.7);
        let cancel = ArmConfig::new(det.clone()).with_compensator(CompensationModule::tunable_170(-107.882).unwrap());
        assert!(nonlocal_dispersion(&cancel, &b, 0.8) < 1e-12);

        let plus = ArmConfig::new(det.clone()).with_compensator(CompensationModule::tunable_170(170.0).unwrap());
        // 0.67 · (107.882 + 170) = 186.18
        assert_relative_eq!(nonlocal_dispersion(&plus, &b, 0.67), 186.180_94, epsilon = 1e-6);

        let empty = ArmConfig::new(det);
        assert_relative_eq!(nonlocal_dispersion(&empty, &b, 0.8), 86.3056, epsilon = 1e-9);
        assert_relative_eq!(total_dispersion_ps_per_nm(&empty, &b), 107.882, epsilon = 1e-9);
    }

    #[test]
    fn quadrature_budget() {
        assert_eq!(combined_spread(0.0, 66.0, 0.0).unwrap().delta_t, 66.0);
        assert_eq!(combined_spread(0.0, 0.0, 0.0).unwrap().delta_t, 0.0);
        let b = combined_spread(0.0, 66.0, 186.2).unwrap();
        assert_relative_eq!(b.delta_t, 197.551, epsilon = 1e-3);
        assert!(combined_spread(-1.0, 0.0, 0.0).is_err());
        // two detectors at 66/√2 each make up the pair jitter
        assert_relative_eq!(combine_fwhm(&[66.0 / 2f64.sqrt(); 2]), 66.0, epsilon = 1e-12);
    }

    #[test]
    fn bandwidth_conversions() {
        assert_relative_eq!(bandwidth_to_wavelength_width(100.0, 1550.0), 0.801_388, epsilon = 1e-6);
        assert_eq!(bandwidth_to_wavelength_width(0.0, 1550.0), 0.0);
        assert_relative_eq!(bandwidth_to_wavelength_width(200.0, 1550.0), 1.602_776, epsilon = 1e-6);
    }

    #[test]
    fn coherence_time() {
        let c100 = coherence_fwhm_from_bandwidth(100.0).unwrap();
        assert_relative_eq!(c100, 4.4127, epsilon = 1e-4);
        assert!(c100 < 5.0);
        assert_relative_eq!(coherence_fwhm_from_bandwidth(2.0).unwrap(), 220.636, epsilon = 1e-3);
        assert_eq!(coherence_fwhm_from_bandwidth(f64::INFINITY).unwrap(), 0.0);
        assert!(coherence_fwhm_from_bandwidth(0.0).is_err());
        assert!(coherence_fwhm_from_bandwidth(-3.0).is_err());
    }

    #[test]
    fn energy_conservation() {
        let chk = energy_conservation_check(1549.32, 1550.92, 775.0, 1e-4).unwrap();
        assert!(chk.within_tolerance, "{chk:?}");
        assert_eq!(
            energy_conservation_check(1550.0, 1550.0, 775.0, 0.0).unwrap().deviation,
            0.0
        );
        let d = energy_conservation_check(1540.0, 1560.0, 775.0, 1e-9)
            .unwrap()
            .deviation;
        let direct = (1.0 / 775.0 - 1.0 / 1540.0 - 1.0 / 1560.0f64).abs() * 775.0;
        assert_eq!(d, direct);
        assert!(energy_conservation_check(0.0, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn losses() {
        let arm = fiber_arm(6.46, 16.7).with_extra_attenuation_db(29.0);
        assert_relative_eq!(arm_loss_db(&arm), 30.292, epsilon = 1e-9);
        assert_eq!(arm_loss_db(&ArmConfig::new(DetectorSpec::new(0.0, 0.0).unwrap())), 0.0);
        let comp_only = ArmConfig::new(DetectorSpec::new(0.0, 0.0).unwrap())
            .with_compensator(CompensationModule::tunable_170(0.0).unwrap());
        assert_relative_eq!(arm_loss_db(&comp_only), 4.56, epsilon = 1e-12);
    }

    #[test]
    fn klyshko() {
        assert_relative_eq!(klyshko_efficiency(100.0, 1100.0, 100.0).unwrap(), 0.1, epsilon = 1e-12);
        assert_eq!(klyshko_efficiency(900.0, 1000.0, 100.0).unwrap(), 1.0);
        assert!(klyshko_efficiency(1.0, 100.0, 100.0).is_err());
    }

    #[test]
    fn compensator_validation() {
        assert!(CompensationModule::tunable_170(180.0).is_err());
        assert!(CompensationModule::new(0.0, -1.0, -10.0, 10.0, 1.0).is_err());
        let settings = CompensationModule::tunable_170(0.0).unwrap().settings();
        assert_eq!(settings.len(), 35);
        assert_eq!(settings[0], -170.0);
        assert_eq!(settings[34], 170.0);
    }

    #[test]
    fn spectrum_widths() {
        let s = OpticalSpectrum::new(1550.0, 100.0, WidthUnit::FrequencyGhz, SpectralShape::Gaussian).unwrap();
        assert_relative_eq!(s.width_nm(), 0.801_388, epsilon = 1e-6);
        assert!(OpticalSpectrum::new(1550.0, 0.0, WidthUnit::WavelengthNm, SpectralShape::Tophat).is_err());
        assert!(OpticalSpectrum::new(-1.0, 1.0, WidthUnit::WavelengthNm, SpectralShape::Tophat).is_err());
    }

    proptest! {
        #[test]
        fn width_round_trip(ghz in 1e-3f64..1e4, center in 400.0f64..2500.0) {
            let back = wavelength_to_bandwidth_width(bandwidth_to_wavelength_width(ghz, center), center);
            prop_assert!(((back - ghz) / ghz).abs() < 1e-9);
        }

        #[test]
        fn quadrature_monotone(c in 0.0f64..500.0, j in 0.0f64..500.0, d in 0.0f64..5000.0, bump in 0.0f64..100.0) {
            let base = combined_spread(c, j, d).unwrap().delta_t;
            prop_assert!(combined_spread(c + bump, j, d).unwrap().delta_t >= base);
            prop_assert!(combined_spread(c, j + bump, d).unwrap().delta_t >= base);
            prop_assert!(combined_spread(c, j, d + bump).unwrap().delta_t >= base);
        }

        #[test]
        fn cancellation_and_symmetry(la in 0.0f64..100.0, da in -20.0f64..20.0, lb in 0.0f64..100.0, db in -20.0f64..20.0, width in 0.0f64..2.0) {
            let a = fiber_arm(la, da);
            let b = fiber_arm(lb, db);
            prop_assert_eq!(nonlocal_dispersion(&a, &b, width), nonlocal_dispersion(&b, &a, width));

            let fiber_sum = a.fiber_dispersion_ps_per_nm() + b.fiber_dispersion_ps_per_nm();
            let comp = CompensationModule::new(-fiber_sum, 0.0, -1e6, 1e6, 1.0).unwrap();
            let a_comp = a.clone().with_compensator(comp);
            prop_assert_eq!(nonlocal_dispersion(&a_comp, &b, width), 0.0);
        }

        #[test]
        fn spread_bilinear(w in 0.0f64..5.0, l in 0.0f64..500.0, d in -20.0f64..20.0, k in 0.0f64..10.0) {
            let base = dispersion_spread(w, d, l).unwrap();
            let tol = 1e-9 * (1.0 + base.abs() * k);
            prop_assert!((dispersion_spread(k * w, d, l).unwrap() - k * base).abs() <= tol);
            prop_assert!((dispersion_spread(w, d, k * l).unwrap() - k * base).abs() <= tol);
        }
    }
}
