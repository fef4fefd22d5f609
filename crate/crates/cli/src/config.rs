//! Scenario files: TOML with unit-suffixed keys.
//!
//! Every section and key is optional; missing values fall back to the
//! paper-setup defaults below and are written back out in each manifest.

use serde::{Deserialize, Serialize};

use nlqkd_core::model::{default_clipping_factor, DistanceSweepConfig, ModelParameters, TotalRate};
use nlqkd_core::montecarlo::{BasisMode, SettingBlock, SimulationRun};
use nlqkd_core::physics::{
    db_to_transmission, ArmConfig, CompensationModule, DetectorSpec, FiberSegment, LinkScenario, OpticalSpectrum,
    SpectralShape, WidthUnit,
};

use crate::error::CliError;

pub const PAPER_SETUP: &str = include_str!("../presets/paper-setup.toml");
pub const APPENDIX_C: &str = include_str!("../presets/appendix-c.toml");
pub const FIG4_MODEL: &str = include_str!("../presets/fig4-model.toml");

pub fn preset(name: &str) -> Result<&'static str, CliError> {
    match name {
        "paper-setup" => Ok(PAPER_SETUP),
        "appendix-c" => Ok(APPENDIX_C),
        "fig4-model" => Ok(FIG4_MODEL),
        other => Err(CliError::Config(format!(
            "unknown preset `{other}` (expected paper-setup, appendix-c or fig4-model)"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub source: SourceSection,
    pub arm_a: ArmSection,
    pub arm_b: ArmSection,
    pub simulation: SimulationSection,
    pub analysis: AnalysisSection,
    pub model: ModelSection,
    pub dcm_sweep: DcmSweepSection,
    pub local_comparison: LocalComparisonSection,
    pub distance_sweep: DistanceSweepConfig,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            source: SourceSection::default(),
            arm_a: ArmSection::alice(),
            arm_b: ArmSection::bob(),
            simulation: SimulationSection::default(),
            analysis: AnalysisSection::default(),
            model: ModelSection::default(),
            dcm_sweep: DcmSweepSection::default(),
            local_comparison: LocalComparisonSection::default(),
            distance_sweep: DistanceSweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub brightness_cps: f64,
    pub optical_error: f64,
    pub center_wavelength_nm: f64,
    /// Exactly one of the two widths is used; GHz wins if both are set.
    pub spectral_width_ghz: Option<f64>,
    pub spectral_width_nm: Option<f64>,
    pub spectral_shape: SpectralShape,
    /// Width entering the dispersion spread; defaults to the spectral width.
    pub effective_spectral_width_nm: Option<f64>,
    /// Defaults to the transform limit of the spectral width.
    pub coherence_fwhm_ps: Option<f64>,
    pub error_correction_efficiency: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            brightness_cps: 5.75e8,
            optical_error: 0.01,
            center_wavelength_nm: 1550.12,
            spectral_width_ghz: Some(200.0),
            spectral_width_nm: None,
            spectral_shape: SpectralShape::Gaussian,
            effective_spectral_width_nm: Some(0.67),
            coherence_fwhm_ps: None,
            error_correction_efficiency: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberEntry {
    pub length_km: f64,
    pub dispersion_ps_per_nm_km: f64,
    pub attenuation_db_per_km: f64,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompensatorEntry {
    pub setting_ps_per_nm: f64,
    pub insertion_loss_db: f64,
    pub range_min_ps_per_nm: f64,
    pub range_max_ps_per_nm: f64,
    pub step_ps_per_nm: f64,
}

impl Default for CompensatorEntry {
    fn default() -> Self {
        Self {
            setting_ps_per_nm: 0.0,
            insertion_loss_db: 4.56,
            range_min_ps_per_nm: -170.0,
            range_max_ps_per_nm: 170.0,
            step_ps_per_nm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmSection {
    pub fiber: Vec<FiberEntry>,
    pub compensator: Option<CompensatorEntry>,
    pub extra_attenuation_db: f64,
    pub propagation_delay_ps: f64,
    pub jitter_fwhm_ps: f64,
    /// Noise clicks of this party, summed over its detectors.
    pub dark_count_cps: f64,
}

impl Default for ArmSection {
    fn default() -> Self {
        Self {
            fiber: Vec::new(),
            compensator: None,
            extra_attenuation_db: 0.0,
            propagation_delay_ps: 0.0,
            jitter_fwhm_ps: 0.0,
            dark_count_cps: 0.0,
        }
    }
}

/// 66 ps pair jitter split evenly over both detectors.
const LAB_DETECTOR_JITTER_PS: f64 = 46.669_047_558_312_14;
const LAB_SPOOL_KM: f64 = 6.46;
const LAB_SPOOL_D: f64 = 16.7;

impl ArmSection {
    /// Idler arm: the compensator set to cancel the spool (6.46 km at
    /// 16.7 ps/nm/km), total loss 29.05 dB.
    pub fn alice() -> Self {
        Self {
            fiber: Vec::new(),
            compensator: Some(CompensatorEntry {
                setting_ps_per_nm: -107.882,
                ..CompensatorEntry::default()
            }),
            extra_attenuation_db: 24.49,
            propagation_delay_ps: 0.0,
            jitter_fwhm_ps: LAB_DETECTOR_JITTER_PS,
            dark_count_cps: 2.8e5,
        }
    }

    /// Signal arm: the G.652 spool, total loss 29.31 dB.
    pub fn bob() -> Self {
        Self {
            fiber: vec![FiberEntry {
                length_km: LAB_SPOOL_KM,
                dispersion_ps_per_nm_km: LAB_SPOOL_D,
                attenuation_db_per_km: 0.2,
                label: "spool".into(),
            }],
            compensator: None,
            extra_attenuation_db: 28.018,
            propagation_delay_ps: 0.0,
            jitter_fwhm_ps: LAB_DETECTOR_JITTER_PS,
            dark_count_cps: 3.5e5,
        }
    }

    fn build(&self, which: &str) -> Result<ArmConfig, CliError> {
        let ctx = |e: nlqkd_core::physics::DomainError| CliError::Config(format!("{which}: {e}"));
        let detector = DetectorSpec::new(self.jitter_fwhm_ps, self.dark_count_cps).map_err(ctx)?;
        let mut arm = ArmConfig::new(detector)
            .with_extra_attenuation_db(self.extra_attenuation_db)
            .with_propagation_delay_ps(self.propagation_delay_ps);
        for f in &self.fiber {
            arm = arm.with_segment(
                FiberSegment::new(
                    f.length_km,
                    f.dispersion_ps_per_nm_km,
                    f.attenuation_db_per_km,
                    f.label.clone(),
                )
                .map_err(ctx)?,
            );
        }
        if let Some(c) = &self.compensator {
            arm = arm.with_compensator(
                CompensationModule::new(
                    c.setting_ps_per_nm,
                    c.insertion_loss_db,
                    c.range_min_ps_per_nm,
                    c.range_max_ps_per_nm,
                    c.step_ps_per_nm,
                )
                .map_err(ctx)?,
            );
        }
        arm.validate().map_err(ctx)?;
        Ok(arm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisModeKind {
    /// HV/HV then DA/DA, half of every second each.
    MatchedHalves,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub seed: u64,
    pub duration_s: f64,
    pub basis_mode: BasisModeKind,
    pub max_tags: u64,
    /// Gzip the tag files.
    pub compress: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_s: 1.0,
            basis_mode: BasisModeKind::MatchedHalves,
            max_tags: 200_000_000,
            compress: false,
        }
    }
}

impl SimulationSection {
    pub fn run(&self) -> SimulationRun {
        let mode = match self.basis_mode {
            BasisModeKind::MatchedHalves => BasisMode::matched_halves(),
            BasisModeKind::Random => BasisMode::RandomBasis,
        };
        SimulationRun {
            max_tags: self.max_tags,
            ..SimulationRun::new(self.seed, self.duration_s, mode)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistogramPairs {
    All,
    Correct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub bin_width_ps: i64,
    pub search_half_range_ps: i64,
    /// Defaults to the difference of the arms' propagation delays.
    pub delay_ps: Option<f64>,
    pub histogram_pairs: HistogramPairs,
    /// Offset of the two off-peak windows used to subtract accidentals.
    pub background_offset_ps: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            bin_width_ps: 1,
            search_half_range_ps: 2000,
            delay_ps: None,
            histogram_pairs: HistogramPairs::Correct,
            background_offset_ps: 20_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Derive every parameter from the scenario sections instead.
    pub from_scenario: bool,
    pub brightness_cps: f64,
    pub loss_a_db: f64,
    pub loss_b_db: f64,
    /// Noise counts per detector; two detectors per party.
    pub dark_count_a_cps: f64,
    pub dark_count_b_cps: f64,
    pub optical_error: f64,
    pub sigma_j_ps: f64,
    pub sigma_c_ps: f64,
    pub error_correction_efficiency: f64,
    pub clipping_factor: Option<f64>,
    pub total_rate: TotalRate,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            from_scenario: false,
            brightness_cps: 5.75e8,
            loss_a_db: 29.05,
            loss_b_db: 29.31,
            dark_count_a_cps: 1.4e5,
            dark_count_b_cps: 1.75e5,
            optical_error: 0.01,
            sigma_j_ps: 66.0,
            sigma_c_ps: 0.0,
            error_correction_efficiency: 1.1,
            clipping_factor: None,
            total_rate: TotalRate::WithAccidentals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcmSweepSection {
    /// Defaults to the fiber dispersion of both arms.
    pub fiber_dispersion_ps_per_nm: Option<f64>,
    /// Defaults to the scenario's effective spectral width.
    pub sigma_lambda_nm: Option<f64>,
    pub dcm_min_ps_per_nm: f64,
    pub dcm_max_ps_per_nm: f64,
    pub step_ps_per_nm: f64,
    /// Added to every reading: the module delivers `reading + offset`.
    pub calibration_offset_ps_per_nm: f64,
    /// Simulated time per setting in Monte Carlo mode.
    pub mc_duration_s: f64,
}

impl Default for DcmSweepSection {
    fn default() -> Self {
        Self {
            fiber_dispersion_ps_per_nm: None,
            sigma_lambda_nm: None,
            dcm_min_ps_per_nm: -170.0,
            dcm_max_ps_per_nm: 170.0,
            step_ps_per_nm: 10.0,
            calibration_offset_ps_per_nm: 0.0,
            mc_duration_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalComparisonSection {
    pub second_module_loss_db: f64,
}

impl Default for LocalComparisonSection {
    fn default() -> Self {
        Self {
            second_module_loss_db: 4.56,
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut file: ScenarioFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        file.resolve()?;
        Ok(file)
    }

    /// Fills every derived default so that the file records what was used.
    fn resolve(&mut self) -> Result<(), CliError> {
        let scenario = self.scenario()?;
        self.source.effective_spectral_width_nm = Some(scenario.effective_spectral_width_nm);
        self.source.coherence_fwhm_ps = Some(scenario.coherence_fwhm_ps);
        if self.analysis.delay_ps.is_none() {
            self.analysis.delay_ps = Some(scenario.expected_delay_ps());
        }
        if self.dcm_sweep.fiber_dispersion_ps_per_nm.is_none() {
            self.dcm_sweep.fiber_dispersion_ps_per_nm =
                Some(scenario.arm_a.fiber_dispersion_ps_per_nm() + scenario.arm_b.fiber_dispersion_ps_per_nm());
        }
        if self.dcm_sweep.sigma_lambda_nm.is_none() {
            self.dcm_sweep.sigma_lambda_nm = Some(scenario.effective_spectral_width_nm);
        }
        if self.model.clipping_factor.is_none() {
            self.model.clipping_factor = Some(default_clipping_factor());
        }
        self.model_parameters()
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.distance_sweep
            .validate()
            .map_err(|e| CliError::Config(format!("distance_sweep: {e}")))?;
        if !(self.simulation.duration_s >= 0.0 && self.simulation.duration_s.is_finite()) {
            return Err(CliError::Config(format!(
                "simulation.duration_s {} must be >= 0",
                self.simulation.duration_s
            )));
        }
        if self.analysis.bin_width_ps <= 0 || self.analysis.search_half_range_ps <= 0 {
            return Err(CliError::Config(
                "analysis.bin_width_ps and analysis.search_half_range_ps must be > 0".into(),
            ));
        }
        if !(self.dcm_sweep.step_ps_per_nm > 0.0) || self.dcm_sweep.dcm_max_ps_per_nm < self.dcm_sweep.dcm_min_ps_per_nm
        {
            return Err(CliError::Config(
                "dcm_sweep grid is empty or has a non-positive step".into(),
            ));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<LinkScenario, CliError> {
        let s = &self.source;
        let ctx = |e: nlqkd_core::physics::DomainError| CliError::Config(format!("source: {e}"));
        let (width, unit) = match (s.spectral_width_ghz, s.spectral_width_nm) {
            (Some(g), _) => (g, WidthUnit::FrequencyGhz),
            (None, Some(nm)) => (nm, WidthUnit::WavelengthNm),
            (None, None) => {
                return Err(CliError::Config(
                    "source: one of spectral_width_ghz or spectral_width_nm is required".into(),
                ))
            }
        };
        let spectrum = OpticalSpectrum::new(s.center_wavelength_nm, width, unit, s.spectral_shape).map_err(ctx)?;
        let mut scenario = LinkScenario::new(
            s.brightness_cps,
            s.optical_error,
            spectrum,
            self.arm_a.build("arm_a")?,
            self.arm_b.build("arm_b")?,
        )
        .map_err(ctx)?;
        scenario.error_correction_efficiency = s.error_correction_efficiency;
        if let Some(w) = s.effective_spectral_width_nm {
            scenario.effective_spectral_width_nm = w;
        }
        if let Some(c) = s.coherence_fwhm_ps {
            scenario.coherence_fwhm_ps = c;
        }
        scenario.validate().map_err(ctx)?;
        Ok(scenario)
    }

    pub fn model_parameters(&self) -> ModelParameters {
        let m = &self.model;
        let mut p = if m.from_scenario {
            match self.scenario() {
                Ok(s) => ModelParameters::from_scenario(&s),
                Err(_) => ModelParameters::fitted_experiment(),
            }
        } else {
            ModelParameters {
                brightness_cps: m.brightness_cps,
                eta_a: db_to_transmission(m.loss_a_db),
                eta_b: db_to_transmission(m.loss_b_db),
                dc_a_cps: m.dark_count_a_cps,
                dc_b_cps: m.dark_count_b_cps,
                optical_error: m.optical_error,
                sigma_j_ps: m.sigma_j_ps,
                sigma_c_ps: m.sigma_c_ps,
                error_correction_efficiency: m.error_correction_efficiency,
                clipping_factor: default_clipping_factor(),
                total_rate: m.total_rate,
            }
        };
        p.total_rate = m.total_rate;
        if let Some(s) = m.clipping_factor {
            p.clipping_factor = s;
        }
        p
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Blocks of the fixed-settings schedule, exposed for manifests.
pub fn describe_blocks(mode: &BasisMode) -> Vec<SettingBlock> {
    match mode {
        BasisMode::FixedSettings(blocks) => blocks.clone(),
        BasisMode::RandomBasis => Vec::new(),
    }
}
