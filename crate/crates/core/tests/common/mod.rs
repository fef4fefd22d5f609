#![allow(dead_code)]

use nlqkd_core::physics::{
    ArmConfig, CompensationModule, DetectorSpec, FiberSegment, LinkScenario, OpticalSpectrum, SpectralShape, WidthUnit,
};

pub const PAIR_JITTER_PS: f64 = 66.0;

pub fn detector_jitter() -> f64 {
    PAIR_JITTER_PS / 2f64.sqrt()
}

/// Lab link at the fitted loss values; `dcm` is the compensator setting in
/// Alice's arm, ps/nm. Noise given per party.
pub fn paper_scenario(dcm: f64, noise_a: f64, noise_b: f64) -> LinkScenario {
    let spectrum = OpticalSpectrum::new(1550.12, 200.0, WidthUnit::FrequencyGhz, SpectralShape::Gaussian).unwrap();
    let arm_a = ArmConfig::new(DetectorSpec::new(detector_jitter(), noise_a).unwrap())
        .with_compensator(CompensationModule::tunable_170(dcm).unwrap())
        .with_extra_attenuation_db(29.05 - 4.56);
    let arm_b = ArmConfig::new(DetectorSpec::new(detector_jitter(), noise_b).unwrap())
        .with_segment(FiberSegment::new(6.46, 16.7, 0.2, "spool").unwrap())
        .with_extra_attenuation_db(29.31 - 0.2 * 6.46);
    let mut s = LinkScenario::new(5.75e8, 0.01, spectrum, arm_a, arm_b).unwrap();
    s.effective_spectral_width_nm = 0.67;
    s
}

/// Lossless, noiseless link with a given pair rate and pair jitter.
pub fn clean_scenario(brightness: f64, pair_jitter: f64, optical_error: f64) -> LinkScenario {
    let spectrum = OpticalSpectrum::new(1550.0, 100.0, WidthUnit::FrequencyGhz, SpectralShape::Gaussian).unwrap();
    let det = DetectorSpec::new(pair_jitter / 2f64.sqrt(), 0.0).unwrap();
    let mut s = LinkScenario::new(
        brightness,
        optical_error,
        spectrum,
        ArmConfig::new(det.clone()),
        ArmConfig::new(det),
    )
    .unwrap();
    s.coherence_fwhm_ps = 0.0;
    s
}

/// `|observed − expected| ≤ n·sqrt(expected)` for Poisson counts.
pub fn within_sigma(observed: f64, expected: f64, n_sigma: f64) -> bool {
    (observed - expected).abs() <= n_sigma * expected.sqrt().max(1.0)
}
