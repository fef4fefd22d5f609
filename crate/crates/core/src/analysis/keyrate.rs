//! QBER, asymptotic secure key rate, window optimization and heralding efficiency.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coincidence::{count_coincidences, match_pairs, CoincidenceTally};
use super::fit::{fit_gaussian, GaussianFit};
use super::histogram::{cross_correlate, PairFilter, DEFAULT_SEARCH_HALF_RANGE_PS};
use super::AnalysisError;
use crate::montecarlo::TimeTag;
use crate::physics::klyshko_efficiency;

/// Grid step of the coincidence-window search, ps.
pub const WINDOW_STEP_PS: f64 = 2.0;
/// The window grid extends to this multiple of the fitted FWHM.
pub const WINDOW_SPAN_FWHM: f64 = 8.0;

pub fn qber(tally: &CoincidenceTally) -> Result<f64, AnalysisError> {
    match tally.total() {
        0 => Err(AnalysisError::UndefinedQber),
        n => Ok(tally.cc_erroneous as f64 / n as f64),
    }
}

/// `H₂(x) = −x log₂x − (1−x) log₂(1−x)`, with `H₂(0) = H₂(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64, AnalysisError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(AnalysisError::InvalidArgument(format!(
            "entropy argument {x} outside [0, 1]"
        )));
    }
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(term(x) + term(1.0 - x))
}

/// Unclamped `CC_tot·(1 − (1+f)·H₂(E))`; negative means no key.
pub fn secure_key_rate_raw(cc_total_cps: f64, qber: f64, f: f64) -> Result<f64, AnalysisError> {
    if f < 1.0 {
        return Err(AnalysisError::InvalidArgument(format!(
            "error-correction efficiency {f} must be >= 1"
        )));
    }
    if cc_total_cps < 0.0 {
        return Err(AnalysisError::InvalidArgument(format!(
            "coincidence rate {cc_total_cps} must be >= 0"
        )));
    }
    Ok(cc_total_cps * (1.0 - (1.0 + f) * binary_entropy(qber)?))
}

/// Asymptotic secure key rate in bits/s, clamped at zero.
pub fn secure_key_rate(cc_total_cps: f64, qber: f64, f: f64) -> Result<f64, AnalysisError> {
    Ok(secure_key_rate_raw(cc_total_cps, qber, f)?.max(0.0))
}

/// Mean of the per-basis QBERs over the bases that saw coincidences.
pub fn basis_averaged_qber(tally: &CoincidenceTally) -> Option<f64> {
    let per_basis: Vec<f64> = [tally.hv.qber(), tally.da.qber()].into_iter().flatten().collect();
    (!per_basis.is_empty()).then(|| per_basis.iter().sum::<f64>() / per_basis.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub t_cc_ps: f64,
    pub delay_used_ps: f64,
    pub cc_total_cps: f64,
    /// Basis-averaged QBER; 0.5 when no coincidence was found.
    pub qber: f64,
    pub secure_key_rate: f64,
    /// Key-rate formula before clamping at zero.
    pub raw_key_rate: f64,
    pub qber_hv: Option<f64>,
    pub qber_da: Option<f64>,
    pub no_key: bool,
    pub tally: CoincidenceTally,
}

fn report_for(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    delay_ps: f64,
    t_cc_ps: f64,
    duration_s: f64,
    f: f64,
) -> Result<KeyRateReport, AnalysisError> {
    let tally = count_coincidences(tags_a, tags_b, delay_ps, t_cc_ps, duration_s)?;
    let cc_total_cps = tally.total_rate_cps();
    let qber = basis_averaged_qber(&tally).unwrap_or(0.5);
    let raw_key_rate = secure_key_rate_raw(cc_total_cps, qber, f)?;
    Ok(KeyRateReport {
        t_cc_ps,
        delay_used_ps: delay_ps,
        cc_total_cps,
        qber,
        secure_key_rate: raw_key_rate.max(0.0),
        raw_key_rate,
        qber_hv: tally.hv.qber(),
        qber_da: tally.da.qber(),
        no_key: raw_key_rate <= 0.0,
        tally,
    })
}

/// Key-rate report at one fixed coincidence window.
pub fn evaluate_window(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    delay_ps: f64,
    t_cc_ps: f64,
    duration_s: f64,
    f: f64,
) -> Result<KeyRateReport, AnalysisError> {
    report_for(tags_a, tags_b, delay_ps, t_cc_ps, duration_s, f)
}

/// Tags of each stream that have at least one partner with
/// `|t_A − t_B − delay| ≤ half_window`.
///
/// Greedy matching at any window up to `2·half_window` never touches the
/// other tags, so dropping them leaves every tally unchanged.
fn with_partner_within(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    delay_ps: f64,
    half_window: f64,
) -> (Vec<TimeTag>, Vec<TimeTag>) {
    let mut keep_a = vec![false; tags_a.len()];
    let mut keep_b = vec![false; tags_b.len()];
    let offset = |a: &TimeTag, b: &TimeTag| (a.timestamp_ps - b.timestamp_ps) as f64 - delay_ps;
    let mut lo = 0;
    for (i, a) in tags_a.iter().enumerate() {
        while lo < tags_b.len() && offset(a, &tags_b[lo]) > half_window {
            lo += 1;
        }
        let mut j = lo;
        while j < tags_b.len() && offset(a, &tags_b[j]) >= -half_window {
            keep_a[i] = true;
            keep_b[j] = true;
            j += 1;
        }
    }
    let pick = |tags: &[TimeTag], keep: &[bool]| tags.iter().zip(keep).filter(|(_, &k)| k).map(|(t, _)| *t).collect();
    (pick(tags_a, &keep_a), pick(tags_b, &keep_b))
}

/// Grid search over `t_cc ∈ {2, 4, …} ps` up to `max_window_ps`.
///
/// Returns the window with the largest key rate, preferring the smaller
/// window on ties. When no window yields key, returns the window with the
/// largest coincidence rate and `secure_key_rate = 0`.
pub fn optimize_window_up_to(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    delay_ps: f64,
    duration_s: f64,
    f: f64,
    max_window_ps: f64,
) -> Result<KeyRateReport, AnalysisError> {
    let steps = ((max_window_ps / WINDOW_STEP_PS).floor() as usize).max(1);
    let (near_a, near_b) = with_partner_within(tags_a, tags_b, delay_ps, 0.5 * steps as f64 * WINDOW_STEP_PS);
    let reports = (1..=steps)
        .into_par_iter()
        .map(|k| report_for(&near_a, &near_b, delay_ps, k as f64 * WINDOW_STEP_PS, duration_s, f))
        .collect::<Result<Vec<_>, _>>()?;

    // reports are in ascending window order; strict comparison keeps the first maximum
    let mut best = &reports[0];
    for r in &reports[1..] {
        if r.secure_key_rate > best.secure_key_rate {
            best = r;
        }
    }
    if best.secure_key_rate <= 0.0 {
        best = &reports[0];
        for r in &reports[1..] {
            if r.cc_total_cps > best.cc_total_cps {
                best = r;
            }
        }
    }
    Ok(best.clone())
}

/// Fits the correlation peak around `delay_ps`, then searches windows up to
/// eight times the fitted FWHM.
pub fn optimize_window(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    delay_ps: f64,
    duration_s: f64,
    f: f64,
) -> Result<(KeyRateReport, GaussianFit), AnalysisError> {
    let hist = cross_correlate(
        tags_a,
        tags_b,
        1,
        delay_ps.round() as i64,
        DEFAULT_SEARCH_HALF_RANGE_PS,
        duration_s,
        PairFilter::Correct,
    )?;
    let fit = fit_gaussian(&hist)?;
    let report = optimize_window_up_to(tags_a, tags_b, delay_ps, duration_s, f, WINDOW_SPAN_FWHM * fit.fwhm)?;
    Ok((report, fit))
}

/// Heralding efficiencies estimated from the streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeraldingEstimate {
    /// Transmission of Alice's arm, `CC/(S_B − DC_B)`.
    pub eta_a: f64,
    /// Transmission of Bob's arm, `CC/(S_A − DC_A)`.
    pub eta_b: f64,
    /// Accidental-corrected coincidence rate, cps.
    pub true_coincidence_cps: f64,
    /// Poisson standard error of `true_coincidence_cps`.
    pub true_coincidence_sigma_cps: f64,
    pub singles_a_cps: f64,
    pub singles_b_cps: f64,
}

impl HeraldingEstimate {
    pub fn eta_a_sigma(&self) -> f64 {
        self.eta_a * self.true_coincidence_sigma_cps / self.true_coincidence_cps
    }

    pub fn eta_b_sigma(&self) -> f64 {
        self.eta_b * self.true_coincidence_sigma_cps / self.true_coincidence_cps
    }
}

/// Klyshko efficiencies from coincidences in a window around `delay_ps`,
/// with accidentals estimated from two equal windows displaced by
/// `±background_offset_ps`. Noise rates are the known per-party rates.
#[allow(clippy::too_many_arguments)]
pub fn heralding_efficiencies(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    delay_ps: f64,
    window_ps: f64,
    background_offset_ps: f64,
    noise_a_cps: f64,
    noise_b_cps: f64,
    duration_s: f64,
) -> Result<HeraldingEstimate, AnalysisError> {
    if !(duration_s > 0.0) {
        return Err(AnalysisError::InvalidArgument("duration must be > 0".into()));
    }
    let count = |d: f64| match_pairs(tags_a, tags_b, d, window_ps).len() as f64;
    let on_peak = count(delay_ps);
    let off_peak = 0.5 * (count(delay_ps - background_offset_ps) + count(delay_ps + background_offset_ps));
    let true_cc = (on_peak - off_peak) / duration_s;
    let sigma = (on_peak + 0.5 * off_peak).sqrt() / duration_s;
    let singles_a = tags_a.len() as f64 / duration_s;
    let singles_b = tags_b.len() as f64 / duration_s;
    Ok(HeraldingEstimate {
        eta_a: klyshko_efficiency(true_cc.max(0.0), singles_b, noise_b_cps)?,
        eta_b: klyshko_efficiency(true_cc.max(0.0), singles_a, noise_a_cps)?,
        true_coincidence_cps: true_cc,
        true_coincidence_sigma_cps: sigma,
        singles_a_cps: singles_a,
        singles_b_cps: singles_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::coincidence::BasisTally;
    use crate::montecarlo::{Basis, Party};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tally(correct: u64, erroneous: u64) -> CoincidenceTally {
        CoincidenceTally {
            cc_correct: correct,
            cc_erroneous: erroneous,
            hv: BasisTally { correct, erroneous },
            da: BasisTally::default(),
            mixed_basis: 0,
            duration_s: 1.0,
        }
    }

    #[test]
    fn qber_examples() {
        assert_relative_eq!(qber(&tally(99, 1)).unwrap(), 0.01);
        assert_eq!(qber(&tally(0, 7)).unwrap(), 1.0);
        assert_eq!(qber(&tally(40, 40)).unwrap(), 0.5);
        assert!(matches!(qber(&tally(0, 0)), Err(AnalysisError::UndefinedQber)));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // natural-log form as an independent oracle
        let oracle = |x: f64| -(x * x.ln() + (1.0 - x) * (1.0 - x).ln()) / std::f64::consts::LN_2;
        for x in [0.0567, 0.01, 0.1, 0.3] {
            assert_relative_eq!(binary_entropy(x).unwrap(), oracle(x), max_relative = 1e-12);
        }
        assert_relative_eq!(binary_entropy(0.0567).unwrap(), 0.314_203, epsilon = 1e-6);
        assert!(binary_entropy(1.01).is_err());
        assert!(binary_entropy(-0.1).is_err());
    }

    fn bisect_zero_key(f: f64) -> f64 {
        let (mut lo, mut hi) = (1e-9f64, 0.5f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            let h = -mid * mid.log2() - (1.0 - mid) * (1.0 - mid).log2();
            if 1.0 - (1.0 + f) * h > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn key_rate_examples() {
        assert_eq!(secure_key_rate(700.0, 0.0, 1.1).unwrap(), 700.0);
        let threshold = bisect_zero_key(1.1);
        assert!((threshold - 0.102_283).abs() < 1e-6, "{threshold}");
        assert!(secure_key_rate(1000.0, threshold - 1e-6, 1.1).unwrap() > 0.0);
        assert_eq!(secure_key_rate(1000.0, threshold + 1e-6, 1.1).unwrap(), 0.0);
        assert!(secure_key_rate_raw(1000.0, 0.2, 1.1).unwrap() < 0.0);
        // 704.9·(1 − 2.1·0.314203)
        assert_relative_eq!(secure_key_rate(704.9, 0.0567, 1.1).unwrap(), 239.788, epsilon = 1e-3);
        assert!(secure_key_rate(1.0, 0.1, 0.9).is_err());
    }

    fn random_stream(party: Party, raw: &[(i64, bool, bool)]) -> Vec<TimeTag> {
        let mut v: Vec<TimeTag> = raw
            .iter()
            .map(|&(t, da, o)| TimeTag {
                timestamp_ps: t,
                party,
                basis: if da { Basis::DA } else { Basis::HV },
                outcome: o as u8,
            })
            .collect();
        v.sort();
        v
    }

    proptest! {
        #[test]
        fn prefilter_keeps_every_tally(
            ra in proptest::collection::vec((0i64..30_000, any::<bool>(), any::<bool>()), 0..300),
            rb in proptest::collection::vec((0i64..30_000, any::<bool>(), any::<bool>()), 0..300),
            delay in -150i64..150,
            steps in 1usize..60,
        ) {
            let a = random_stream(Party::A, &ra);
            let b = random_stream(Party::B, &rb);
            let max_window = steps as f64 * WINDOW_STEP_PS;
            let (na, nb) = with_partner_within(&a, &b, delay as f64, 0.5 * max_window);
            for k in 1..=steps {
                let t = k as f64 * WINDOW_STEP_PS;
                let full = count_coincidences(&a, &b, delay as f64, t, 1.0).unwrap();
                let kept = count_coincidences(&na, &nb, delay as f64, t, 1.0).unwrap();
                prop_assert_eq!(full, kept);
            }
        }

        #[test]
        fn key_rate_non_increasing_in_qber(cc in 0.0f64..1e6, e1 in 0.0f64..0.5, e2 in 0.0f64..0.5, f in 1.0f64..2.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(secure_key_rate(cc, hi, f).unwrap() <= secure_key_rate(cc, lo, f).unwrap() + 1e-9);
        }
    }

    fn pair_streams(n: i64, jitter: impl Fn(i64) -> i64) -> (Vec<TimeTag>, Vec<TimeTag>) {
        let a = (0..n)
            .map(|i| TimeTag {
                timestamp_ps: i * 100_000 + 50_000,
                party: Party::A,
                basis: if i % 2 == 0 { Basis::HV } else { Basis::DA },
                outcome: (i % 3 == 0) as u8,
            })
            .collect();
        let b = (0..n)
            .map(|i| TimeTag {
                timestamp_ps: i * 100_000 + 50_000 + jitter(i),
                party: Party::B,
                basis: if i % 2 == 0 { Basis::HV } else { Basis::DA },
                outcome: (i % 3 == 0) as u8,
            })
            .collect();
        (a, b)
    }

    #[test]
    fn noiseless_pairs_give_full_key() {
        // relative offsets spread over ±20 ps
        let (a, b) = pair_streams(10_000, |i| (i * 7919) % 41 - 20);
        let r = optimize_window_up_to(&a, &b, 0.0, 1.0, 1.1, 200.0).unwrap();
        assert_eq!(r.tally.total(), 10_000);
        assert_eq!(r.secure_key_rate, 10_000.0);
        assert_eq!(r.t_cc_ps, 40.0);
        assert_eq!(r.qber, 0.0);
    }

    #[test]
    fn no_key_falls_back_to_max_coincidences() {
        // every DA outcome flipped: basis-averaged QBER 0.5 in all windows
        let (a, mut b) = pair_streams(100, |i| i % 5);
        b.iter_mut()
            .filter(|t| t.basis == Basis::DA)
            .for_each(|t| t.outcome ^= 1);
        let r = optimize_window_up_to(&a, &b, 0.0, 1.0, 1.1, 20.0).unwrap();
        assert!(r.no_key);
        assert_eq!(r.secure_key_rate, 0.0);
        assert_eq!(r.tally.total(), 100);
        assert_eq!(r.t_cc_ps, 8.0);
    }

    #[test]
    fn klyshko_from_planted_streams() {
        // 1000 pairs, plus 1000 unpaired Bob tags: eta_a = 1000/2000 once noise is zero
        let (a, mut b) = pair_streams(1000, |_| 0);
        b.extend((0..1000).map(|i| TimeTag {
            timestamp_ps: i * 100_000 + 10_000,
            party: Party::B,
            basis: Basis::HV,
            outcome: 0,
        }));
        b.sort();
        let h = heralding_efficiencies(&a, &b, 0.0, 100.0, 5_000.0, 0.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(h.eta_a, 0.5);
        assert_relative_eq!(h.eta_b, 1.0);
    }
}
