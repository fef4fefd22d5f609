//! Event-level time-tag generation for a [`LinkScenario`].
//!
//! Pair emissions are a homogeneous Poisson process at the source
//! brightness. Loss is applied by splitting that process up front: pairs
//! with both photons detected, only Alice's, only Bob's. Each split is an
//! independent Poisson process, so only detected events are materialized.
//! Noise clicks are a further independent Poisson process per party.
//!
//! The run is cut into fixed 1 ms chunks; every `(category, chunk)` cell
//! draws from its own [`crate::rng::substream`], so the output does not
//! depend on how many worker threads generate it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::{arm_dispersion_total, fwhm_to_sigma, DomainError, LinkScenario, SpectralShape};
use crate::rng::{substream, StreamCategory};

pub const PS_PER_S: f64 = 1e12;
const CHUNK_PS: f64 = 1e9;
const DEFAULT_MAX_TAGS: u64 = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basis {
    HV,
    DA,
}

impl Basis {
    pub fn as_str(self) -> &'static str {
        match self {
            Basis::HV => "HV",
            Basis::DA => "DA",
        }
    }
}

/// One detection event. `outcome` is 0 for H/D and 1 for V/A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub timestamp_ps: i64,
    pub party: Party,
    pub basis: Basis,
    pub outcome: u8,
}

/// A block of constant analyzer settings, repeated cyclically over the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingBlock {
    pub basis_a: Basis,
    pub basis_b: Basis,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "blocks")]
pub enum BasisMode {
    /// Deterministic setting schedule; no sifting loss.
    FixedSettings(Vec<SettingBlock>),
    /// Each party picks HV or DA with probability 1/2 per detection.
    RandomBasis,
}

impl BasisMode {
    /// HV/HV and DA/DA in equal halves of every second.
    pub fn matched_halves() -> Self {
        BasisMode::FixedSettings(vec![
            SettingBlock {
                basis_a: Basis::HV,
                basis_b: Basis::HV,
                duration_s: 0.5,
            },
            SettingBlock {
                basis_a: Basis::DA,
                basis_b: Basis::DA,
                duration_s: 0.5,
            },
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub seed: u64,
    pub duration_s: f64,
    pub basis_mode: BasisMode,
    /// Refuse runs whose expected tag count at either party exceeds this.
    pub max_tags: u64,
}

impl SimulationRun {
    pub fn new(seed: u64, duration_s: f64, basis_mode: BasisMode) -> Self {
        Self {
            seed,
            duration_s,
            basis_mode,
            max_tags: DEFAULT_MAX_TAGS,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid run: {0}")]
    InvalidRun(String),
    #[error("expected {expected:.3e} tags at party {party:?}, above the capacity limit of {limit}")]
    Capacity { party: Party, expected: f64, limit: u64 },
}

/// Sorted detection streams of both parties.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagStreams {
    pub a: Vec<TimeTag>,
    pub b: Vec<TimeTag>,
}

/// Closed-form detected-singles rate `B·η + DC` of each party, cps.
pub fn expected_singles_cps(scenario: &LinkScenario) -> (f64, f64) {
    let b = scenario.brightness_cps;
    (
        b * scenario.arm_a.transmission() + scenario.arm_a.detector.dark_count_cps,
        b * scenario.arm_b.transmission() + scenario.arm_b.detector.dark_count_cps,
    )
}

struct Schedule {
    blocks: Vec<(f64, Basis, Basis)>,
    cycle_ps: f64,
}

impl Schedule {
    fn new(blocks: &[SettingBlock]) -> Result<Self, SimError> {
        if blocks.is_empty() {
            return Err(SimError::InvalidRun(
                "fixed-settings mode needs at least one block".into(),
            ));
        }
        let mut end = 0.0;
        let mut out = Vec::with_capacity(blocks.len());
        for b in blocks {
            if !(b.duration_s > 0.0 && b.duration_s.is_finite()) {
                return Err(SimError::InvalidRun(format!(
                    "block duration {} must be > 0",
                    b.duration_s
                )));
            }
            end += b.duration_s * PS_PER_S;
            out.push((end, b.basis_a, b.basis_b));
        }
        Ok(Self {
            blocks: out,
            cycle_ps: end,
        })
    }

    fn bases_at(&self, t_ps: f64) -> (Basis, Basis) {
        let phase = t_ps.rem_euclid(self.cycle_ps);
        let (_, a, b) = self
            .blocks
            .iter()
            .find(|(end, _, _)| phase < *end)
            .unwrap_or(self.blocks.last().unwrap());
        (*a, *b)
    }
}

/// Per-run constants shared by every chunk.
struct Plan<'a> {
    seed: u64,
    duration_ps: f64,
    schedule: Option<Schedule>,
    scenario: &'a LinkScenario,
    joint_cps: f64,
    only_a_cps: f64,
    only_b_cps: f64,
    dispersion_a: f64,
    dispersion_b: f64,
    jitter_a: f64,
    jitter_b: f64,
    coherence_sigma: f64,
}

impl Plan<'_> {
    fn bases(&self, t_ps: f64, rng: &mut ChaCha8Rng) -> (Basis, Basis) {
        match &self.schedule {
            Some(s) => s.bases_at(t_ps),
            None => (random_basis(rng), random_basis(rng)),
        }
    }

    fn detuning_nm(&self, rng: &mut ChaCha8Rng) -> f64 {
        let width = self.scenario.effective_spectral_width_nm;
        match self.scenario.spectrum.shape {
            SpectralShape::Gaussian => fwhm_to_sigma(width) * rng.sample::<f64, _>(StandardNormal),
            SpectralShape::Tophat => (rng.random::<f64>() - 0.5) * width,
        }
    }

    fn gauss(sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
        if sigma == 0.0 {
            0.0
        } else {
            sigma * rng.sample::<f64, _>(StandardNormal)
        }
    }

    fn arrival_a(&self, t0: f64, detuning: f64, smear: f64, rng: &mut ChaCha8Rng) -> f64 {
        t0 + self.scenario.arm_a.propagation_delay_ps
            + detuning * self.dispersion_a
            + Self::gauss(self.jitter_a, rng)
            + 0.5 * smear
    }

    fn arrival_b(&self, t0: f64, detuning: f64, smear: f64, rng: &mut ChaCha8Rng) -> f64 {
        // Bob's photon carries the mirrored detuning
        t0 + self.scenario.arm_b.propagation_delay_ps - detuning * self.dispersion_b + Self::gauss(self.jitter_b, rng)
            - 0.5 * smear
    }

    fn push(&self, out: &mut Vec<TimeTag>, t_ps: f64, party: Party, basis: Basis, outcome: u8) {
        let ts = t_ps.round();
        if ts >= 0.0 && ts < self.duration_ps {
            out.push(TimeTag {
                timestamp_ps: ts as i64,
                party,
                basis,
                outcome,
            });
        }
    }

    fn chunk(&self, index: u64) -> (Vec<TimeTag>, Vec<TimeTag>) {
        let start = index as f64 * CHUNK_PS;
        let span = (self.duration_ps - start).min(CHUNK_PS);
        let mut a = Vec::new();
        let mut b = Vec::new();
        let span_s = span / PS_PER_S;
        let e_o = self.scenario.optical_error;

        let mut rng = substream(self.seed, StreamCategory::JointPairs, index);
        for _ in 0..poisson_count(self.joint_cps * span_s, &mut rng) {
            let t0 = start + rng.random::<f64>() * span;
            let detuning = self.detuning_nm(&mut rng);
            let smear = Self::gauss(self.coherence_sigma, &mut rng);
            let ta = self.arrival_a(t0, detuning, smear, &mut rng);
            let tb = self.arrival_b(t0, detuning, smear, &mut rng);
            let (basis_a, basis_b) = self.bases(t0, &mut rng);
            let out_a = rng.random::<bool>() as u8;
            let out_b = if basis_a == basis_b {
                out_a ^ (rng.random::<f64>() < e_o) as u8
            } else {
                rng.random::<bool>() as u8
            };
            self.push(&mut a, ta, Party::A, basis_a, out_a);
            self.push(&mut b, tb, Party::B, basis_b, out_b);
        }

        let mut rng = substream(self.seed, StreamCategory::SingleA, index);
        for _ in 0..poisson_count(self.only_a_cps * span_s, &mut rng) {
            let t0 = start + rng.random::<f64>() * span;
            let detuning = self.detuning_nm(&mut rng);
            let smear = Self::gauss(self.coherence_sigma, &mut rng);
            let ta = self.arrival_a(t0, detuning, smear, &mut rng);
            let (basis, _) = self.bases(t0, &mut rng);
            let outcome = rng.random::<bool>() as u8;
            self.push(&mut a, ta, Party::A, basis, outcome);
        }

        let mut rng = substream(self.seed, StreamCategory::SingleB, index);
        for _ in 0..poisson_count(self.only_b_cps * span_s, &mut rng) {
            let t0 = start + rng.random::<f64>() * span;
            let detuning = self.detuning_nm(&mut rng);
            let smear = Self::gauss(self.coherence_sigma, &mut rng);
            let tb = self.arrival_b(t0, detuning, smear, &mut rng);
            let (_, basis) = self.bases(t0, &mut rng);
            let outcome = rng.random::<bool>() as u8;
            self.push(&mut b, tb, Party::B, basis, outcome);
        }

        for (category, party, rate) in [
            (
                StreamCategory::DarkA,
                Party::A,
                self.scenario.arm_a.detector.dark_count_cps,
            ),
            (
                StreamCategory::DarkB,
                Party::B,
                self.scenario.arm_b.detector.dark_count_cps,
            ),
        ] {
            let mut rng = substream(self.seed, category, index);
            for _ in 0..poisson_count(rate * span_s, &mut rng) {
                let t = start + rng.random::<f64>() * span;
                let (basis_a, basis_b) = self.bases(t, &mut rng);
                let outcome = rng.random::<bool>() as u8;
                match party {
                    Party::A => self.push(&mut a, t, party, basis_a, outcome),
                    Party::B => self.push(&mut b, t, party, basis_b, outcome),
                }
            }
        }
        (a, b)
    }
}

fn random_basis(rng: &mut ChaCha8Rng) -> Basis {
    if rng.random::<bool>() {
        Basis::DA
    } else {
        Basis::HV
    }
}

fn poisson_count(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Generates both parties' sorted time-tag streams.
///
/// Output is a pure function of `(scenario, run)`; the rayon pool size the
/// call runs in has no effect on it.
pub fn simulate(scenario: &LinkScenario, run: &SimulationRun) -> Result<TagStreams, SimError> {
    scenario.validate()?;
    if !(run.duration_s >= 0.0 && run.duration_s.is_finite()) {
        return Err(SimError::InvalidRun(format!(
            "duration {} s must be >= 0",
            run.duration_s
        )));
    }
    let schedule = match &run.basis_mode {
        BasisMode::FixedSettings(blocks) => Some(Schedule::new(blocks)?),
        BasisMode::RandomBasis => None,
    };
    if run.duration_s == 0.0 {
        return Ok(TagStreams::default());
    }

    let (singles_a, singles_b) = expected_singles_cps(scenario);
    for (party, rate) in [(Party::A, singles_a), (Party::B, singles_b)] {
        let expected = rate * run.duration_s;
        if expected > run.max_tags as f64 {
            return Err(SimError::Capacity {
                party,
                expected,
                limit: run.max_tags,
            });
        }
    }

    let eta_a = scenario.arm_a.transmission();
    let eta_b = scenario.arm_b.transmission();
    let brightness = scenario.brightness_cps;
    let plan = Plan {
        seed: run.seed,
        duration_ps: run.duration_s * PS_PER_S,
        schedule,
        scenario,
        joint_cps: brightness * eta_a * eta_b,
        only_a_cps: brightness * eta_a * (1.0 - eta_b),
        only_b_cps: brightness * (1.0 - eta_a) * eta_b,
        dispersion_a: arm_dispersion_total(&scenario.arm_a),
        dispersion_b: arm_dispersion_total(&scenario.arm_b),
        jitter_a: fwhm_to_sigma(scenario.arm_a.detector.jitter_fwhm_ps),
        jitter_b: fwhm_to_sigma(scenario.arm_b.detector.jitter_fwhm_ps),
        coherence_sigma: fwhm_to_sigma(scenario.coherence_fwhm_ps),
    };

    let chunks = (plan.duration_ps / CHUNK_PS).ceil() as u64;
    let parts: Vec<(Vec<TimeTag>, Vec<TimeTag>)> = (0..chunks).into_par_iter().map(|i| plan.chunk(i)).collect();

    let mut streams = TagStreams {
        a: Vec::with_capacity(parts.iter().map(|p| p.0.len()).sum()),
        b: Vec::with_capacity(parts.iter().map(|p| p.1.len()).sum()),
    };
    for (a, b) in parts {
        streams.a.extend(a);
        streams.b.extend(b);
    }
    // total order on all fields: equal keys are identical records
    streams.a.par_sort_unstable();
    streams.b.par_sort_unstable();
    Ok(streams)
}
