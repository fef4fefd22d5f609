//! One-to-one coincidence matching and QBER tallies.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::montecarlo::{Basis, TimeTag};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisTally {
    pub correct: u64,
    pub erroneous: u64,
}

impl BasisTally {
    pub fn total(&self) -> u64 {
        self.correct + self.erroneous
    }

    pub fn qber(&self) -> Option<f64> {
        (self.total() > 0).then(|| self.erroneous as f64 / self.total() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceTally {
    pub cc_correct: u64,
    pub cc_erroneous: u64,
    pub hv: BasisTally,
    pub da: BasisTally,
    /// Matched pairs measured in different bases; not part of the key.
    pub mixed_basis: u64,
    pub duration_s: f64,
}

impl CoincidenceTally {
    pub fn total(&self) -> u64 {
        self.cc_correct + self.cc_erroneous
    }

    pub fn total_rate_cps(&self) -> f64 {
        if self.duration_s > 0.0 {
            self.total() as f64 / self.duration_s
        } else {
            0.0
        }
    }
}

/// Index pairs `(i, j)` with `|t_A[i] − t_B[j] − delay| ≤ t_cc/2`, matched
/// greedily in time order so that each tag is used at most once.
///
/// Both streams are walked once; a tag that falls behind the other stream's
/// window can never match a later tag, so it is dropped.
pub fn match_pairs(tags_a: &[TimeTag], tags_b: &[TimeTag], delay_ps: f64, t_cc_ps: f64) -> Vec<(usize, usize)> {
    let half = 0.5 * t_cc_ps;
    let (mut i, mut j) = (0, 0);
    let mut pairs = Vec::new();
    while i < tags_a.len() && j < tags_b.len() {
        let offset = (tags_a[i].timestamp_ps - tags_b[j].timestamp_ps) as f64 - delay_ps;
        if offset > half {
            j += 1;
        } else if offset < -half {
            i += 1;
        } else {
            pairs.push((i, j));
            i += 1;
            j += 1;
        }
    }
    pairs
}

fn tally_pairs(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    pairs: impl IntoIterator<Item = (usize, usize)>,
    duration_s: f64,
) -> CoincidenceTally {
    let mut hv = BasisTally::default();
    let mut da = BasisTally::default();
    let mut mixed_basis = 0;
    for (i, j) in pairs {
        let (a, b) = (&tags_a[i], &tags_b[j]);
        if a.basis != b.basis {
            mixed_basis += 1;
            continue;
        }
        let slot = match a.basis {
            Basis::HV => &mut hv,
            Basis::DA => &mut da,
        };
        // |φ+⟩: equal settings give equal outcomes
        if a.outcome == b.outcome {
            slot.correct += 1;
        } else {
            slot.erroneous += 1;
        }
    }
    CoincidenceTally {
        cc_correct: hv.correct + da.correct,
        cc_erroneous: hv.erroneous + da.erroneous,
        hv,
        da,
        mixed_basis,
        duration_s,
    }
}

pub fn count_coincidences(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    delay_ps: f64,
    t_cc_ps: f64,
    duration_s: f64,
) -> Result<CoincidenceTally, AnalysisError> {
    if !(t_cc_ps > 0.0 && t_cc_ps.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!(
            "coincidence window {t_cc_ps} ps must be > 0"
        )));
    }
    let pairs = match_pairs(tags_a, tags_b, delay_ps, t_cc_ps);
    Ok(tally_pairs(tags_a, tags_b, pairs, duration_s))
}
