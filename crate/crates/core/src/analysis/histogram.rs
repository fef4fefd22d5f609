//! Cross-correlation (g²) histograms of two time-tag streams.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::montecarlo::TimeTag;

/// Half-width of the default delay search range around the expected peak, ps.
pub const DEFAULT_SEARCH_HALF_RANGE_PS: i64 = 2000;

const SHARD_LEN: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    PerSecond,
}

/// Which tag pairs enter a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairFilter {
    All,
    /// Same basis and equal outcome.
    Correct,
}

impl PairFilter {
    fn accepts(self, a: &TimeTag, b: &TimeTag) -> bool {
        match self {
            PairFilter::All => true,
            PairFilter::Correct => a.basis == b.basis && a.outcome == b.outcome,
        }
    }
}

/// Counts of `t_A − t_B` delays. Bin `k` covers
/// `[start_delay_ps + k·bin_width_ps, start_delay_ps + (k+1)·bin_width_ps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width_ps: i64,
    pub start_delay_ps: i64,
    pub counts: Vec<u64>,
    pub duration_s: f64,
    pub normalization: Normalization,
}

impl CorrelationHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Center of bin `k`, ps.
    pub fn bin_center(&self, k: usize) -> f64 {
        self.start_delay_ps as f64 + (k as f64 + 0.5) * self.bin_width_ps as f64
    }

    pub fn bin_start(&self, k: usize) -> i64 {
        self.start_delay_ps + k as i64 * self.bin_width_ps
    }

    /// Same counts, relabeled; the stored integers never change.
    pub fn normalized(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Bin values under the current normalization.
    pub fn values(&self) -> Vec<f64> {
        let scale = match self.normalization {
            Normalization::Raw => 1.0,
            Normalization::PerSecond if self.duration_s > 0.0 => 1.0 / self.duration_s,
            Normalization::PerSecond => 0.0,
        };
        self.counts.iter().map(|&c| c as f64 * scale).collect()
    }
}

/// Histogram of `t_A − t_B` over `[center − half_range, center + half_range)`.
///
/// Linear two-pointer sweep; Alice's stream is sharded across the rayon pool
/// and shard histograms are summed, which is exact.
pub fn cross_correlate(
    tags_a: &[TimeTag],
    tags_b: &[TimeTag],
    bin_width_ps: i64,
    center_ps: i64,
    half_range_ps: i64,
    duration_s: f64,
    filter: PairFilter,
) -> Result<CorrelationHistogram, AnalysisError> {
    if bin_width_ps <= 0 {
        return Err(AnalysisError::InvalidArgument(format!(
            "bin width {bin_width_ps} ps must be > 0"
        )));
    }
    if half_range_ps <= 0 {
        return Err(AnalysisError::InvalidArgument(format!(
            "search half-range {half_range_ps} ps must be > 0"
        )));
    }
    let start = center_ps - half_range_ps;
    let n_bins = (2 * half_range_ps + bin_width_ps - 1) / bin_width_ps;
    let end = start + n_bins * bin_width_ps;

    let counts = tags_a
        .par_chunks(SHARD_LEN)
        .map(|shard| {
            let mut counts = vec![0u64; n_bins as usize];
            let Some(first) = shard.first() else {
                return counts;
            };
            // first b with t_b > t_a − end, i.e. delay < end
            let mut lo = tags_b.partition_point(|b| b.timestamp_ps <= first.timestamp_ps - end);
            for a in shard {
                while lo < tags_b.len() && tags_b[lo].timestamp_ps <= a.timestamp_ps - end {
                    lo += 1;
                }
                for b in &tags_b[lo..] {
                    let delay = a.timestamp_ps - b.timestamp_ps;
                    if delay < start {
                        break;
                    }
                    if filter.accepts(a, b) {
                        counts[((delay - start) / bin_width_ps) as usize] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; n_bins as usize],
            |mut acc, part| {
                acc.iter_mut().zip(part).for_each(|(x, y)| *x += y);
                acc
            },
        );

    Ok(CorrelationHistogram {
        bin_width_ps,
        start_delay_ps: start,
        counts,
        duration_s,
        normalization: Normalization::Raw,
    })
}
