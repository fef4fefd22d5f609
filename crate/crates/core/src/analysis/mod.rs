//! From two time-tag streams to correlation histograms, peak fits,
//! coincidence tallies and window-optimized key rates.

pub mod coincidence;
pub mod fit;
pub mod histogram;
pub mod keyrate;

use thiserror::Error;

pub use coincidence::{count_coincidences, match_pairs, BasisTally, CoincidenceTally};
pub use fit::{fit_gaussian, FitError, GaussianFit};
pub use histogram::{cross_correlate, CorrelationHistogram, Normalization, PairFilter, DEFAULT_SEARCH_HALF_RANGE_PS};
pub use keyrate::{
    basis_averaged_qber, binary_entropy, evaluate_window, heralding_efficiencies, optimize_window,
    optimize_window_up_to, qber, secure_key_rate, secure_key_rate_raw, HeraldingEstimate, KeyRateReport,
};

use crate::physics::DomainError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("QBER undefined: no coincidences")]
    UndefinedQber,
    #[error("peak fit failed: {0}")]
    Fit(#[from] FitError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}
