//! Gaussian-plus-floor least-squares fit of a correlation histogram.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::histogram::CorrelationHistogram;

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;
const MAX_ITERATIONS: usize = 200;
const REL_TOLERANCE: f64 = 1e-8;
const SMOOTH_BINS: usize = 9;
/// Minimum significance of the smoothed peak over the floor, in Poisson σ.
const MIN_PEAK_SIGNIFICANCE: f64 = 5.0;

/// `amplitude·exp(−4 ln2 (x − center)²/fwhm²) + floor`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub fwhm: f64,
    pub floor: f64,
    pub rms_residual: f64,
    pub iterations: usize,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        gaussian(x, [self.amplitude, self.center, self.fwhm, self.floor])
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum FitError {
    #[error("histogram has no bins")]
    Empty,
    #[error("no peak above floor: max {smoothed_max:.3} vs floor {floor:.3} ({significance:.2}σ)")]
    NoPeak {
        smoothed_max: f64,
        floor: f64,
        significance: f64,
    },
    #[error("fit did not produce a valid peak: amplitude {amplitude:.3}, fwhm {fwhm:.3}")]
    Invalid { amplitude: f64, fwhm: f64 },
}

fn gaussian(x: f64, p: [f64; 4]) -> f64 {
    let [amp, center, fwhm, floor] = p;
    let u = x - center;
    amp * (-FOUR_LN2 * u * u / (fwhm * fwhm)).exp() + floor
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut prefix = Vec::with_capacity(values.len() + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

struct Guess {
    params: [f64; 4],
    significance: f64,
    smoothed_max: f64,
}

fn initial_guess(x: &[f64], y: &[f64], bin_width: f64) -> Guess {
    let floor = median(y);
    let smooth = moving_average(y, SMOOTH_BINS.min(y.len()));
    let (peak_idx, &peak) = smooth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    let window = SMOOTH_BINS.min(y.len()) as f64;
    let significance = (peak - floor) / (floor.max(1.0) / window).sqrt();

    let half = floor + 0.5 * (peak - floor);
    let mut left = peak_idx;
    while left > 0 && smooth[left - 1] >= half {
        left -= 1;
    }
    let mut right = peak_idx;
    while right + 1 < smooth.len() && smooth[right + 1] >= half {
        right += 1;
    }
    // count-weighted width of the above-half-maximum region
    let (mut w_sum, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in left..=right {
        let w = (y[i] - floor).max(0.0);
        w_sum += w;
        m1 += w * x[i];
        m2 += w * x[i] * x[i];
    }
    let plateau = (right - left + 1) as f64 * bin_width;
    let fwhm = if w_sum > 0.0 {
        let mean = m1 / w_sum;
        let var = (m2 / w_sum - mean * mean).max(0.0);
        // a Gaussian cut at half maximum keeps σ_cut = 0.619σ, so FWHM = 3.807·σ_cut
        (var.sqrt() * 3.807).max(plateau).max(bin_width)
    } else {
        plateau.max(bin_width)
    };

    Guess {
        params: [peak - floor, x[peak_idx], fwhm, floor],
        significance,
        smoothed_max: peak,
    }
}

fn cost(x: &[f64], y: &[f64], p: [f64; 4]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (gaussian(xi, p) - yi).powi(2)).sum()
}

/// Damped least squares (Levenberg–Marquardt) on the bin centers.
///
/// Stops when the largest relative parameter change drops below 1e-8 or
/// after 200 iterations.
pub fn fit_gaussian(hist: &CorrelationHistogram) -> Result<GaussianFit, FitError> {
    if hist.counts.is_empty() {
        return Err(FitError::Empty);
    }
    let x: Vec<f64> = (0..hist.counts.len()).map(|k| hist.bin_center(k)).collect();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let bin_width = hist.bin_width_ps as f64;

    let guess = initial_guess(&x, &y, bin_width);
    if !(guess.significance >= MIN_PEAK_SIGNIFICANCE) {
        return Err(FitError::NoPeak {
            smoothed_max: guess.smoothed_max,
            floor: guess.params[3],
            significance: guess.significance,
        });
    }

    let mut p = guess.params;
    let mut current = cost(&x, &y, p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let [amp, center, fwhm, _] = p;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&xi, &yi) in x.iter().zip(&y) {
            let u = xi - center;
            let g = (-FOUR_LN2 * u * u / (fwhm * fwhm)).exp();
            let grad = Vector4::new(
                g,
                amp * g * 2.0 * FOUR_LN2 * u / (fwhm * fwhm),
                amp * g * 2.0 * FOUR_LN2 * u * u / (fwhm * fwhm * fwhm),
                1.0,
            );
            let r = yi - (amp * g + p[3]);
            jtj += grad * grad.transpose();
            jtr += grad * r;
        }

        let mut step_taken = None;
        for _ in 0..32 {
            let mut damped = jtj;
            for d in 0..4 {
                damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2], p[3] + delta[3]];
            let trial_cost = cost(&x, &y, trial);
            if trial_cost.is_finite() && trial_cost <= current && trial[2] != 0.0 {
                lambda = (lambda / 10.0).max(1e-12);
                step_taken = Some((trial, trial_cost));
                break;
            }
            lambda *= 10.0;
        }

        let Some((next, next_cost)) = step_taken else {
            break;
        };
        let scale = [p[0].abs().max(1e-12), bin_width, bin_width, p[3].abs().max(1.0)];
        let rel_change = (0..4)
            .map(|i| (next[i] - p[i]).abs() / p[i].abs().max(scale[i]))
            .fold(0.0, f64::max);
        p = next;
        current = next_cost;
        if rel_change < REL_TOLERANCE {
            break;
        }
    }

    let fit = GaussianFit {
        amplitude: p[0],
        center: p[1],
        fwhm: p[2].abs(),
        floor: p[3],
        rms_residual: (current / x.len() as f64).sqrt(),
        iterations,
    };
    if !(fit.amplitude > 0.0 && fit.fwhm > 0.0 && fit.fwhm.is_finite() && fit.center.is_finite()) {
        return Err(FitError::Invalid {
            amplitude: fit.amplitude,
            fwhm: fit.fwhm,
        });
    }
    Ok(GaussianFit {
        floor: fit.floor.max(0.0),
        ..fit
    })
}
