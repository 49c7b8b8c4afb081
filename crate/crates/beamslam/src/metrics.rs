//! Scoring: per-step position error, OSPA map error between estimated and
//! true feature sets, per-VA mean absolute error, and the specular-match
//! classifier comparing measured angles against mirror-reflection theory.

use crate::geometry::{angle_diff, Point2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("track lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("OSPA assignment supports at most {0} elements on the smaller side")]
    TooManyElements(usize),
}

/// OSPA parameters: cutoff distance c and order p.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OspaConfig {
    pub cutoff: f64,
    pub order: f64,
}

impl Default for OspaConfig {
    fn default() -> Self {
        // Cutoff at the region-of-interest scale, first-order average.
        Self {
            cutoff: 10.0,
            order: 1.0,
        }
    }
}

/// How closely a measured angle pair matches the specular-reflection theory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchLevel {
    High,
    Medium,
    Low,
}

/// Per-step Euclidean errors and their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositionError {
    pub per_step: Vec<f64>,
    pub mean: f64,
}

pub fn position_error(
    estimated: &[Point2],
    truth: &[Point2],
) -> Result<PositionError, MetricsError> {
    if estimated.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(estimated.len(), truth.len()));
    }
    let per_step: Vec<f64> = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| e.distance(t))
        .collect();
    let mean = if per_step.is_empty() {
        0.0
    } else {
        per_step.iter().sum::<f64>() / per_step.len() as f64
    };
    Ok(PositionError { per_step, mean })
}

/// Optimal subpattern assignment distance between two finite point sets:
/// cutoff-clamped distances under the optimal matching, a cutoff penalty per
/// cardinality mismatch, p-norm averaged over the larger cardinality.
pub fn ospa(estimated: &[Point2], truth: &[Point2], cfg: &OspaConfig) -> f64 {
    let (small, large) = if estimated.len() <= truth.len() {
        (estimated, truth)
    } else {
        (truth, estimated)
    };
    let n = large.len();
    if n == 0 {
        return 0.0;
    }
    let m = small.len();
    let clamped_pow = |a: &Point2, b: &Point2| a.distance(b).min(cfg.cutoff).powf(cfg.order);
    let best = min_cost_assignment(small, large, &clamped_pow)
        .expect("map cardinalities stay within the assignment bound");
    let total = best + (n - m) as f64 * cfg.cutoff.powf(cfg.order);
    (total / n as f64).powf(1.0 / cfg.order)
}

/// Exact min-cost assignment of every element of `small` to a distinct
/// element of `large`, by dynamic programming over subsets of `small`.
fn min_cost_assignment(
    small: &[Point2],
    large: &[Point2],
    cost: &dyn Fn(&Point2, &Point2) -> f64,
) -> Result<f64, MetricsError> {
    let m = small.len();
    if m == 0 {
        return Ok(0.0);
    }
    if m > 20 {
        return Err(MetricsError::TooManyElements(20));
    }
    let full = (1usize << m) - 1;
    let mut best = vec![f64::INFINITY; full + 1];
    best[0] = 0.0;
    // Process elements of `large` one at a time; each may serve one unmatched
    // element of `small` or stay unmatched.
    for item in large {
        let mut next = best.clone();
        for mask in 0..=full {
            let base = best[mask];
            if !base.is_finite() {
                continue;
            }
            for (i, s) in small.iter().enumerate() {
                if mask & (1 << i) == 0 {
                    let cand = base + cost(s, item);
                    let m2 = mask | (1 << i);
                    if cand < next[m2] {
                        next[m2] = cand;
                    }
                }
            }
        }
        best = next;
    }
    Ok(best[full])
}

/// Per-VA tracking quality: mean absolute position error over the steps where
/// some estimate gated onto the VA, and the fraction of steps it was seen.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaTrackError {
    pub mae: f64,
    pub detect_rate: f64,
}

/// Assign each step's feature estimates to their nearest true VA within the
/// gate; VAs that never receive an estimate report as `None`.
pub fn mae_per_feature(
    est_series: &[Vec<Point2>],
    truth: &[Point2],
    gate: f64,
) -> Vec<Option<VaTrackError>> {
    let steps = est_series.len();
    let mut sums = vec![0.0f64; truth.len()];
    let mut counts = vec![0usize; truth.len()];
    for step_estimates in est_series {
        // Nearest estimate per VA this step, gated.
        for (vi, va) in truth.iter().enumerate() {
            let nearest = step_estimates
                .iter()
                .map(|e| e.distance(va))
                .fold(f64::INFINITY, f64::min);
            if nearest <= gate {
                sums[vi] += nearest;
                counts[vi] += 1;
            }
        }
    }
    (0..truth.len())
        .map(|vi| {
            if counts[vi] == 0 {
                None
            } else {
                Some(VaTrackError {
                    mae: sums[vi] / counts[vi] as f64,
                    detect_rate: counts[vi] as f64 / steps.max(1) as f64,
                })
            }
        })
        .collect()
}

/// Classify the agreement between a measured (AOD, AOA) pair and the specular
/// theory value: below half the minimum beam spacing is a high match, up to
/// half the maximum spacing a medium one, beyond that a mismatch.
pub fn specular_match(
    measured: (f64, f64),
    theory: (f64, f64),
    half_min_spacing: f64,
    half_max_spacing: f64,
) -> MatchLevel {
    let d = angle_diff(measured.0, theory.0).max(angle_diff(measured.1, theory.1));
    if d < half_min_spacing {
        MatchLevel::High
    } else if d <= half_max_spacing {
        MatchLevel::Medium
    } else {
        MatchLevel::Low
    }
}
