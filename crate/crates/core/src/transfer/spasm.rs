//! Head-spasm detection from accepted mouth estimates.

use nalgebra::Vector3;
use thiserror::Error;

use super::fusion::MouthEstimate;

pub const DEFAULT_SPASM_THRESHOLD: f64 = 0.15;
/// Samples averaged per block by [`detect_spasm_smoothed`].
pub const DEFAULT_SMOOTHING: usize = 8;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SpasmError {
    #[error("spasm detection needs at least {needed} samples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
}

/// Largest speed between consecutive samples. Pairs with non-increasing
/// timestamps are skipped.
pub fn max_finite_difference_speed(history: &[MouthEstimate]) -> Result<f64, SpasmError> {
    if history.len() < 2 {
        return Err(SpasmError::InsufficientHistory {
            needed: 2,
            got: history.len(),
        });
    }
    Ok(history
        .windows(2)
        .filter_map(|p| {
            let dt = p[1].timestamp - p[0].timestamp;
            (dt > 0.0).then(|| (p[1].pose.position - p[0].pose.position).norm() / dt)
        })
        .fold(0.0, f64::max))
}

pub fn detect_spasm(history: &[MouthEstimate], threshold: f64) -> Result<bool, SpasmError> {
    Ok(max_finite_difference_speed(history)? > threshold)
}

/// Finite difference between the means of the last two blocks of `block`
/// samples. Needs `2·block` samples.
pub fn detect_spasm_smoothed(
    history: &[MouthEstimate],
    threshold: f64,
    block: usize,
) -> Result<bool, SpasmError> {
    let block = block.max(1);
    let needed = 2 * block;
    if history.len() < needed {
        return Err(SpasmError::InsufficientHistory {
            needed,
            got: history.len(),
        });
    }
    let tail = &history[history.len() - needed..];
    let mean = |s: &[MouthEstimate]| -> (Vector3<f64>, f64) {
        let n = s.len() as f64;
        let p = s.iter().map(|e| e.pose.position).sum::<Vector3<f64>>() / n;
        let t = s.iter().map(|e| e.timestamp).sum::<f64>() / n;
        (p, t)
    };
    let (p0, t0) = mean(&tail[..block]);
    let (p1, t1) = mean(&tail[block..]);
    let dt = t1 - t0;
    if dt <= 0.0 {
        return Ok(false);
    }
    Ok((p1 - p0).norm() / dt > threshold)
}
