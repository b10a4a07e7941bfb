use serde::{Deserialize, Serialize};

use super::EvalError;

/// Progress bins: right-open except the last, which includes 1.
pub const QUARTILES: [(f64, f64); 4] = [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)];

fn check(pred: &[u8], truth: &[u8]) -> Result<(), EvalError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(EvalError::ShapeMismatch {
            a: pred.len(),
            b: truth.len(),
        });
    }
    if pred.iter().chain(truth).any(|&v| v > 1) {
        return Err(EvalError::NonBinaryMask);
    }
    Ok(())
}

/// Fraction of pixels where the two binary masks agree.
pub fn pixel_accuracy(pred: &[u8], truth: &[u8]) -> Result<f64, EvalError> {
    check(pred, truth)?;
    let agree = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / pred.len() as f64)
}

/// Foreground intersection over union; two empty masks score 1.
pub fn iou(pred: &[u8], truth: &[u8]) -> Result<f64, EvalError> {
    check(pred, truth)?;
    let inter = pred.iter().zip(truth).filter(|&(&a, &b)| a == 1 && b == 1).count();
    let union = pred.iter().zip(truth).filter(|&(&a, &b)| a == 1 || b == 1).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Bin index of a progress value, `None` outside [0, 1].
pub fn quartile_of(progress: f64) -> Option<usize> {
    if !(0.0..=1.0).contains(&progress) {
        return None;
    }
    Some(((progress * 4.0).floor() as usize).min(3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartileStat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

/// Mean and deviation of accuracy per progress quartile; empty bins are
/// `None`. Pairs with progress outside [0, 1] are rejected.
pub fn quartile_accuracy(samples: &[(f64, f64)]) -> Result<[Option<QuartileStat>; 4], EvalError> {
    let mut bins: [Vec<f64>; 4] = Default::default();
    for &(progress, acc) in samples {
        let q = quartile_of(progress)
            .ok_or_else(|| EvalError::InvalidConfig(format!("progress {progress} outside [0, 1]")))?;
        bins[q].push(acc);
    }
    Ok(bins.map(|b| {
        if b.is_empty() {
            return None;
        }
        let n = b.len() as f64;
        let mean = b.iter().sum::<f64>() / n;
        let var = b.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Some(QuartileStat {
            mean,
            std: var.sqrt(),
            count: b.len(),
        })
    }))
}
