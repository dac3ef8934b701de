//! FAR/FRR curves and the equal error rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FAR and FRR at every candidate threshold, ascending, with ±∞ sentinels.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl ErrorCurve {
    /// Distinct finite thresholds, i.e. distinct scores.
    pub fn distinct_scores(&self) -> usize {
        self.thresholds.len() - 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Set when the scores take at most two values, so the curve has no interior.
    pub degenerate: bool,
}

/// Accept when `score >= t`. FAR counts accepted negatives, FRR rejected positives.
pub fn error_curve(scores: &[(f64, bool)]) -> Result<ErrorCurve> {
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Data("non-finite trial score".into()));
    }
    let n_pos = scores.iter().filter(|(_, t)| *t).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "error curve needs both classes (got {n_pos} positive, {n_neg} negative trials)"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut thresholds = vec![f64::NEG_INFINITY];
    let mut far = vec![1.0];
    let mut frr = vec![0.0];
    // positives and negatives strictly below the current threshold
    let mut pos_below = 0usize;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        thresholds.push(t);
        far.push((n_neg - neg_below) as f64 / n_neg as f64);
        frr.push(pos_below as f64 / n_pos as f64);
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    thresholds.push(f64::INFINITY);
    far.push(0.0);
    frr.push(1.0);
    Ok(ErrorCurve {
        thresholds,
        far,
        frr,
        n_pos,
        n_neg,
    })
}

/// EER at the sign change of FAR − FRR, interpolated linearly between the
/// bracketing thresholds. An exact zero of FAR − FRR is taken as is.
pub fn equal_error_rate(curve: &ErrorCurve) -> EerResult {
    let d: Vec<f64> = curve.far.iter().zip(&curve.frr).map(|(a, r)| a - r).collect();
    // d starts at 1 and ends at -1, so a crossing always exists
    let i = d.iter().position(|&v| v <= 0.0).expect("curve ends at FAR - FRR = -1");
    let (eer, threshold) = if d[i] == 0.0 {
        ((curve.far[i] + curve.frr[i]) / 2.0, curve.thresholds[i])
    } else {
        let lambda = d[i - 1] / (d[i - 1] - d[i]);
        let eer = curve.far[i - 1] + lambda * (curve.far[i] - curve.far[i - 1]);
        let (t0, t1) = (curve.thresholds[i - 1], curve.thresholds[i]);
        let threshold = match (t0.is_finite(), t1.is_finite()) {
            (true, true) => t0 + lambda * (t1 - t0),
            (true, false) => t0,
            (false, _) => t1,
        };
        (eer, threshold)
    };
    EerResult {
        eer,
        threshold,
        n_pos: curve.n_pos,
        n_neg: curve.n_neg,
        degenerate: curve.distinct_scores() <= 2,
    }
}

pub fn eer_of(scores: &[(f64, bool)]) -> Result<EerResult> {
    Ok(equal_error_rate(&error_curve(scores)?))
}
