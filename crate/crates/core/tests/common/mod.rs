//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use attrsv_core::corpus::AttributeSchema;
use attrsv_core::prob::ProbabilityVector;
use attrsv_core::similarity::AttributeOutputs;
use rand::Rng;

/// FAR/FRR by direct counting at every distinct score plus ±∞, then the
/// crossing of the (FAR, FRR) polyline with the diagonal.
pub fn brute_force_eer(scores: &[(f64, bool)]) -> f64 {
    let n_pos = scores.iter().filter(|s| s.1).count() as f64;
    let n_neg = scores.len() as f64 - n_pos;
    let mut ts: Vec<f64> = scores.iter().map(|s| s.0).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(ts);
    thresholds.push(f64::INFINITY);
    let point = |t: f64| {
        let far = scores.iter().filter(|&&(s, y)| !y && s >= t).count() as f64 / n_neg;
        let frr = scores.iter().filter(|&&(s, y)| y && s < t).count() as f64 / n_pos;
        (far, frr)
    };
    let pts: Vec<(f64, f64)> = thresholds.iter().map(|&t| point(t)).collect();
    for w in pts.windows(2) {
        let ((a0, r0), (a1, r1)) = (w[0], w[1]);
        let (d0, d1) = (a0 - r0, a1 - r1);
        if d1 == 0.0 {
            return a1;
        }
        if d0 > 0.0 && d1 < 0.0 {
            let lambda = d0 / (d0 - d1);
            return a0 + lambda * (a1 - a0);
        }
    }
    unreachable!("FAR - FRR goes from 1 to -1")
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn auc(scores: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let mut hits = 0.0;
    for p in &pos {
        for n in &neg {
            hits += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    hits / (pos.len() * neg.len()) as f64
}

/// Largest relative error between `analytic` and central differences of `loss`
/// over the probed coordinates. Coordinates where both are below `floor` count
/// as matching.
pub fn max_relative_gradient_error(
    params: &[f64],
    analytic: &[f64],
    probes: impl IntoIterator<Item = usize>,
    h: f64,
    floor: f64,
    loss: impl Fn(&[f64]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for i in probes {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let diff = (numeric - analytic[i]).abs();
        if diff < floor {
            continue;
        }
        worst = worst.max(diff / numeric.abs().max(analytic[i].abs()));
    }
    worst
}

pub struct ExactSplit {
    pub feature: usize,
    pub threshold: f64,
    /// Gain recomputed in floating point from the winning counts.
    pub gain: f64,
    /// Number of candidates sharing the maximal gain.
    pub ties: usize,
}

/// Best first split by exhaustive threshold scan. Candidates are ranked by
/// exact integer gains (n·Gini = 2·pos·neg/n for each node) so rounding cannot
/// reorder them.
pub fn exhaustive_split(data: &[(Vec<f64>, bool)], min_leaf: usize) -> Option<ExactSplit> {
    let n = data.len() as i128;
    let k = data[0].0.len();
    let total_pos = data.iter().filter(|d| d.1).count() as i128;
    let gini = |pos: i128, m: i128| -> f64 {
        if m == 0 {
            return 0.0;
        }
        let p = pos as f64 / m as f64;
        1.0 - p * p - (1.0 - p) * (1.0 - p)
    };
    // gain · n²·nl·nr
    let scaled = |pl: i128, nl: i128, pr: i128, nr: i128| -> i128 {
        let neg = n - total_pos;
        let (negl, negr) = (nl - pl, nr - pr);
        2 * total_pos * neg * nl * nr - 2 * pl * negl * nr * n - 2 * pr * negr * nl * n
    };
    let mut best: Option<(i128, i128, usize, f64, f64)> = None; // (num, den, feature, threshold, gain)
    let mut ties = 0;
    for f in 0..k {
        let mut values: Vec<f64> = data.iter().map(|d| d.0[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<_> = data.iter().filter(|d| d.0[f] <= t).collect();
            let nl = left.len() as i128;
            let nr = n - nl;
            if (nl as usize) < min_leaf.max(1) || (nr as usize) < min_leaf.max(1) {
                continue;
            }
            let pl = left.iter().filter(|d| d.1).count() as i128;
            let pr = total_pos - pl;
            let num = scaled(pl, nl, pr, nr);
            let den = n * n * nl * nr;
            if num <= 0 {
                continue;
            }
            let gain = gini(total_pos, n) - (nl as f64 / n as f64) * gini(pl, nl) - (nr as f64 / n as f64) * gini(pr, nr);
            match best {
                Some((bn, bd, ..)) if num * bd < bn * den => {}
                Some((bn, bd, ..)) if num * bd == bn * den => ties += 1,
                _ => {
                    best = Some((num, den, f, t, gain));
                    ties = 1;
                }
            }
        }
    }
    best.map(|(_, _, feature, threshold, gain)| ExactSplit {
        feature,
        threshold,
        gain,
        ties,
    })
}

/// A fixed 30-sample, 3-component dataset with a unique best first split.
pub fn gini_dataset() -> Vec<(Vec<f64>, bool)> {
    let xs: [[f64; 3]; 30] = [
        [0.91, 0.12, 0.33],
        [0.85, 0.40, 0.71],
        [0.77, 0.93, 0.05],
        [0.64, 0.27, 0.88],
        [0.58, 0.66, 0.19],
        [0.95, 0.81, 0.52],
        [0.70, 0.09, 0.61],
        [0.88, 0.55, 0.44],
        [0.43, 0.72, 0.97],
        [0.81, 0.36, 0.26],
        [0.62, 0.98, 0.37],
        [0.99, 0.21, 0.83],
        [0.74, 0.47, 0.14],
        [0.52, 0.03, 0.68],
        [0.67, 0.59, 0.09],
        [0.12, 0.88, 0.41],
        [0.35, 0.14, 0.76],
        [0.27, 0.63, 0.22],
        [0.05, 0.31, 0.93],
        [0.48, 0.77, 0.58],
        [0.19, 0.05, 0.11],
        [0.31, 0.95, 0.66],
        [0.08, 0.44, 0.31],
        [0.56, 0.18, 0.49],
        [0.23, 0.69, 0.85],
        [0.39, 0.26, 0.02],
        [0.14, 0.84, 0.74],
        [0.45, 0.51, 0.16],
        [0.02, 0.11, 0.57],
        [0.60, 0.38, 0.29],
    ];
    // mostly separable on component 0 near 0.6, with a few exceptions
    let ys = [
        true, true, true, true, false, true, true, true, false, true, true, true, true, true, true, false, false,
        false, false, false, false, false, false, false, false, false, false, false, false, true,
    ];
    xs.iter().zip(ys).map(|(x, y)| (x.to_vec(), y)).collect()
}

/// A random valid probability vector with `n` classes; sometimes one-hot,
/// sometimes with exact zeros.
pub fn random_probs(rng: &mut impl Rng, n: usize) -> ProbabilityVector {
    match rng.random_range(0..4) {
        0 => ProbabilityVector::one_hot(n, rng.random_range(0..n)),
        1 => {
            let w: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.5) { 0.0 } else { rng.random::<f64>() })
                .collect();
            if w.iter().all(|&v| v == 0.0) {
                ProbabilityVector::one_hot(n, 0)
            } else {
                ProbabilityVector::from_weights(&w).unwrap()
            }
        }
        _ => {
            let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
            ProbabilityVector::softmax(&logits)
        }
    }
}

pub fn random_outputs(rng: &mut impl Rng, schema: &AttributeSchema) -> AttributeOutputs {
    let probs = schema
        .attributes
        .iter()
        .map(|a| random_probs(rng, a.class_count()))
        .collect();
    AttributeOutputs::from_probs(schema, probs).unwrap()
}
