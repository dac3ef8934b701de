use serde::{Deserialize, Serialize};

use super::{check_samples, Sample, StageTwoConfig, StageTwoFitter, StageTwoModel};
use crate::error::{Error, Result};

/// Added to every diagonal entry of the normal matrix.
pub const RIDGE_JITTER: f64 = 1e-8;
/// Cholesky pivots below this fraction of the largest diagonal count as singular.
const PIVOT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinregParams {
    pub ridge: f64,
}

impl Default for LinregParams {
    fn default() -> Self {
        Self { ridge: RIDGE_JITTER }
    }
}

/// Least squares on `[1, x]`; the score is clamped to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinregModel {
    /// Intercept first.
    pub weights: Vec<f64>,
}

impl LinregModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.weights[0] + self.weights[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl StageTwoModel for LinregModel {
    fn kind(&self) -> &'static str {
        "linreg"
    }

    fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    fn score_values(&self, x: &[f64]) -> f64 {
        self.raw_score(x).clamp(0.0, 1.0)
    }

    fn linear_terms(&self) -> Option<(f64, Vec<f64>)> {
        Some((self.weights[0], self.weights[1..].to_vec()))
    }

    fn raw_importance(&self, _: &[Sample], _: u64) -> Result<Vec<f64>> {
        Ok(self.weights[1..].iter().map(|w| w.abs()).collect())
    }

    fn importance_method(&self) -> &'static str {
        "abs-coefficient"
    }

    fn params_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Solve `a x = b` for symmetric positive definite `a` (row-major, n x n).
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > PIVOT_TOLERANCE * max_diag) {
                    return Err(Error::RankDeficient { pivot: i, value: sum });
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Ok(x)
}

pub struct LinregFitter;

fn normal_equations<'a>(
    rows: impl Iterator<Item = (&'a [f64], f64)>,
    n: usize,
    ridge: f64,
) -> Result<LinregModel> {
    let mut ata = vec![0.0; n * n];
    let mut atb = vec![0.0; n];
    let mut row = vec![1.0; n];
    for (x, t) in rows {
        row[1..].copy_from_slice(x);
        for i in 0..n {
            atb[i] += row[i] * t;
            for j in 0..n {
                ata[i * n + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        ata[i * n + i] += ridge;
    }
    Ok(LinregModel {
        weights: cholesky_solve(&ata, &atb, n)?,
    })
}

impl LinregFitter {
    pub fn fit_model(&self, data: &[Sample], params: &LinregParams) -> Result<LinregModel> {
        let k = check_samples(data, false)?;
        if data.len() < k + 1 {
            return Err(Error::Data(format!(
                "linear regression over {k} components needs at least {} samples, got {}",
                k + 1,
                data.len()
            )));
        }
        let rows = data.iter().map(|(x, y)| (x.as_slice(), f64::from(u8::from(*y))));
        normal_equations(rows, k + 1, params.ridge)
    }

    /// Real-valued targets, for exact-recovery checks.
    pub fn fit_real(&self, xs: &[Vec<f64>], ys: &[f64], params: &LinregParams) -> Result<LinregModel> {
        let n = xs.first().map_or(1, |x| x.len() + 1);
        if xs.len() != ys.len() || xs.len() < n || xs.iter().any(|x| x.len() + 1 != n) {
            return Err(Error::Data("linear regression needs k+1 matching samples".into()));
        }
        normal_equations(xs.iter().map(Vec::as_slice).zip(ys.iter().copied()), n, params.ridge)
    }
}

impl StageTwoFitter for LinregFitter {
    fn name(&self) -> &'static str {
        "linreg"
    }

    fn fit(&self, data: &[Sample], config: &StageTwoConfig, _seed: u64) -> Result<Box<dyn StageTwoModel>> {
        Ok(Box::new(self.fit_model(data, &config.linreg)?))
    }

    fn load(&self, params: &serde_json::Value) -> Result<Box<dyn StageTwoModel>> {
        let m: LinregModel = serde_json::from_value(params.clone())
            .map_err(|e| Error::format("linreg parameters", e.to_string()))?;
        if m.weights.is_empty() || m.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::format("linreg parameters", "weights must be finite and non-empty"));
        }
        Ok(Box::new(m))
    }

    fn hyperparameters(&self, config: &StageTwoConfig) -> serde_json::Value {
        serde_json::to_value(&config.linreg).unwrap_or_default()
    }
}
