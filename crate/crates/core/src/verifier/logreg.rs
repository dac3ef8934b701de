use serde::{Deserialize, Serialize};

use super::{bce, check_samples, sigmoid, Sample, StageTwoConfig, StageTwoFitter, StageTwoModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogregParams {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LogregParams {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogregModel {
    /// Intercept first.
    pub weights: Vec<f64>,
    pub final_loss: f64,
}

impl LogregModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights[0] + self.weights[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl StageTwoModel for LogregModel {
    fn kind(&self) -> &'static str {
        "logreg"
    }

    fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    fn score_values(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
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

/// Mean cross-entropy of `sigmoid(w · [1, x])` and its gradient.
pub fn logreg_loss_and_gradient(weights: &[f64], data: &[Sample]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    let n = data.len() as f64;
    for (x, y) in data {
        let z = weights[0] + weights[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let p = sigmoid(z);
        loss += bce(p, *y);
        let r = (p - f64::from(u8::from(*y))) / n;
        grad[0] += r;
        for (g, v) in grad[1..].iter_mut().zip(x) {
            *g += r * v;
        }
    }
    (loss / n, grad)
}

pub struct LogregFitter;

impl LogregFitter {
    /// Full-batch gradient descent from zero weights.
    pub fn fit_model(&self, data: &[Sample], params: &LogregParams) -> Result<LogregModel> {
        let k = check_samples(data, true)?;
        let mut w = vec![0.0; k + 1];
        let mut loss = logreg_loss_and_gradient(&w, data).0;
        for epoch in 0..params.epochs {
            let (l, g) = logreg_loss_and_gradient(&w, data);
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { iteration: epoch, loss: l });
            }
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= params.learning_rate * gi;
            }
            loss = l;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration: params.epochs,
                loss,
            });
        }
        let final_loss = logreg_loss_and_gradient(&w, data).0;
        Ok(LogregModel {
            weights: w,
            final_loss,
        })
    }
}

impl StageTwoFitter for LogregFitter {
    fn name(&self) -> &'static str {
        "logreg"
    }

    fn fit(&self, data: &[Sample], config: &StageTwoConfig, _seed: u64) -> Result<Box<dyn StageTwoModel>> {
        Ok(Box::new(self.fit_model(data, &config.logreg)?))
    }

    fn load(&self, params: &serde_json::Value) -> Result<Box<dyn StageTwoModel>> {
        let m: LogregModel = serde_json::from_value(params.clone())
            .map_err(|e| Error::format("logreg parameters", e.to_string()))?;
        if m.weights.is_empty() || m.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::format("logreg parameters", "weights must be finite and non-empty"));
        }
        Ok(Box::new(m))
    }

    fn hyperparameters(&self, config: &StageTwoConfig) -> serde_json::Value {
        serde_json::to_value(&config.logreg).unwrap_or_default()
    }
}
