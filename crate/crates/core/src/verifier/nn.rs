//! k → hidden (sigmoid) → 1 (sigmoid), full-batch gradient descent.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bce, check_samples, sigmoid, Sample, StageTwoConfig, StageTwoFitter, StageTwoModel};
use crate::error::{Error, Result};
use crate::metrics::eer_of;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Shuffles per component for permutation importance.
    pub permutation_repeats: usize,
}

impl Default for NnParams {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 500,
            learning_rate: 0.1,
            permutation_repeats: 10,
        }
    }
}

/// Parameters are laid out as W1 (hidden x inputs, row-major), b1, w2, b2.
#[derive(Debug, Clone, PartialEq)]
pub struct NnModel {
    pub inputs: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
    pub repeats: usize,
}

#[derive(Serialize, Deserialize)]
struct NnJson {
    inputs: usize,
    hidden: usize,
    permutation_repeats: usize,
    weights: String,
}

pub fn param_count(inputs: usize, hidden: usize) -> usize {
    hidden * inputs + 2 * hidden + 1
}

fn forward(params: &[f64], inputs: usize, hidden: usize, x: &[f64], h: &mut [f64]) -> f64 {
    let (w1, rest) = params.split_at(hidden * inputs);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(hidden);
    let mut z2 = b2[0];
    for j in 0..hidden {
        let row = &w1[j * inputs..(j + 1) * inputs];
        let z = b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        h[j] = sigmoid(z);
        z2 += w2[j] * h[j];
    }
    sigmoid(z2)
}

/// Mean cross-entropy and its gradient.
pub fn loss_and_gradient(params: &[f64], inputs: usize, hidden: usize, data: &[Sample]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut h = vec![0.0; hidden];
    let n = data.len() as f64;
    let w2 = &params[hidden * inputs + hidden..hidden * inputs + 2 * hidden];
    let mut loss = 0.0;
    for (x, y) in data {
        let p = forward(params, inputs, hidden, x, &mut h);
        loss += bce(p, *y);
        let dz2 = (p - f64::from(u8::from(*y))) / n;
        let (gw1, rest) = grad.split_at_mut(hidden * inputs);
        let (gb1, rest) = rest.split_at_mut(hidden);
        let (gw2, gb2) = rest.split_at_mut(hidden);
        gb2[0] += dz2;
        for j in 0..hidden {
            gw2[j] += dz2 * h[j];
            let dz1 = dz2 * w2[j] * h[j] * (1.0 - h[j]);
            gb1[j] += dz1;
            for (g, v) in gw1[j * inputs..(j + 1) * inputs].iter_mut().zip(x) {
                *g += dz1 * v;
            }
        }
    }
    (loss / n, grad)
}

impl NnModel {
    pub fn init(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; param_count(inputs, hidden)];
        let l1 = (6.0 / (inputs + hidden) as f64).sqrt();
        let l2 = (6.0 / (hidden + 1) as f64).sqrt();
        for w in &mut params[..hidden * inputs] {
            *w = rng.random_range(-l1..=l1);
        }
        let w2 = hidden * inputs + hidden;
        for w in &mut params[w2..w2 + hidden] {
            *w = rng.random_range(-l2..=l2);
        }
        let mut m = Self {
            inputs,
            hidden,
            params,
            repeats: NnParams::default().permutation_repeats,
        };
        m.quantize();
        m
    }

    fn quantize(&mut self) {
        self.params.iter_mut().for_each(|w| *w = *w as f32 as f64);
    }
}

impl StageTwoModel for NnModel {
    fn kind(&self) -> &'static str {
        "nn"
    }

    fn dim(&self) -> usize {
        self.inputs
    }

    fn score_values(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        forward(&self.params, self.inputs, self.hidden, x, &mut h)
    }

    /// Mean EER increase when one component is shuffled across trials.
    fn raw_importance(&self, validation: &[Sample], seed: u64) -> Result<Vec<f64>> {
        if validation.is_empty() {
            return Err(Error::Data("permutation importance needs validation trials".into()));
        }
        let scored = |rows: &[Sample]| -> Result<f64> {
            let s: Vec<(f64, bool)> = rows.iter().map(|(x, y)| (self.score_values(x), *y)).collect();
            Ok(eer_of(&s)?.eer)
        };
        let base = scored(validation)?;
        let mut out = Vec::with_capacity(self.inputs);
        let mut rows = validation.to_vec();
        for j in 0..self.inputs {
            let mut total = 0.0;
            for r in 0..self.repeats.max(1) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((j * self.repeats.max(1) + r) as u64 + 1);
                let mut column: Vec<f64> = validation.iter().map(|(x, _)| x[j]).collect();
                column.shuffle(&mut rng);
                for (row, v) in rows.iter_mut().zip(&column) {
                    row.0[j] = *v;
                }
                total += scored(&rows)? - base;
            }
            for (row, orig) in rows.iter_mut().zip(validation) {
                row.0[j] = orig.0[j];
            }
            out.push((total / self.repeats.max(1) as f64).max(0.0));
        }
        Ok(out)
    }

    fn importance_method(&self) -> &'static str {
        "permutation-eer"
    }

    fn params_json(&self) -> Result<serde_json::Value> {
        let bytes: Vec<u8> = self.params.iter().flat_map(|&w| (w as f32).to_le_bytes()).collect();
        Ok(serde_json::to_value(NnJson {
            inputs: self.inputs,
            hidden: self.hidden,
            permutation_repeats: self.repeats,
            weights: B64.encode(bytes),
        })?)
    }
}

pub struct NnFitter;

impl NnFitter {
    pub fn fit_model(&self, data: &[Sample], params: &NnParams, seed: u64) -> Result<NnModel> {
        let k = check_samples(data, false)?;
        if params.hidden == 0 {
            return Err(Error::Config("nn needs at least one hidden unit".into()));
        }
        let mut m = NnModel::init(k, params.hidden, seed);
        m.repeats = params.permutation_repeats;
        for epoch in 0..params.epochs {
            let (loss, grad) = loss_and_gradient(&m.params, k, params.hidden, data);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { iteration: epoch, loss });
            }
            for (w, g) in m.params.iter_mut().zip(&grad) {
                *w -= params.learning_rate * g;
            }
        }
        m.quantize();
        Ok(m)
    }
}

impl StageTwoFitter for NnFitter {
    fn name(&self) -> &'static str {
        "nn"
    }

    fn fit(&self, data: &[Sample], config: &StageTwoConfig, seed: u64) -> Result<Box<dyn StageTwoModel>> {
        Ok(Box::new(self.fit_model(data, &config.nn, seed)?))
    }

    fn load(&self, params: &serde_json::Value) -> Result<Box<dyn StageTwoModel>> {
        let bad = |r: String| Error::format("nn parameters", r);
        let j: NnJson = serde_json::from_value(params.clone()).map_err(|e| bad(e.to_string()))?;
        let bytes = B64.decode(j.weights.as_bytes()).map_err(|e| bad(e.to_string()))?;
        let want = param_count(j.inputs, j.hidden);
        if bytes.len() != 4 * want || j.hidden == 0 {
            return Err(bad(format!("expected {want} weights, found {}", bytes.len() / 4)));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if params.iter().any(|w| !w.is_finite()) {
            return Err(bad("non-finite weights".into()));
        }
        Ok(Box::new(NnModel {
            inputs: j.inputs,
            hidden: j.hidden,
            params,
            repeats: j.permutation_repeats,
        }))
    }

    fn hyperparameters(&self, config: &StageTwoConfig) -> serde_json::Value {
        serde_json::to_value(&config.nn).unwrap_or_default()
    }
}
