use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{Architecture, Features, Network, Route, Scaler, TdnnConfig};
use super::train::LrSchedule;
use crate::error::{Error, Result};
use crate::prob::ProbabilityVector;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    pub warmup_fraction: f64,
    /// Mean mini-batch loss over the last ten iterations.
    pub final_loss: f64,
}

/// One attribute's stage-1 classifier.
#[derive(Debug, Clone)]
pub struct AttrClassifier {
    pub attribute: String,
    pub network: Network,
    pub params: Vec<f64>,
    pub init_seed: u64,
    pub train: Option<TrainMeta>,
}

impl PartialEq for AttrClassifier {
    fn eq(&self, other: &Self) -> bool {
        self.attribute == other.attribute
            && self.network.arch == other.network.arch
            && self.network.scaler == other.network.scaler
            && self.params == other.params
            && self.init_seed == other.init_seed
            && self.train == other.train
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    route: Route,
    attribute: String,
    architecture: Architecture,
    scaler: Scaler,
    param_count: usize,
    init_seed: u64,
    /// Little-endian f32, base64.
    weights: String,
    train: Option<TrainMeta>,
}

impl AttrClassifier {
    pub fn new(attribute: &str, arch: Architecture, seed: u64) -> Result<Self> {
        let network = Network::new(arch)?;
        let params = network.init_params(seed);
        let mut clf = Self {
            attribute: attribute.to_string(),
            network,
            params,
            init_seed: seed,
            train: None,
        };
        clf.quantize();
        Ok(clf)
    }

    /// Linear → LeakyReLU for each hidden width, then a class projection.
    pub fn build_embedding_mlp(
        attribute: &str,
        input_dim: usize,
        class_count: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            attribute,
            Architecture::EmbeddingMlp {
                input_dim,
                hidden: hidden.to_vec(),
                classes: class_count,
            },
            seed,
        )
    }

    pub fn build_mfcc_tdnn(
        attribute: &str,
        n_coeffs: usize,
        class_count: usize,
        config: &TdnnConfig,
        seed: u64,
    ) -> Result<Self> {
        Self::new(
            attribute,
            Architecture::MfccTdnn {
                n_coeffs,
                tdnn: config.layers.clone(),
                fc: config.fc.clone(),
                classes: class_count,
            },
            seed,
        )
    }

    pub fn route(&self) -> Route {
        self.network.arch.route()
    }

    pub fn class_count(&self) -> usize {
        self.network.arch.classes()
    }

    /// Round parameters to f32 so stored models reload bit-identically.
    pub(crate) fn quantize(&mut self) {
        self.params.iter_mut().for_each(|w| *w = *w as f32 as f64);
    }

    /// Predicted class (ties to the lowest index) and its distribution.
    pub fn predict(&self, x: &Features) -> Result<(usize, ProbabilityVector)> {
        self.network.check_input(x)?;
        let p = self.network.probabilities(&self.params, &[x]).remove(0);
        Ok((p.argmax(), p))
    }

    /// Batched prediction; chunks run in parallel, output order follows input.
    pub fn predict_all(&self, xs: &[&Features]) -> Result<Vec<(usize, ProbabilityVector)>> {
        for x in xs {
            self.network.check_input(x)?;
        }
        let chunks: Vec<Vec<ProbabilityVector>> = xs
            .par_chunks(PREDICT_CHUNK)
            .map(|c| self.network.probabilities(&self.params, c))
            .collect();
        Ok(chunks
            .into_iter()
            .flatten()
            .map(|p| (p.argmax(), p))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let bytes: Vec<u8> = self
            .params
            .iter()
            .flat_map(|&w| (w as f32).to_le_bytes())
            .collect();
        let env = Envelope {
            format_version: MODEL_FORMAT_VERSION,
            route: self.route(),
            attribute: self.attribute.clone(),
            architecture: self.network.arch.clone(),
            scaler: self.network.scaler.clone(),
            param_count: self.params.len(),
            init_seed: self.init_seed,
            weights: B64.encode(bytes),
            train: self.train.clone(),
        };
        Ok(serde_json::to_string_pretty(&env)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |r: String| Error::format("stage-1 model", r);
        let env: Envelope = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if env.format_version != MODEL_FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {}", env.format_version)));
        }
        if env.route != env.architecture.route() {
            return Err(bad("route does not match architecture".into()));
        }
        let mut network = Network::new(env.architecture)?;
        if env.scaler.mean.len() != network.arch.input_width()
            || env.scaler.std.len() != network.arch.input_width()
        {
            return Err(bad("scaler width does not match the input".into()));
        }
        network.scaler = env.scaler;
        let bytes = B64.decode(env.weights.as_bytes()).map_err(|e| bad(e.to_string()))?;
        if bytes.len() != 4 * network.param_count() || env.param_count != network.param_count() {
            return Err(bad(format!(
                "expected {} weights, found {}",
                network.param_count(),
                bytes.len() / 4
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if params.iter().any(|w| !w.is_finite()) {
            return Err(bad("non-finite weights".into()));
        }
        Ok(Self {
            attribute: env.attribute,
            network,
            params,
            init_seed: env.init_seed,
            train: env.train,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Fraction of exact class matches.
pub fn evaluate_accuracy(clf: &AttrClassifier, data: &[(Features, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let xs: Vec<&Features> = data.iter().map(|(x, _)| x).collect();
    let preds = clf.predict_all(&xs)?;
    let hits = preds
        .iter()
        .zip(data)
        .filter(|((p, _), (_, y))| p == y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}
