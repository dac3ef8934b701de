use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{AttrClassifier, TrainMeta};
use super::net::{Features, Scaler};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    None,
    /// Linear decay from the base rate to a tenth of it over the run.
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    /// Share of the run spent ramping the rate up linearly from zero.
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5_000,
            batch_size: 256,
            learning_rate: 0.2,
            momentum: 0.5,
            lr_schedule: LrSchedule::LinearDecay,
            warmup_fraction: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 100k iterations, for full-size runs.
    pub fn full() -> Self {
        Self {
            iterations: 100_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("training: {m}")));
        if self.iterations == 0 || self.batch_size == 0 {
            return bad("iterations and batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be a non-negative finite number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn rate_at(&self, iteration: usize) -> f64 {
        let base = match self.lr_schedule {
            LrSchedule::None => self.learning_rate,
            LrSchedule::LinearDecay => {
                let frac = iteration as f64 / self.iterations as f64;
                self.learning_rate * (1.0 - 0.9 * frac)
            }
        };
        let warmup = (self.warmup_fraction * self.iterations as f64).ceil() as usize;
        if iteration < warmup {
            base * (iteration + 1) as f64 / warmup as f64
        } else {
            base
        }
    }
}

/// Mini-batch SGD with classical momentum on mean cross-entropy.
pub fn train(
    classifier: AttrClassifier,
    data: &[(Features, usize)],
    cfg: &TrainConfig,
) -> Result<AttrClassifier> {
    train_with_observer(classifier, data, cfg, |_, _| {})
}

/// As [`train`], calling `observe(iteration, batch_loss)` after every step.
pub fn train_with_observer(
    mut classifier: AttrClassifier,
    data: &[(Features, usize)],
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<AttrClassifier> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let classes = classifier.network.arch.classes();
    for (x, y) in data {
        if *y >= classes {
            return Err(Error::LabelOutOfRange { label: *y, classes });
        }
        classifier.network.check_input(x)?;
    }

    let width = classifier.network.arch.input_width();
    classifier.network.scaler = Scaler::fit(
        width,
        data.iter().flat_map(|(x, _)| match x {
            Features::Vector(v) => vec![v.as_slice()],
            Features::Frames(m) => (0..m.frames).map(|t| m.row(t)).collect(),
        }),
    );
    let net = &classifier.network;
    let params = &mut classifier.params;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut velocity = vec![0.0; params.len()];
    let mut grad = vec![0.0; params.len()];
    let mut recent = std::collections::VecDeque::with_capacity(10);

    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (x, y) = &data[order[cursor]];
            batch.push(x);
            labels.push(*y);
            cursor += 1;
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = net.loss_and_gradient(params, &batch, &labels, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it, loss });
        }
        let lr = cfg.rate_at(it);
        for ((w, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *v = cfg.momentum * *v - lr * g;
            *w += *v;
        }
        if recent.len() == 10 {
            recent.pop_front();
        }
        recent.push_back(loss);
        observe(it, loss);
    }

    classifier.quantize();
    classifier.train = Some(TrainMeta {
        seed: cfg.seed,
        iterations: cfg.iterations,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        lr_schedule: cfg.lr_schedule,
        warmup_fraction: cfg.warmup_fraction,
        final_loss: recent.iter().sum::<f64>() / recent.len() as f64,
    });
    Ok(classifier)
}
