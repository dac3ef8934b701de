//! Stage-2 verifiers: similarity vector in, same-speaker score out.
//!
//! Model kinds sit behind [`StageTwoFitter`] and are looked up by name in a
//! [`Registry`], so the CLI and config select them as plain strings.

mod forest;
mod linreg;
mod logreg;
mod nn;

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeSchema, TrialPair};
use crate::error::{Error, Result};
use crate::similarity::{SimilarityMode, SimilarityVector};

pub use forest::{best_split, gini, ForestFitter, ForestModel, ForestParams, Split, Tree, TreeNode};
pub use linreg::{LinregFitter, LinregModel, LinregParams, RIDGE_JITTER};
pub use logreg::{logreg_loss_and_gradient, LogregFitter, LogregModel, LogregParams};
pub use nn::{loss_and_gradient as nn_loss_and_gradient, param_count as nn_param_count, NnFitter, NnModel, NnParams};

pub const VERIFIER_FORMAT_VERSION: u32 = 1;

/// Training or evaluation rows: similarity components and the target bit.
pub type Sample = (Vec<f64>, bool);

/// A fitted stage-2 model over `dim()` similarity components.
pub trait StageTwoModel: Debug + Send + Sync {
    fn kind(&self) -> &'static str;
    fn dim(&self) -> usize;
    /// Higher means more likely same speaker.
    fn score_values(&self, x: &[f64]) -> f64;
    /// Intercept and weights when the pre-activation score is linear in the input.
    fn linear_terms(&self) -> Option<(f64, Vec<f64>)> {
        None
    }
    /// Unnormalised non-negative importance per component.
    fn raw_importance(&self, validation: &[Sample], seed: u64) -> Result<Vec<f64>>;
    fn importance_method(&self) -> &'static str;
    fn params_json(&self) -> Result<serde_json::Value>;
}

/// Hyperparameters for every registered kind; each fitter reads its own section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct StageTwoConfig {
    pub linreg: LinregParams,
    pub logreg: LogregParams,
    pub forest: ForestParams,
    pub nn: NnParams,
}

pub trait StageTwoFitter: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, data: &[Sample], config: &StageTwoConfig, seed: u64) -> Result<Box<dyn StageTwoModel>>;
    fn load(&self, params: &serde_json::Value) -> Result<Box<dyn StageTwoModel>>;
    /// This kind's section of the config, recorded in model files.
    fn hyperparameters(&self, config: &StageTwoConfig) -> serde_json::Value;
}

/// Fitters by name.
pub struct Registry {
    fitters: BTreeMap<&'static str, Box<dyn StageTwoFitter>>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(LinregFitter));
        r.register(Box::new(LogregFitter));
        r.register(Box::new(ForestFitter));
        r.register(Box::new(NnFitter));
        r
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            fitters: BTreeMap::new(),
        }
    }

    /// Later registrations replace earlier ones of the same name.
    pub fn register(&mut self, fitter: Box<dyn StageTwoFitter>) {
        self.fitters.insert(fitter.name(), fitter);
    }

    pub fn get(&self, name: &str) -> Result<&dyn StageTwoFitter> {
        self.fitters
            .get(name)
            .map(|f| f.as_ref())
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.fitters.keys().copied().collect()
    }
}

pub(crate) fn check_samples(data: &[Sample], need_both: bool) -> Result<usize> {
    let Some((first, _)) = data.first() else {
        return Err(Error::Data("stage-2 training set is empty".into()));
    };
    let k = first.len();
    if data.iter().any(|(x, _)| x.len() != k || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("stage-2 samples must be finite and of equal length".into()));
    }
    if need_both {
        let pos = data.iter().filter(|(_, y)| *y).count();
        if pos == 0 || pos == data.len() {
            return Err(Error::Data("stage-2 training needs positive and negative trials".into()));
        }
    }
    Ok(k)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a probability against a target bit, clamped away from log(0).
pub(crate) fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub trial: TrialPair,
    pub score: f64,
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    trial: [String; 2],
    target: u8,
    score: f64,
}

pub fn write_score_dump(path: impl AsRef<Path>, scores: &[TrialScore]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for s in scores {
        let line = ScoreLine {
            trial: [s.trial.clip_a.clone(), s.trial.clip_b.clone()],
            target: u8::from(s.trial.target),
            score: s.score,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_score_dump(path: impl AsRef<Path>) -> Result<Vec<TrialScore>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line: ScoreLine = serde_json::from_str(l).map_err(|e| {
                Error::format(format!("score dump {}", path.display()), format!("line {}: {e}", i + 1))
            })?;
            Ok(TrialScore {
                trial: TrialPair {
                    clip_a: line.trial[0].clone(),
                    clip_b: line.trial[1].clone(),
                    target: line.target == 1,
                },
                score: line.score,
            })
        })
        .collect()
}

/// Normalised per-attribute importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub method: String,
    pub attributes: Vec<String>,
    pub weights: Vec<f64>,
}

impl ImportanceReport {
    /// Scale to sum 1; all-zero input becomes uniform.
    pub fn normalized(method: &str, attributes: Vec<String>, raw: &[f64]) -> Self {
        let total: f64 = raw.iter().map(|w| w.max(0.0)).sum();
        let weights = if total > 0.0 {
            raw.iter().map(|w| w.max(0.0) / total).collect()
        } else {
            vec![1.0 / raw.len().max(1) as f64; raw.len()]
        };
        Self {
            method: method.to_string(),
            attributes,
            weights,
        }
    }

    pub fn weight(&self, attribute: &str) -> Option<f64> {
        self.attributes
            .iter()
            .position(|a| a == attribute)
            .map(|i| self.weights[i])
    }

    /// Attribute names by decreasing weight; ties keep schema order.
    pub fn ranking(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.weights.len()).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]));
        idx.into_iter().map(|i| self.attributes[i].as_str()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct VerifierEnvelope {
    format_version: u32,
    kind: String,
    schema_hash: String,
    mode: SimilarityMode,
    components: Vec<String>,
    component_indices: Vec<usize>,
    seed: u64,
    hyperparameters: serde_json::Value,
    params: serde_json::Value,
}

/// A fitted model bound to a schema and a choice of similarity components.
#[derive(Debug)]
pub struct Verifier {
    pub kind: String,
    pub schema_hash: String,
    pub mode: SimilarityMode,
    /// Attribute names used, in schema order.
    pub components: Vec<String>,
    pub component_indices: Vec<usize>,
    pub seed: u64,
    pub hyperparameters: serde_json::Value,
    pub model: Box<dyn StageTwoModel>,
}

impl Verifier {
    /// Fit `kind` on the components named in `attributes` (all when `None`).
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        registry: &Registry,
        kind: &str,
        schema: &AttributeSchema,
        attributes: Option<&[String]>,
        mode: SimilarityMode,
        data: &[(SimilarityVector, bool)],
        config: &StageTwoConfig,
        seed: u64,
    ) -> Result<Self> {
        let fitter = registry.get(kind)?;
        let component_indices = match attributes {
            None => (0..schema.len()).collect(),
            Some(names) => {
                let mut idx = names.iter().map(|n| schema.index_of(n)).collect::<Result<Vec<_>>>()?;
                idx.sort_unstable();
                idx.dedup();
                idx
            }
        };
        let components = component_indices
            .iter()
            .map(|&i| schema.attributes[i].name.clone())
            .collect();
        let hash = schema.hash();
        let mut rows = Vec::with_capacity(data.len());
        for (sv, y) in data {
            rows.push((select(sv, &hash, schema.len(), &component_indices)?, *y));
        }
        let model = fitter.fit(&rows, config, seed)?;
        Ok(Self {
            kind: fitter.name().to_string(),
            schema_hash: hash,
            mode,
            components,
            component_indices,
            seed,
            hyperparameters: fitter.hyperparameters(config),
            model,
        })
    }

    /// Project a full similarity vector onto this model's components.
    pub fn project(&self, sv: &SimilarityVector) -> Result<Vec<f64>> {
        if sv.schema_hash != self.schema_hash {
            return Err(Error::SchemaMismatch(format!(
                "similarity vector from schema {}, model expects {}",
                sv.schema_hash, self.schema_hash
            )));
        }
        if self.component_indices.iter().any(|&i| i >= sv.values.len()) {
            return Err(Error::Shape {
                expected: format!("similarity vector covering components {:?}", self.component_indices),
                got: format!("{} components", sv.values.len()),
            });
        }
        Ok(self.component_indices.iter().map(|&i| sv.values[i]).collect())
    }

    pub fn score(&self, sv: &SimilarityVector) -> Result<f64> {
        Ok(self.model.score_values(&self.project(sv)?))
    }

    pub fn score_trials(&self, data: &[(TrialPair, SimilarityVector)]) -> Result<Vec<TrialScore>> {
        data.iter()
            .map(|(t, sv)| {
                Ok(TrialScore {
                    trial: t.clone(),
                    score: self.score(sv)?,
                })
            })
            .collect()
    }

    pub fn importance(&self, validation: &[(SimilarityVector, bool)]) -> Result<ImportanceReport> {
        let rows = validation
            .iter()
            .map(|(sv, y)| Ok((self.project(sv)?, *y)))
            .collect::<Result<Vec<_>>>()?;
        let raw = self.model.raw_importance(&rows, self.seed)?;
        Ok(ImportanceReport::normalized(
            self.model.importance_method(),
            self.components.clone(),
            &raw,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        let env = VerifierEnvelope {
            format_version: VERIFIER_FORMAT_VERSION,
            kind: self.kind.clone(),
            schema_hash: self.schema_hash.clone(),
            mode: self.mode,
            components: self.components.clone(),
            component_indices: self.component_indices.clone(),
            seed: self.seed,
            hyperparameters: self.hyperparameters.clone(),
            params: self.model.params_json()?,
        };
        Ok(serde_json::to_string_pretty(&env)?)
    }

    pub fn from_json(registry: &Registry, text: &str) -> Result<Self> {
        let env: VerifierEnvelope =
            serde_json::from_str(text).map_err(|e| Error::format("stage-2 model", e.to_string()))?;
        if env.format_version != VERIFIER_FORMAT_VERSION {
            return Err(Error::format(
                "stage-2 model",
                format!("unsupported format_version {}", env.format_version),
            ));
        }
        let model = registry.get(&env.kind)?.load(&env.params)?;
        if model.dim() != env.component_indices.len() || env.components.len() != env.component_indices.len() {
            return Err(Error::format("stage-2 model", "component list does not match parameters"));
        }
        Ok(Self {
            kind: env.kind,
            schema_hash: env.schema_hash,
            mode: env.mode,
            components: env.components,
            component_indices: env.component_indices,
            seed: env.seed,
            hyperparameters: env.hyperparameters,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(registry: &Registry, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(registry, &std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn select(sv: &SimilarityVector, hash: &str, len: usize, idx: &[usize]) -> Result<Vec<f64>> {
    if sv.schema_hash != hash || sv.values.len() != len {
        return Err(Error::SchemaMismatch(format!(
            "similarity vector from schema {} with {} components, expected {hash} with {len}",
            sv.schema_hash,
            sv.values.len()
        )));
    }
    Ok(idx.iter().map(|&i| sv.values[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> AttributeSchema {
        AttributeSchema::with_counts([2, 4, 3, 10]).unwrap()
    }

    fn sv(values: [f64; 4]) -> SimilarityVector {
        SimilarityVector {
            values: values.to_vec(),
            mode: SimilarityMode::Hard,
            schema_hash: schema().hash(),
        }
    }

    /// Target is a noisy function of profession and gender agreement.
    fn data() -> Vec<(SimilarityVector, bool)> {
        (0..400)
            .map(|i| {
                let bits = [(i % 2) as f64, ((i / 2) % 2) as f64, ((i / 4) % 2) as f64, ((i / 8) % 2) as f64];
                let y = bits[3] == 1.0 && (bits[0] == 1.0 || i % 7 == 0);
                (sv(bits), y)
            })
            .collect()
    }

    #[test]
    fn registry_lists_and_rejects() {
        let r = Registry::default();
        assert_eq!(r.names(), vec!["forest", "linreg", "logreg", "nn"]);
        assert!(matches!(r.get("svm"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn every_kind_round_trips_and_is_monotone_on_extremes() {
        let r = Registry::default();
        let d = data();
        for kind in r.names() {
            let v = Verifier::fit(&r, kind, &schema(), None, SimilarityMode::Hard, &d, &StageTwoConfig::default(), 4)
                .unwrap();
            let back = Verifier::from_json(&r, &v.to_json().unwrap()).unwrap();
            assert_eq!(back.to_json().unwrap(), v.to_json().unwrap(), "{kind}");
            for (x, _) in &d {
                assert_eq!(back.score(x).unwrap(), v.score(x).unwrap());
            }
            let ones = v.score(&sv([1.0; 4])).unwrap();
            let zeros = v.score(&sv([0.0; 4])).unwrap();
            assert!(ones > zeros, "{kind}: {ones} vs {zeros}");
            let imp = v.importance(&d).unwrap();
            assert!((imp.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(imp.ranking()[0], "profession", "{kind}: {imp:?}");
        }
    }

    #[test]
    fn masked_fit_uses_named_components() {
        let r = Registry::default();
        let names = vec!["profession".to_string()];
        let v = Verifier::fit(
            &r,
            "logreg",
            &schema(),
            Some(&names),
            SimilarityMode::Hard,
            &data(),
            &StageTwoConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(v.component_indices, vec![3]);
        assert_eq!(v.model.dim(), 1);
        let bad = SimilarityVector {
            schema_hash: "ffffffffffffffff".into(),
            ..sv([1.0; 4])
        };
        assert!(matches!(v.score(&bad), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn importance_normalisation() {
        let r = ImportanceReport::normalized("abs", vec!["a".into(), "b".into(), "c".into(), "d".into()], &[0.2, 0.6, 0.2, 0.0]);
        assert_eq!(r.weights, vec![0.2, 0.6, 0.2, 0.0]);
        let u = ImportanceReport::normalized("abs", vec!["a".into(), "b".into()], &[0.0, 0.0]);
        assert_eq!(u.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn score_dump_round_trip() {
        let scores = vec![
            TrialScore {
                trial: TrialPair {
                    clip_a: "a".into(),
                    clip_b: "b".into(),
                    target: true,
                },
                score: 0.1 + 0.2,
            },
            TrialScore {
                trial: TrialPair {
                    clip_a: "c".into(),
                    clip_b: "d".into(),
                    target: false,
                },
                score: 1.0 / 3.0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        write_score_dump(&p, &scores).unwrap();
        assert_eq!(read_score_dump(&p).unwrap(), scores);
    }
}
