//! Per-attribute similarity vectors for utterance pairs.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeSchema, SpeakerRecord, TrialPair};
use crate::error::{Error, Result};
use crate::prob::ProbabilityVector;

/// Guard on the cosine denominator.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    Hard,
    Softmax,
}

impl SimilarityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityMode::Hard => "hard",
            SimilarityMode::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(SimilarityMode::Hard),
            "softmax" => Ok(SimilarityMode::Softmax),
            other => Err(Error::Config(format!("unknown similarity mode `{other}`"))),
        }
    }
}

/// Stage-1 outputs for one clip: predicted class and distribution per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeOutputs {
    pub schema_hash: String,
    pub classes: Vec<usize>,
    pub probs: Vec<ProbabilityVector>,
}

impl AttributeOutputs {
    pub fn new(schema: &AttributeSchema, classes: Vec<usize>, probs: Vec<ProbabilityVector>) -> Result<Self> {
        if classes.len() != schema.len() || probs.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} predictions for a {}-attribute schema",
                classes.len().min(probs.len()),
                schema.len()
            )));
        }
        for ((attr, &c), p) in schema.attributes.iter().zip(&classes).zip(&probs) {
            if p.len() != attr.class_count() || c >= attr.class_count() {
                return Err(Error::SchemaMismatch(format!(
                    "attribute `{}` has {} classes, got class {c} with {} probabilities",
                    attr.name,
                    attr.class_count(),
                    p.len()
                )));
            }
        }
        Ok(Self {
            schema_hash: schema.hash(),
            classes,
            probs,
        })
    }

    /// Classes taken as the argmax of each distribution.
    pub fn from_probs(schema: &AttributeSchema, probs: Vec<ProbabilityVector>) -> Result<Self> {
        let classes = probs.iter().map(ProbabilityVector::argmax).collect();
        Self::new(schema, classes, probs)
    }

    /// One-hot outputs for known labels.
    pub fn from_labels(schema: &AttributeSchema, labels: &[usize]) -> Result<Self> {
        let probs = schema
            .attributes
            .iter()
            .zip(labels)
            .map(|(a, &l)| {
                if l < a.class_count() {
                    Ok(ProbabilityVector::one_hot(a.class_count(), l))
                } else {
                    Err(Error::LabelOutOfRange {
                        label: l,
                        classes: a.class_count(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(schema, labels.to_vec(), probs)
    }
}

/// Similarity components in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector {
    pub values: Vec<f64>,
    pub mode: SimilarityMode,
    pub schema_hash: String,
}

impl SimilarityVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_pair(a: &AttributeOutputs, b: &AttributeOutputs) -> Result<()> {
    if a.schema_hash != b.schema_hash || a.classes.len() != b.classes.len() {
        return Err(Error::SchemaMismatch(format!(
            "outputs from schemas {} and {}",
            a.schema_hash, b.schema_hash
        )));
    }
    Ok(())
}

/// 1.0 where predicted classes agree, else 0.0.
pub fn hard_similarity(a: &AttributeOutputs, b: &AttributeOutputs) -> Result<SimilarityVector> {
    check_pair(a, b)?;
    Ok(SimilarityVector {
        values: a
            .classes
            .iter()
            .zip(&b.classes)
            .map(|(x, y)| f64::from(u8::from(x == y)))
            .collect(),
        mode: SimilarityMode::Hard,
        schema_hash: a.schema_hash.clone(),
    })
}

pub fn cosine(p: &[f64], q: &[f64]) -> f64 {
    let dot: f64 = p.iter().zip(q).map(|(x, y)| x * y).sum();
    let np = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (np * nq).max(COSINE_EPS)
}

/// Cosine between the two distributions of each attribute.
pub fn softmax_similarity(a: &AttributeOutputs, b: &AttributeOutputs) -> Result<SimilarityVector> {
    check_pair(a, b)?;
    let values = a
        .probs
        .iter()
        .zip(&b.probs)
        .map(|(p, q)| {
            if p.len() != q.len() {
                return Err(Error::SchemaMismatch(format!(
                    "probability vectors of length {} and {}",
                    p.len(),
                    q.len()
                )));
            }
            // valid inputs are non-negative, so only rounding can leave [0,1]
            Ok(cosine(p.as_slice(), q.as_slice()).clamp(0.0, 1.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityVector {
        values,
        mode: SimilarityMode::Softmax,
        schema_hash: a.schema_hash.clone(),
    })
}

pub fn similarity(mode: SimilarityMode, a: &AttributeOutputs, b: &AttributeOutputs) -> Result<SimilarityVector> {
    match mode {
        SimilarityMode::Hard => hard_similarity(a, b),
        SimilarityMode::Softmax => softmax_similarity(a, b),
    }
}

/// Hard similarity of the true manifest labels.
pub fn groundtruth_similarity(
    schema: &AttributeSchema,
    a: &SpeakerRecord,
    b: &SpeakerRecord,
) -> Result<SimilarityVector> {
    if a.labels.len() != schema.len() || b.labels.len() != schema.len() {
        return Err(Error::SchemaMismatch(format!(
            "speakers `{}` and `{}` do not carry {} labels",
            a.speaker_id,
            b.speaker_id,
            schema.len()
        )));
    }
    Ok(SimilarityVector {
        values: a
            .labels
            .iter()
            .zip(&b.labels)
            .map(|(x, y)| f64::from(u8::from(x == y)))
            .collect(),
        mode: SimilarityMode::Hard,
        schema_hash: schema.hash(),
    })
}

fn draw(p: &ProbabilityVector, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.as_slice().iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum; take the last class with mass
    p.as_slice().iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Two independent label draws per attribute; 1.0 where they collide.
pub fn random_similarity(
    schema: &AttributeSchema,
    distributions: &[ProbabilityVector],
    seed: u64,
) -> Result<SimilarityVector> {
    random_similarity_with(schema, distributions, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_similarity_with(
    schema: &AttributeSchema,
    distributions: &[ProbabilityVector],
    rng: &mut impl Rng,
) -> Result<SimilarityVector> {
    if distributions.len() != schema.len() {
        return Err(Error::SchemaMismatch(format!(
            "{} distributions for a {}-attribute schema",
            distributions.len(),
            schema.len()
        )));
    }
    for (attr, d) in schema.attributes.iter().zip(distributions) {
        if d.len() != attr.class_count() {
            return Err(Error::SchemaMismatch(format!(
                "distribution for `{}` has {} entries, expected {}",
                attr.name,
                d.len(),
                attr.class_count()
            )));
        }
    }
    let values = distributions
        .iter()
        .map(|d| f64::from(u8::from(draw(d, rng) == draw(d, rng))))
        .collect();
    Ok(SimilarityVector {
        values,
        mode: SimilarityMode::Hard,
        schema_hash: schema.hash(),
    })
}

/// One line of a similarity dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub trial: [String; 2],
    pub target: u8,
    pub mode: SimilarityMode,
    pub schema_hash: String,
    pub values: Vec<f64>,
}

impl SimilarityRecord {
    pub fn new(trial: &TrialPair, sv: &SimilarityVector) -> Self {
        Self {
            trial: [trial.clip_a.clone(), trial.clip_b.clone()],
            target: u8::from(trial.target),
            mode: sv.mode,
            schema_hash: sv.schema_hash.clone(),
            values: sv.values.clone(),
        }
    }

    pub fn vector(&self) -> SimilarityVector {
        SimilarityVector {
            values: self.values.clone(),
            mode: self.mode,
            schema_hash: self.schema_hash.clone(),
        }
    }
}

pub fn write_similarity_dump(path: impl AsRef<Path>, records: &[SimilarityRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Reads a dump, refusing lines whose schema hash differs from `schema_hash`.
pub fn read_similarity_dump(path: impl AsRef<Path>, schema_hash: &str) -> Result<Vec<SimilarityRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let r: SimilarityRecord = serde_json::from_str(line).map_err(|e| {
                Error::format(format!("similarity dump {}", path.display()), format!("line {}: {e}", i + 1))
            })?;
            if r.schema_hash != schema_hash {
                return Err(Error::SchemaMismatch(format!(
                    "{} line {} has schema {}, expected {schema_hash}",
                    path.display(),
                    i + 1,
                    r.schema_hash
                )));
            }
            Ok(r)
        })
        .collect()
}
