//! Speaker-embedding ingestion plus a synthetic stand-in extractor.
//!
//! Real deployments feed vectors produced by external x-vector or ECAPA
//! extractors through the JSON-lines format handled here. For desk-scale
//! runs, [`EmbeddingSynth`] produces vectors with the same structure: a sum of
//! per-class attribute centroids, a persistent per-speaker offset and per-clip
//! noise.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::Manifest;
use super::synth::gaussian;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub source_tag: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub clip_id: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

/// Embeddings keyed by clip id, all of one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub source_tag: String,
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn get(&self, clip_id: &str) -> Option<EmbeddingVector> {
        self.vectors.get(clip_id).map(|v| EmbeddingVector {
            values: v.clone(),
            source_tag: self.source_tag.clone(),
        })
    }

    pub fn insert(&mut self, clip_id: String, values: Vec<f64>) -> Result<()> {
        if self.vectors.is_empty() && self.dim == 0 {
            self.dim = values.len();
        }
        if values.len() != self.dim {
            return Err(Error::Shape {
                expected: format!("{}-dim embedding", self.dim),
                got: format!("{}-dim embedding for `{clip_id}`", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite embedding for `{clip_id}`")));
        }
        self.vectors.insert(clip_id, values);
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for (clip_id, values) in &self.vectors {
            let rec = EmbeddingRecord {
                clip_id: clip_id.clone(),
                dim: values.len(),
                values: values.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>, source_tag: impl Into<String>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = EmbeddingTable {
            source_tag: source_tag.into(),
            ..Default::default()
        };
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: EmbeddingRecord = serde_json::from_str(line).map_err(|e| {
                Error::format(format!("embedding file {}", path.display()), format!("line {}: {e}", i + 1))
            })?;
            if rec.dim != rec.values.len() {
                return Err(Error::format(
                    format!("embedding file {}", path.display()),
                    format!("line {}: dim {} but {} values", i + 1, rec.dim, rec.values.len()),
                ));
            }
            table.insert(rec.clip_id, rec.values)?;
        }
        Ok(table)
    }
}

/// Parameters of the synthetic embedding extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSynth {
    pub source_tag: String,
    pub dim: usize,
    /// Centroid scale per attribute, in schema order.
    pub attribute_scale: Vec<f64>,
    pub speaker_noise: f64,
    pub clip_noise: f64,
    pub seed: u64,
}

impl Default for EmbeddingSynth {
    fn default() -> Self {
        Self::xvector()
    }
}

impl EmbeddingSynth {
    pub fn xvector() -> Self {
        Self {
            source_tag: "xvector".into(),
            dim: 64,
            attribute_scale: vec![2.0, 1.0, 0.9, 0.8],
            speaker_noise: 0.55,
            clip_noise: 0.35,
            seed: 0x5eed_0001,
        }
    }

    pub fn ecapa() -> Self {
        Self {
            source_tag: "ecapa".into(),
            dim: 64,
            attribute_scale: vec![2.0, 1.3, 1.2, 1.1],
            speaker_noise: 0.45,
            clip_noise: 0.25,
            seed: 0x5eed_0002,
        }
    }

    fn stream(&self, key: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.as_bytes());
        let digest = h.finalize();
        ChaCha8Rng::from_seed(digest.into())
    }

    fn gaussian_vector(&self, key: &str, scale: f64) -> Vec<f64> {
        let mut rng = self.stream(key);
        let norm = (self.dim as f64).sqrt();
        (0..self.dim).map(|_| gaussian(&mut rng) * scale / norm).collect()
    }

    /// One vector per clip. Each component is keyed by class, speaker or clip id,
    /// so results do not depend on manifest order.
    pub fn generate(&self, manifest: &Manifest) -> Result<EmbeddingTable> {
        if self.attribute_scale.len() != manifest.schema.len() {
            return Err(Error::Config(format!(
                "embedding synth `{}`: {} attribute scales for {} attributes",
                self.source_tag,
                self.attribute_scale.len(),
                manifest.schema.len()
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut table = EmbeddingTable {
            source_tag: self.source_tag.clone(),
            dim: self.dim,
            vectors: BTreeMap::new(),
        };
        for rec in &manifest.speakers {
            let mut base = self.gaussian_vector(&format!("speaker:{}", rec.speaker_id), self.speaker_noise);
            for (a, (&label, &scale)) in rec.labels.iter().zip(&self.attribute_scale).enumerate() {
                let centroid = self.gaussian_vector(&format!("class:{a}:{label}"), scale);
                base.iter_mut().zip(centroid).for_each(|(b, c)| *b += c);
            }
            for clip in &rec.clips {
                let noise = self.gaussian_vector(&format!("clip:{}", clip.id), self.clip_noise);
                let v = base.iter().zip(noise).map(|(b, n)| b + n).collect();
                table.insert(clip.id.clone(), v)?;
            }
        }
        Ok(table)
    }
}
