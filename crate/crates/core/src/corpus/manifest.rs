use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::schema::AttributeSchema;
use crate::error::{Error, Result};
use crate::prob::ProbabilityVector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRef {
    pub id: String,
    /// As written in the manifest; relative paths resolve against the manifest directory.
    pub path: PathBuf,
}

/// One speaker and their labels, stored as class indices in schema order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerRecord {
    pub speaker_id: String,
    pub labels: Vec<usize>,
    pub clips: Vec<ClipRef>,
}

impl SpeakerRecord {
    pub fn label(&self, schema: &AttributeSchema, attribute: &str) -> Result<usize> {
        Ok(self.labels[schema.index_of(attribute)?])
    }

    pub fn clip_ids(&self) -> impl Iterator<Item = &str> {
        self.clips.iter().map(|c| c.id.as_str())
    }
}

#[derive(Serialize, Deserialize)]
struct SpeakerLine {
    speaker_id: String,
    labels: BTreeMap<String, String>,
    clips: Vec<ClipRef>,
}

/// Schema plus speaker records, with clip lookup by id.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub schema: AttributeSchema,
    pub speakers: Vec<SpeakerRecord>,
    pub base_dir: PathBuf,
    clip_owner: BTreeMap<String, (usize, usize)>,
}

impl Manifest {
    pub fn new(
        schema: AttributeSchema,
        speakers: Vec<SpeakerRecord>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let base_dir = base_dir.into();
        let origin = base_dir.join("manifest.jsonl");
        let invalid = |reason: String| Error::Manifest {
            path: origin.clone(),
            reason,
        };
        schema.validate().map_err(|e| invalid(e.to_string()))?;
        let mut seen = HashSet::new();
        let mut clip_owner = BTreeMap::new();
        for (si, rec) in speakers.iter().enumerate() {
            if !seen.insert(rec.speaker_id.as_str()) {
                return Err(invalid(format!("duplicate speaker id `{}`", rec.speaker_id)));
            }
            if rec.labels.len() != schema.len() {
                return Err(invalid(format!(
                    "speaker `{}` has {} labels, schema has {}",
                    rec.speaker_id,
                    rec.labels.len(),
                    schema.len()
                )));
            }
            for (label, attr) in rec.labels.iter().zip(&schema.attributes) {
                if *label >= attr.class_count() {
                    return Err(invalid(format!(
                        "speaker `{}`: class {label} out of range for `{}`",
                        rec.speaker_id, attr.name
                    )));
                }
            }
            for (ci, clip) in rec.clips.iter().enumerate() {
                if clip_owner.insert(clip.id.clone(), (si, ci)).is_some() {
                    return Err(invalid(format!("duplicate clip id `{}`", clip.id)));
                }
            }
        }
        Ok(Self {
            schema,
            speakers,
            base_dir,
            clip_owner,
        })
    }

    pub fn clip_path(&self, clip: &ClipRef) -> PathBuf {
        if clip.path.is_absolute() {
            clip.path.clone()
        } else {
            self.base_dir.join(&clip.path)
        }
    }

    pub fn speaker_of(&self, clip_id: &str) -> Option<&SpeakerRecord> {
        self.clip_owner.get(clip_id).map(|&(s, _)| &self.speakers[s])
    }

    pub fn clip(&self, clip_id: &str) -> Option<&ClipRef> {
        self.clip_owner
            .get(clip_id)
            .map(|&(s, c)| &self.speakers[s].clips[c])
    }

    /// All clips in manifest order, with their owning speaker.
    pub fn clips(&self) -> impl Iterator<Item = (&SpeakerRecord, &ClipRef)> {
        self.speakers
            .iter()
            .flat_map(|s| s.clips.iter().map(move |c| (s, c)))
    }

    pub fn clip_count(&self) -> usize {
        self.clip_owner.len()
    }

    pub fn label_distribution(&self, attribute: &str) -> Result<ProbabilityVector> {
        label_distribution(&self.schema, &self.speakers, attribute)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &self.schema)?;
        out.push(b'\n');
        for rec in &self.speakers {
            let labels = self
                .schema
                .attributes
                .iter()
                .zip(&rec.labels)
                .map(|(a, &l)| (a.name.clone(), a.classes[l].clone()))
                .collect();
            let line = SpeakerLine {
                speaker_id: rec.speaker_id.clone(),
                labels,
                clips: rec.clips.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Parse and validate a JSON-lines manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let invalid = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| invalid("empty manifest".into()))?;
    let schema: AttributeSchema =
        serde_json::from_str(first).map_err(|e| invalid(format!("schema line: {e}")))?;
    schema.validate().map_err(|e| invalid(e.to_string()))?;

    let mut speakers = Vec::new();
    for (lineno, line) in lines {
        let raw: SpeakerLine = serde_json::from_str(line)
            .map_err(|e| invalid(format!("line {}: {e}", lineno + 1)))?;
        for key in raw.labels.keys() {
            if schema.index_of(key).is_err() {
                return Err(invalid(format!(
                    "speaker `{}`: unknown attribute `{key}`",
                    raw.speaker_id
                )));
            }
        }
        let labels = schema
            .attributes
            .iter()
            .map(|attr| {
                let class = raw.labels.get(&attr.name).ok_or_else(|| {
                    invalid(format!(
                        "speaker `{}` is missing a label for attribute `{}`",
                        raw.speaker_id, attr.name
                    ))
                })?;
                attr.class_index(class).ok_or_else(|| {
                    invalid(format!(
                        "speaker `{}`: unknown class `{class}` for attribute `{}`",
                        raw.speaker_id, attr.name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        speakers.push(SpeakerRecord {
            speaker_id: raw.speaker_id,
            labels,
            clips: raw.clips,
        });
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Manifest::new(schema, speakers, base).map_err(|e| match e {
        Error::Manifest { reason, .. } => invalid(reason),
        other => other,
    })
}

/// Empirical class frequencies over speakers.
pub fn label_distribution(
    schema: &AttributeSchema,
    records: &[SpeakerRecord],
    attribute: &str,
) -> Result<ProbabilityVector> {
    let idx = schema.index_of(attribute)?;
    if records.is_empty() {
        return Err(Error::Data("label distribution of an empty speaker set".into()));
    }
    let mut counts = vec![0.0; schema.attributes[idx].class_count()];
    for rec in records {
        counts[rec.labels[idx]] += 1.0;
    }
    ProbabilityVector::from_weights(&counts)
}
