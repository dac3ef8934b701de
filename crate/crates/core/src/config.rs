//! Run configuration: one TOML file, dotted-key overrides, a content fingerprint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attrnet::{TdnnConfig, TrainConfig};
use crate::corpus::{AttributeSchema, EmbeddingSynth, SynthSpec};
use crate::dsp::MfccConfig;
use crate::error::{Error, Result};
use crate::similarity::SimilarityMode;
use crate::verifier::{Registry, StageTwoConfig};

pub const SEED_ENV: &str = "ATTRSV_SEED";
pub const AC_ROUTE: &str = "ac";
pub const GROUNDTRUTH_ROUTE: &str = "groundtruth";
pub const RANDOM_ROUTE: &str = "random";

/// Artifact directories, relative to the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// `train/manifest.jsonl` and `test/manifest.jsonl` live here.
    pub corpus: PathBuf,
    pub features: PathBuf,
    pub embeddings: PathBuf,
    pub models: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus".into(),
            features: "features".into(),
            embeddings: "embeddings".into(),
            models: "models".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train: SynthSpec,
    pub test: SynthSpec,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            train: SynthSpec::default(),
            test: SynthSpec {
                speakers: 40,
                clips_per_speaker: 20,
                speaker_prefix: "tst".into(),
                ..SynthSpec::default()
            },
        }
    }
}

/// MFCC-TDNN attribute classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcSection {
    pub tdnn: TdnnConfig,
    pub train: TrainConfig,
    /// Replaces `train` for the named attributes.
    pub per_attribute: BTreeMap<String, TrainConfig>,
}

impl Default for AcSection {
    fn default() -> Self {
        Self {
            tdnn: TdnnConfig::with_channels(48, 64),
            train: TrainConfig {
                iterations: 1_200,
                batch_size: 32,
                ..TrainConfig::default()
            },
            per_attribute: BTreeMap::new(),
        }
    }
}

/// Embedding-MLP attribute classifiers, shared by every embedding route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSection {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub per_attribute: BTreeMap<String, TrainConfig>,
}

impl Default for MlpSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            train: TrainConfig {
                iterations: 1_500,
                batch_size: 64,
                ..TrainConfig::default()
            },
            per_attribute: BTreeMap::new(),
        }
    }
}

/// Where an embedding route gets its vectors: files when given, else the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSource {
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub synth: EmbeddingSynth,
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        Self {
            train_file: None,
            test_file: None,
            synth: EmbeddingSynth::xvector(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Section {
    /// `ac` plus any keys of `embeddings`.
    pub routes: Vec<String>,
    pub ac: AcSection,
    pub mlp: MlpSection,
}

impl Default for Stage1Section {
    fn default() -> Self {
        Self {
            routes: vec![AC_ROUTE.into(), "xvector".into(), "ecapa".into()],
            ac: AcSection::default(),
            mlp: MlpSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialsSection {
    pub train_pos: usize,
    pub train_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
}

impl Default for TrialsSection {
    fn default() -> Self {
        Self {
            train_pos: 10_000,
            train_neg: 10_000,
            test_pos: 6_000,
            test_neg: 6_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Section {
    pub kinds: Vec<String>,
    pub modes: Vec<SimilarityMode>,
    pub linreg: crate::verifier::LinregParams,
    pub logreg: crate::verifier::LogregParams,
    pub forest: crate::verifier::ForestParams,
    pub nn: crate::verifier::NnParams,
}

impl Default for Stage2Section {
    fn default() -> Self {
        let p = StageTwoConfig::default();
        Self {
            kinds: ["linreg", "logreg", "forest", "nn"].map(String::from).to_vec(),
            modes: vec![SimilarityMode::Hard, SimilarityMode::Softmax],
            linreg: p.linreg,
            logreg: p.logreg,
            forest: p.forest,
            nn: p.nn,
        }
    }
}

impl Stage2Section {
    pub fn params(&self) -> StageTwoConfig {
        StageTwoConfig {
            linreg: self.linreg.clone(),
            logreg: self.logreg.clone(),
            forest: self.forest.clone(),
            nn: self.nn.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Stage-2 kinds refitted on one similarity component for the per-attribute table.
    pub single_attribute_kinds: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            single_attribute_kinds: vec!["logreg".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every other seed in the run is derived from this one.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSection,
    pub mfcc: MfccConfig,
    pub stage1: Stage1Section,
    pub embeddings: BTreeMap<String, EmbeddingSource>,
    pub trials: TrialsSection,
    pub stage2: Stage2Section,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut embeddings = BTreeMap::new();
        embeddings.insert("xvector".to_string(), EmbeddingSource::default());
        embeddings.insert(
            "ecapa".to_string(),
            EmbeddingSource {
                synth: EmbeddingSynth::ecapa(),
                ..EmbeddingSource::default()
            },
        );
        Self {
            seed: 7,
            paths: Paths::default(),
            synth: SynthSection::default(),
            mfcc: MfccConfig::default(),
            stage1: Stage1Section::default(),
            embeddings,
            trials: TrialsSection::default(),
            stage2: Stage2Section::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Single-core desk scale, a few minutes end to end.
    Desk,
    /// Seconds; for smoke tests.
    Quick,
    /// Full-size layer widths, 100k iterations and large trial lists.
    Full,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "quick" => Ok(Preset::Quick),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset `{other}` (desk, quick, full)"))),
        }
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut c = Self::default();
        match preset {
            Preset::Desk => {}
            Preset::Full => {
                c.stage1.ac.tdnn = TdnnConfig::default();
                c.stage1.ac.train = TrainConfig::full();
                c.stage1.mlp.hidden = vec![256, 256];
                c.stage1.mlp.train = TrainConfig::full();
                for src in c.embeddings.values_mut() {
                    src.synth.dim = 192;
                }
                c.trials = TrialsSection {
                    train_pos: 80_000,
                    train_neg: 80_000,
                    ..TrialsSection::default()
                };
            }
            Preset::Quick => {
                for (spec, speakers, clips) in [(&mut c.synth.train, 24, 4), (&mut c.synth.test, 8, 6)] {
                    spec.speakers = speakers;
                    spec.clips_per_speaker = clips;
                    spec.duration_s = 0.3;
                }
                c.stage1.ac.tdnn = TdnnConfig::with_channels(8, 16);
                c.stage1.ac.train.iterations = 60;
                c.stage1.mlp.hidden = vec![16, 16];
                c.stage1.mlp.train.iterations = 100;
                c.stage1.mlp.train.batch_size = 32;
                c.trials = TrialsSection {
                    train_pos: 200,
                    train_neg: 200,
                    test_pos: 150,
                    test_neg: 150,
                };
                c.stage2.forest.n_trees = 10;
                c.stage2.nn.epochs = 100;
                c.stage2.nn.permutation_repeats = 3;
            }
        }
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parse `text`, then apply `key.path=value` overrides. Values parse as TOML
    /// and fall back to bare strings.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read `path`, apply overrides and `ATTRSV_SEED`, and validate.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut config = Self::from_toml_with(&text, overrides)?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            config.seed = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{seed}` is not an unsigned integer")))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed, so larger seeds could not be written back
        let mut seeds = vec![("seed", self.seed)];
        seeds.push(("stage1.ac.train.seed", self.stage1.ac.train.seed));
        seeds.push(("stage1.mlp.train.seed", self.stage1.mlp.train.seed));
        seeds.extend(self.stage1.ac.per_attribute.values().map(|t| ("stage1.ac.per_attribute seed", t.seed)));
        seeds.extend(self.stage1.mlp.per_attribute.values().map(|t| ("stage1.mlp.per_attribute seed", t.seed)));
        seeds.extend(self.embeddings.values().map(|e| ("embeddings synth seed", e.synth.seed)));
        if let Some((name, v)) = seeds.into_iter().find(|(_, v)| *v > i64::MAX as u64) {
            return Err(Error::Config(format!("{name} = {v} exceeds {}", i64::MAX)));
        }
        self.synth.train.validate()?;
        self.synth.test.validate()?;
        if self.synth.train.class_counts() != self.synth.test.class_counts() {
            return Err(Error::Config("train and test synth specs must share class counts".into()));
        }
        if self.synth.train.speaker_prefix == self.synth.test.speaker_prefix {
            return Err(Error::Config("train and test synth specs need distinct speaker prefixes".into()));
        }
        self.mfcc.validate()?;
        self.stage1.ac.train.validate()?;
        self.stage1.mlp.train.validate()?;
        for t in self.stage1.ac.per_attribute.values().chain(self.stage1.mlp.per_attribute.values()) {
            t.validate()?;
        }
        if self.stage1.mlp.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("mlp hidden widths must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.stage1.routes {
            if !seen.insert(r) {
                return Err(Error::Config(format!("route `{r}` listed twice")));
            }
            if r == GROUNDTRUTH_ROUTE || r == RANDOM_ROUTE {
                return Err(Error::Config(format!("`{r}` is a built-in baseline, not a stage-1 route")));
            }
            if r != AC_ROUTE && !self.embeddings.contains_key(r) {
                return Err(Error::Config(format!("route `{r}` has no [embeddings.{r}] section")));
            }
        }
        let registry = Registry::default();
        for k in self.stage2.kinds.iter().chain(&self.eval.single_attribute_kinds) {
            registry.get(k)?;
        }
        if self.stage2.modes.is_empty() || self.stage2.kinds.is_empty() {
            return Err(Error::Config("stage2 needs at least one kind and one mode".into()));
        }
        Ok(())
    }

    /// Stage-1 routes followed by the two baselines.
    pub fn all_routes(&self) -> Vec<String> {
        let mut r = vec![GROUNDTRUTH_ROUTE.to_string(), RANDOM_ROUTE.to_string()];
        r.extend(self.stage1.routes.iter().cloned());
        r
    }

    pub fn schema(&self) -> Result<AttributeSchema> {
        self.synth.train.schema()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex16(&Sha256::digest(json.as_bytes()))
    }

    pub fn ac_train(&self, attribute: &str) -> &TrainConfig {
        self.stage1.ac.per_attribute.get(attribute).unwrap_or(&self.stage1.ac.train)
    }

    pub fn mlp_train(&self, attribute: &str) -> &TrainConfig {
        self.stage1.mlp.per_attribute.get(attribute).unwrap_or(&self.stage1.mlp.train)
    }
}

fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed for one labelled sub-task of a run.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    // kept below 2^63 so TOML and JSON consumers can hold it as a signed integer
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) >> 1
}

fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
