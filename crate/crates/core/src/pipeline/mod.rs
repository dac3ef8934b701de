//! The command pipeline: synth → extract → train-attr → make-trials → train-sv → eval → explain.
//!
//! Every command reads and writes files under one workspace root (the config
//! file's directory) and finishes by writing a stamp with the config
//! fingerprint. A command whose stamp matches the current fingerprint is
//! skipped unless forced.

mod report;
mod stage1;
mod stage2;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, RunConfig, AC_ROUTE};
use crate::corpus::{generate_trials, load_manifest, synthesize_corpus, EmbeddingTable, Manifest, TrialSet};
use crate::dsp::{load_wav, write_feature_cache, MfccExtractor};
use crate::error::{Error, Result};
use crate::similarity::SimilarityMode;

pub use report::{GridCell, ImportanceCell, Report, SingleAttributeCell, TrialCounts};
pub use stage1::{read_stage1_outputs, train_attr, StageOneOutputLine};
pub use stage2::{
    eval, evaluate_system, explain_trial, read_scores, single_attribute_eer, train_sv, ExplainRequest, SystemEval,
    TrialSelector,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const BOTH: [Split; 2] = [Split::Train, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub command: String,
    pub version: String,
    pub fingerprint: String,
    pub seed: u64,
    pub schema_hash: String,
}

/// A resolved config plus the directory its relative paths hang off.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfig,
    pub root: PathBuf,
    pub fingerprint: String,
    /// Re-run commands even when their stamp is current.
    pub force: bool,
}

impl Workspace {
    pub fn new(config: RunConfig, root: impl Into<PathBuf>) -> Self {
        let fingerprint = config.fingerprint();
        Self {
            config,
            root: root.into(),
            fingerprint,
            force: false,
        }
    }

    /// Load `config_path` with overrides; the workspace root is its directory.
    pub fn open(config_path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = config_path.as_ref();
        let config = RunConfig::load(path, overrides)?;
        let root = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self::new(config, root))
    }

    fn under(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn corpus_dir(&self, split: Split) -> PathBuf {
        self.under(&self.config.paths.corpus).join(split.as_str())
    }

    pub fn manifest_path(&self, split: Split) -> PathBuf {
        self.corpus_dir(split).join("manifest.jsonl")
    }

    pub fn trials_path(&self, split: Split) -> PathBuf {
        self.corpus_dir(split).join("trials.txt")
    }

    pub fn feature_path(&self, split: Split, clip_id: &str) -> PathBuf {
        self.under(&self.config.paths.features)
            .join(split.as_str())
            .join(format!("{clip_id}.atsv"))
    }

    pub fn embedding_path(&self, split: Split, route: &str) -> PathBuf {
        self.under(&self.config.paths.embeddings)
            .join(split.as_str())
            .join(format!("{route}.jsonl"))
    }

    pub fn stage1_dir(&self, route: &str) -> PathBuf {
        self.under(&self.config.paths.models).join("stage1").join(route)
    }

    pub fn stage1_model_path(&self, route: &str, attribute: &str) -> PathBuf {
        self.stage1_dir(route).join(format!("{attribute}.json"))
    }

    pub fn stage1_outputs_path(&self, route: &str, split: Split) -> PathBuf {
        self.stage1_dir(route).join(format!("outputs-{}.jsonl", split.as_str()))
    }

    pub fn stage1_accuracy_path(&self, route: &str) -> PathBuf {
        self.stage1_dir(route).join("accuracy.json")
    }

    pub fn similarity_path(&self, route: &str, mode: SimilarityMode, split: Split) -> PathBuf {
        self.under(&self.config.paths.models)
            .join("similarity")
            .join(format!("{route}-{}-{}.jsonl", mode.as_str(), split.as_str()))
    }

    pub fn stage2_model_path(&self, route: &str, mode: SimilarityMode, kind: &str) -> PathBuf {
        self.under(&self.config.paths.models)
            .join("stage2")
            .join(format!("{route}-{}-{kind}.json", mode.as_str()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.under(&self.config.paths.output)
    }

    /// `report.json`, or `report-<a>+<b>.json` for a masked evaluation.
    pub fn report_path(&self, attributes: Option<&[String]>) -> PathBuf {
        self.output_dir().join(format!("report{}.json", mask_suffix(attributes)))
    }

    pub fn score_path(&self, route: &str, mode: SimilarityMode, kind: &str, attributes: Option<&[String]>) -> PathBuf {
        self.output_dir().join("scores").join(format!(
            "{route}-{}-{kind}{}.jsonl",
            mode.as_str(),
            mask_suffix(attributes)
        ))
    }

    fn stamp_path(&self, command: &str) -> PathBuf {
        self.root.join("stamps").join(format!("{command}.json"))
    }

    fn stamp(&self, command: &str, schema_hash: &str) -> Stamp {
        Stamp {
            command: command.to_string(),
            version: VERSION.to_string(),
            fingerprint: self.fingerprint.clone(),
            seed: self.config.seed,
            schema_hash: schema_hash.to_string(),
        }
    }

    /// True when `command` already ran with this config and is not forced.
    pub fn is_current(&self, command: &str) -> bool {
        if self.force {
            return false;
        }
        std::fs::read_to_string(self.stamp_path(command))
            .ok()
            .and_then(|t| serde_json::from_str::<Stamp>(&t).ok())
            .is_some_and(|s| s.fingerprint == self.fingerprint && s.version == VERSION)
    }

    pub fn write_stamp(&self, command: &str, schema_hash: &str) -> Result<()> {
        let path = self.stamp_path(command);
        ensure_parent(&path)?;
        let text = serde_json::to_string_pretty(&self.stamp(command, schema_hash))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Fail with the command that produces `path` when it is absent.
    pub fn require(&self, path: &Path, command: &'static str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::MissingPrerequisite {
                artifact: path.to_path_buf(),
                command,
            })
        }
    }

    pub fn manifest(&self, split: Split) -> Result<Manifest> {
        let path = self.manifest_path(split);
        self.require(&path, "synth")?;
        load_manifest(path)
    }

    /// Both manifests, checked to share one schema.
    pub fn manifests(&self) -> Result<(Manifest, Manifest)> {
        let train = self.manifest(Split::Train)?;
        let test = self.manifest(Split::Test)?;
        if train.schema.hash() != test.schema.hash() {
            return Err(Error::SchemaMismatch(format!(
                "train manifest schema {} differs from test manifest schema {}",
                train.schema.hash(),
                test.schema.hash()
            )));
        }
        Ok((train, test))
    }

    pub fn trials(&self, split: Split) -> Result<TrialSet> {
        let path = self.trials_path(split);
        self.require(&path, "make-trials")?;
        TrialSet::read(path)
    }

    pub fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label)
    }
}

fn mask_suffix(attributes: Option<&[String]>) -> String {
    match attributes {
        Some(a) => format!("-{}", a.join("+")),
        None => String::new(),
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Render the train and test corpora.
pub fn synth(ws: &Workspace) -> Result<()> {
    if ws.is_current("synth") {
        log::info!("synth: up to date");
        return Ok(());
    }
    let mut hash = String::new();
    for split in Split::BOTH {
        let spec = match split {
            Split::Train => &ws.config.synth.train,
            Split::Test => &ws.config.synth.test,
        };
        let dir = ws.corpus_dir(split);
        let wav = dir.join("wav");
        if wav.exists() {
            std::fs::remove_dir_all(&wav).map_err(|e| Error::io(&wav, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let m = synthesize_corpus(spec, ws.seed(&format!("synth/{}", split.as_str())), &dir)?;
        log::info!(
            "synth: {} speakers, {} clips -> {}",
            m.speakers.len(),
            m.clip_count(),
            dir.display()
        );
        hash = m.schema.hash();
    }
    ws.write_stamp("synth", &hash)
}

/// MFCC caches for the `ac` route and embedding tables for the embedding routes.
pub fn extract(ws: &Workspace) -> Result<()> {
    if ws.is_current("extract") {
        log::info!("extract: up to date");
        return Ok(());
    }
    let (train, test) = ws.manifests()?;
    for (split, manifest) in [(Split::Train, &train), (Split::Test, &test)] {
        for route in &ws.config.stage1.routes {
            if route == AC_ROUTE {
                extract_mfcc(ws, split, manifest)?;
            } else {
                extract_embeddings(ws, split, manifest, route)?;
            }
        }
    }
    ws.write_stamp("extract", &train.schema.hash())
}

fn extract_mfcc(ws: &Workspace, split: Split, manifest: &Manifest) -> Result<()> {
    let extractor = MfccExtractor::new(ws.config.mfcc.clone())?;
    let clips: Vec<_> = manifest.clips().map(|(_, c)| c).collect();
    if let Some(first) = clips.first() {
        ensure_parent(&ws.feature_path(split, &first.id))?;
    }
    clips.par_iter().try_for_each(|clip| {
        let audio = load_wav(manifest.clip_path(clip))?;
        let m = extractor.compute(&audio)?;
        write_feature_cache(ws.feature_path(split, &clip.id), &m)
    })?;
    log::info!("extract: {} {} MFCC caches", clips.len(), split.as_str());
    Ok(())
}

fn extract_embeddings(ws: &Workspace, split: Split, manifest: &Manifest, route: &str) -> Result<()> {
    let source = ws
        .config
        .embeddings
        .get(route)
        .ok_or_else(|| Error::Config(format!("no [embeddings.{route}] section")))?;
    let file = match split {
        Split::Train => &source.train_file,
        Split::Test => &source.test_file,
    };
    let table = match file {
        Some(f) => EmbeddingTable::read(ws.root.join(f), route)?,
        None => {
            let mut synth = source.synth.clone();
            synth.seed = ws.seed(&format!("embeddings/{route}/{}", synth.seed));
            synth.generate(manifest)?
        }
    };
    if let Some((_, clip)) = manifest.clips().find(|(_, c)| !table.vectors.contains_key(&c.id)) {
        return Err(Error::Data(format!("{route} embeddings lack clip `{}`", clip.id)));
    }
    let out = ws.embedding_path(split, route);
    ensure_parent(&out)?;
    table.write(&out)?;
    log::info!("extract: {} {route} embeddings ({}-dim)", split.as_str(), table.dim);
    Ok(())
}

pub fn make_trials(ws: &Workspace) -> Result<()> {
    if ws.is_current("make-trials") {
        log::info!("make-trials: up to date");
        return Ok(());
    }
    let (train, test) = ws.manifests()?;
    let t = &ws.config.trials;
    for (split, manifest, pos, neg) in [
        (Split::Train, &train, t.train_pos, t.train_neg),
        (Split::Test, &test, t.test_pos, t.test_neg),
    ] {
        let set = generate_trials(&manifest.speakers, pos, neg, ws.seed(&format!("trials/{}", split.as_str())))?;
        if set.with_replacement {
            log::warn!("make-trials: {} pool exhausted, sampled with replacement", split.as_str());
        }
        set.write(ws.trials_path(split))?;
        log::info!("make-trials: {} {} trials", set.len(), split.as_str());
    }
    ws.write_stamp("make-trials", &train.schema.hash())
}

/// Every command except `explain`, in order.
pub fn run_all(ws: &Workspace) -> Result<Report> {
    synth(ws)?;
    extract(ws)?;
    train_attr(ws)?;
    make_trials(ws)?;
    train_sv(ws)?;
    eval(ws, None)
}
