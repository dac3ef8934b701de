//! `train-attr`: one classifier per (route, attribute), then per-clip outputs for both splits.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ensure_parent, write_text, Split, Workspace};
use crate::attrnet::{train, AttrClassifier, Features};
use crate::config::AC_ROUTE;
use crate::corpus::{AttributeSchema, EmbeddingTable, Manifest};
use crate::dsp::read_feature_cache;
use crate::error::{Error, Result};
use crate::prob::ProbabilityVector;
use crate::similarity::AttributeOutputs;

/// One line of a stage-1 output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneOutputLine {
    pub clip_id: String,
    pub schema_hash: String,
    pub classes: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
}

/// Features of every clip of a split, in manifest order, with speaker labels.
fn load_features(ws: &Workspace, route: &str, split: Split, manifest: &Manifest) -> Result<Vec<(String, Features, Vec<usize>)>> {
    if route == AC_ROUTE {
        let clips: Vec<_> = manifest.clips().collect();
        clips
            .par_iter()
            .map(|(rec, clip)| {
                let path = ws.feature_path(split, &clip.id);
                ws.require(&path, "extract")?;
                let m = read_feature_cache(&path, &ws.config.mfcc)?;
                Ok((clip.id.clone(), Features::Frames(m), rec.labels.clone()))
            })
            .collect()
    } else {
        let path = ws.embedding_path(split, route);
        ws.require(&path, "extract")?;
        let table = EmbeddingTable::read(&path, route)?;
        manifest
            .clips()
            .map(|(rec, clip)| {
                let v = table
                    .vectors
                    .get(&clip.id)
                    .ok_or_else(|| Error::Data(format!("{} has no vector for `{}`", path.display(), clip.id)))?;
                Ok((clip.id.clone(), Features::Vector(v.clone()), rec.labels.clone()))
            })
            .collect()
    }
}

fn build(ws: &Workspace, route: &str, attr: &str, classes: usize, width: usize) -> Result<AttrClassifier> {
    let seed = ws.seed(&format!("stage1-init/{route}/{attr}"));
    if route == AC_ROUTE {
        AttrClassifier::build_mfcc_tdnn(attr, width, classes, &ws.config.stage1.ac.tdnn, seed)
    } else {
        AttrClassifier::build_embedding_mlp(attr, width, classes, &ws.config.stage1.mlp.hidden, seed)
    }
}

pub fn train_attr(ws: &Workspace) -> Result<()> {
    if ws.is_current("train-attr") {
        log::info!("train-attr: up to date");
        return Ok(());
    }
    let (train_m, test_m) = ws.manifests()?;
    let schema = &train_m.schema;
    for route in &ws.config.stage1.routes {
        let train_x = load_features(ws, route, Split::Train, &train_m)?;
        let test_x = load_features(ws, route, Split::Test, &test_m)?;
        let width = match &train_x.first() {
            Some((_, Features::Frames(m), _)) => m.n_coeffs,
            Some((_, Features::Vector(v), _)) => v.len(),
            None => return Err(Error::Data("training corpus has no clips".into())),
        };
        let models = schema
            .attributes
            .par_iter()
            .enumerate()
            .map(|(a, attr)| {
                let mut cfg = if route == AC_ROUTE {
                    ws.config.ac_train(&attr.name).clone()
                } else {
                    ws.config.mlp_train(&attr.name).clone()
                };
                cfg.seed = ws.seed(&format!("stage1-train/{route}/{}/{}", attr.name, cfg.seed));
                let data: Vec<(Features, usize)> = train_x.iter().map(|(_, x, l)| (x.clone(), l[a])).collect();
                let clf = build(ws, route, &attr.name, attr.class_count(), width)?;
                let clf = train(clf, &data, &cfg)?;
                log::info!("train-attr: {route}/{} trained", attr.name);
                Ok(clf)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut accuracy = BTreeMap::new();
        for clf in &models {
            let path = ws.stage1_model_path(route, &clf.attribute);
            ensure_parent(&path)?;
            clf.save(&path)?;
        }
        for (split, xs) in [(Split::Train, &train_x), (Split::Test, &test_x)] {
            let lines = predict_split(schema, &models, xs)?;
            for (a, attr) in schema.attributes.iter().enumerate() {
                let hits = lines.iter().zip(xs.iter()).filter(|(l, (_, _, y))| l.classes[a] == y[a]).count();
                let acc = hits as f64 / xs.len().max(1) as f64;
                accuracy
                    .entry(attr.name.clone())
                    .or_insert_with(BTreeMap::new)
                    .insert(split.as_str().to_string(), acc);
            }
            write_outputs(&ws.stage1_outputs_path(route, split), &lines)?;
        }
        for (attr, acc) in &accuracy {
            log::info!(
                "train-attr: {route}/{attr} accuracy train {:.3} test {:.3}",
                acc["train"],
                acc["test"]
            );
        }
        write_text(
            &ws.stage1_accuracy_path(route),
            &(serde_json::to_string_pretty(&accuracy)? + "\n"),
        )?;
    }
    ws.write_stamp("train-attr", &schema.hash())
}

fn predict_split(
    schema: &AttributeSchema,
    models: &[AttrClassifier],
    xs: &[(String, Features, Vec<usize>)],
) -> Result<Vec<StageOneOutputLine>> {
    let refs: Vec<&Features> = xs.iter().map(|(_, x, _)| x).collect();
    let per_attr = models
        .iter()
        .map(|m| m.predict_all(&refs))
        .collect::<Result<Vec<_>>>()?;
    let hash = schema.hash();
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, (id, _, _))| StageOneOutputLine {
            clip_id: id.clone(),
            schema_hash: hash.clone(),
            classes: per_attr.iter().map(|p| p[i].0).collect(),
            probs: per_attr.iter().map(|p| p[i].1.as_slice().to_vec()).collect(),
        })
        .collect())
}

fn write_outputs(path: &Path, lines: &[StageOneOutputLine]) -> Result<()> {
    ensure_parent(path)?;
    let mut out = Vec::new();
    for l in lines {
        serde_json::to_writer(&mut out, l)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Per-clip outputs keyed by clip id, validated against `schema`.
pub fn read_stage1_outputs(path: impl AsRef<Path>, schema: &AttributeSchema) -> Result<BTreeMap<String, AttributeOutputs>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let hash = schema.hash();
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let l: StageOneOutputLine = serde_json::from_str(line)
            .map_err(|e| Error::format(format!("stage-1 outputs {}", path.display()), format!("line {}: {e}", i + 1)))?;
        if l.schema_hash != hash {
            return Err(Error::SchemaMismatch(format!(
                "{} was written for schema {}, expected {hash}",
                path.display(),
                l.schema_hash
            )));
        }
        let probs = l
            .probs
            .into_iter()
            .map(ProbabilityVector::new)
            .collect::<Result<Vec<_>>>()?;
        out.insert(l.clip_id, AttributeOutputs::new(schema, l.classes, probs)?);
    }
    Ok(out)
}
