//! `train-sv`, `eval` and `explain`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::report::{GridCell, ImportanceCell, Report, SingleAttributeCell, TrialCounts};
use super::stage1::read_stage1_outputs;
use super::{write_text, Split, Workspace, VERSION};
use crate::config::{GROUNDTRUTH_ROUTE, RANDOM_ROUTE};
use crate::corpus::{AttributeSchema, Manifest, TrialPair};
use crate::error::{Error, Result};
use crate::explain::{explain, Explanation};
use crate::metrics::{eer_of, EerResult};
use crate::prob::ProbabilityVector;
use crate::similarity::{
    random_similarity_with, read_similarity_dump, similarity, write_similarity_dump, AttributeOutputs,
    SimilarityMode, SimilarityRecord, SimilarityVector,
};
use crate::verifier::{
    read_score_dump, write_score_dump, ImportanceReport, Registry, StageTwoConfig, TrialScore, Verifier,
};

type Scored = Vec<(TrialPair, SimilarityVector)>;

/// Stage-1 view of a split: how to turn a clip id into attribute outputs.
enum Source<'a> {
    Labels(&'a Manifest),
    Outputs(BTreeMap<String, AttributeOutputs>),
}

impl Source<'_> {
    fn outputs(&self, schema: &AttributeSchema, clip: &str) -> Result<AttributeOutputs> {
        match self {
            Source::Labels(m) => {
                let rec = m
                    .speaker_of(clip)
                    .ok_or_else(|| Error::Data(format!("clip `{clip}` is not in the manifest")))?;
                AttributeOutputs::from_labels(schema, &rec.labels)
            }
            Source::Outputs(map) => map
                .get(clip)
                .cloned()
                .ok_or_else(|| Error::Data(format!("no stage-1 outputs for clip `{clip}`"))),
        }
    }
}

fn source<'a>(ws: &Workspace, route: &str, split: Split, manifest: &'a Manifest) -> Result<Source<'a>> {
    if route == GROUNDTRUTH_ROUTE {
        return Ok(Source::Labels(manifest));
    }
    let path = ws.stage1_outputs_path(route, split);
    ws.require(&path, "train-attr")?;
    Ok(Source::Outputs(read_stage1_outputs(path, &manifest.schema)?))
}

fn similarities(
    ws: &Workspace,
    route: &str,
    mode: SimilarityMode,
    split: Split,
    manifest: &Manifest,
    priors: &[ProbabilityVector],
    trials: &[TrialPair],
) -> Result<Scored> {
    let schema = &manifest.schema;
    if route == RANDOM_ROUTE {
        let mut rng = ChaCha8Rng::seed_from_u64(ws.seed(&format!("random/{}", split.as_str())));
        return trials
            .iter()
            .map(|t| {
                let mut sv = random_similarity_with(schema, priors, &mut rng)?;
                sv.mode = mode;
                Ok((t.clone(), sv))
            })
            .collect();
    }
    let src = source(ws, route, split, manifest)?;
    trials
        .par_iter()
        .map(|t| {
            let a = src.outputs(schema, &t.clip_a)?;
            let b = src.outputs(schema, &t.clip_b)?;
            Ok((t.clone(), similarity(mode, &a, &b)?))
        })
        .collect()
}

fn labelled(data: &Scored) -> Vec<(SimilarityVector, bool)> {
    data.iter().map(|(t, sv)| (sv.clone(), t.target)).collect()
}

fn read_dump(ws: &Workspace, route: &str, mode: SimilarityMode, split: Split, hash: &str) -> Result<Scored> {
    let path = ws.similarity_path(route, mode, split);
    ws.require(&path, "train-sv")?;
    Ok(read_similarity_dump(path, hash)?
        .into_iter()
        .map(|r| {
            let sv = r.vector();
            let t = TrialPair {
                clip_a: r.trial[0].clone(),
                clip_b: r.trial[1].clone(),
                target: r.target == 1,
            };
            (t, sv)
        })
        .collect())
}

/// Similarity dumps for every (route, mode, split) and a stage-2 model per kind.
pub fn train_sv(ws: &Workspace) -> Result<()> {
    if ws.is_current("train-sv") {
        log::info!("train-sv: up to date");
        return Ok(());
    }
    let (train_m, test_m) = ws.manifests()?;
    let schema = &train_m.schema;
    let priors = schema
        .names()
        .iter()
        .map(|a| train_m.label_distribution(a))
        .collect::<Result<Vec<_>>>()?;
    let train_t = ws.trials(Split::Train)?;
    let test_t = ws.trials(Split::Test)?;
    let registry = Registry::default();
    let params = ws.config.stage2.params();
    for route in ws.config.all_routes() {
        for &mode in &ws.config.stage2.modes {
            let mut train_data = Vec::new();
            for (split, manifest, trials) in [
                (Split::Train, &train_m, &train_t),
                (Split::Test, &test_m, &test_t),
            ] {
                let data = similarities(ws, &route, mode, split, manifest, &priors, &trials.trials)?;
                let records: Vec<SimilarityRecord> = data.iter().map(|(t, sv)| SimilarityRecord::new(t, sv)).collect();
                let path = ws.similarity_path(&route, mode, split);
                super::ensure_parent(&path)?;
                write_similarity_dump(&path, &records)?;
                if split == Split::Train {
                    train_data = labelled(&data);
                }
            }
            for kind in &ws.config.stage2.kinds {
                // shared by both modes so their fits differ only in the inputs
                let seed = ws.seed(&format!("stage2/{route}/{kind}"));
                let v = Verifier::fit(&registry, kind, schema, None, mode, &train_data, &params, seed)?;
                let path = ws.stage2_model_path(&route, mode, kind);
                super::ensure_parent(&path)?;
                v.save(&path)?;
                log::info!("train-sv: {route}/{}/{kind} fitted", mode.as_str());
            }
        }
    }
    ws.write_stamp("train-sv", &schema.hash())
}

/// Scores, EER and importance of one verifier on labelled trials.
#[derive(Debug, Clone)]
pub struct SystemEval {
    pub eer: EerResult,
    pub scores: Vec<TrialScore>,
    pub importance: ImportanceReport,
}

pub fn evaluate_system(verifier: &Verifier, trials: &[(TrialPair, SimilarityVector)]) -> Result<SystemEval> {
    let scores = verifier.score_trials(trials)?;
    let pairs: Vec<(f64, bool)> = scores.iter().map(|s| (s.score, s.trial.target)).collect();
    let eer = eer_of(&pairs)?;
    let validation: Vec<(SimilarityVector, bool)> = trials.iter().map(|(t, sv)| (sv.clone(), t.target)).collect();
    let importance = verifier.importance(&validation)?;
    Ok(SystemEval {
        eer,
        scores,
        importance,
    })
}

/// EER of `kind` refitted on a single similarity component.
#[allow(clippy::too_many_arguments)]
pub fn single_attribute_eer(
    registry: &Registry,
    kind: &str,
    schema: &AttributeSchema,
    attribute: &str,
    mode: SimilarityMode,
    train: &[(SimilarityVector, bool)],
    test: &[(TrialPair, SimilarityVector)],
    params: &StageTwoConfig,
    seed: u64,
) -> Result<EerResult> {
    schema.index_of(attribute)?;
    let only = [attribute.to_string()];
    let v = Verifier::fit(registry, kind, schema, Some(&only), mode, train, params, seed)?;
    let scores = v.score_trials(test)?;
    eer_of(&scores.iter().map(|s| (s.score, s.trial.target)).collect::<Vec<_>>())
}

/// Score the test trials with every stored model, or with models refitted on
/// `attributes` only when a mask is given.
pub fn eval(ws: &Workspace, attributes: Option<&[String]>) -> Result<Report> {
    let stamp = match attributes {
        Some(a) => format!("eval-{}", a.join("+")),
        None => "eval".to_string(),
    };
    let report_path = ws.report_path(attributes);
    if ws.is_current(&stamp) && report_path.exists() {
        log::info!("{stamp}: up to date");
        let text = std::fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        return serde_json::from_str(&text).map_err(|e| Error::format("report", e.to_string()));
    }
    let (train_m, _) = ws.manifests()?;
    let schema = &train_m.schema;
    let hash = schema.hash();
    let mask = match attributes {
        Some(names) => {
            let mut idx = names.iter().map(|n| schema.index_of(n)).collect::<Result<Vec<_>>>()?;
            idx.sort_unstable();
            idx.dedup();
            Some(idx.iter().map(|&i| schema.attributes[i].name.clone()).collect::<Vec<_>>())
        }
        None => None,
    };
    let registry = Registry::default();
    let params = ws.config.stage2.params();
    let train_t = ws.trials(Split::Train)?;
    let test_t = ws.trials(Split::Test)?;

    let mut grid = Vec::new();
    let mut importance = Vec::new();
    let mut single_attribute = Vec::new();
    for route in ws.config.all_routes() {
        for &mode in &ws.config.stage2.modes {
            let test = read_dump(ws, &route, mode, Split::Test, &hash)?;
            let train = match (&mask, ws.config.eval.single_attribute_kinds.is_empty()) {
                (None, true) => Vec::new(),
                _ => labelled(&read_dump(ws, &route, mode, Split::Train, &hash)?),
            };
            for kind in &ws.config.stage2.kinds {
                let v = match &mask {
                    None => {
                        let path = ws.stage2_model_path(&route, mode, kind);
                        ws.require(&path, "train-sv")?;
                        let v = Verifier::load(&registry, &path)?;
                        if v.schema_hash != hash {
                            return Err(Error::SchemaMismatch(format!(
                                "{} was fitted for schema {}, expected {hash}",
                                path.display(),
                                v.schema_hash
                            )));
                        }
                        v
                    }
                    Some(names) => {
                        // shared by both modes so their fits differ only in the inputs
                let seed = ws.seed(&format!("stage2/{route}/{kind}"));
                        Verifier::fit(&registry, kind, schema, Some(names), mode, &train, &params, seed)?
                    }
                };
                let r = evaluate_system(&v, &test)?;
                let score_path = ws.score_path(&route, mode, kind, mask.as_deref());
                super::ensure_parent(&score_path)?;
                write_score_dump(&score_path, &r.scores)?;
                log::info!("eval: {route}/{}/{kind} EER {:.4}", mode.as_str(), r.eer.eer);
                grid.push(GridCell {
                    route: route.clone(),
                    mode: mode.as_str().into(),
                    kind: kind.clone(),
                    eer: r.eer,
                });
                importance.push(ImportanceCell {
                    route: route.clone(),
                    mode: mode.as_str().into(),
                    kind: kind.clone(),
                    importance: r.importance,
                });
            }
            if mask.is_none() {
                for kind in &ws.config.eval.single_attribute_kinds {
                    for attr in schema.names() {
                        let seed = ws.seed(&format!("single/{route}/{kind}/{attr}"));
                        let eer = single_attribute_eer(&registry, kind, schema, attr, mode, &train, &test, &params, seed)?;
                        single_attribute.push(SingleAttributeCell {
                            route: route.clone(),
                            mode: mode.as_str().into(),
                            kind: kind.clone(),
                            attribute: attr.to_string(),
                            eer,
                        });
                    }
                }
            }
        }
    }

    let mut accuracy = BTreeMap::new();
    for route in &ws.config.stage1.routes {
        let path = ws.stage1_accuracy_path(route);
        ws.require(&path, "train-attr")?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let acc: BTreeMap<String, BTreeMap<String, f64>> =
            serde_json::from_str(&text).map_err(|e| Error::format("accuracy file", e.to_string()))?;
        accuracy.insert(
            route.clone(),
            acc.into_iter()
                .map(|(a, m)| (a, m.get("test").copied().unwrap_or(f64::NAN)))
                .collect(),
        );
    }

    let report = Report {
        version: VERSION.to_string(),
        fingerprint: ws.fingerprint.clone(),
        seed: ws.config.seed,
        schema_hash: hash.clone(),
        attributes: mask.clone().unwrap_or_else(|| schema.names().iter().map(|s| s.to_string()).collect()),
        trial_counts: TrialCounts {
            train_pos: train_t.positives(),
            train_neg: train_t.len() - train_t.positives(),
            test_pos: test_t.positives(),
            test_neg: test_t.len() - test_t.positives(),
            train_with_replacement: train_t.with_replacement,
            test_with_replacement: test_t.with_replacement,
        },
        accuracy,
        grid,
        importance,
        single_attribute,
    };
    write_text(&report_path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let suffix = report_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report")
        .trim_start_matches("report")
        .to_string();
    write_text(&ws.output_dir().join(format!("eer_grid{suffix}.csv")), &report.grid_csv())?;
    if mask.is_none() {
        write_text(&ws.output_dir().join("single_attribute.csv"), &report.single_attribute_csv())?;
    }
    ws.write_stamp(&stamp, &hash)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialSelector {
    /// Line index in the test trial list.
    Index(usize),
    Pair(String, String),
}

#[derive(Debug, Clone)]
pub struct ExplainRequest {
    pub route: String,
    pub mode: SimilarityMode,
    pub kind: String,
    pub trial: TrialSelector,
}

pub fn explain_trial(ws: &Workspace, req: &ExplainRequest) -> Result<Explanation> {
    if req.route == RANDOM_ROUTE {
        return Err(Error::Config("the random baseline has no per-clip predictions to explain".into()));
    }
    if req.route != GROUNDTRUTH_ROUTE && !ws.config.stage1.routes.contains(&req.route) {
        return Err(Error::Config(format!("unknown route `{}`", req.route)));
    }
    let (train_m, test_m) = ws.manifests()?;
    let schema = &train_m.schema;
    let trial = match &req.trial {
        TrialSelector::Index(i) => {
            let set = ws.trials(Split::Test)?;
            set.trials
                .get(*i)
                .cloned()
                .ok_or_else(|| Error::Data(format!("test trial list has {} trials, index {i} requested", set.len())))?
        }
        TrialSelector::Pair(a, b) => {
            let owner = |c: &str| {
                test_m
                    .speaker_of(c)
                    .or_else(|| train_m.speaker_of(c))
                    .map(|r| r.speaker_id.clone())
                    .ok_or_else(|| Error::Data(format!("clip `{c}` is in neither manifest")))
            };
            TrialPair {
                target: owner(a)? == owner(b)?,
                clip_a: a.clone(),
                clip_b: b.clone(),
            }
        }
    };
    let side = |clip: &str| -> Result<AttributeOutputs> {
        let (split, m) = if test_m.speaker_of(clip).is_some() {
            (Split::Test, &test_m)
        } else {
            (Split::Train, &train_m)
        };
        source(ws, &req.route, split, m)?.outputs(schema, clip)
    };
    let a = side(&trial.clip_a)?;
    let b = side(&trial.clip_b)?;
    let sv = similarity(req.mode, &a, &b)?;

    let registry = Registry::default();
    let path = ws.stage2_model_path(&req.route, req.mode, &req.kind);
    ws.require(&path, "train-sv")?;
    let verifier = Verifier::load(&registry, &path)?;
    if verifier.schema_hash != schema.hash() {
        return Err(Error::SchemaMismatch(format!(
            "{} was fitted for schema {}, expected {}",
            path.display(),
            verifier.schema_hash,
            schema.hash()
        )));
    }
    let report: Option<Report> = std::fs::read_to_string(ws.report_path(None))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .filter(|r: &Report| r.schema_hash == schema.hash());
    let mode = req.mode.as_str();
    let threshold = report
        .as_ref()
        .and_then(|r| r.cell(&req.route, mode, &req.kind))
        .map(|c| c.eer.threshold);
    let importance = match report.as_ref().and_then(|r| r.importance_of(&req.route, mode, &req.kind)) {
        Some(i) => i.clone(),
        None => {
            let test = read_dump(ws, &req.route, req.mode, Split::Test, &schema.hash())?;
            verifier.importance(&labelled(&test))?
        }
    };
    explain(&req.route, &verifier, schema, &trial, &a, &b, &sv, &importance, threshold)
}

/// Score dumps written by `eval`, for downstream tooling.
pub fn read_scores(ws: &Workspace, route: &str, mode: SimilarityMode, kind: &str) -> Result<Vec<TrialScore>> {
    let path = ws.score_path(route, mode, kind, None);
    ws.require(&path, "eval")?;
    read_score_dump(path)
}
