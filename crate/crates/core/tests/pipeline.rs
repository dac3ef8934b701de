//! End-to-end runs on the quick preset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use attrsv_core::config::{Preset, RunConfig};
use attrsv_core::explain::{render_explanation, ExplanationFormat, GLOBAL_IMPORTANCE_CAPTION};
use attrsv_core::pipeline::{self, ExplainRequest, Report, Split, TrialSelector, Workspace};
use attrsv_core::similarity::{read_similarity_dump, SimilarityMode};
use attrsv_core::Error;
use tempfile::TempDir;

/// Held by tests that write into the shared workspace.
static WRITES: std::sync::Mutex<()> = std::sync::Mutex::new(());

struct Run {
    _dir: TempDir,
    ws: Workspace,
    report: Report,
}

fn quick_workspace(root: &Path) -> Workspace {
    Workspace::new(RunConfig::preset(Preset::Quick), root)
}

fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let ws = quick_workspace(dir.path());
        let report = pipeline::run_all(&ws).unwrap();
        Run { _dir: dir, ws, report }
    })
}

/// Relative path → bytes for every file under `root`, stamps excluded.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out.retain(|p, _| !p.starts_with("stamps"));
    out
}

#[test]
fn report_covers_every_cell() {
    let r = run();
    let routes = r.ws.config.all_routes();
    assert_eq!(routes, ["groundtruth", "random", "ac", "xvector", "ecapa"]);
    assert_eq!(r.report.grid.len(), routes.len() * 2 * 4);
    for route in &routes {
        for mode in ["hard", "softmax"] {
            for kind in ["linreg", "logreg", "forest", "nn"] {
                let e = r.report.eer(route, mode, kind).unwrap();
                assert!((0.0..=1.0).contains(&e));
                let imp = r.report.importance_of(route, mode, kind).unwrap();
                assert!((imp.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
    let t = &r.report.trial_counts;
    assert_eq!((t.test_pos, t.test_neg), (150, 150));
    assert_eq!(r.report.accuracy.len(), 3);
    let singles = r.ws.config.eval.single_attribute_kinds.len();
    assert_eq!(r.report.single_attribute.len(), routes.len() * 2 * singles * 4);
    assert_eq!(r.report.schema_hash, r.ws.manifest(Split::Train).unwrap().schema.hash());

    let on_disk: Report =
        serde_json::from_str(&std::fs::read_to_string(r.ws.report_path(None)).unwrap()).unwrap();
    assert_eq!(on_disk, r.report);
    let csv = std::fs::read_to_string(r.ws.output_dir().join("eer_grid.csv")).unwrap();
    assert_eq!(csv, r.report.grid_csv());
}

#[test]
fn groundtruth_and_random_agree_across_modes() {
    let r = run();
    let hash = r.report.schema_hash.clone();
    for route in ["groundtruth", "random"] {
        for split in Split::BOTH {
            let [hard, soft] = [SimilarityMode::Hard, SimilarityMode::Softmax]
                .map(|m| read_similarity_dump(r.ws.similarity_path(route, m, split), &hash).unwrap());
            assert_eq!(hard.len(), soft.len());
            for (h, s) in hard.iter().zip(&soft) {
                assert_eq!((&h.trial, &h.values), (&s.trial, &s.values), "{route}");
            }
        }
        for kind in ["linreg", "logreg", "forest", "nn"] {
            assert_eq!(r.report.eer(route, "hard", kind), r.report.eer(route, "softmax", kind), "{route}/{kind}");
        }
    }
}

#[test]
fn explaining_a_positive_groundtruth_trial() {
    let r = run();
    let trials = r.ws.trials(Split::Test).unwrap();
    let index = trials.trials.iter().position(|t| t.target).unwrap();
    let e = pipeline::explain_trial(
        &r.ws,
        &ExplainRequest {
            route: "groundtruth".into(),
            mode: SimilarityMode::Hard,
            kind: "logreg".into(),
            trial: TrialSelector::Index(index),
        },
    )
    .unwrap();
    assert!(e.trial.target);
    assert!(e.attributes.iter().all(|l| l.similarity == 1.0 && l.class_a == l.class_b));

    let m = r.ws.manifest(Split::Test).unwrap();
    let labels = &m.speaker_of(&e.trial.clip_a).unwrap().labels;
    for line in &e.attributes {
        let i = m.schema.index_of(&line.attribute).unwrap();
        assert_eq!(line.class_a, m.schema.attributes[i].classes[labels[i]]);
    }
    let cell = r.report.cell("groundtruth", "hard", "logreg").unwrap();
    assert_eq!(e.threshold, Some(cell.eer.threshold));
    let sum: f64 = e.attributes.iter().map(|l| l.contribution.unwrap()).sum();
    assert!((e.intercept.unwrap() + sum - e.pre_activation.unwrap()).abs() < 1e-6);
}

#[test]
fn explaining_a_forest_decision_uses_global_importance() {
    let r = run();
    let trials = r.ws.trials(Split::Test).unwrap();
    let t = &trials.trials[3];
    let e = pipeline::explain_trial(
        &r.ws,
        &ExplainRequest {
            route: "ac".into(),
            mode: SimilarityMode::Softmax,
            kind: "forest".into(),
            trial: TrialSelector::Pair(t.clip_a.clone(), t.clip_b.clone()),
        },
    )
    .unwrap();
    assert_eq!(e.trial, *t);
    assert!(e.attributes.iter().all(|l| l.contribution.is_none()));
    let text = render_explanation(&e, ExplanationFormat::Text).unwrap();
    assert!(text.contains(GLOBAL_IMPORTANCE_CAPTION));
    let imp = r.report.importance_of("ac", "softmax", "forest").unwrap();
    for l in &e.attributes {
        assert_eq!(Some(l.importance), imp.weight(&l.attribute));
    }
}

#[test]
fn explain_rejects_the_random_route() {
    let r = run();
    let err = pipeline::explain_trial(
        &r.ws,
        &ExplainRequest {
            route: "random".into(),
            mode: SimilarityMode::Hard,
            kind: "logreg".into(),
            trial: TrialSelector::Index(0),
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn masked_evaluation_holds_one_attribute() {
    let r = run();
    let _g = WRITES.lock().unwrap_or_else(|e| e.into_inner());
    let only = ["profession".to_string()];
    let masked = pipeline::eval(&r.ws, Some(&only)).unwrap();
    assert_eq!(masked.attributes, only);
    assert_eq!(masked.grid.len(), r.report.grid.len());
    assert!(masked.single_attribute.is_empty());
    assert!(masked.importance.iter().all(|c| c.importance.attributes == only));
    assert!(r.ws.report_path(Some(&only)).exists());
    // logistic fits start from zero, so a one-attribute mask reproduces the
    // single-attribute table exactly
    for c in masked.grid.iter().filter(|c| c.kind == "logreg") {
        assert_eq!(Some(c.eer.eer), r.report.single(&c.route, &c.mode, "logreg", "profession"));
    }
    assert!(pipeline::eval(&r.ws, Some(&["accent".to_string()])).is_err());
}

#[test]
fn rerunning_is_a_no_op_and_forcing_reproduces_bytes() {
    let r = run();
    let _g = WRITES.lock().unwrap_or_else(|e| e.into_inner());
    let before = snapshot(&r.ws.root);
    let again = pipeline::run_all(&r.ws).unwrap();
    assert_eq!(again, r.report);
    assert_eq!(snapshot(&r.ws.root), before);

    let dir = tempfile::tempdir().unwrap();
    let mut fresh = quick_workspace(dir.path());
    fresh.force = true;
    let report = pipeline::run_all(&fresh).unwrap();
    assert_eq!(report, r.report);
    let a = snapshot(&r.ws.root);
    let b = snapshot(dir.path());
    for (path, bytes) in &b {
        assert!(a.get(path) == Some(bytes), "{} differs", path.display());
    }
}

#[test]
fn missing_prerequisites_name_their_command() {
    let dir = tempfile::tempdir().unwrap();
    let ws = quick_workspace(dir.path());
    for (result, command) in [
        (pipeline::extract(&ws), "synth"),
        (pipeline::train_sv(&ws), "synth"),
    ] {
        match result.unwrap_err() {
            Error::MissingPrerequisite { command: c, .. } => assert_eq!(c, command),
            other => panic!("unexpected {other}"),
        }
    }
    pipeline::synth(&ws).unwrap();
    match pipeline::train_attr(&ws).unwrap_err() {
        Error::MissingPrerequisite { command, .. } => assert_eq!(command, "extract"),
        other => panic!("unexpected {other}"),
    }
    match pipeline::train_sv(&ws).unwrap_err() {
        Error::MissingPrerequisite { command, .. } => assert_eq!(command, "make-trials"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn artifacts_from_another_schema_are_refused() {
    let src = run();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset(Preset::Quick);
    cfg.synth.train.priors[0] = vec![0.3, 0.3, 0.4];
    cfg.synth.test.priors[0] = vec![0.3, 0.3, 0.4];
    let ws = Workspace::new(cfg, dir.path());
    pipeline::synth(&ws).unwrap();
    pipeline::make_trials(&ws).unwrap();
    // borrow stage-1 outputs fitted under the original schema
    for route in &ws.config.stage1.routes {
        for split in Split::BOTH {
            let from = src.ws.stage1_outputs_path(route, split);
            let to = ws.stage1_outputs_path(route, split);
            std::fs::create_dir_all(to.parent().unwrap()).unwrap();
            std::fs::copy(from, to).unwrap();
        }
    }
    assert!(matches!(pipeline::train_sv(&ws).unwrap_err(), Error::SchemaMismatch(_)));
}
