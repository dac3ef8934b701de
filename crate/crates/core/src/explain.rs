//! Per-trial explanations: what each side was predicted to be and how that fed the score.

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeSchema, TrialPair};
use crate::error::{Error, Result};
use crate::similarity::{AttributeOutputs, SimilarityVector};
use crate::verifier::{ImportanceReport, Verifier};

pub const GLOBAL_IMPORTANCE_CAPTION: &str = "global importance, not per-trial attribution";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeLine {
    pub attribute: String,
    pub class_a: String,
    pub class_b: String,
    pub similarity: f64,
    pub importance: f64,
    /// weight × similarity, for models whose pre-activation is linear.
    pub contribution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub trial: TrialPair,
    pub route: String,
    pub mode: String,
    pub kind: String,
    pub schema_hash: String,
    /// Ascending by similarity, so disagreements come first.
    pub attributes: Vec<AttributeLine>,
    pub intercept: Option<f64>,
    pub pre_activation: Option<f64>,
    pub score: f64,
    pub importance_method: String,
    /// EER threshold from the last evaluation, when there was one.
    pub threshold: Option<f64>,
    pub accept: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplanationFormat {
    Text,
    Json,
}

impl ExplanationFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown explanation format `{other}`"))),
        }
    }
}

/// Build the explanation for one trial. `a` and `b` are the stage-1 outputs of
/// the two clips; `sv` is their similarity vector in the verifier's mode.
#[allow(clippy::too_many_arguments)]
pub fn explain(
    route: &str,
    verifier: &Verifier,
    schema: &AttributeSchema,
    trial: &TrialPair,
    a: &AttributeOutputs,
    b: &AttributeOutputs,
    sv: &SimilarityVector,
    importance: &ImportanceReport,
    threshold: Option<f64>,
) -> Result<Explanation> {
    let x = verifier.project(sv)?;
    let score = verifier.model.score_values(&x);
    let linear = verifier.model.linear_terms();
    let mut attributes = Vec::with_capacity(x.len());
    for (pos, &i) in verifier.component_indices.iter().enumerate() {
        let attr = &schema.attributes[i];
        let class = |o: &AttributeOutputs| attr.classes.get(o.classes[i]).cloned().unwrap_or_default();
        attributes.push(AttributeLine {
            attribute: attr.name.clone(),
            class_a: class(a),
            class_b: class(b),
            similarity: x[pos],
            importance: importance.weight(&attr.name).unwrap_or(0.0),
            contribution: linear.as_ref().map(|(_, w)| w[pos] * x[pos]),
        });
    }
    attributes.sort_by(|p, q| p.similarity.total_cmp(&q.similarity));
    let (intercept, pre_activation) = match &linear {
        Some((c, w)) => (Some(*c), Some(c + w.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>())),
        None => (None, None),
    };
    Ok(Explanation {
        trial: trial.clone(),
        route: route.to_string(),
        mode: verifier.mode.as_str().to_string(),
        kind: verifier.kind.clone(),
        schema_hash: verifier.schema_hash.clone(),
        attributes,
        intercept,
        pre_activation,
        score,
        importance_method: importance.method.clone(),
        threshold,
        accept: threshold.map(|t| score >= t),
    })
}

pub fn render_explanation(e: &Explanation, format: ExplanationFormat) -> Result<String> {
    match format {
        ExplanationFormat::Json => Ok(serde_json::to_string_pretty(e)?),
        ExplanationFormat::Text => Ok(render_text(e)),
    }
}

fn render_text(e: &Explanation) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let truth = if e.trial.target { "same speaker" } else { "different speakers" };
    let _ = writeln!(s, "trial {} vs {} ({truth})", e.trial.clip_a, e.trial.clip_b);
    let _ = writeln!(s, "route {}, {} similarity, {} verifier", e.route, e.mode, e.kind);
    let _ = writeln!(s);
    let w = e.attributes.iter().map(|l| l.attribute.len()).max().unwrap_or(9).max(9);
    let cw = e
        .attributes
        .iter()
        .map(|l| l.class_a.len().max(l.class_b.len()))
        .max()
        .unwrap_or(6)
        .max(6);
    let last = if e.intercept.is_some() { "contribution" } else { "" };
    let _ = writeln!(
        s,
        "{:<w$}  {:<cw$}  {:<cw$}  {:>10}  {:>10}  {last}",
        "attribute", "side a", "side b", "similarity", "importance"
    );
    for l in &e.attributes {
        let contribution = match l.contribution {
            Some(c) => format!("{:>+12.4}", c),
            None => String::new(),
        };
        let _ = writeln!(
            s,
            "{:<w$}  {:<cw$}  {:<cw$}  {:>10.4}  {:>10.4}  {contribution}",
            l.attribute, l.class_a, l.class_b, l.similarity, l.importance
        );
    }
    let _ = writeln!(s);
    match (e.intercept, e.pre_activation) {
        (Some(c), Some(z)) => {
            let _ = writeln!(s, "intercept {c:+.4}, pre-activation {z:+.4}");
        }
        _ => {
            let _ = writeln!(s, "importance: {} ({GLOBAL_IMPORTANCE_CAPTION})", e.importance_method);
        }
    }
    let _ = write!(s, "score {:.4}", e.score);
    match (e.threshold, e.accept) {
        (Some(t), Some(acc)) => {
            let verdict = if acc { "accept" } else { "reject" };
            let _ = writeln!(s, " vs EER threshold {t:.4}: {verdict}");
        }
        _ => {
            let _ = writeln!(s, " (no evaluation yet, so no threshold)");
        }
    }
    s
}
