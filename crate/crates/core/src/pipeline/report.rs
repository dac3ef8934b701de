//! Evaluation report: JSON document plus flat CSV grids.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::EerResult;
use crate::verifier::ImportanceReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialCounts {
    pub train_pos: usize,
    pub train_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
    pub train_with_replacement: bool,
    pub test_with_replacement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub route: String,
    pub mode: String,
    pub kind: String,
    #[serde(flatten)]
    pub eer: EerResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceCell {
    pub route: String,
    pub mode: String,
    pub kind: String,
    #[serde(flatten)]
    pub importance: ImportanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleAttributeCell {
    pub route: String,
    pub mode: String,
    pub kind: String,
    pub attribute: String,
    #[serde(flatten)]
    pub eer: EerResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub fingerprint: String,
    pub seed: u64,
    pub schema_hash: String,
    /// Similarity components the grid was fitted on.
    pub attributes: Vec<String>,
    pub trial_counts: TrialCounts,
    /// route → attribute → held-out accuracy.
    pub accuracy: BTreeMap<String, BTreeMap<String, f64>>,
    pub grid: Vec<GridCell>,
    pub importance: Vec<ImportanceCell>,
    pub single_attribute: Vec<SingleAttributeCell>,
}

impl Report {
    pub fn cell(&self, route: &str, mode: &str, kind: &str) -> Option<&GridCell> {
        self.grid
            .iter()
            .find(|c| c.route == route && c.mode == mode && c.kind == kind)
    }

    pub fn eer(&self, route: &str, mode: &str, kind: &str) -> Option<f64> {
        self.cell(route, mode, kind).map(|c| c.eer.eer)
    }

    pub fn importance_of(&self, route: &str, mode: &str, kind: &str) -> Option<&ImportanceReport> {
        self.importance
            .iter()
            .find(|c| c.route == route && c.mode == mode && c.kind == kind)
            .map(|c| &c.importance)
    }

    pub fn single(&self, route: &str, mode: &str, kind: &str, attribute: &str) -> Option<f64> {
        self.single_attribute
            .iter()
            .find(|c| c.route == route && c.mode == mode && c.kind == kind && c.attribute == attribute)
            .map(|c| c.eer.eer)
    }

    fn routes(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for c in &self.grid {
            if !seen.contains(&c.route.as_str()) {
                seen.push(&c.route);
            }
        }
        seen
    }

    /// One row per (kind, mode), one EER column per route.
    pub fn grid_csv(&self) -> String {
        let routes = self.routes();
        let mut s = String::from("kind,mode");
        for r in &routes {
            let _ = write!(s, ",{r}");
        }
        s.push('\n');
        let mut rows: Vec<(&str, &str)> = Vec::new();
        for c in &self.grid {
            if !rows.contains(&(c.kind.as_str(), c.mode.as_str())) {
                rows.push((&c.kind, &c.mode));
            }
        }
        for (kind, mode) in rows {
            let _ = write!(s, "{kind},{mode}");
            for r in &routes {
                match self.eer(r, mode, kind) {
                    Some(e) => {
                        let _ = write!(s, ",{e:.6}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn single_attribute_csv(&self) -> String {
        let mut s = String::from("route,mode,kind,attribute,eer,degenerate\n");
        for c in &self.single_attribute {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{}",
                c.route, c.mode, c.kind, c.attribute, c.eer.eer, c.eer.degenerate
            );
        }
        s
    }
}
