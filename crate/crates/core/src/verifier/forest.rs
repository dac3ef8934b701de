//! Bagged CART trees with Gini splits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_samples, Sample, StageTwoConfig, StageTwoFitter, StageTwoModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per node; `None` means ⌈√k⌉.
    pub feature_subsample: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 5,
            feature_subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Split feature; `None` at leaves.
    pub feature: Option<usize>,
    /// Samples with `x[feature] <= threshold` go left.
    pub threshold: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Class fractions [p0, p1] of the training samples reaching the node.
    pub leaf_probs: [f64; 2],
    pub gain: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &TreeNode {
        let mut node = &self.nodes[0];
        while let (Some(f), Some(t), Some(l), Some(r)) = (node.feature, node.threshold, node.left, node.right) {
            node = &self.nodes[if x[f] <= t { l } else { r }];
        }
        node
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub inputs: usize,
    pub trees: Vec<Tree>,
}

impl StageTwoModel for ForestModel {
    fn kind(&self) -> &'static str {
        "forest"
    }

    fn dim(&self) -> usize {
        self.inputs
    }

    /// Mean leaf probability of the same-speaker class.
    fn score_values(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.leaf(x).leaf_probs[1]).sum::<f64>() / self.trees.len() as f64
    }

    /// Mean decrease in impurity, weighted by the share of samples at each split.
    fn raw_importance(&self, _: &[Sample], _: u64) -> Result<Vec<f64>> {
        let mut imp = vec![0.0; self.inputs];
        for tree in &self.trees {
            let root = tree.nodes[0].samples.max(1) as f64;
            for node in &tree.nodes {
                if let Some(f) = node.feature {
                    imp[f] += node.samples as f64 / root * node.gain;
                }
            }
        }
        let n = self.trees.len().max(1) as f64;
        Ok(imp.into_iter().map(|v| v / n).collect())
    }

    fn importance_method(&self) -> &'static str {
        "mean-impurity-decrease"
    }

    fn params_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

pub fn gini(positives: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = positives as f64 / n as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Best Gini split of `idx` over `features` with midpoint thresholds. Both
/// children keep at least `min_leaf` samples. Equal gains keep the lowest
/// feature, then the lowest threshold.
pub fn best_split(data: &[Sample], idx: &[usize], features: &[usize], min_leaf: usize) -> Option<Split> {
    let n = idx.len();
    let pos = idx.iter().filter(|&&i| data[i].1).count();
    let parent = gini(pos, n);
    let min_leaf = min_leaf.max(1);
    let mut best: Option<Split> = None;
    let mut column: Vec<(f64, bool)> = Vec::with_capacity(n);
    let mut sorted_features = features.to_vec();
    sorted_features.sort_unstable();
    for &f in &sorted_features {
        column.clear();
        column.extend(idx.iter().map(|&i| (data[i].0[f], data[i].1)));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_pos = 0;
        for i in 0..n.saturating_sub(1) {
            left_pos += usize::from(column[i].1);
            if column[i].0 == column[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let gain = parent
                - (nl as f64 / n as f64) * gini(left_pos, nl)
                - (nr as f64 / n as f64) * gini(pos - left_pos, nr);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: (column[i].0 + column[i + 1].0) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

fn grow(data: &[Sample], rows: Vec<usize>, params: &ForestParams, k: usize, rng: &mut ChaCha8Rng) -> Tree {
    let per_node = params
        .feature_subsample
        .unwrap_or_else(|| (k as f64).sqrt().ceil() as usize)
        .clamp(1, k.max(1));
    let mut nodes: Vec<TreeNode> = Vec::new();
    // (node index, sample rows, depth)
    let mut stack = vec![(0usize, rows, 0usize)];
    nodes.push(empty_node());
    while let Some((id, idx, depth)) = stack.pop() {
        let pos = idx.iter().filter(|&&i| data[i].1).count();
        let n = idx.len();
        let p1 = if n == 0 { 0.0 } else { pos as f64 / n as f64 };
        nodes[id].leaf_probs = [1.0 - p1, p1];
        nodes[id].samples = n;
        if depth >= params.max_depth || pos == 0 || pos == n || k == 0 {
            continue;
        }
        let features: Vec<usize> = if per_node >= k {
            (0..k).collect()
        } else {
            let mut f = rand::seq::index::sample(rng, k, per_node).into_vec();
            f.sort_unstable();
            f
        };
        let Some(split) = best_split(data, &idx, &features, params.min_leaf) else {
            continue;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| data[i].0[split.feature] <= split.threshold);
        let l = nodes.len();
        nodes.push(empty_node());
        let r = nodes.len();
        nodes.push(empty_node());
        let node = &mut nodes[id];
        node.feature = Some(split.feature);
        node.threshold = Some(split.threshold);
        node.left = Some(l);
        node.right = Some(r);
        node.gain = split.gain;
        // right pushed first so the left subtree is expanded first
        stack.push((r, right, depth + 1));
        stack.push((l, left, depth + 1));
    }
    Tree { nodes }
}

fn empty_node() -> TreeNode {
    TreeNode {
        feature: None,
        threshold: None,
        left: None,
        right: None,
        leaf_probs: [0.0, 0.0],
        gain: 0.0,
        samples: 0,
    }
}

pub struct ForestFitter;

impl ForestFitter {
    /// Training rows are put in a canonical order first, so the fit does not
    /// depend on how the caller ordered them. A single tree uses every row;
    /// larger forests bootstrap with per-tree seeds.
    pub fn fit_model(&self, data: &[Sample], params: &ForestParams, seed: u64) -> Result<ForestModel> {
        let k = check_samples(data, false)?;
        if params.n_trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        let mut canonical = data.to_vec();
        canonical.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        let n = canonical.len();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let rows = if params.n_trees == 1 {
                    (0..n).collect()
                } else {
                    let mut r: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    r.sort_unstable();
                    r
                };
                grow(&canonical, rows, params, k, &mut rng)
            })
            .collect();
        Ok(ForestModel { inputs: k, trees })
    }
}

impl StageTwoFitter for ForestFitter {
    fn name(&self) -> &'static str {
        "forest"
    }

    fn fit(&self, data: &[Sample], config: &StageTwoConfig, seed: u64) -> Result<Box<dyn StageTwoModel>> {
        Ok(Box::new(self.fit_model(data, &config.forest, seed)?))
    }

    fn load(&self, params: &serde_json::Value) -> Result<Box<dyn StageTwoModel>> {
        let bad = |r: &str| Error::format("forest parameters", r);
        let m: ForestModel = serde_json::from_value(params.clone()).map_err(|e| bad(&e.to_string()))?;
        if m.trees.is_empty() {
            return Err(bad("no trees"));
        }
        for tree in &m.trees {
            if tree.nodes.is_empty() {
                return Err(bad("empty tree"));
            }
            for node in &tree.nodes {
                let children = [node.left, node.right];
                if node.feature.is_some_and(|f| f >= m.inputs)
                    || children.iter().flatten().any(|&c| c >= tree.nodes.len())
                    || node.feature.is_some() != (node.left.is_some() && node.right.is_some() && node.threshold.is_some())
                {
                    return Err(bad("malformed node"));
                }
            }
        }
        Ok(Box::new(m))
    }

    fn hyperparameters(&self, config: &StageTwoConfig) -> serde_json::Value {
        serde_json::to_value(&config.forest).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pro_rule(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let x = vec![
                    ((i * 7) % 13) as f64 / 12.0,
                    ((i * 3) % 11) as f64 / 10.0,
                    ((i * 5) % 17) as f64 / 16.0,
                    ((i * 37) % 1000) as f64 / 999.0,
                ];
                let y = x[3] > 0.5;
                (x, y)
            })
            .collect()
    }

    fn single(depth: usize) -> ForestParams {
        ForestParams {
            n_trees: 1,
            max_depth: depth,
            min_leaf: 5,
            feature_subsample: Some(4),
        }
    }

    #[test]
    fn stump_recovers_threshold() {
        let data = pro_rule(1000);
        let m = ForestFitter.fit_model(&data, &single(1), 1).unwrap();
        let root = &m.trees[0].nodes[0];
        assert_eq!(root.feature, Some(3));
        let t = root.threshold.unwrap();
        assert!(t > 0.49 && t < 0.51, "{t}");
        let acc = data
            .iter()
            .filter(|(x, y)| (m.score_values(x) > 0.5) == *y)
            .count() as f64
            / data.len() as f64;
        assert!(acc >= 0.99);
        let imp = m.raw_importance(&[], 0).unwrap();
        assert!(imp[3] / imp.iter().sum::<f64>() > 0.9);
    }

    #[test]
    fn depth_zero_is_the_base_rate() {
        let data = pro_rule(200);
        let rate = data.iter().filter(|(_, y)| *y).count() as f64 / 200.0;
        let m = ForestFitter.fit_model(&data, &single(0), 1).unwrap();
        assert_eq!(m.score_values(&[0.0; 4]), rate);
        assert_eq!(m.score_values(&[1.0; 4]), rate);
    }

    #[test]
    fn storage_order_does_not_matter() {
        let data = pro_rule(300);
        let mut rev = data.clone();
        rev.reverse();
        let params = ForestParams {
            n_trees: 7,
            ..ForestParams::default()
        };
        assert_eq!(
            ForestFitter.fit_model(&data, &params, 3).unwrap(),
            ForestFitter.fit_model(&rev, &params, 3).unwrap()
        );
    }

    #[test]
    fn ties_go_to_lowest_feature() {
        // features 0 and 1 are identical, so both offer the same best gain
        let data: Vec<Sample> = (0..20).map(|i| (vec![(i % 2) as f64, (i % 2) as f64], i % 2 == 1)).collect();
        let idx: Vec<usize> = (0..20).collect();
        let s = best_split(&data, &idx, &[1, 0], 1).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 0.5);
        assert!((s.gain - 0.5).abs() < 1e-12);
    }

    #[test]
    fn load_rejects_malformed_trees() {
        let m = ForestFitter.fit_model(&pro_rule(50), &single(2), 0).unwrap();
        let mut v = m.params_json().unwrap();
        v["trees"][0]["nodes"][0]["left"] = serde_json::json!(999);
        assert!(ForestFitter.load(&v).is_err());
    }
}
