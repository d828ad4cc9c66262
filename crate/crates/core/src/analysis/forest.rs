//! Random-forest regression: bagged CART trees with variance-reduction
//! splits and a random feature subset at each node.
//!
//! Tree `i` draws all of its randomness from `seed + i`, so training is
//! reproducible no matter how trees are spread over threads.

use std::thread;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::textfeat::FeatureTable;

pub const MODEL_FORMAT: &str = "melodi-forest/1";
pub const MIN_ROWS: usize = 10;
pub const DEFAULT_SPLIT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// `None` means a third of the features, at least one.
    pub features_per_split: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, max_depth: 12, min_samples_leaf: 2, features_per_split: None }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(AnalysisError::InvalidParams(
                "n_trees, max_depth and min_samples_leaf must be at least 1".into(),
            ));
        }
        if self.features_per_split == Some(0) {
            return Err(AnalysisError::InvalidParams("features_per_split must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolved_features(&self, n_features: usize) -> usize {
        self.features_per_split.unwrap_or(n_features / 3).clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    /// Rows with `x[feature] <= threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn leaves(&self, out: &mut Vec<f64>) {
        match self {
            Node::Leaf { value } => out.push(*value),
            Node::Split { left, right, .. } => {
                left.leaves(out);
                right.leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub trees: Vec<Node>,
}

impl ForestModel {
    /// Prediction for one row in the model's own feature order.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// Predicts every row of `table`, matching columns by name.
    pub fn predict(&self, table: &FeatureTable) -> Result<Vec<f64>, AnalysisError> {
        let idx = self
            .feature_names
            .iter()
            .map(|n| table.column_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        let mut x = vec![0.0; idx.len()];
        Ok(table
            .rows
            .iter()
            .map(|row| {
                for (slot, &j) in x.iter_mut().zip(&idx) {
                    *slot = row[j];
                }
                self.predict_row(&x)
            })
            .collect())
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.trees.iter().for_each(|t| t.leaves(&mut out));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AnalysisError> {
        let model: ForestModel = serde_json::from_str(text).map_err(|e| AnalysisError::Model(e.to_string()))?;
        if model.trees.is_empty() {
            return Err(AnalysisError::Model("model has no trees".into()));
        }
        Ok(model)
    }
}

/// Trains on every row of `table`.
pub fn train_forest(table: &FeatureTable, params: &ForestParams, seed: u64) -> Result<ForestModel, AnalysisError> {
    let rows: Vec<usize> = (0..table.n_rows()).collect();
    train_on_rows(table, &rows, params, seed)
}

pub fn train_on_rows(
    table: &FeatureTable,
    rows: &[usize],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel, AnalysisError> {
    params.validate()?;
    if rows.len() < MIN_ROWS {
        return Err(AnalysisError::TooFewRows { needed: MIN_ROWS, found: rows.len() });
    }
    if table.n_cols() == 0 {
        return Err(AnalysisError::InvalidParams("no feature columns".into()));
    }
    let k = params.resolved_features(table.n_cols());
    let model = |trees| ForestModel {
        format: MODEL_FORMAT.to_string(),
        n_trees: params.n_trees,
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        features_per_split: k,
        seed,
        feature_names: table.columns.clone(),
        trees,
    };

    let first = table.target[rows[0]];
    if rows.iter().all(|&i| table.target[i] == first) {
        warn!("target is constant; the model predicts {first} everywhere");
        return Ok(model(vec![Node::Leaf { value: first }; params.n_trees]));
    }

    let builder = TreeBuilder { table, params, k };
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(params.n_trees);
    let mut trees: Vec<Option<Node>> = vec![None; params.n_trees];
    let chunk = params.n_trees.div_ceil(workers);
    thread::scope(|scope| {
        for (c, slots) in trees.chunks_mut(chunk).enumerate() {
            let builder = &builder;
            scope.spawn(move || {
                for (offset, slot) in slots.iter_mut().enumerate() {
                    let tree_index = (c * chunk + offset) as u64;
                    *slot = Some(builder.tree(rows, seed.wrapping_add(tree_index)));
                }
            });
        }
    });
    Ok(model(trees.into_iter().map(|t| t.expect("every tree built")).collect()))
}

struct TreeBuilder<'a> {
    table: &'a FeatureTable,
    params: &'a ForestParams,
    k: usize,
}

impl TreeBuilder<'_> {
    fn tree(&self, rows: &[usize], tree_seed: u64) -> Node {
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
        let mut sample: Vec<usize> = (0..rows.len()).map(|_| rows[rng.gen_range(0..rows.len())]).collect();
        self.grow(&mut sample, 0, &mut rng)
    }

    fn leaf(&self, idx: &[usize]) -> Node {
        Node::Leaf { value: idx.iter().map(|&i| self.table.target[i]).sum::<f64>() / idx.len() as f64 }
    }

    fn grow(&self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> Node {
        let y = &self.table.target;
        let min_leaf = self.params.min_samples_leaf;
        let first = y[idx[0]];
        if depth >= self.params.max_depth || idx.len() < 2 * min_leaf || idx.iter().all(|&i| y[i] == first) {
            return self.leaf(idx);
        }

        let mut features: Vec<usize> = (0..self.table.n_cols()).collect();
        features.partial_shuffle(rng, self.k);
        let mut best: Option<(f64, usize, f64)> = None;
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| y[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| y[i] * y[i]).sum();
        let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in &features[..self.k] {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.table.rows[i][f], y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut sum, mut sq) = (0.0, 0.0);
            for s in 0..n - 1 {
                sum += order[s].1;
                sq += order[s].1 * order[s].1;
                let left_n = s + 1;
                if left_n < min_leaf || n - left_n < min_leaf || order[s].0 == order[s + 1].0 {
                    continue;
                }
                let right_n = (n - left_n) as f64;
                // Sum of squared deviations on each side.
                let cost = (sq - sum * sum / left_n as f64) + ((total_sq - sq) - (total - sum).powi(2) / right_n);
                if best.is_none_or(|(c, _, _)| cost < c) {
                    let threshold = order[s].0 + (order[s + 1].0 - order[s].0) / 2.0;
                    best = Some((cost, f, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return self.leaf(idx);
        };

        let mut split = 0;
        for i in 0..n {
            if self.table.rows[idx[i]][feature] <= threshold {
                idx.swap(i, split);
                split += 1;
            }
        }
        if split == 0 || split == n {
            return self.leaf(idx);
        }
        let (l, r) = idx.split_at_mut(split);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.grow(l, depth + 1, rng)),
            right: Box::new(self.grow(r, depth + 1, rng)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub r2: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub split: f64,
    pub split_seed: u64,
}

/// Coefficient of determination. A constant truth scores 1 when matched
/// exactly and 0 otherwise.
pub fn r2_score(truth: &[f64], predicted: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// Seeded shuffle of `0..n`; the first `round(n * split)` indices train.
pub fn split_rows(n: usize, split: f64, split_seed: u64) -> Result<(Vec<usize>, Vec<usize>), AnalysisError> {
    if !(split > 0.0 && split < 1.0) {
        return Err(AnalysisError::InvalidParams(format!("split must be in (0, 1), got {split}")));
    }
    if n < MIN_ROWS {
        return Err(AnalysisError::TooFewRows { needed: MIN_ROWS, found: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_train = ((n as f64 * split).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Scores `model` on the held-out rows of the `(split, split_seed)` split.
pub fn evaluate(
    model: &ForestModel,
    table: &FeatureTable,
    split: f64,
    split_seed: u64,
) -> Result<ModelEvaluation, AnalysisError> {
    let (train, test) = split_rows(table.n_rows(), split, split_seed)?;
    let predictions = model.predict(table)?;
    let truth: Vec<f64> = test.iter().map(|&i| table.target[i]).collect();
    let held: Vec<f64> = test.iter().map(|&i| predictions[i]).collect();
    Ok(ModelEvaluation { r2: r2_score(&truth, &held), n_train: train.len(), n_test: test.len(), split, split_seed })
}

/// Trains on the training part of the split and scores on the rest.
pub fn train_and_evaluate(
    table: &FeatureTable,
    params: &ForestParams,
    seed: u64,
    split: f64,
    split_seed: u64,
) -> Result<(ForestModel, ModelEvaluation), AnalysisError> {
    let (train, _) = split_rows(table.n_rows(), split, split_seed)?;
    let model = train_on_rows(table, &train, params, seed)?;
    let eval = evaluate(&model, table, split, split_seed)?;
    Ok((model, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_table(n: usize) -> FeatureTable {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, ((i * 37) % 11) as f64]).collect();
        let target = rows.iter().map(|r| 5.0 * r[0]).collect();
        FeatureTable::new(vec!["x".into(), "noise".into()], rows, target)
    }

    #[test]
    fn recovers_noiseless_function() {
        let t = linear_table(200).select(&["x"]).unwrap();
        let model = train_forest(&t, &ForestParams::default(), 0).unwrap();
        let pred = model.predict(&t).unwrap();
        let r2 = r2_score(&t.target, &pred);
        assert!(r2 >= 0.99, "r2 = {r2}");
    }

    #[test]
    fn constant_target() {
        let mut t = linear_table(30);
        t.target = vec![4.5; 30];
        let model = train_forest(&t, &ForestParams::default(), 1).unwrap();
        assert!(model.predict(&t).unwrap().iter().all(|&p| p == 4.5));
    }

    #[test]
    fn deterministic_and_round_trips() {
        let t = linear_table(60);
        let params = ForestParams { n_trees: 12, ..ForestParams::default() };
        let a = train_forest(&t, &params, 9).unwrap();
        let b = train_forest(&t, &params, 9).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(ForestModel::from_json(&a.to_json()).unwrap(), a);
        assert_ne!(a, train_forest(&t, &params, 10).unwrap());
    }

    #[test]
    fn predictions_bounded_by_training_targets() {
        let t = linear_table(80);
        let model = train_forest(&t, &ForestParams { n_trees: 20, ..ForestParams::default() }, 3).unwrap();
        let (lo, hi) = (0.0, 5.0 * 79.0);
        assert!(model.leaf_values().iter().all(|&v| (lo..=hi).contains(&v)));
        let probe = FeatureTable::new(t.columns.clone(), vec![vec![-1e9, 0.0], vec![1e9, 5.0]], vec![0.0, 0.0]);
        assert!(model.predict(&probe).unwrap().iter().all(|&v| (lo..=hi).contains(&v)));
        assert!(model.trees.iter().all(|tree| tree.depth() <= 12));
    }

    #[test]
    fn column_order_does_not_matter() {
        let t = linear_table(50);
        let model = train_forest(&t, &ForestParams { n_trees: 10, ..ForestParams::default() }, 2).unwrap();
        let swapped = t.select(&["noise", "x"]).unwrap();
        assert_eq!(model.predict(&t).unwrap(), model.predict(&swapped).unwrap());
        assert_eq!(evaluate(&model, &t, 0.8, 4).unwrap(), evaluate(&model, &swapped, 0.8, 4).unwrap());
    }

    #[test]
    fn r2_reference_points() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(r2_score(&y, &y), 1.0);
        assert_eq!(r2_score(&y, &[2.5; 4]), 0.0);
        assert!(r2_score(&y, &[40.0, -30.0, 20.0, -10.0]) < 0.0);
    }

    #[test]
    fn too_few_rows_and_bad_params() {
        let t = linear_table(9);
        assert!(matches!(train_forest(&t, &ForestParams::default(), 0), Err(AnalysisError::TooFewRows { .. })));
        let bad = ForestParams { n_trees: 0, ..ForestParams::default() };
        assert!(train_forest(&linear_table(20), &bad, 0).is_err());
        assert!(split_rows(20, 1.0, 0).is_err());
    }

    #[test]
    fn split_is_seeded_partition() {
        let (a, b) = split_rows(100, 0.8, 5).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        assert_eq!(split_rows(100, 0.8, 5).unwrap(), (a.clone(), b.clone()));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
