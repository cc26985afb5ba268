//! Gradient-boosted regression trees over categorical feature vectors.
//!
//! Every split routes a row left iff its category for the split feature is a
//! member of the node's `left_categories`; everything else, including
//! categories never seen at that node during training, goes right. Trees are
//! fitted to squared-error residuals of the running prediction and leaf values
//! already carry the shrinkage factor, so
//! `predict(x) = base_score + sum_t leaf_value(tree_t, x)`.

mod grow;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::catset::CategorySet;
use crate::error::{invalid, Result};

/// Rows of categorical features paired with real-valued targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDataset {
    domain_sizes: Vec<usize>,
    rows: Vec<Vec<usize>>,
    targets: Vec<f64>,
}

impl CategoricalDataset {
    pub fn new(domain_sizes: Vec<usize>) -> Result<Self> {
        if domain_sizes.is_empty() {
            return Err(invalid("dataset needs at least one feature"));
        }
        if domain_sizes.contains(&0) {
            return Err(invalid("feature domain sizes must be positive"));
        }
        Ok(CategoricalDataset {
            domain_sizes,
            rows: Vec::new(),
            targets: Vec::new(),
        })
    }

    /// All features share the same domain size `k`.
    pub fn uniform(num_features: usize, k: usize) -> Result<Self> {
        Self::new(vec![k; num_features])
    }

    pub fn from_rows(domain_sizes: Vec<usize>, rows: Vec<Vec<usize>>, targets: Vec<f64>) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(invalid(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let mut data = Self::new(domain_sizes)?;
        for (row, y) in rows.into_iter().zip(targets) {
            data.push(row, y)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, features: Vec<usize>, target: f64) -> Result<()> {
        check_features(&self.domain_sizes, &features)?;
        if !target.is_finite() {
            return Err(invalid("targets must be finite"));
        }
        self.rows.push(features);
        self.targets.push(target);
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.domain_sizes.len()
    }

    pub fn domain_sizes(&self) -> &[usize] {
        &self.domain_sizes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

pub(crate) fn check_features(domain_sizes: &[usize], x: &[usize]) -> Result<()> {
    if x.len() != domain_sizes.len() {
        return Err(invalid(format!(
            "feature vector has length {}, expected {}",
            x.len(),
            domain_sizes.len()
        )));
    }
    for (j, (&c, &k)) in x.iter().zip(domain_sizes).enumerate() {
        if c >= k {
            return Err(invalid(format!("feature {j} has category {c} outside [0, {k})")));
        }
    }
    Ok(())
}

/// Boosting hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GbtConfig {
    pub n_trees: usize,
    /// Maximum depth of every tree.
    pub interaction_depth: usize,
    pub min_samples_leaf: usize,
    pub max_leaves: usize,
    pub shrinkage: f64,
    /// Recorded with the model. Fitting uses neither row nor feature
    /// subsampling, so the result does not depend on it.
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_trees: 800,
            interaction_depth: 2,
            min_samples_leaf: 20,
            max_leaves: 5,
            shrinkage: 0.1,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(invalid("n_trees must be at least 1"));
        }
        if self.max_leaves < 2 {
            return Err(invalid("max_leaves must be at least 2"));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(invalid("shrinkage must lie in (0, 1]"));
        }
        if self.min_samples_leaf == 0 {
            return Err(invalid("min_samples_leaf must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        left_categories: CategorySet,
        /// Squared-error reduction achieved by this split during training.
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

/// A decision tree stored as a node arena in pre-order; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Checks that `nodes` is a well-formed pre-order arena: every child index
    /// points forward, every node is reached exactly once and every split set
    /// is a non-empty strict subset of its feature's domain.
    pub fn new(nodes: Vec<Node>, domain_sizes: &[usize]) -> Result<Self> {
        if nodes.is_empty() {
            return Err(invalid("a tree needs at least one node"));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        let mut expected_next = 0usize;
        while let Some(i) = stack.pop() {
            if i != expected_next || i >= nodes.len() || seen[i] {
                return Err(invalid("tree nodes are not in pre-order"));
            }
            seen[i] = true;
            expected_next += 1;
            if let Node::Split {
                feature,
                left_categories,
                left,
                right,
                ..
            } = &nodes[i]
            {
                let k = *domain_sizes
                    .get(*feature)
                    .ok_or_else(|| invalid(format!("split on unknown feature {feature}")))?;
                if left_categories.universe() != k
                    || left_categories.is_empty()
                    || left_categories.len() == k
                {
                    return Err(invalid("split set must be a non-empty strict subset of the domain"));
                }
                stack.push(*right);
                stack.push(*left);
            }
        }
        if expected_next != nodes.len() {
            return Err(invalid("tree has unreachable nodes"));
        }
        Ok(Tree { nodes })
    }

    pub(crate) fn from_nodes_unchecked(nodes: Vec<Node>) -> Self {
        Tree { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Index of the leaf node that `x` is routed to.
    pub fn leaf_for(&self, x: &[usize]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    left_categories,
                    left,
                    right,
                    ..
                } => {
                    i = if left_categories.contains(x[*feature]) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn value_for(&self, x: &[usize]) -> f64 {
        match self.nodes[self.leaf_for(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Number of split nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

/// Base score plus an ordered list of additive trees.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    domain_sizes: Vec<usize>,
    base_score: f64,
    trees: Vec<Tree>,
    config: GbtConfig,
}

impl TreeEnsemble {
    pub fn from_parts(
        domain_sizes: Vec<usize>,
        base_score: f64,
        trees: Vec<Tree>,
        config: GbtConfig,
    ) -> Result<Self> {
        if domain_sizes.is_empty() || domain_sizes.contains(&0) {
            return Err(invalid("domain sizes must be non-empty and positive"));
        }
        if !base_score.is_finite() {
            return Err(invalid("base score must be finite"));
        }
        for tree in &trees {
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        left_categories,
                        ..
                    } => {
                        if *feature >= domain_sizes.len()
                            || left_categories.universe() != domain_sizes[*feature]
                        {
                            return Err(invalid("tree does not match the feature domains"));
                        }
                    }
                    Node::Leaf { value, .. } => {
                        if !value.is_finite() {
                            return Err(invalid("leaf values must be finite"));
                        }
                    }
                }
            }
        }
        Ok(TreeEnsemble {
            domain_sizes,
            base_score,
            trees,
            config,
        })
    }

    pub fn domain_sizes(&self) -> &[usize] {
        &self.domain_sizes
    }

    pub fn num_features(&self) -> usize {
        self.domain_sizes.len()
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn config(&self) -> &GbtConfig {
        &self.config
    }

    pub fn predict(&self, x: &[usize]) -> Result<f64> {
        check_features(&self.domain_sizes, x)?;
        Ok(self.predict_unchecked(x))
    }

    /// Like [`predict`](Self::predict) without domain checks. Trees are summed
    /// in order starting from the base score, so the result is bit-identical
    /// to `predict` for valid inputs.
    pub fn predict_unchecked(&self, x: &[usize]) -> f64 {
        let mut acc = self.base_score;
        for tree in &self.trees {
            acc += tree.value_for(x);
        }
        acc
    }

    /// Impurity-based importances: total squared-error reduction per feature,
    /// normalized to sum to one. All zeros when the ensemble has no splits.
    pub fn feature_importances(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.domain_sizes.len()];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let Node::Split { feature, gain, .. } = node {
                    imp[*feature] += *gain;
                }
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            for v in &mut imp {
                *v /= total;
            }
        }
        imp
    }

    pub fn num_splits(&self) -> usize {
        self.trees
            .iter()
            .map(|t| t.nodes.len() - t.num_leaves())
            .sum()
    }
}

/// Fits `cfg.n_trees` boosting rounds on squared-error residuals.
pub fn fit(data: &CategoricalDataset, cfg: &GbtConfig) -> Result<TreeEnsemble> {
    fit_with_callback(data, cfg, |_, _| {})
}

/// Same as [`fit`], calling `on_round(round, predictions)` with the training
/// predictions after every boosting round.
pub fn fit_with_callback<F>(data: &CategoricalDataset, cfg: &GbtConfig, mut on_round: F) -> Result<TreeEnsemble>
where
    F: FnMut(usize, &[f64]),
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("cannot fit an ensemble on an empty dataset"));
    }
    let n = data.len();
    let targets = data.targets();
    let first = targets[0];
    let base_score = if targets.iter().all(|&y| y == first) {
        first
    } else {
        targets.iter().sum::<f64>() / n as f64
    };

    let columns = grow::Columns::new(data);
    let mut predictions = vec![base_score; n];
    let mut residuals: Vec<f64> = targets.iter().map(|y| y - base_score).collect();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for round in 0..cfg.n_trees {
        let (tree, assignments) = grow::grow_tree(&columns, &residuals, cfg);
        for (leaf, rows) in assignments {
            if let Node::Leaf { value, .. } = tree.nodes[leaf] {
                for i in rows {
                    predictions[i] += value;
                }
            }
        }
        for i in 0..n {
            residuals[i] = targets[i] - predictions[i];
        }
        trees.push(tree);
        on_round(round, &predictions);
    }
    Ok(TreeEnsemble {
        domain_sizes: data.domain_sizes().to_vec(),
        base_score,
        trees,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests;
