//! CART decision tree with Gini impurity and random feature subsampling.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node<T> {
    /// Samples with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: T, left: usize, right: usize },
    /// Class counts of the training samples that reached this leaf.
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub n_classes: usize,
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

/// Column-major training matrix shared by every tree of a forest.
pub(crate) struct TrainingMatrix<'a, T> {
    pub columns: &'a [Vec<T>],
    pub targets: &'a [usize],
}

impl<T> TrainingMatrix<'_, T> {
    pub fn n_features(&self) -> usize {
        self.columns.len()
    }
}

/// Nodes are stored in a flat arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionTree<T> {
    nodes: Vec<Node<T>>,
}

struct SplitChoice<T> {
    feature: usize,
    threshold: T,
    score: f64,
}

fn gini_gain_score(left: &[u32], right: &[u32], n_left: u32, n_right: u32) -> f64 {
    // Weighted Gini impurity is n - sum(c^2)/n per side; maximizing the sum
    // of squared-count ratios minimizes it.
    let sq = |counts: &[u32], n: u32| -> f64 {
        counts.iter().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>() / f64::from(n)
    };
    sq(left, n_left) + sq(right, n_right)
}

impl<T: Scalar> DecisionTree<T> {
    pub fn from_nodes(nodes: Vec<Node<T>>) -> Self {
        DecisionTree { nodes }
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Grows a tree on the rows listed in `sample` (repeats allowed).
    pub(crate) fn grow<R: Rng>(data: &TrainingMatrix<'_, T>, sample: Vec<usize>, params: &TreeParams, rng: &mut R) -> Self {
        let mut nodes: Vec<Node<T>> = vec![Node::Leaf { counts: Vec::new() }];
        // (node slot, rows, depth)
        let mut stack = vec![(0usize, sample, 0usize)];
        let mut feature_order: Vec<usize> = (0..data.n_features()).collect();
        let mut pairs: Vec<(T, usize)> = Vec::new();

        while let Some((slot, rows, depth)) = stack.pop() {
            let mut counts = vec![0u32; params.n_classes];
            for &r in &rows {
                counts[data.targets[r]] += 1;
            }
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
            let split = if pure || depth_capped || rows.len() < params.min_samples_split {
                None
            } else {
                best_split(data, &rows, &counts, params, &mut feature_order, &mut pairs, rng)
            };
            match split {
                None => nodes[slot] = Node::Leaf { counts },
                Some(choice) => {
                    let column = &data.columns[choice.feature];
                    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&r| column[r] <= choice.threshold);
                    debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());
                    let left = nodes.len();
                    nodes.push(Node::Leaf { counts: Vec::new() });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { counts: Vec::new() });
                    nodes[slot] = Node::Split { feature: choice.feature, threshold: choice.threshold, left, right };
                    stack.push((right, right_rows, depth + 1));
                    stack.push((left, left_rows, depth + 1));
                }
            }
        }
        DecisionTree { nodes }
    }

    /// Leaf class counts reached by `x`.
    pub fn leaf_counts(&self, x: &[T]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Majority class of the reached leaf; ties go to the lowest index.
    pub fn predict(&self, x: &[T]) -> usize {
        argmax_lowest(self.leaf_counts(x))
    }

    pub(crate) fn max_feature_index(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub(crate) fn validate(&self, n_features: usize, n_classes: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree without nodes".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { counts } => {
                    if counts.len() != n_classes || counts.iter().all(|&c| c == 0) {
                        return Err(format!("node {i}: leaf needs {n_classes} nonzero counts"));
                    }
                }
                Node::Split { feature, left, right, .. } => {
                    if *feature >= n_features || *left <= i || *right <= i || *left >= self.nodes.len() || *right >= self.nodes.len() {
                        return Err(format!("node {i}: invalid split"));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn argmax_lowest<C: PartialOrd + Copy>(values: &[C]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn best_split<T: Scalar, R: Rng>(
    data: &TrainingMatrix<'_, T>,
    rows: &[usize],
    counts: &[u32],
    params: &TreeParams,
    feature_order: &mut [usize],
    pairs: &mut Vec<(T, usize)>,
    rng: &mut R,
) -> Option<SplitChoice<T>> {
    feature_order.shuffle(rng);
    let n = rows.len() as u32;
    let mut best: Option<SplitChoice<T>> = None;
    let mut visited = 0;
    let mut left = vec![0u32; counts.len()];
    let mut right = vec![0u32; counts.len()];

    for &feature in feature_order.iter() {
        // Keep drawing past max_features until some valid split turns up.
        if visited >= params.max_features && best.is_some() {
            break;
        }
        let column = &data.columns[feature];
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (column[r], data.targets[r])));
        pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        if pairs[0].0 == pairs[pairs.len() - 1].0 {
            // Constant within this node; does not count as visited.
            continue;
        }
        visited += 1;

        left.iter_mut().for_each(|c| *c = 0);
        right.copy_from_slice(counts);
        for i in 0..pairs.len() - 1 {
            let (value, class) = pairs[i];
            left[class] += 1;
            right[class] -= 1;
            let next = pairs[i + 1].0;
            if next <= value {
                continue;
            }
            let n_left = i as u32 + 1;
            let score = gini_gain_score(&left, &right, n_left, n - n_left);
            if best.as_ref().is_none_or(|b| score > b.score) {
                let two = T::one() + T::one();
                let mut threshold = (value + next) / two;
                if threshold >= next {
                    threshold = value;
                }
                best = Some(SplitChoice { feature, threshold, score });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn columns(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
    }

    #[test]
    fn separable_threshold_is_midpoint() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 0.3]).collect();
        let targets: Vec<usize> = (0..10).map(|i| usize::from(i >= 5)).collect();
        let cols = columns(&rows);
        let data = TrainingMatrix { columns: &cols, targets: &targets };
        let params = TreeParams { n_classes: 2, max_features: 2, max_depth: None, min_samples_split: 2 };
        let tree = DecisionTree::grow(&data, (0..10).collect(), &params, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(tree.depth(), 1);
        match &tree.nodes()[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert!((threshold - 0.45).abs() < 1e-12);
            }
            other => panic!("expected split, got {other:?}"),
        }
        for (r, &t) in rows.iter().zip(&targets) {
            assert_eq!(tree.predict(r), t);
        }
        tree.validate(2, 2).unwrap();
    }

    #[test]
    fn conflicting_duplicates_become_a_leaf() {
        let rows = vec![vec![1.0f64], vec![1.0], vec![1.0]];
        let targets = vec![0, 1, 1];
        let cols = columns(&rows);
        let data = TrainingMatrix { columns: &cols, targets: &targets };
        let params = TreeParams { n_classes: 2, max_features: 1, max_depth: None, min_samples_split: 2 };
        let tree = DecisionTree::grow(&data, vec![0, 1, 2], &params, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(tree.leaf_counts(&[1.0]), &[1, 2]);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        assert_eq!(argmax_lowest(&[2u32, 2]), 0);
        assert_eq!(argmax_lowest(&[1u32, 3, 3]), 1);
    }
}
