//! Random forest misuse prefilter.
//!
//! Trees are CART with Gini impurity, grown to purity on bootstrap resamples
//! with `floor(sqrt(d))` candidate features per split. Each tree draws from
//! its own random stream derived from `(seed, tree index)`, so training is
//! reproducible regardless of thread scheduling.

mod balance;
mod tree;

pub use balance::{balance_binary, balance_multiclass, BalanceRecipe, PER_CLASS_TARGET};
pub use tree::{DecisionTree, Node, TreeParams};

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ClassLabel;
use crate::rng::indexed_stream;
use crate::scalar::Scalar;
use tree::{argmax_lowest, TrainingMatrix};

pub const FOREST_FORMAT_VERSION: u32 = 1;

/// Binary decision: 0 = background, 1 = attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Verdict {
    Benign = 0,
    Attack = 1,
}

impl Verdict {
    pub fn of_label(label: ClassLabel) -> Self {
        if label.is_attack() {
            Verdict::Attack
        } else {
            Verdict::Benign
        }
    }

    pub fn from_flag(attack: bool) -> Self {
        if attack {
            Verdict::Attack
        } else {
            Verdict::Benign
        }
    }

    pub fn is_attack(self) -> bool {
        self == Verdict::Attack
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl From<Verdict> for u8 {
    fn from(v: Verdict) -> u8 {
        v.as_u8()
    }
}

impl TryFrom<u8> for Verdict {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Verdict::Benign),
            1 => Ok(Verdict::Attack),
            other => Err(format!("verdict must be 0 or 1, got {other}")),
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestMode {
    /// Background (class 0) against all attacks pooled (class 1).
    Binary,
    /// One class per label seen in training.
    Multiclass,
}

impl std::str::FromStr for ForestMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(ForestMode::Binary),
            "multiclass" | "multi-class" => Ok(ForestMode::Multiclass),
            other => Err(Error::invalid(format!("unknown forest mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_features: None, max_depth: None, min_samples_split: 2, bootstrap: true, seed: 0 }
    }
}

impl ForestConfig {
    pub fn resolved_max_features(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1))
            .clamp(1, n_features.max(1))
    }
}

/// Class predicted by a forest, in the vocabulary of its mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Binary(Verdict),
    Class(ClassLabel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel<T> {
    pub format_version: u32,
    pub mode: ForestMode,
    /// Class order in multiclass mode; empty in binary mode.
    pub classes: Vec<ClassLabel>,
    pub n_features: usize,
    pub trees: Vec<DecisionTree<T>>,
}

impl<T: Scalar> ForestModel<T> {
    /// Trains on feature rows `x` labelled by `y`.
    pub fn fit(x: &[Vec<T>], y: &[ClassLabel], mode: ForestMode, config: &ForestConfig) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!("{} rows but {} labels", x.len(), y.len())));
        }
        let n_features = x.first().map(Vec::len).ok_or_else(|| Error::invalid("empty training set"))?;
        if let Some(bad) = x.iter().find(|r| r.len() != n_features) {
            return Err(Error::Dimension { expected: n_features, got: bad.len() });
        }
        if n_features == 0 {
            return Err(Error::invalid("zero-dimensional samples"));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        if config.n_trees == 0 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        let (classes, targets): (Vec<ClassLabel>, Vec<usize>) = match mode {
            ForestMode::Binary => (Vec::new(), y.iter().map(|l| usize::from(l.is_attack())).collect()),
            ForestMode::Multiclass => {
                let classes: Vec<ClassLabel> = y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
                let targets = y.iter().map(|l| classes.binary_search(l).expect("label collected")).collect();
                (classes, targets)
            }
        };
        let n_classes = if mode == ForestMode::Binary { 2 } else { classes.len() };
        let distinct = targets.iter().collect::<BTreeSet<_>>().len();
        if distinct < 2 {
            return Err(Error::invalid("training data needs at least two distinct classes"));
        }

        let columns: Vec<Vec<T>> = (0..n_features).map(|j| x.iter().map(|r| r[j]).collect()).collect();
        let data = TrainingMatrix { columns: &columns, targets: &targets };
        let params = TreeParams {
            n_classes,
            max_features: config.resolved_max_features(n_features),
            max_depth: config.max_depth,
            min_samples_split: config.min_samples_split.max(2),
        };
        let n = x.len();
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = indexed_stream(config.seed, t as u64);
                let sample: Vec<usize> = if config.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::grow(&data, sample, &params, &mut rng)
            })
            .collect();
        Ok(ForestModel { format_version: FOREST_FORMAT_VERSION, mode, classes, n_features, trees })
    }

    pub fn n_classes(&self) -> usize {
        match self.mode {
            ForestMode::Binary => 2,
            ForestMode::Multiclass => self.classes.len(),
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Dimension { expected: self.n_features, got: x.len() });
        }
        Ok(())
    }

    /// Per-class tree votes for `x`.
    pub fn votes(&self, x: &[T]) -> Result<Vec<u32>> {
        self.check_dim(x)?;
        let mut votes = vec![0u32; self.n_classes()];
        for tree in &self.trees {
            votes[tree.predict(x)] += 1;
        }
        Ok(votes)
    }

    /// Majority vote over trees; ties go to the lowest class index.
    pub fn predict_index(&self, x: &[T]) -> Result<usize> {
        Ok(argmax_lowest(&self.votes(x)?))
    }

    pub fn predict(&self, x: &[T]) -> Result<Prediction> {
        let idx = self.predict_index(x)?;
        Ok(match self.mode {
            ForestMode::Binary => Prediction::Binary(Verdict::from_flag(idx == 1)),
            ForestMode::Multiclass => Prediction::Class(self.classes[idx]),
        })
    }

    /// Attack/background decision; multiclass predictions of any attack
    /// class map to [`Verdict::Attack`].
    pub fn predict_binary(&self, x: &[T]) -> Result<Verdict> {
        Ok(match self.predict(x)? {
            Prediction::Binary(v) => v,
            Prediction::Class(label) => Verdict::of_label(label),
        })
    }

    /// Fraction of trees voting for an attack class; the score-level output.
    pub fn attack_score(&self, x: &[T]) -> Result<f64> {
        let votes = self.votes(x)?;
        let attack: u32 = match self.mode {
            ForestMode::Binary => votes[1],
            ForestMode::Multiclass => self
                .classes
                .iter()
                .zip(&votes)
                .filter(|(l, _)| l.is_attack())
                .map(|(_, &v)| v)
                .sum(),
        };
        Ok(f64::from(attack) / self.trees.len() as f64)
    }

    /// Structural checks for a deserialized model.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FOREST_FORMAT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "forest format version {} (expected {FOREST_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.trees.is_empty() {
            return Err(Error::invalid("forest without trees"));
        }
        if self.mode == ForestMode::Binary && !self.classes.is_empty() {
            return Err(Error::invalid("binary forest must not list classes"));
        }
        for (i, t) in self.trees.iter().enumerate() {
            t.validate(self.n_features, self.n_classes())
                .map_err(|e| Error::invalid(format!("tree {i}: {e}")))?;
            debug_assert!(t.max_feature_index().is_none_or(|f| f < self.n_features));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<ClassLabel>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let v = i as f64 / 40.0;
            x.push(vec![v, (i * 7 % 11) as f64 / 11.0, 0.25]);
            y.push(if v < 0.5 { ClassLabel::Background } else { ClassLabel::Dos });
        }
        (x, y)
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = toy();
        let f = ForestModel::fit(&x, &y, ForestMode::Binary, &ForestConfig { n_trees: 15, ..Default::default() }).unwrap();
        for (r, l) in x.iter().zip(&y) {
            assert_eq!(f.predict_binary(r).unwrap(), Verdict::of_label(*l));
        }
        f.validate().unwrap();
    }

    #[test]
    fn single_tree_without_bootstrap_is_cart() {
        let (x, y) = toy();
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, max_features: Some(3), ..Default::default() };
        let f = ForestModel::fit(&x, &y, ForestMode::Binary, &cfg).unwrap();
        assert_eq!(f.trees.len(), 1);
        // Full search over all features on all rows finds the clean cut.
        assert_eq!(f.trees[0].depth(), 1);
        assert_eq!(f.attack_score(&[0.9, 0.0, 0.25]).unwrap(), 1.0);
    }

    #[test]
    fn deterministic_under_seed() {
        let (x, y) = toy();
        let cfg = ForestConfig { n_trees: 10, seed: 42, ..Default::default() };
        let a = ForestModel::fit(&x, &y, ForestMode::Multiclass, &cfg).unwrap();
        let b = ForestModel::fit(&x, &y, ForestMode::Multiclass, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let (x, y) = toy();
        let one_class = vec![ClassLabel::Dos; x.len()];
        assert!(ForestModel::fit(&x, &one_class, ForestMode::Binary, &ForestConfig::default()).is_err());
        // Two attack classes are one class in binary mode.
        let attacks: Vec<_> = (0..x.len()).map(|i| if i % 2 == 0 { ClassLabel::Dos } else { ClassLabel::Scan11 }).collect();
        assert!(ForestModel::fit(&x, &attacks, ForestMode::Binary, &ForestConfig::default()).is_err());
        let mut ragged = x.clone();
        ragged[3].push(1.0);
        assert!(matches!(
            ForestModel::fit(&ragged, &y, ForestMode::Binary, &ForestConfig::default()),
            Err(Error::Dimension { .. })
        ));
        let f = ForestModel::fit(&x, &y, ForestMode::Binary, &ForestConfig { n_trees: 3, ..Default::default() }).unwrap();
        assert!(matches!(f.predict(&[0.1]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn multiclass_binarization() {
        let (x, mut y) = toy();
        for (r, l) in x.iter().zip(y.iter_mut()) {
            if r[0] >= 0.75 {
                *l = ClassLabel::Scan11;
            }
        }
        let f = ForestModel::fit(&x, &y, ForestMode::Multiclass, &ForestConfig { n_trees: 15, ..Default::default() }).unwrap();
        assert_eq!(f.classes, vec![ClassLabel::Background, ClassLabel::Dos, ClassLabel::Scan11]);
        let probe = [0.95, 0.5, 0.25];
        assert_eq!(f.predict(&probe).unwrap(), Prediction::Class(ClassLabel::Scan11));
        assert_eq!(f.predict_binary(&probe).unwrap(), Verdict::Attack);
        assert_eq!(f.predict_binary(&[0.1, 0.5, 0.25]).unwrap(), Verdict::Benign);
    }

    #[test]
    fn vote_tie_goes_to_background() {
        let leaf = |c: [u32; 2]| DecisionTree::from_nodes(vec![Node::Leaf { counts: c.to_vec() }]);
        let f: ForestModel<f64> = ForestModel {
            format_version: FOREST_FORMAT_VERSION,
            mode: ForestMode::Binary,
            classes: vec![],
            n_features: 1,
            trees: vec![leaf([3, 1]), leaf([1, 3])],
        };
        assert_eq!(f.predict_binary(&[0.0]).unwrap(), Verdict::Benign);
        let unanimous = ForestModel { trees: vec![leaf([3, 1]); 4], ..f.clone() };
        assert_eq!(unanimous.predict_binary(&[0.0]).unwrap(), Verdict::Benign);
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = toy();
        let f = ForestModel::fit(&x, &y, ForestMode::Binary, &ForestConfig { n_trees: 4, ..Default::default() }).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        let back: ForestModel<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
        back.validate().unwrap();
    }
}
