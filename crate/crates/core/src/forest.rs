//! Random Forest classifier over feature vectors.
//!
//! Trees are grown on bootstrap resamples with a fresh random subset of
//! features considered at every split. Split quality is the Gini impurity
//! decrease, compared in exact integer arithmetic so that equal-quality
//! candidates are genuinely equal; ties go to the lowest feature index,
//! then the lowest threshold. All randomness comes from
//! [`XorShift64Star`](crate::rng::XorShift64Star): the master generator is
//! seeded with the training seed and each tree gets `master.fork()`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::action::{ActionLabel, NUM_ACTIONS};
use crate::features::FeatureVector;
use crate::rng::XorShift64Star;

pub const MODEL_FORMAT: &str = "soundmat.forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForestError {
    #[error("need at least 2 distinct labels to train, found {found}")]
    InsufficientClasses { found: usize },
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite feature value in training sample {sample}")]
    NonFiniteFeature { sample: usize },
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ModelFormatError {
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model format {format:?} version {version}")]
    Unsupported { format: String, version: u32 },
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: ActionLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features drawn per split; `None` means `ceil(sqrt(feature_dim))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn features_per_split_for(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim.max(1))
    }

    fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidConfig(
                "n_trees, max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        if self.features_per_split == Some(0) {
            return Err(ForestError::InvalidConfig("features_per_split must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { counts: [u32; NUM_ACTIONS] },
}

/// Majority class of a count vector; ties go to the lowest label id.
fn majority(counts: &[u32; NUM_ACTIONS]) -> usize {
    let mut best = 0;
    for c in 1..NUM_ACTIONS {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

/// A binary tree stored as a flat node array; the root is node 0 and every
/// child index is greater than its parent's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_for(&self, x: &[f64]) -> &[u32; NUM_ACTIONS] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn vote(&self, x: &[f64]) -> ActionLabel {
        ActionLabel::ALL[majority(self.leaf_for(x))]
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    fn validate(&self, feature_dim: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= feature_dim {
                        return Err(format!("node {i}: feature {feature} out of range"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    for c in [*left, *right] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(format!("node {i}: bad child index {c}"));
                        }
                    }
                }
                Node::Leaf { counts } => {
                    if counts.iter().map(|&c| c as u64).sum::<u64>() == 0 {
                        return Err(format!("node {i}: empty leaf"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-action probabilities, indexed by label id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities(pub [f64; NUM_ACTIONS]);

impl ClassProbabilities {
    pub fn get(&self, label: ActionLabel) -> f64 {
        self.0[label.index()]
    }

    /// Argmax; ties go to the lowest label id.
    pub fn top(&self) -> ActionLabel {
        let mut best = 0;
        for c in 1..NUM_ACTIONS {
            if self.0[c] > self.0[best] {
                best = c;
            }
        }
        ActionLabel::ALL[best]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ActionLabel, f64)> + '_ {
        ActionLabel::ALL.into_iter().zip(self.0.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<DecisionTree>,
    classes_present: Vec<ActionLabel>,
    train_seed: u64,
    feature_dim: usize,
    config: ForestConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: ForestModel,
}

impl ForestModel {
    /// Assembles a model from prebuilt trees, checking structural invariants.
    pub fn from_parts(
        trees: Vec<DecisionTree>,
        classes_present: Vec<ActionLabel>,
        train_seed: u64,
        feature_dim: usize,
        config: ForestConfig,
    ) -> Result<Self, ModelFormatError> {
        let model = Self {
            trees,
            classes_present,
            train_seed,
            feature_dim,
            config,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks structural invariants (tree shape, class support, tree count).
    pub fn validate(&self) -> Result<(), ModelFormatError> {
        let invalid = |m: String| Err(ModelFormatError::Invalid(m));
        if self.trees.is_empty() {
            return invalid("no trees".into());
        }
        if self.trees.len() != self.config.n_trees {
            return invalid(format!(
                "{} trees but config says {}",
                self.trees.len(),
                self.config.n_trees
            ));
        }
        if self.feature_dim == 0 {
            return invalid("feature_dim must be positive".into());
        }
        if !self.classes_present.windows(2).all(|w| w[0] < w[1]) {
            return invalid("classes_present must be strictly ascending".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(self.feature_dim)
                .or_else(|e| invalid(format!("tree {t}: {e}")))?;
            for node in &tree.nodes {
                if let Node::Leaf { counts } = node {
                    for (c, &n) in counts.iter().enumerate() {
                        if n > 0 && !self.classes_present.contains(&ActionLabel::ALL[c]) {
                            return invalid(format!("tree {t}: leaf votes for absent class {c}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn classes_present(&self) -> &[ActionLabel] {
        &self.classes_present
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn predict_proba(&self, features: &FeatureVector) -> Result<ClassProbabilities, ForestError> {
        if features.len() != self.feature_dim {
            return Err(ForestError::DimensionMismatch {
                expected: self.feature_dim,
                found: features.len(),
            });
        }
        let mut votes = [0u32; NUM_ACTIONS];
        for tree in &self.trees {
            votes[tree.vote(features.as_slice()).index()] += 1;
        }
        let n = self.trees.len() as f64;
        Ok(ClassProbabilities(votes.map(|v| v as f64 / n)))
    }

    pub fn predict_top(&self, features: &FeatureVector) -> Result<ActionLabel, ForestError> {
        Ok(self.predict_proba(features)?.top())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })
        .expect("forest model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelFormatError> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(ModelFormatError::Unsupported {
                format: doc.format,
                version: doc.version,
            });
        }
        doc.model.validate()?;
        Ok(doc.model)
    }
}

/// Sum of squared class counts.
fn sum_sq(counts: &[u32; NUM_ACTIONS]) -> u128 {
    counts.iter().map(|&c| (c as u128) * (c as u128)).sum()
}

/// `sum_sq(l)/n_l + sum_sq(r)/n_r` as an exact fraction. Maximizing it is
/// the same as maximizing the weighted Gini impurity decrease.
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn of(left: &[u32; NUM_ACTIONS], n_left: u32, right: &[u32; NUM_ACTIONS], n_right: u32) -> Self {
        let (nl, nr) = (n_left as u128, n_right as u128);
        Self {
            num: sum_sq(left) * nr + sum_sq(right) * nl,
            den: nl * nr,
        }
    }

    fn unsplit(counts: &[u32; NUM_ACTIONS], n: u32) -> Self {
        Self {
            num: sum_sq(counts),
            den: n as u128,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct Grower<'a> {
    samples: &'a [LabeledSample],
    cfg: &'a ForestConfig,
    k_features: usize,
    dim: usize,
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: SplitScore,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> [u32; NUM_ACTIONS] {
        let mut c = [0u32; NUM_ACTIONS];
        for &i in idx {
            c[self.samples[i].label.index()] += 1;
        }
        c
    }

    /// A uniformly shuffled feature order (Fisher-Yates, front to back).
    fn shuffled_features(&self, rng: &mut XorShift64Star) -> Vec<usize> {
        let mut all: Vec<usize> = (0..self.dim).collect();
        for i in 0..self.dim.saturating_sub(1) {
            let j = i + rng.below(self.dim - i);
            all.swap(i, j);
        }
        all
    }

    /// Best split over the first `k_features` of `order`. If none of them
    /// improves impurity, further features are added one at a time in
    /// `order` until one does or all have been tried.
    fn choose_split(&self, idx: &[usize], order: &[usize]) -> Option<Candidate> {
        let mut considered: Vec<usize> = order[..self.k_features].to_vec();
        considered.sort_unstable();
        if let Some(c) = self.best_split(idx, &considered) {
            return Some(c);
        }
        for &f in &order[self.k_features..] {
            considered.push(f);
            if self.best_split(idx, &[f]).is_some() {
                considered.sort_unstable();
                return self.best_split(idx, &considered);
            }
        }
        None
    }

    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<Candidate> {
        let n = idx.len() as u32;
        let total = self.counts(idx);
        let min_leaf = self.cfg.min_samples_leaf as u32;
        let mut best: Option<Candidate> = None;
        let mut column: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
        for &f in features {
            column.clear();
            column.extend(
                idx.iter()
                    .map(|&i| (self.samples[i].features.0[f], self.samples[i].label.index())),
            );
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0u32; NUM_ACTIONS];
            for pos in 0..column.len() - 1 {
                left[column[pos].1] += 1;
                let (lo, hi) = (column[pos].0, column[pos + 1].0);
                if lo == hi {
                    continue;
                }
                let n_left = pos as u32 + 1;
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let mut right = total;
                for c in 0..NUM_ACTIONS {
                    right[c] -= left[c];
                }
                let score = SplitScore::of(&left, n_left, &right, n_right);
                if best
                    .as_ref()
                    .map_or(true, |b| score.cmp(&b.score) == Ordering::Greater)
                {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if !(threshold >= lo && threshold < hi) {
                        threshold = lo;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best.filter(|b| b.score.cmp(&SplitScore::unsplit(&total, n)) == Ordering::Greater)
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut XorShift64Star) -> usize {
        let id = self.nodes.len();
        let counts = self.counts(&idx);
        self.nodes.push(Node::Leaf { counts });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_samples_leaf {
            return id;
        }
        let order = self.shuffled_features(rng);
        let Some(split) = self.choose_split(&idx, &order) else {
            return id;
        };
        let (li, ri): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.samples[i].features.0[split.feature] <= split.threshold);
        let left = self.grow(li, depth + 1, rng);
        let right = self.grow(ri, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Trains a forest. The result is a pure function of the sample order,
/// the config and the seed.
pub fn train_forest(
    samples: &[LabeledSample],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<ForestModel, ForestError> {
    cfg.validate()?;
    let mut present = [false; NUM_ACTIONS];
    for s in samples {
        present[s.label.index()] = true;
    }
    let classes_present: Vec<ActionLabel> = ActionLabel::ALL
        .into_iter()
        .filter(|a| present[a.index()])
        .collect();
    if classes_present.len() < 2 {
        return Err(ForestError::InsufficientClasses {
            found: classes_present.len(),
        });
    }
    let dim = samples[0].features.len();
    if dim == 0 {
        return Err(ForestError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != dim {
            return Err(ForestError::DimensionMismatch {
                expected: dim,
                found: s.features.len(),
            });
        }
        if !s.features.0.iter().all(|v| v.is_finite()) {
            return Err(ForestError::NonFiniteFeature { sample: i });
        }
    }

    let n = samples.len();
    let mut master = XorShift64Star::new(seed);
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        let mut rng = master.fork();
        let idx: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.below(n)).collect()
        } else {
            (0..n).collect()
        };
        let mut grower = Grower {
            samples,
            cfg,
            k_features: cfg.features_per_split_for(dim),
            dim,
            nodes: Vec::new(),
        };
        grower.grow(idx, 0, &mut rng);
        trees.push(DecisionTree {
            nodes: grower.nodes,
        });
    }
    Ok(ForestModel {
        trees,
        classes_present,
        train_seed: seed,
        feature_dim: dim,
        config: cfg.clone(),
    })
}
