//! Random-forest sentiment classifier, evaluation metrics and the
//! probability-to-reward score map.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::corpus::{assign_splits, Dialog, SentimentLabel, Split};
use crate::features::{
    extract_dialogic_all, fit_tfidf, select_features, AcousticTable, DialogicFeatures, FeatureFamilies,
    TurnFeaturizer,
};
use crate::error::{Error, Result};
use crate::stats::{derive_seed, rng_from, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeaturesPerSplit {
    /// `ceil(sqrt(d))`
    Sqrt,
    All,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            FeaturesPerSplit::Sqrt => ((d as f64).sqrt().ceil() as usize).max(1),
            FeaturesPerSplit::All => d,
            FeaturesPerSplit::Count(n) => n.clamp(1, d.max(1)),
        }
    }
}

impl FromStr for FeaturesPerSplit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sqrt" => Ok(FeaturesPerSplit::Sqrt),
            "all" => Ok(FeaturesPerSplit::All),
            n => n
                .parse()
                .map(FeaturesPerSplit::Count)
                .map_err(|_| format!("expected `sqrt`, `all` or a count, got `{n}`")),
        }
    }
}

impl fmt::Display for FeaturesPerSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeaturesPerSplit::Sqrt => f.write_str("sqrt"),
            FeaturesPerSplit::All => f.write_str("all"),
            FeaturesPerSplit::Count(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: FeaturesPerSplit::Sqrt,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = ForestConfig::default();
        let max_depth = match kv.take::<String>("max_depth")? {
            None => d.max_depth,
            Some(s) if s == "none" => None,
            Some(s) => Some(
                s.parse()
                    .map_err(|_| Error::Config(format!("key `max_depth`: expected a count or `none`, got `{s}`")))?,
            ),
        };
        let cfg = ForestConfig {
            n_trees: kv.take_or("n_trees", d.n_trees)?,
            max_depth,
            min_leaf: kv.take_or("min_leaf", d.min_leaf)?,
            features_per_split: kv.take_or("features_per_split", d.features_per_split)?,
            bootstrap: kv.take_or("bootstrap", d.bootstrap)?,
        };
        if cfg.n_trees == 0 || cfg.min_leaf == 0 {
            return Err(Error::Config("n_trees and min_leaf must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("n_trees", self.n_trees);
        kv.set("max_depth", self.max_depth.map_or("none".to_string(), |d| d.to_string()));
        kv.set("min_leaf", self.min_leaf);
        kv.set("features_per_split", self.features_per_split);
        kv.set("bootstrap", self.bootstrap);
        kv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Weighted class counts of the training samples reaching the leaf.
    Leaf { counts: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_counts(&self, x: &[f64]) -> &[f64] {
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

    pub fn predict_probs(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf_counts(x);
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + rec(nodes, *left).max(rec(nodes, *right)),
            }
        }
        rec(&self.nodes, 0)
    }
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    weights: Vec<f64>,
    n_classes: usize,
    cfg: &'a ForestConfig,
    mtry: usize,
    importances: Vec<f64>,
    root_weight: f64,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
    left_counts: Vec<f64>,
    left_weight: f64,
}

impl Grower<'_> {
    fn counts(&self, samples: &[usize]) -> (Vec<f64>, f64) {
        let mut c = vec![0.0; self.n_classes];
        for &s in samples {
            c[self.y[s]] += self.weights[s];
        }
        let total = c.iter().sum();
        (c, total)
    }

    fn grow(&mut self, samples: Vec<usize>, rng: &mut impl Rng) -> DecisionTree {
        let mut nodes: Vec<Node> = vec![Node::Leaf { counts: Vec::new() }];
        let mut stack = vec![(0usize, samples, 0usize)];
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        while let Some((slot, samples, depth)) = stack.pop() {
            let (counts, total) = self.counts(&samples);
            let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
            let depth_ok = self.cfg.max_depth.is_none_or(|m| depth < m);
            let split = if pure || !depth_ok || total < 2.0 * self.cfg.min_leaf as f64 {
                None
            } else {
                self.best_split(&samples, &counts, total, &mut features, rng)
            };
            let Some(best) = split else {
                nodes[slot] = Node::Leaf { counts };
                continue;
            };
            let right_counts: Vec<f64> = counts.iter().zip(&best.left_counts).map(|(a, b)| a - b).collect();
            let right_weight = total - best.left_weight;
            let decrease = gini(&counts, total)
                - best.left_weight / total * gini(&best.left_counts, best.left_weight)
                - right_weight / total * gini(&right_counts, right_weight);
            self.importances[best.feature] += total / self.root_weight * decrease.max(0.0);
            let (l, r): (Vec<usize>, Vec<usize>) = samples
                .iter()
                .partition(|&&s| self.x[s][best.feature] <= best.threshold);
            let left = nodes.len();
            nodes.push(Node::Leaf { counts: Vec::new() });
            let right = nodes.len();
            nodes.push(Node::Leaf { counts: Vec::new() });
            nodes[slot] = Node::Split {
                feature: best.feature,
                threshold: best.threshold,
                left,
                right,
            };
            stack.push((right, r, depth + 1));
            stack.push((left, l, depth + 1));
        }
        DecisionTree { nodes }
    }

    /// Visits features in random order until `mtry` non-constant ones have
    /// been evaluated (constant features do not count toward the budget).
    fn best_split(
        &self,
        samples: &[usize],
        counts: &[f64],
        total: f64,
        features: &mut [usize],
        rng: &mut impl Rng,
    ) -> Option<BestSplit> {
        let d = features.len();
        let min_leaf = self.cfg.min_leaf as f64;
        let mut best: Option<BestSplit> = None;
        let mut evaluated = 0;
        let mut order: Vec<usize> = samples.to_vec();
        for i in 0..d {
            if evaluated >= self.mtry {
                break;
            }
            let j = rng.gen_range(i..d);
            features.swap(i, j);
            let f = features[i];
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let lo = self.x[order[0]][f];
            let hi = self.x[order[order.len() - 1]][f];
            if lo == hi {
                continue;
            }
            evaluated += 1;
            let mut left = vec![0.0; self.n_classes];
            let mut wl = 0.0;
            for k in 0..order.len() - 1 {
                let s = order[k];
                left[self.y[s]] += self.weights[s];
                wl += self.weights[s];
                let (a, b) = (self.x[s][f], self.x[order[k + 1]][f]);
                if a == b {
                    continue;
                }
                let wr = total - wl;
                if wl < min_leaf || wr < min_leaf {
                    continue;
                }
                let right: Vec<f64> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let score = wl * gini(&left, wl) + wr * gini(&right, wr);
                if best.as_ref().is_none_or(|b| score < b.score - 1e-12) {
                    let mid = 0.5 * (a + b);
                    let threshold = if mid < b { mid } else { a };
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                        left_counts: left.clone(),
                        left_weight: wl,
                    });
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    n_features: usize,
    n_classes: usize,
    config: ForestConfig,
    trees: Vec<DecisionTree>,
    importances: Vec<f64>,
}

fn validate_xy(x: &[Vec<f64>], y: &[usize]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Data("no training samples".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} samples but {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Shape(format!("sample {i} has {} features, expected {d}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
    }
    Ok(d)
}

impl RandomForest {
    /// Trains with `max(y) + 1` classes.
    pub fn train(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig, seed: u64) -> Result<Self> {
        let n_classes = y.iter().max().map_or(0, |m| m + 1);
        Self::train_with_classes(x, y, n_classes, cfg, seed)
    }

    pub fn train_with_classes(
        x: &[Vec<f64>],
        y: &[usize],
        n_classes: usize,
        cfg: &ForestConfig,
        seed: u64,
    ) -> Result<Self> {
        let d = validate_xy(x, y)?;
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::OutOfRange {
                index: bad,
                len: n_classes,
            });
        }
        let first = y[0];
        if y.iter().all(|&c| c == first) {
            return Err(Error::Data("training labels contain a single class".into()));
        }
        if cfg.n_trees == 0 || cfg.min_leaf == 0 {
            return Err(Error::Config("n_trees and min_leaf must be at least 1".into()));
        }
        let mtry = cfg.features_per_split.resolve(d);
        let n = x.len();
        let grown: Vec<(DecisionTree, Vec<f64>)> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from(derive_seed(seed, 0xF0_4E57, t as u64), 0, 0);
                let mut weights = vec![0.0; n];
                if cfg.bootstrap {
                    for _ in 0..n {
                        weights[rng.gen_range(0..n)] += 1.0;
                    }
                } else {
                    weights.fill(1.0);
                }
                let samples: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
                let mut g = Grower {
                    x,
                    y,
                    root_weight: weights.iter().sum(),
                    weights,
                    n_classes,
                    cfg,
                    mtry,
                    importances: vec![0.0; d],
                };
                let tree = g.grow(samples, &mut rng);
                let sum: f64 = g.importances.iter().sum();
                if sum > 0.0 {
                    g.importances.iter_mut().for_each(|v| *v /= sum);
                }
                (tree, g.importances)
            })
            .collect();
        let mut importances = vec![0.0; d];
        for (_, imp) in &grown {
            for (a, b) in importances.iter_mut().zip(imp) {
                *a += b / cfg.n_trees as f64;
            }
        }
        Ok(RandomForest {
            n_features: d,
            n_classes,
            config: *cfg,
            trees: grown.into_iter().map(|(t, _)| t).collect(),
            importances,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Mean decrease in impurity, normalized per tree and averaged.
    pub fn importances(&self) -> Vec<f64> {
        self.importances.clone()
    }

    /// Mean over trees of the leaf class frequencies.
    pub fn predict_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::Shape(format!(
                "query has {} features, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            let counts = t.leaf_counts(x);
            let total: f64 = counts.iter().sum();
            for (a, c) in p.iter_mut().zip(counts) {
                *a += c / total;
            }
        }
        let n = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        Ok(p)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(crate::neural::argmax(&self.predict_probs(x)?))
    }

    pub fn evaluate(&self, x: &[Vec<f64>], y: &[usize]) -> Result<EvalReport> {
        let pred = x.iter().map(|r| self.predict(r)).collect::<Result<Vec<_>>>()?;
        evaluate_predictions(y, &pred, self.n_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

/// Per-class precision/recall/F1 (0 where undefined) and support-weighted F1.
pub fn evaluate_predictions(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!("{} labels but {} predictions", truth.len(), pred.len())));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::OutOfRange {
                index: t.max(p),
                len: n_classes,
            });
        }
        confusion[t][p] += 1;
    }
    let n = truth.len() as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let classes: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let weighted_f1 = classes.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / n;
    let accuracy = (0..n_classes).map(|c| confusion[c][c]).sum::<usize>() as f64 / n;
    Ok(EvalReport {
        classes,
        weighted_f1,
        accuracy,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentProbs {
    pub p_neg: f64,
    pub p_neu: f64,
    pub p_pos: f64,
}

impl SentimentProbs {
    pub fn new(p_neg: f64, p_neu: f64, p_pos: f64) -> Result<Self> {
        let p = SentimentProbs { p_neg, p_neu, p_pos };
        let a = p.to_array();
        if a.iter().any(|v| !(0.0..=1.0).contains(v)) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("not a probability simplex: {a:?}")));
        }
        Ok(p)
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        match p {
            [a, b, c] => Self::new(*a, *b, *c),
            _ => Err(Error::Shape(format!("expected 3 class probabilities, got {}", p.len()))),
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.p_neg, self.p_neu, self.p_pos]
    }

    /// Most likely label; ties go to negative, then neutral.
    pub fn label(&self) -> SentimentLabel {
        SentimentLabel::from_index(crate::neural::argmax(&self.to_array())).expect("3 classes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub negative: f64,
    pub neutral: f64,
    pub positive: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            negative: -5.0,
            neutral: -1.0,
            positive: 10.0,
        }
    }
}

pub fn sentiment_score(p: &SentimentProbs, w: &ScoreWeights) -> f64 {
    w.negative * p.p_neg + w.neutral * p.p_neu + w.positive * p.p_pos
}

/// Sentiment prediction from dialogic features alone, as needed for
/// simulated users whose only signal is a sampled feature row.
pub trait DialogicSentiment: Send + Sync {
    fn predict_dialogic(&self, features: &DialogicFeatures) -> SentimentProbs;
}

/// Returns the same probabilities for every input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedSentiment(pub SentimentProbs);

impl DialogicSentiment for FixedSentiment {
    fn predict_dialogic(&self, _: &DialogicFeatures) -> SentimentProbs {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub families: FeatureFamilies,
    pub forest: ForestConfig,
    pub min_df: usize,
    pub acoustic_k: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            families: FeatureFamilies::DIALOGIC,
            forest: ForestConfig::default(),
            min_df: 2,
            acoustic_k: 20,
        }
    }
}

impl DetectorConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = DetectorConfig::default();
        let families = match kv.take::<String>("features")? {
            Some(s) => FeatureFamilies::parse(&s)?,
            None => d.families,
        };
        Ok(DetectorConfig {
            families,
            forest: ForestConfig::from_kv(kv)?,
            min_df: kv.take_or("min_df", d.min_df)?,
            acoustic_k: kv.take_or("acoustic_k", d.acoustic_k)?,
        })
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.forest.to_kv();
        kv.set("features", self.families.name());
        kv.set("min_df", self.min_df);
        kv.set("acoustic_k", self.acoustic_k);
        kv
    }
}

const DETECTOR_FORMAT: &str = "sentidial-sentiment";
const DETECTOR_VERSION: u32 = 1;

/// A trained sentiment classifier together with its featurizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentDetector {
    format: String,
    version: u32,
    pub config: DetectorConfig,
    pub featurizer: TurnFeaturizer,
    pub forest: RandomForest,
}

/// Labelled turns as `(features, label index)` rows.
pub fn labelled_rows(
    dialogs: &[Dialog],
    featurizer: &TurnFeaturizer,
    acoustic: Option<&AcousticTable>,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for d in dialogs {
        for (t, turn) in d.turns.iter().enumerate() {
            if let Some(label) = turn.sentiment_label {
                x.push(featurizer.featurize(d, t, acoustic)?);
                y.push(label.index());
            }
        }
    }
    Ok((x, y))
}

impl SentimentDetector {
    /// Trains on the labelled turns of `train`; the tf-idf vocabulary is fit
    /// on every user utterance of `text_corpus`.
    pub fn train(
        train: &[Dialog],
        text_corpus: &[Dialog],
        acoustic: Option<&AcousticTable>,
        cfg: &DetectorConfig,
        seed: u64,
    ) -> Result<Self> {
        let families = cfg.families;
        if !(families.acoustic || families.dialogic || families.textual) {
            return Err(Error::Config("no feature family selected".into()));
        }
        let tfidf = if families.textual {
            let texts: Vec<&str> = text_corpus
                .iter()
                .flat_map(|d| d.turns.iter().map(|t| t.user_text.as_str()))
                .collect();
            Some(fit_tfidf(&texts, cfg.min_df)?)
        } else {
            None
        };
        let (acoustic_columns, acoustic_names) = if families.acoustic {
            let table = acoustic.ok_or_else(|| Error::Data("acoustic features requested but no table given".into()))?;
            let raw = TurnFeaturizer {
                families: FeatureFamilies {
                    acoustic: true,
                    dialogic: false,
                    textual: false,
                },
                tfidf: None,
                acoustic_columns: (0..table.dim()).collect(),
                acoustic_names: table.names().to_vec(),
            };
            let (x, y) = labelled_rows(train, &raw, acoustic)?;
            let k = cfg.acoustic_k.min(table.dim());
            let sel = select_features(&x, &y, k, Some(table.names().to_vec()), &cfg.forest, derive_seed(seed, 0x5E1, 0))?;
            (sel.selected(), table.names().to_vec())
        } else {
            (Vec::new(), Vec::new())
        };
        let featurizer = TurnFeaturizer {
            families,
            tfidf,
            acoustic_columns,
            acoustic_names,
        };
        let (x, y) = labelled_rows(train, &featurizer, acoustic)?;
        let forest = RandomForest::train_with_classes(&x, &y, 3, &cfg.forest, seed)?;
        Ok(SentimentDetector {
            format: DETECTOR_FORMAT.into(),
            version: DETECTOR_VERSION,
            config: *cfg,
            featurizer,
            forest,
        })
    }

    pub fn predict_turn(&self, dialog: &Dialog, turn_index: usize, acoustic: Option<&AcousticTable>) -> Result<SentimentProbs> {
        let x = self.featurizer.featurize(dialog, turn_index, acoustic)?;
        SentimentProbs::from_slice(&self.forest.predict_probs(&x)?)
    }

    pub fn predict_parts(
        &self,
        acoustic: Option<&[f64]>,
        dialogic: &DialogicFeatures,
        user_text: &str,
    ) -> Result<SentimentProbs> {
        let x = self.featurizer.featurize_parts(acoustic, dialogic, user_text)?;
        SentimentProbs::from_slice(&self.forest.predict_probs(&x)?)
    }

    /// Probabilities for every turn of a dialog (labelled or not).
    pub fn predict_dialog(&self, dialog: &Dialog, acoustic: Option<&AcousticTable>) -> Result<Vec<SentimentProbs>> {
        let dialogic = extract_dialogic_all(dialog);
        dialog
            .turns
            .iter()
            .zip(&dialogic)
            .map(|(t, f)| {
                let row = match (self.featurizer.families.acoustic, acoustic, &t.acoustic_key) {
                    (true, Some(table), Some(k)) => table.get(k),
                    _ => None,
                };
                self.predict_parts(row, f, &t.user_text)
            })
            .collect()
    }

    pub fn evaluate(&self, dialogs: &[Dialog], acoustic: Option<&AcousticTable>) -> Result<EvalReport> {
        let (x, y) = labelled_rows(dialogs, &self.featurizer, acoustic)?;
        self.forest.evaluate(&x, &y)
    }

    pub fn is_dialogic_only(&self) -> bool {
        self.featurizer.families == FeatureFamilies::DIALOGIC
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: SentimentDetector = serde_json::from_str(&text)
            .map_err(|e| Error::IncompatibleModel(format!("{}: {e}", path.display())))?;
        if model.format != DETECTOR_FORMAT || model.version != DETECTOR_VERSION {
            return Err(Error::IncompatibleModel(format!(
                "{}: expected {DETECTOR_FORMAT} v{DETECTOR_VERSION}, found {} v{}",
                path.display(),
                model.format,
                model.version
            )));
        }
        Ok(model)
    }
}

/// Adapter for detectors trained on dialogic features only.
#[derive(Debug, Clone)]
pub struct DialogicDetector(SentimentDetector);

impl DialogicDetector {
    pub fn new(detector: SentimentDetector) -> Result<Self> {
        if !detector.is_dialogic_only() {
            return Err(Error::IncompatibleModel(format!(
                "sentiment model uses `{}` features; simulated users only provide dialogic ones",
                detector.featurizer.families.name()
            )));
        }
        Ok(DialogicDetector(detector))
    }

    pub fn inner(&self) -> &SentimentDetector {
        &self.0
    }
}

impl DialogicSentiment for DialogicDetector {
    fn predict_dialogic(&self, features: &DialogicFeatures) -> SentimentProbs {
        let p = self
            .0
            .forest
            .predict_probs(&features.to_vec())
            .expect("dimension checked at construction");
        SentimentProbs::from_slice(&p).expect("forest output is a simplex")
    }
}

/// One run of the repeated-split protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub seed: u64,
    pub report: EvalReport,
}

/// Trains and tests once per seed, re-splitting the labelled dialogs
/// 60/20/20 by dialog each time and scoring on the test part.
pub fn run_protocol(
    dialogs: &[Dialog],
    acoustic: Option<&AcousticTable>,
    cfg: &DetectorConfig,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<Vec<ProtocolRun>> {
    let labelled: Vec<Dialog> = dialogs
        .iter()
        .filter(|d| d.turns.iter().any(|t| t.sentiment_label.is_some()))
        .cloned()
        .collect();
    if labelled.is_empty() {
        return Err(Error::Data("no sentiment-labelled turns".into()));
    }
    seeds
        .into_iter()
        .map(|seed| {
            let mut split = labelled.clone();
            assign_splits(&mut split, 0.6, 0.2, seed)?;
            let train: Vec<Dialog> = split.iter().filter(|d| d.split == Split::Train).cloned().collect();
            let test: Vec<Dialog> = split.iter().filter(|d| d.split == Split::Test).cloned().collect();
            let det = SentimentDetector::train(&train, dialogs, acoustic, cfg, seed)?;
            Ok(ProtocolRun {
                seed,
                report: det.evaluate(&test, acoustic)?,
            })
        })
        .collect()
}

pub fn summarize_f1(runs: &[ProtocolRun]) -> Summary {
    let f1: Vec<f64> = runs.iter().map(|r| r.report.weighted_f1).collect();
    Summary::of(&f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::corpus::{synth_corpus, SynthConfig};
    use proptest::prelude::*;

    fn single_tree() -> ForestConfig {
        ForestConfig {
            n_trees: 1,
            max_depth: None,
            min_leaf: 1,
            features_per_split: FeaturesPerSplit::All,
            bootstrap: false,
        }
    }

    #[test]
    fn depth_one_tree_separates_1d_data() {
        let x: Vec<Vec<f64>> = [0.1, 0.4, 0.2, 0.9, 0.7, 0.8].iter().map(|&v| vec![v]).collect();
        let y = vec![0, 0, 0, 1, 1, 1];
        // Exhaustive oracle: some threshold between sorted values separates perfectly.
        let mut sorted: Vec<(f64, usize)> = x.iter().map(|r| r[0]).zip(y.iter().copied()).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let separable = (1..sorted.len()).any(|k| {
            sorted[..k].iter().all(|p| p.1 == sorted[0].1) && sorted[k..].iter().all(|p| p.1 != sorted[0].1)
        });
        assert!(separable);
        let cfg = ForestConfig {
            max_depth: Some(1),
            ..single_tree()
        };
        let f = RandomForest::train(&x, &y, &cfg, 0).unwrap();
        assert_eq!(f.trees()[0].depth(), 1);
        assert_eq!(f.evaluate(&x, &y).unwrap().accuracy, 1.0);
        match &f.trees()[0].nodes()[0] {
            Node::Split { threshold, .. } => assert!((threshold - 0.55).abs() < 1e-12),
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn leaf_frequencies() {
        let tree = DecisionTree {
            nodes: vec![Node::Leaf { counts: vec![3.0, 1.0, 0.0] }],
        };
        assert_eq!(tree.predict_probs(&[0.0]), vec![0.75, 0.25, 0.0]);
        let forest = RandomForest {
            n_features: 1,
            n_classes: 3,
            config: single_tree(),
            trees: vec![tree.clone(), tree.clone(), tree],
            importances: vec![0.0],
        };
        assert_eq!(forest.predict_probs(&[5.0]).unwrap(), vec![0.75, 0.25, 0.0]);
        assert!(forest.predict_probs(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn training_errors() {
        let cfg = ForestConfig::default();
        assert!(RandomForest::train(&[], &[], &cfg, 0).is_err());
        assert!(RandomForest::train(&[vec![1.0], vec![2.0]], &[1, 1], &cfg, 0).is_err());
        assert!(RandomForest::train(&[vec![1.0], vec![2.0, 3.0]], &[0, 1], &cfg, 0).is_err());
        assert!(RandomForest::train(&[vec![f64::NAN], vec![2.0]], &[0, 1], &cfg, 0).is_err());
    }

    fn random_data(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng_from(seed, 0, 0);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(0..5) as f64).collect()).collect();
        let y = x.iter().map(|r| ((r[0] + r[1 % d]) as usize) % 3).collect();
        (x, y)
    }

    #[test]
    fn duplicated_rows_give_identical_predictions() {
        let (x, y) = random_data(1, 60, 4);
        let mut x2 = x.clone();
        x2.extend(x.iter().cloned());
        let mut y2 = y.clone();
        y2.extend(y.iter().copied());
        let cfg = ForestConfig {
            n_trees: 7,
            bootstrap: false,
            features_per_split: FeaturesPerSplit::Count(2),
            ..ForestConfig::default()
        };
        let a = RandomForest::train(&x, &y, &cfg, 11).unwrap();
        let b = RandomForest::train(&x2, &y2, &cfg, 11).unwrap();
        let (q, _) = random_data(2, 100, 4);
        for r in &q {
            assert_eq!(a.predict_probs(r).unwrap(), b.predict_probs(r).unwrap());
        }
    }

    #[test]
    fn memorizes_training_set() {
        let (x, y) = random_data(3, 80, 3);
        // Drop rows whose x collides with a differently labelled row.
        let keep: Vec<usize> = (0..x.len())
            .filter(|&i| (0..x.len()).all(|j| x[j] != x[i] || y[j] == y[i]))
            .collect();
        let x: Vec<Vec<f64>> = keep.iter().map(|&i| x[i].clone()).collect();
        let y: Vec<usize> = keep.iter().map(|&i| y[i]).collect();
        let f = RandomForest::train(&x, &y, &single_tree(), 0).unwrap();
        for (r, &c) in x.iter().zip(&y) {
            let p = f.predict_probs(r).unwrap();
            assert_eq!(p[c], 1.0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = random_data(4, 50, 5);
        let cfg = ForestConfig { n_trees: 9, ..ForestConfig::default() };
        let a = RandomForest::train(&x, &y, &cfg, 5).unwrap();
        let b = RandomForest::train(&x, &y, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let s = serde_json::to_string(&a).unwrap();
        let c: RandomForest = serde_json::from_str(&s).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn importances_sum_to_one() {
        let (x, y) = random_data(6, 80, 4);
        let f = RandomForest::train(&x, &y, &ForestConfig { n_trees: 5, ..Default::default() }, 1).unwrap();
        assert!((f.importances().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn evaluate_examples() {
        let perfect = evaluate_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(perfect.weighted_f1, 1.0);
        let r = evaluate_predictions(&[0, 0, 1, 1], &[1, 1, 1, 1], 3).unwrap();
        assert_eq!(r.classes[0].f1, 0.0);
        assert!((r.classes[1].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.weighted_f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.confusion, vec![vec![0, 2, 0], vec![0, 2, 0], vec![0, 0, 0]]);
        assert!(evaluate_predictions(&[], &[], 3).is_err());
    }

    proptest! {
        #[test]
        fn evaluate_matches_brute_force(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..40)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let r = evaluate_predictions(&t, &p, 3).unwrap();
            let mut wf1 = 0.0;
            for c in 0..3 {
                let tp = pairs.iter().filter(|&&(a, b)| a == c && b == c).count() as f64;
                let fp = pairs.iter().filter(|&&(a, b)| a != c && b == c).count() as f64;
                let fneg = pairs.iter().filter(|&&(a, b)| a == c && b != c).count() as f64;
                let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
                prop_assert!((r.classes[c].f1 - f1).abs() < 1e-12);
                prop_assert_eq!(r.confusion[c].iter().sum::<usize>(), r.classes[c].support);
                wf1 += f1 * (tp + fneg);
            }
            prop_assert!((r.weighted_f1 - wf1 / pairs.len() as f64).abs() < 1e-12);
        }

        #[test]
        fn score_is_linear(a in 0.0f64..1.0, b in 0.0f64..1.0, alpha in 0.0f64..1.0) {
            let p = SentimentProbs::new(a, 1.0 - a, 0.0).unwrap();
            let q = SentimentProbs::new(0.0, 1.0 - b, b).unwrap();
            let mix = SentimentProbs {
                p_neg: alpha * p.p_neg + (1.0 - alpha) * q.p_neg,
                p_neu: alpha * p.p_neu + (1.0 - alpha) * q.p_neu,
                p_pos: alpha * p.p_pos + (1.0 - alpha) * q.p_pos,
            };
            let w = ScoreWeights::default();
            let lhs = sentiment_score(&mix, &w);
            let rhs = alpha * sentiment_score(&p, &w) + (1.0 - alpha) * sentiment_score(&q, &w);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn forest_output_is_simplex(seed in 0u64..50, q in proptest::collection::vec(0.0f64..5.0, 3)) {
            let (x, y) = random_data(seed, 30, 3);
            let f = RandomForest::train(&x, &y, &ForestConfig { n_trees: 4, ..Default::default() }, seed).unwrap();
            let p = f.predict_probs(&q).unwrap();
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn score_corners() {
        let w = ScoreWeights::default();
        assert_eq!(sentiment_score(&SentimentProbs::new(1.0, 0.0, 0.0).unwrap(), &w), -5.0);
        assert_eq!(sentiment_score(&SentimentProbs::new(0.0, 1.0, 0.0).unwrap(), &w), -1.0);
        assert_eq!(sentiment_score(&SentimentProbs::new(0.0, 0.0, 1.0).unwrap(), &w), 10.0);
        assert!(SentimentProbs::new(0.5, 0.6, 0.0).is_err());
        assert_eq!(SentimentProbs::new(0.5, 0.5, 0.0).unwrap().label(), SentimentLabel::Negative);
    }

    #[test]
    fn detector_on_synthetic_corpus() {
        let dialogs = synth_corpus(7, &SynthConfig { n_dialogs: 150, ..Default::default() }).unwrap();
        let train: Vec<Dialog> = dialogs.iter().filter(|d| d.split == Split::Train).cloned().collect();
        let test: Vec<Dialog> = dialogs.iter().filter(|d| d.split == Split::Test).cloned().collect();
        let cfg = DetectorConfig {
            forest: ForestConfig { n_trees: 30, ..Default::default() },
            ..Default::default()
        };
        let det = SentimentDetector::train(&train, &dialogs, None, &cfg, 1).unwrap();
        let report = det.evaluate(&test, None).unwrap();
        assert!(report.weighted_f1 > 0.9, "{report:?}");

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        det.save(&p).unwrap();
        let back = SentimentDetector::load(&p).unwrap();
        assert_eq!(back, det);
        std::fs::write(&p, "{\"format\":\"other\"}").unwrap();
        assert!(matches!(SentimentDetector::load(&p), Err(Error::IncompatibleModel(_))));

        let dd = DialogicDetector::new(det).unwrap();
        let calm = dd.predict_dialogic(&DialogicFeatures::default());
        let angry = dd.predict_dialogic(&DialogicFeatures::from_array([1, 4, 0, 0, 1, 3, 0, 0]));
        assert!(angry.p_neg > calm.p_neg);
    }

    #[test]
    fn protocol_is_reproducible() {
        let dialogs = synth_corpus(8, &SynthConfig { n_dialogs: 60, ..Default::default() }).unwrap();
        let cfg = DetectorConfig {
            forest: ForestConfig { n_trees: 10, ..Default::default() },
            families: FeatureFamilies::parse("dialogic+textual").unwrap(),
            ..Default::default()
        };
        let a = run_protocol(&dialogs, None, &cfg, 0..3).unwrap();
        let b = run_protocol(&dialogs, None, &cfg, 0..3).unwrap();
        assert_eq!(a, b);
        assert_eq!(summarize_f1(&a).n, 3);
    }
}
