//! Per-turn feature families: dialogic event counts, tf-idf text vectors and
//! ingested acoustic vectors, plus forest-based feature selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::Dialog;
use crate::error::{Error, Result};
use crate::sentiment::{ForestConfig, RandomForest};
use crate::stats::rng_from;

/// The eight dialogic features of one turn. Each event family has a per-turn
/// flag followed by its inclusive running total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogicFeatures {
    pub interruption: u32,
    pub total_interruptions: u32,
    pub button_usage: u32,
    pub total_button_usages: u32,
    pub repetition: u32,
    pub total_repetitions: u32,
    pub start_over: u32,
    pub total_start_over: u32,
}

impl DialogicFeatures {
    pub const DIM: usize = 8;

    pub const NAMES: [&'static str; 8] = [
        "interruption",
        "total_interruptions",
        "button_usage",
        "total_button_usages",
        "repetition",
        "total_repetitions",
        "start_over",
        "total_start_over",
    ];

    pub fn to_array(&self) -> [u32; 8] {
        [
            self.interruption,
            self.total_interruptions,
            self.button_usage,
            self.total_button_usages,
            self.repetition,
            self.total_repetitions,
            self.start_over,
            self.total_start_over,
        ]
    }

    pub fn from_array(a: [u32; 8]) -> Self {
        DialogicFeatures {
            interruption: a[0],
            total_interruptions: a[1],
            button_usage: a[2],
            total_button_usages: a[3],
            repetition: a[4],
            total_repetitions: a[5],
            start_over: a[6],
            total_start_over: a[7],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.to_array().iter().map(|&v| v as f64).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|&v| v == 0)
    }

    /// Features of the turn following `self` with the given event flags.
    pub fn advance(&self, interruption: bool, button: bool, repetition: bool, start_over: bool) -> Self {
        let (i, b, r, s) = (interruption as u32, button as u32, repetition as u32, start_over as u32);
        DialogicFeatures {
            interruption: i,
            total_interruptions: self.total_interruptions + i,
            button_usage: b,
            total_button_usages: self.total_button_usages + b,
            repetition: r,
            total_repetitions: self.total_repetitions + r,
            start_over: s,
            total_start_over: self.total_start_over + s,
        }
    }
}

pub fn extract_dialogic(dialog: &Dialog, turn_index: usize) -> Result<DialogicFeatures> {
    if turn_index >= dialog.turns.len() {
        return Err(Error::OutOfRange {
            index: turn_index,
            len: dialog.turns.len(),
        });
    }
    Ok(dialog.turns[..=turn_index]
        .iter()
        .fold(DialogicFeatures::default(), |acc, t| {
            acc.advance(t.interrupted, t.button_used, t.repetition, t.start_over)
        }))
}

/// Dialogic features for every turn of a dialog.
pub fn extract_dialogic_all(dialog: &Dialog) -> Vec<DialogicFeatures> {
    let mut acc = DialogicFeatures::default();
    dialog
        .turns
        .iter()
        .map(|t| {
            acc = acc.advance(t.interrupted, t.button_used, t.repetition, t.start_over);
            acc
        })
        .collect()
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    min_df: usize,
}

/// Fits a smoothed tf-idf model: `idf(t) = ln((1 + N) / (1 + df(t))) + 1`,
/// keeping terms whose document frequency is at least `min_df`. Column
/// indices follow lexicographic term order.
pub fn fit_tfidf<S: AsRef<str>>(corpus: &[S], min_df: usize) -> Result<TfidfVectorizer> {
    if corpus.is_empty() {
        return Err(Error::Data("tf-idf corpus is empty".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let terms: BTreeSet<String> = tokenize(doc.as_ref()).into_iter().collect();
        for t in terms {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = corpus.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::new();
    for (term, count) in df.into_iter().filter(|(_, c)| *c >= min_df) {
        vocabulary.insert(term, idf.len());
        idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
    }
    Ok(TfidfVectorizer {
        vocabulary,
        idf,
        min_df,
    })
}

impl TfidfVectorizer {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&i| self.idf[i])
    }

    /// Raw term counts times idf, L2-normalized; unknown tokens are ignored.
    pub fn transform(&self, utterance: &str) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for tok in tokenize(utterance) {
            if let Some(&i) = self.vocabulary.get(&tok) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v = SparseVector {
            indices: counts.keys().copied().collect(),
            values: counts.iter().map(|(&i, &c)| c * self.idf[i]).collect(),
        };
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    pub fn transform_dense(&self, utterance: &str) -> Vec<f64> {
        self.transform(utterance).to_dense(self.dim())
    }
}

/// Acoustic vectors keyed by `acoustic_key`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AcousticTable {
    names: Vec<String>,
    rows: HashMap<String, Vec<f64>>,
}

impl AcousticTable {
    pub fn new(names: Vec<String>) -> Self {
        AcousticTable {
            names,
            rows: HashMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let key = key.into();
        if values.len() != self.names.len() {
            return Err(Error::Shape(format!(
                "acoustic row `{key}` has {} values, expected {}",
                values.len(),
                self.names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("acoustic row `{key}`")));
        }
        if self.rows.insert(key.clone(), values).is_some() {
            return Err(Error::Data(format!("duplicate acoustic key `{key}`")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    /// CSV with header `acoustic_key,<feature names...>`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.is_empty() {
            return Err(Error::Data("acoustic CSV has no header".into()));
        }
        let mut table = AcousticTable::new(header.iter().skip(1).map(str::to_string).collect());
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let key = rec.get(0).unwrap_or_default().to_string();
            let values = rec
                .iter()
                .skip(1)
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(vec![format!("record {}: {e}", n + 1)]))?;
            table.insert(key, values)?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["acoustic_key".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut keys: Vec<&String> = self.rows.keys().collect();
        keys.sort();
        for k in keys {
            let mut rec = vec![k.clone()];
            rec.extend(self.rows[k].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Keeps only the given columns, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<AcousticTable> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.dim()) {
            return Err(Error::OutOfRange {
                index: bad,
                len: self.dim(),
            });
        }
        Ok(AcousticTable {
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
        })
    }
}

/// Gaussian stand-in acoustic vectors for a corpus without audio.
///
/// The first half of the `dim` columns carry a label-dependent mean shift of
/// size `signal`; the rest are pure noise. Unlabelled turns are treated as
/// neutral. Keys come from each turn's `acoustic_key`.
pub fn synth_acoustic(dialogs: &[Dialog], dim: usize, signal: f64, seed: u64) -> Result<AcousticTable> {
    if !signal.is_finite() {
        return Err(Error::Config("acoustic signal must be finite".into()));
    }
    let names: Vec<String> = (0..dim).map(|j| format!("acoustic_{j:02}")).collect();
    let mut table = AcousticTable::new(names);
    let informative = dim / 2;
    // Fixed direction per label and informative column.
    let mut dir_rng = rng_from(seed, 0xAC0, 0);
    let directions: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..informative).map(|_| dir_rng.gen_range(-1.0..1.0)).collect())
        .collect();
    for (i, d) in dialogs.iter().enumerate() {
        let mut rng = rng_from(seed, 0xAC1, i as u64);
        for t in &d.turns {
            let Some(key) = &t.acoustic_key else { continue };
            let label = t.sentiment_label.map_or(1, |l| l.index());
            let row = (0..dim)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    let shift = if j < informative { signal * directions[label][j] } else { 0.0 };
                    z + shift
                })
                .collect();
            table.insert(key.clone(), row)?;
        }
    }
    Ok(table)
}

/// Feature ranking by forest impurity importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelector {
    /// `(feature index, importance)` sorted by importance descending, then index.
    pub ranked: Vec<(usize, f64)>,
    pub k: usize,
    pub names: Vec<String>,
}

/// Ranks features by mean decrease in impurity of a seeded forest and keeps the top `k`.
pub fn select_features(
    x: &[Vec<f64>],
    y: &[usize],
    k: usize,
    names: Option<Vec<String>>,
    forest: &ForestConfig,
    seed: u64,
) -> Result<FeatureSelector> {
    let d = x.first().map_or(0, Vec::len);
    if k > d {
        return Err(Error::Config(format!("cannot select {k} of {d} features")));
    }
    let model = RandomForest::train(x, y, forest, seed)?;
    let mut ranked: Vec<(usize, f64)> = model.importances().into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let names = names.unwrap_or_else(|| (0..d).map(|i| format!("f{i}")).collect());
    if names.len() != d {
        return Err(Error::Shape(format!("{} feature names for {d} features", names.len())));
    }
    Ok(FeatureSelector { ranked, k, names })
}

impl FeatureSelector {
    pub fn selected(&self) -> Vec<usize> {
        self.ranked.iter().take(self.k).map(|(i, _)| *i).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.selected().iter().map(|&i| x[i]).collect()
    }

    /// CSV `rank,index,name,score` over all ranked features.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rank", "index", "name", "score"])?;
        for (rank, (i, s)) in self.ranked.iter().enumerate() {
            w.write_record([
                rank.to_string(),
                i.to_string(),
                self.names[*i].clone(),
                s.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn concat_features(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Which feature families feed a sentiment model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFamilies {
    pub acoustic: bool,
    pub dialogic: bool,
    pub textual: bool,
}

impl FeatureFamilies {
    pub const DIALOGIC: FeatureFamilies = FeatureFamilies {
        acoustic: false,
        dialogic: true,
        textual: false,
    };

    /// Parses a `+`-joined list such as `dialogic+textual` or `all`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut f = FeatureFamilies {
            acoustic: false,
            dialogic: false,
            textual: false,
        };
        for part in text.split('+').map(str::trim) {
            match part {
                "acoustic" => f.acoustic = true,
                "dialogic" => f.dialogic = true,
                "textual" => f.textual = true,
                "all" => {
                    f.acoustic = true;
                    f.dialogic = true;
                    f.textual = true;
                }
                other => return Err(Error::Config(format!("unknown feature family `{other}`"))),
            }
        }
        Ok(f)
    }

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.acoustic {
            parts.push("acoustic");
        }
        if self.dialogic {
            parts.push("dialogic");
        }
        if self.textual {
            parts.push("textual");
        }
        parts.join("+")
    }
}

/// Declared block sizes, in concatenation order acoustic, dialogic, textual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub acoustic: usize,
    pub dialogic: usize,
    pub textual: usize,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        self.acoustic + self.dialogic + self.textual
    }

    pub fn concat(&self, acoustic: &[f64], dialogic: &[f64], textual: &[f64]) -> Result<Vec<f64>> {
        for (name, got, want) in [
            ("acoustic", acoustic.len(), self.acoustic),
            ("dialogic", dialogic.len(), self.dialogic),
            ("textual", textual.len(), self.textual),
        ] {
            if got != want {
                return Err(Error::Shape(format!("{name} block has {got} values, layout declares {want}")));
            }
        }
        Ok(concat_features(&[acoustic, dialogic, textual]))
    }
}

/// Everything needed to turn one dialog turn into a sentiment feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnFeaturizer {
    pub families: FeatureFamilies,
    pub tfidf: Option<TfidfVectorizer>,
    /// Acoustic columns kept, as indices into the raw acoustic table.
    pub acoustic_columns: Vec<usize>,
    pub acoustic_names: Vec<String>,
}

impl TurnFeaturizer {
    pub fn dialogic_only() -> Self {
        TurnFeaturizer {
            families: FeatureFamilies::DIALOGIC,
            tfidf: None,
            acoustic_columns: Vec::new(),
            acoustic_names: Vec::new(),
        }
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            acoustic: if self.families.acoustic { self.acoustic_columns.len() } else { 0 },
            dialogic: if self.families.dialogic { DialogicFeatures::DIM } else { 0 },
            textual: self.tfidf.as_ref().map_or(0, TfidfVectorizer::dim),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.families.acoustic {
            names.extend(self.acoustic_columns.iter().map(|&i| {
                self.acoustic_names.get(i).cloned().unwrap_or_else(|| format!("acoustic{i}"))
            }));
        }
        if self.families.dialogic {
            names.extend(DialogicFeatures::NAMES.iter().map(|s| s.to_string()));
        }
        if let Some(v) = &self.tfidf {
            names.extend(v.vocabulary().keys().map(|t| format!("tfidf:{t}")));
        }
        names
    }

    /// Builds the vector from already-extracted parts. `acoustic` is the raw
    /// (unselected) acoustic row and is required iff the family is enabled.
    pub fn featurize_parts(
        &self,
        acoustic: Option<&[f64]>,
        dialogic: &DialogicFeatures,
        user_text: &str,
    ) -> Result<Vec<f64>> {
        let layout = self.layout();
        let a: Vec<f64> = if self.families.acoustic {
            let raw = acoustic.ok_or_else(|| Error::Data("acoustic features required but missing".into()))?;
            self.acoustic_columns
                .iter()
                .map(|&i| {
                    raw.get(i).copied().ok_or(Error::OutOfRange {
                        index: i,
                        len: raw.len(),
                    })
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let d = if self.families.dialogic { dialogic.to_vec() } else { Vec::new() };
        let t = self.tfidf.as_ref().map_or_else(Vec::new, |v| v.transform_dense(user_text));
        layout.concat(&a, &d, &t)
    }

    pub fn featurize(&self, dialog: &Dialog, turn_index: usize, acoustic: Option<&AcousticTable>) -> Result<Vec<f64>> {
        let dialogic = extract_dialogic(dialog, turn_index)?;
        let turn = &dialog.turns[turn_index];
        let row = if self.families.acoustic {
            let table = acoustic.ok_or_else(|| Error::Data("acoustic table required".into()))?;
            let key = turn.acoustic_key.as_deref().ok_or_else(|| {
                Error::Data(format!("dialog `{}` turn {turn_index} has no acoustic key", dialog.dialog_id))
            })?;
            Some(
                table
                    .get(key)
                    .ok_or_else(|| Error::Data(format!("acoustic key `{key}` not in table")))?,
            )
        } else {
            None
        };
        self.featurize_parts(row, &dialogic, &turn.user_text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, Turn};
    use proptest::prelude::*;

    fn dialog_with(events: &[(bool, bool, bool, bool)]) -> Dialog {
        Dialog {
            dialog_id: "d".into(),
            turns: events
                .iter()
                .enumerate()
                .map(|(i, &(a, b, c, d))| Turn {
                    interrupted: a,
                    button_used: b,
                    repetition: c,
                    start_over: d,
                    ..Turn::new(i, "x", "y")
                })
                .collect(),
            split: Split::Train,
        }
    }

    #[test]
    fn dialogic_examples() {
        let quiet = dialog_with(&[(false, false, false, false)]);
        assert!(extract_dialogic(&quiet, 0).unwrap().is_zero());
        assert!(matches!(extract_dialogic(&quiet, 1), Err(Error::OutOfRange { index: 1, len: 1 })));

        let d = dialog_with(&[(true, false, false, false), (false, false, false, false), (true, false, false, false)]);
        let f = extract_dialogic(&d, 2).unwrap();
        assert_eq!(f.interruption, 1);
        assert_eq!(f.total_interruptions, 2);

        let all = dialog_with(&[(true, true, true, true)]);
        assert_eq!(extract_dialogic(&all, 0).unwrap().to_array(), [1; 8]);
    }

    proptest! {
        #[test]
        fn dialogic_prefix_sums(events in proptest::collection::vec(any::<(bool, bool, bool, bool)>(), 1..20)) {
            let d = dialog_with(&events);
            let all = extract_dialogic_all(&d);
            for (t, f) in all.iter().enumerate() {
                prop_assert_eq!(*f, extract_dialogic(&d, t).unwrap());
                // independent oracle: direct counts over the prefix
                let prefix = &events[..=t];
                let cnt = |k: fn(&(bool, bool, bool, bool)) -> bool| prefix.iter().filter(|e| k(e)).count() as u32;
                prop_assert_eq!(f.total_interruptions, cnt(|e| e.0));
                prop_assert_eq!(f.total_button_usages, cnt(|e| e.1));
                prop_assert_eq!(f.total_repetitions, cnt(|e| e.2));
                prop_assert_eq!(f.total_start_over, cnt(|e| e.3));
                let a = f.to_array();
                for k in 0..4 {
                    prop_assert!(a[2 * k + 1] >= a[2 * k]);
                }
                if t > 0 {
                    let p = all[t - 1].to_array();
                    for k in 0..4 {
                        prop_assert!(a[2 * k + 1] >= p[2 * k + 1]);
                    }
                }
            }
        }

        #[test]
        fn tfidf_norm_is_zero_or_one(doc in "[a-c ]{0,12}") {
            let v = fit_tfidf(&["a b", "b c", "a a c"], 1).unwrap();
            let n = v.transform(&doc).norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tfidf_examples() {
        let v = fit_tfidf(&["a b"], 1).unwrap();
        assert_eq!(v.dim(), 2);
        assert_eq!(v.idf("a"), Some(1.0));
        assert_eq!(v.idf("b"), Some(1.0));

        let docs: Vec<String> = (0..10).map(|i| format!("common w{i}")).collect();
        let v = fit_tfidf(&docs, 1).unwrap();
        assert!((v.idf("common").unwrap() - 1.0).abs() < 1e-15);

        let v = fit_tfidf(&["a b", "a c"], 2).unwrap();
        assert_eq!(v.vocabulary().keys().collect::<Vec<_>>(), vec!["a"]);

        assert!(fit_tfidf::<&str>(&[], 1).is_err());
    }

    #[test]
    fn tfidf_transform_examples() {
        let v = fit_tfidf(&["a b"], 1).unwrap();
        assert_eq!(v.transform("").nnz(), 0);
        let one = v.transform("b zzz");
        assert_eq!(one.indices, vec![1]);
        assert!((one.values[0] - 1.0).abs() < 1e-15);
        let two = v.transform_dense("a a b");
        let s5 = 5f64.sqrt();
        assert!((two[0] - 2.0 / s5).abs() < 1e-15);
        assert!((two[1] - 1.0 / s5).abs() < 1e-15);
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Where's <place>? 61C!"), vec!["where", "s", "place", "61c"]);
    }

    #[test]
    fn concat_examples() {
        assert_eq!(concat_features(&[&[], &[3.0]]), vec![3.0]);
        assert_eq!(concat_features(&[&[1.0], &[2.0]]), vec![1.0, 2.0]);
        let layout = FeatureLayout { acoustic: 20, dialogic: 8, textual: 164 };
        let v = layout.concat(&[0.0; 20], &[0.0; 8], &[0.0; 164]).unwrap();
        assert_eq!(v.len(), 192);
        assert!(layout.concat(&[0.0; 19], &[0.0; 8], &[0.0; 164]).is_err());
    }

    #[test]
    fn acoustic_csv_round_trip() {
        let text = "acoustic_key,pcm_loudness,F0\nk1,1.5,2\nk2,-1,0.25\n";
        let t = AcousticTable::from_reader(text.as_bytes()).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get("k2"), Some(&[-1.0, 0.25][..]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(AcousticTable::read_csv(&p).unwrap(), t);
        assert!(AcousticTable::from_reader("k,a\nx,1,2\n".as_bytes()).is_err());
        assert!(AcousticTable::from_reader("k,a\nx,NaN\n".as_bytes()).is_err());
        let s = t.select(&[1]).unwrap();
        assert_eq!(s.names(), &["F0".to_string()]);
        assert_eq!(s.get("k1"), Some(&[2.0][..]));
    }

    fn full_forest() -> ForestConfig {
        ForestConfig {
            n_trees: 10,
            ..ForestConfig::default()
        }
    }

    /// Gini decrease of the best single split of one feature, by exhaustive
    /// enumeration of thresholds.
    fn best_gini_decrease(col: &[f64], y: &[usize]) -> f64 {
        let gini = |ys: &[usize]| {
            if ys.is_empty() {
                return 0.0;
            }
            let n = ys.len() as f64;
            1.0 - (0..3)
                .map(|c| (ys.iter().filter(|&&v| v == c).count() as f64 / n).powi(2))
                .sum::<f64>()
        };
        let mut best = 0.0;
        for &thr in col {
            let left: Vec<usize> = y.iter().zip(col).filter(|(_, &x)| x <= thr).map(|(&c, _)| c).collect();
            let right: Vec<usize> = y.iter().zip(col).filter(|(_, &x)| x > thr).map(|(&c, _)| c).collect();
            let n = y.len() as f64;
            let dec = gini(y) - left.len() as f64 / n * gini(&left) - right.len() as f64 / n * gini(&right);
            if dec > best {
                best = dec;
            }
        }
        best
    }

    #[test]
    fn selector_ranks_predictive_feature_first() {
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let x: Vec<Vec<f64>> = y.iter().map(|&c| vec![3.0, c as f64 * 2.0 - 1.0, 7.0]).collect();
        let cols: Vec<Vec<f64>> = (0..3).map(|j| x.iter().map(|r| r[j]).collect()).collect();
        let oracle: Vec<f64> = cols.iter().map(|c| best_gini_decrease(c, &y)).collect();
        let oracle_best = (0..3).max_by(|&a, &b| oracle[a].total_cmp(&oracle[b])).unwrap();
        let sel = select_features(&x, &y, 1, None, &full_forest(), 3).unwrap();
        assert_eq!(sel.selected(), vec![oracle_best]);
        assert_eq!(oracle_best, 1);
        for w in sel.ranked.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn selector_full_k_and_constant_padding() {
        let y: Vec<usize> = (0..60).map(|i| (i * 7 % 5 > 1) as usize).collect();
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i * 7 % 5) as f64, (i % 3) as f64, ((i * 13) % 11) as f64])
            .collect();
        let all = select_features(&x, &y, 3, None, &full_forest(), 1).unwrap();
        let mut idx = all.selected();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);

        let padded: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.extend([0.0, 5.0]);
                r
            })
            .collect();
        let cfg = ForestConfig {
            features_per_split: crate::sentiment::FeaturesPerSplit::All,
            ..full_forest()
        };
        let a = select_features(&x, &y, 2, None, &cfg, 4).unwrap();
        let b = select_features(&padded, &y, 2, None, &cfg, 4).unwrap();
        assert_eq!(a.selected(), b.selected());
        assert!(select_features(&x, &y, 4, None, &cfg, 4).is_err());
        assert!(select_features(&x, &[0; 60], 1, None, &cfg, 4).is_err());
    }

    #[test]
    fn selector_csv_export() {
        let sel = FeatureSelector {
            ranked: vec![(1, 0.7), (0, 0.3)],
            k: 1,
            names: vec!["a".into(), "b".into()],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sel.csv");
        sel.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "rank,index,name,score\n0,1,b,0.7\n1,0,a,0.3\n");
    }

    #[test]
    fn featurizer_layout_order() {
        let f = TurnFeaturizer {
            families: FeatureFamilies::parse("all").unwrap(),
            tfidf: Some(fit_tfidf(&["a b"], 1).unwrap()),
            acoustic_columns: vec![2, 0],
            acoustic_names: vec!["x".into(), "y".into(), "z".into()],
        };
        let d = DialogicFeatures { interruption: 1, total_interruptions: 1, ..Default::default() };
        let v = f.featurize_parts(Some(&[10.0, 20.0, 30.0]), &d, "b").unwrap();
        assert_eq!(v, vec![30.0, 10.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(f.feature_names()[0], "z");
        assert!(f.featurize_parts(None, &d, "b").is_err());
        assert_eq!(FeatureFamilies::parse("dialogic+textual").unwrap().name(), "dialogic+textual");
        assert!(FeatureFamilies::parse("visual").is_err());
    }

    #[test]
    fn synth_acoustic_is_keyed_and_deterministic() {
        let dialogs = crate::corpus::synth_corpus(3, &crate::corpus::SynthConfig { n_dialogs: 20, ..Default::default() }).unwrap();
        let a = synth_acoustic(&dialogs, 6, 1.0, 9).unwrap();
        let b = synth_acoustic(&dialogs, 6, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 6);
        assert_eq!(a.len(), dialogs.iter().map(Dialog::len).sum::<usize>());
        let key = dialogs[0].turns[0].acoustic_key.as_deref().unwrap();
        assert_eq!(a.get(key).unwrap().len(), 6);
        assert_ne!(synth_acoustic(&dialogs, 6, 1.0, 10).unwrap(), a);
    }
}
