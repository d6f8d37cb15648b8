//! Dialog corpus: data model, line-delimited log ingestion, entity
//! delexicalization, system-action template inventory, clean-data filtering
//! and a seeded synthetic corpus generator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{check_rate, KeyValues};
use crate::error::{Error, Result};
use crate::stats::rng_from;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Positive => "positive",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// Entity types, declared in tie-break priority order (highest first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Route,
    Place,
    Neighborhood,
    Time,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [
        EntityType::Route,
        EntityType::Place,
        EntityType::Neighborhood,
        EntityType::Time,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityType::Route => "route",
            EntityType::Place => "place",
            EntityType::Neighborhood => "neighborhood",
            EntityType::Time => "time",
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            EntityType::Route => "<route>",
            EntityType::Place => "<place>",
            EntityType::Neighborhood => "<neighborhood>",
            EntityType::Time => "<time>",
        }
    }

    /// Fixed column used for entity-presence features: place, time, route, neighborhood.
    pub fn feature_index(self) -> usize {
        match self {
            EntityType::Place => 0,
            EntityType::Time => 1,
            EntityType::Route => 2,
            EntityType::Neighborhood => 3,
        }
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown entity type `{s}`"))
    }
}

/// Structured user act, when the log provides one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "act", rename_all = "snake_case")]
pub enum UserAct {
    Inform { entity: EntityType },
    Noise,
    Yes,
    No,
    RepeatRequest,
    StartOver,
}

/// One exchange: the user utterance and the system response that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: usize,
    /// ASR hypothesis.
    pub user_text: String,
    pub user_act: Option<UserAct>,
    pub system_text: String,
    pub system_action_id: Option<usize>,
    pub interrupted: bool,
    pub button_used: bool,
    /// User asked for a repeat, or the system re-asked the same question.
    pub repetition: bool,
    pub start_over: bool,
    pub sentiment_label: Option<SentimentLabel>,
    pub acoustic_key: Option<String>,
    pub asr_confidence: Option<f64>,
}

impl Turn {
    pub fn new(turn_index: usize, user_text: impl Into<String>, system_text: impl Into<String>) -> Self {
        Turn {
            turn_index,
            user_text: user_text.into(),
            user_act: None,
            system_text: system_text.into(),
            system_action_id: None,
            interrupted: false,
            button_used: false,
            repetition: false,
            start_over: false,
            sentiment_label: None,
            acoustic_key: None,
            asr_confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub dialog_id: String,
    pub turns: Vec<Turn>,
    pub split: Split,
}

impl Dialog {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// One line of the dialog log.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogRecord {
    schema_version: u32,
    dialog_id: String,
    split: Split,
    turn_index: usize,
    user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user_act: Option<UserAct>,
    #[serde(default)]
    system_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    system_action_id: Option<usize>,
    #[serde(default)]
    interrupted: bool,
    #[serde(default)]
    button_used: bool,
    #[serde(default)]
    repetition: bool,
    #[serde(default)]
    start_over: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentiment: Option<SentimentLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    acoustic_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    asr_confidence: Option<f64>,
}

/// Reads a line-delimited dialog log (one JSON record per turn).
///
/// Records of one dialog must be contiguous with `turn_index` counting up
/// from 0. Every malformed line is reported; nothing is dropped silently.
pub fn load_dialog_log(path: impl AsRef<Path>, schema_version: u32) -> Result<Vec<Dialog>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dialog_log(BufReader::new(file), schema_version).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_dialog_log(reader: impl BufRead, schema_version: u32) -> Result<Vec<Dialog>> {
    let mut dialogs: Vec<Dialog> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut errors = Vec::new();

    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::io("<log>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(format!("line {line_no}: {e}"));
                continue;
            }
        };
        if record.schema_version != schema_version {
            return Err(Error::SchemaVersion {
                line: line_no,
                expected: schema_version,
                found: record.schema_version,
            });
        }
        let continues = dialogs
            .last()
            .is_some_and(|d| d.dialog_id == record.dialog_id);
        if !continues {
            if !seen.insert(record.dialog_id.clone()) {
                return Err(Error::DuplicateDialog(record.dialog_id));
            }
            if record.turn_index != 0 {
                errors.push(format!(
                    "line {line_no}: dialog `{}` starts at turn {} instead of 0",
                    record.dialog_id, record.turn_index
                ));
            }
            dialogs.push(Dialog {
                dialog_id: record.dialog_id.clone(),
                turns: Vec::new(),
                split: record.split,
            });
        }
        let dialog = dialogs.last_mut().expect("pushed above");
        let expected = dialog.turns.len();
        if continues && record.turn_index != expected {
            errors.push(format!(
                "line {line_no}: dialog `{}` expected turn {expected}, found {}",
                dialog.dialog_id, record.turn_index
            ));
        }
        if record.split != dialog.split {
            errors.push(format!(
                "line {line_no}: dialog `{}` changes split from {} to {}",
                dialog.dialog_id, dialog.split, record.split
            ));
        }
        dialog.turns.push(Turn {
            turn_index: expected,
            user_text: record.user_text,
            user_act: record.user_act,
            system_text: record.system_text,
            system_action_id: record.system_action_id,
            interrupted: record.interrupted,
            button_used: record.button_used,
            repetition: record.repetition,
            start_over: record.start_over,
            sentiment_label: record.sentiment,
            acoustic_key: record.acoustic_key,
            asr_confidence: record.asr_confidence,
        });
    }
    if errors.is_empty() {
        Ok(dialogs)
    } else {
        Err(Error::Parse(errors))
    }
}

pub fn write_dialog_log(path: impl AsRef<Path>, dialogs: &[Dialog]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_dialog_records(&mut out, dialogs).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_dialog_records(out: &mut impl Write, dialogs: &[Dialog]) -> std::io::Result<()> {
    for d in dialogs {
        for t in &d.turns {
            let record = LogRecord {
                schema_version: LOG_SCHEMA_VERSION,
                dialog_id: d.dialog_id.clone(),
                split: d.split,
                turn_index: t.turn_index,
                user_text: t.user_text.clone(),
                user_act: t.user_act.clone(),
                system_text: t.system_text.clone(),
                system_action_id: t.system_action_id,
                interrupted: t.interrupted,
                button_used: t.button_used,
                repetition: t.repetition,
                start_over: t.start_over,
                sentiment: t.sentiment_label,
                acoustic_key: t.acoustic_key.clone(),
                asr_confidence: t.asr_confidence,
            };
            serde_json::to_writer(&mut *out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Entity surface strings by type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityLexicon {
    surfaces: BTreeMap<String, EntityType>,
}

impl EntityLexicon {
    /// Builds a lexicon; a surface listed under several types keeps the
    /// highest-priority one (route > place > neighborhood > time).
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (EntityType, S)>,
        S: Into<String>,
    {
        let mut surfaces = BTreeMap::new();
        for (entity, surface) in pairs {
            let surface = surface.into();
            if surface.trim().is_empty() {
                return Err(Error::Data(format!("empty surface for entity type {}", entity.name())));
            }
            surfaces
                .entry(surface)
                .and_modify(|e: &mut EntityType| *e = (*e).min(entity))
                .or_insert(entity);
        }
        Ok(EntityLexicon { surfaces })
    }

    /// Parses `type<TAB>surface` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut bad = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((ty, surface)) => match ty.trim().parse::<EntityType>() {
                    Ok(e) => pairs.push((e, surface.trim().to_string())),
                    Err(msg) => bad.push(format!("line {}: {msg}", n + 1)),
                },
                None => bad.push(format!("line {}: expected `type<TAB>surface`", n + 1)),
            }
        }
        if !bad.is_empty() {
            return Err(Error::Parse(bad));
        }
        Self::from_pairs(pairs)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut by_type: Vec<(EntityType, &str)> =
            self.surfaces.iter().map(|(s, e)| (*e, s.as_str())).collect();
        by_type.sort();
        by_type
            .into_iter()
            .map(|(e, s)| format!("{}\t{s}\n", e.name()))
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn entity_of(&self, surface: &str) -> Option<EntityType> {
        self.surfaces.get(surface).copied()
    }

    pub fn surfaces_of(&self, entity: EntityType) -> Vec<&str> {
        self.surfaces
            .iter()
            .filter(|(_, e)| **e == entity)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    fn iter(&self) -> impl Iterator<Item = (&str, EntityType)> {
        self.surfaces.iter().map(|(s, e)| (s.as_str(), *e))
    }
}

/// A replaced span: `marker` starts at byte `offset` of the delexicalized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub entity: EntityType,
    pub surface: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delexicalized {
    pub text: String,
    pub bindings: Vec<Binding>,
}

impl Delexicalized {
    /// Substitutes the bindings back, reproducing the original text.
    pub fn relexicalize(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut pos = 0;
        for b in &self.bindings {
            out.push_str(&self.text[pos..b.offset]);
            out.push_str(&b.surface);
            pos = b.offset + b.entity.marker().len();
        }
        out.push_str(&self.text[pos..]);
        out
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityType> + '_ {
        self.bindings.iter().map(|b| b.entity)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn boundary_before(text: &str, i: usize) -> bool {
    text[..i].chars().next_back().is_none_or(|c| !is_word_char(c))
}

fn boundary_after(text: &str, i: usize) -> bool {
    text[i..].chars().next().is_none_or(|c| !is_word_char(c))
}

/// Replaces lexicon surfaces by typed markers, longest match first, scanning
/// left to right. Matches must start and end on word boundaries; existing
/// markers are copied through untouched.
pub fn delexicalize(text: &str, lexicon: &EntityLexicon) -> Delexicalized {
    let mut out = String::with_capacity(text.len());
    let mut bindings = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if let Some(marker) = EntityType::ALL
            .iter()
            .map(|e| e.marker())
            .find(|m| rest.starts_with(m))
        {
            out.push_str(marker);
            i += marker.len();
            continue;
        }
        if boundary_before(text, i) {
            let best = lexicon
                .iter()
                .filter(|(s, _)| rest.starts_with(s) && boundary_after(text, i + s.len()))
                .max_by_key(|(s, _)| s.len());
            if let Some((surface, entity)) = best {
                bindings.push(Binding {
                    entity,
                    surface: surface.to_string(),
                    offset: out.len(),
                });
                out.push_str(entity.marker());
                i += surface.len();
                continue;
            }
        }
        let c = rest.chars().next().expect("non-empty rest");
        out.push(c);
        i += c.len_utf8();
    }
    Delexicalized {
        text: out,
        bindings,
    }
}

fn normalize_utterance(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTemplate {
    pub template_id: usize,
    pub delexicalized_text: String,
    pub slots: BTreeSet<EntityType>,
}

/// Distinct delexicalized system utterances with ids in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateInventory {
    templates: Vec<ActionTemplate>,
    #[serde(skip)]
    by_text: HashMap<String, usize>,
}

pub fn build_template_inventory(dialogs: &[Dialog], lexicon: &EntityLexicon) -> TemplateInventory {
    let mut inv = TemplateInventory::default();
    for d in dialogs {
        for t in &d.turns {
            inv.intern(&t.system_text, lexicon);
        }
    }
    inv
}

impl TemplateInventory {
    pub fn from_templates(texts: impl IntoIterator<Item = String>) -> Self {
        let lexicon = EntityLexicon::default();
        let mut inv = TemplateInventory::default();
        for t in texts {
            inv.intern(&t, &lexicon);
        }
        inv
    }

    fn intern(&mut self, system_text: &str, lexicon: &EntityLexicon) -> usize {
        let delex = delexicalize(&normalize_utterance(system_text), lexicon);
        if let Some(&id) = self.by_text.get(&delex.text) {
            return id;
        }
        let id = self.templates.len();
        let slots = slots_in(&delex.text);
        self.by_text.insert(delex.text.clone(), id);
        self.templates.push(ActionTemplate {
            template_id: id,
            delexicalized_text: delex.text,
            slots,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn templates(&self) -> &[ActionTemplate] {
        &self.templates
    }

    pub fn get(&self, id: usize) -> Option<&ActionTemplate> {
        self.templates.get(id)
    }

    pub fn lookup(&self, system_text: &str, lexicon: &EntityLexicon) -> Option<usize> {
        let delex = delexicalize(&normalize_utterance(system_text), lexicon);
        self.by_text.get(&delex.text).copied()
    }

    /// Sets `system_action_id` on every turn; fails on utterances outside the inventory.
    pub fn assign_ids(&self, dialogs: &mut [Dialog], lexicon: &EntityLexicon) -> Result<()> {
        for d in dialogs.iter_mut() {
            for t in d.turns.iter_mut() {
                let id = self.lookup(&t.system_text, lexicon).ok_or_else(|| {
                    Error::Data(format!(
                        "dialog `{}` turn {}: system utterance not in inventory: `{}`",
                        d.dialog_id, t.turn_index, t.system_text
                    ))
                })?;
                t.system_action_id = Some(id);
            }
        }
        Ok(())
    }

    /// `id<TAB>text` lines.
    pub fn to_text(&self) -> String {
        self.templates
            .iter()
            .map(|t| format!("{}\t{}\n", t.template_id, t.delexicalized_text))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut texts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, t) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(vec![format!("line {}: expected `id<TAB>text`", n + 1)]))?;
            if id.parse::<usize>().ok() != Some(texts.len()) {
                return Err(Error::Parse(vec![format!(
                    "line {}: template ids must be dense and ordered",
                    n + 1
                )]));
            }
            texts.push(t.to_string());
        }
        Ok(Self::from_templates(texts))
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.by_text = self
            .templates
            .iter()
            .map(|t| (t.delexicalized_text.clone(), t.template_id))
            .collect();
    }
}

fn slots_in(text: &str) -> BTreeSet<EntityType> {
    EntityType::ALL
        .into_iter()
        .filter(|e| text.contains(e.marker()))
        .collect()
}

/// Fills markers in a template from `values` (first value of each type).
pub fn fill_template(template: &str, values: &BTreeMap<EntityType, String>) -> String {
    let mut out = template.to_string();
    for (entity, value) in values {
        out = out.replace(entity.marker(), value);
    }
    out
}

/// Clean-data predicate settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanDataConfig {
    /// Turns with ASR confidence below this count as low-confidence.
    pub min_confidence: f64,
    /// A dialog is dropped when more than this fraction of its confidence-bearing turns is low.
    pub max_low_confidence_fraction: f64,
}

impl Default for CleanDataConfig {
    fn default() -> Self {
        CleanDataConfig {
            min_confidence: 0.3,
            max_low_confidence_fraction: 0.5,
        }
    }
}

pub fn is_clean(dialog: &Dialog, cfg: &CleanDataConfig) -> bool {
    if dialog.turns.iter().any(|t| t.user_text.trim().is_empty()) {
        return false;
    }
    let confidences: Vec<f64> = dialog.turns.iter().filter_map(|t| t.asr_confidence).collect();
    if confidences.is_empty() {
        return true;
    }
    let low = confidences.iter().filter(|&&c| c < cfg.min_confidence).count();
    (low as f64) / (confidences.len() as f64) <= cfg.max_low_confidence_fraction
}

pub fn filter_clean_data(dialogs: &[Dialog], cfg: &CleanDataConfig) -> Vec<Dialog> {
    dialogs.iter().filter(|d| is_clean(d, cfg)).cloned().collect()
}

/// Reassigns `split` by a seeded shuffle of whole dialogs.
pub fn assign_splits(dialogs: &mut [Dialog], train_fraction: f64, dev_fraction: f64, seed: u64) -> Result<()> {
    check_rate("train_fraction", train_fraction)?;
    check_rate("dev_fraction", dev_fraction)?;
    if train_fraction + dev_fraction > 1.0 + 1e-12 {
        return Err(Error::Config("train_fraction + dev_fraction exceeds 1".into()));
    }
    let n = dialogs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, 0x5917, 0));
    let n_train = (train_fraction * n as f64).round() as usize;
    let n_dev = ((dev_fraction * n as f64).round() as usize).min(n - n_train);
    for (rank, &i) in order.iter().enumerate() {
        dialogs[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    Ok(())
}

pub fn split_of(dialogs: &[Dialog], split: Split) -> Vec<Dialog> {
    dialogs.iter().filter(|d| d.split == split).cloned().collect()
}

/// Settings of the synthetic corpus generator.
///
/// Each user turn draws its four dialogic event flags independently at the
/// configured rates. The sentiment label is then a deterministic function of
/// the events:
///
/// ```text
/// score = turn_weight * (events this turn) + cumulative_weight * (events so far, inclusive)
/// negative  iff score >= negative_threshold
/// positive  iff not negative and the user opens with a positive cue (rate positive_rate)
/// neutral   otherwise
/// ```
///
/// optionally followed by uniform label flips at `label_noise`. With
/// `adaptive_system` the generated system switches to the detailed prompt
/// variant whenever the user is negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_dialogs: usize,
    pub max_turns: usize,
    pub interruption_rate: f64,
    pub button_rate: f64,
    pub repetition_rate: f64,
    pub start_over_rate: f64,
    pub noise_rate: f64,
    pub empty_asr_rate: f64,
    pub positive_rate: f64,
    pub turn_weight: f64,
    pub cumulative_weight: f64,
    pub negative_threshold: f64,
    pub label_noise: f64,
    pub adaptive_system: bool,
    pub coverage: f64,
    pub train_fraction: f64,
    pub dev_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_dialogs: 300,
            max_turns: 12,
            interruption_rate: 0.33,
            button_rate: 0.05,
            repetition_rate: 0.10,
            start_over_rate: 0.02,
            noise_rate: 0.2,
            empty_asr_rate: 0.0,
            positive_rate: 0.03,
            turn_weight: 1.0,
            cumulative_weight: 0.5,
            negative_threshold: 2.0,
            label_noise: 0.0,
            adaptive_system: true,
            coverage: 0.8,
            train_fraction: 0.6,
            dev_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            n_dialogs: kv.take_or("n_dialogs", d.n_dialogs)?,
            max_turns: kv.take_or("max_turns", d.max_turns)?,
            interruption_rate: kv.take_or("interruption_rate", d.interruption_rate)?,
            button_rate: kv.take_or("button_rate", d.button_rate)?,
            repetition_rate: kv.take_or("repetition_rate", d.repetition_rate)?,
            start_over_rate: kv.take_or("start_over_rate", d.start_over_rate)?,
            noise_rate: kv.take_or("noise_rate", d.noise_rate)?,
            empty_asr_rate: kv.take_or("empty_asr_rate", d.empty_asr_rate)?,
            positive_rate: kv.take_or("positive_rate", d.positive_rate)?,
            turn_weight: kv.take_or("turn_weight", d.turn_weight)?,
            cumulative_weight: kv.take_or("cumulative_weight", d.cumulative_weight)?,
            negative_threshold: kv.take_or("negative_threshold", d.negative_threshold)?,
            label_noise: kv.take_or("label_noise", d.label_noise)?,
            adaptive_system: kv.take_or("adaptive_system", d.adaptive_system)?,
            coverage: kv.take_or("coverage", d.coverage)?,
            train_fraction: kv.take_or("train_fraction", d.train_fraction)?,
            dev_fraction: kv.take_or("dev_fraction", d.dev_fraction)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("n_dialogs", self.n_dialogs);
        kv.set("max_turns", self.max_turns);
        kv.set("interruption_rate", self.interruption_rate);
        kv.set("button_rate", self.button_rate);
        kv.set("repetition_rate", self.repetition_rate);
        kv.set("start_over_rate", self.start_over_rate);
        kv.set("noise_rate", self.noise_rate);
        kv.set("empty_asr_rate", self.empty_asr_rate);
        kv.set("positive_rate", self.positive_rate);
        kv.set("turn_weight", self.turn_weight);
        kv.set("cumulative_weight", self.cumulative_weight);
        kv.set("negative_threshold", self.negative_threshold);
        kv.set("label_noise", self.label_noise);
        kv.set("adaptive_system", self.adaptive_system);
        kv.set("coverage", self.coverage);
        kv.set("train_fraction", self.train_fraction);
        kv.set("dev_fraction", self.dev_fraction);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("interruption_rate", self.interruption_rate),
            ("button_rate", self.button_rate),
            ("repetition_rate", self.repetition_rate),
            ("start_over_rate", self.start_over_rate),
            ("noise_rate", self.noise_rate),
            ("empty_asr_rate", self.empty_asr_rate),
            ("positive_rate", self.positive_rate),
            ("label_noise", self.label_noise),
            ("coverage", self.coverage),
        ] {
            check_rate(name, v)?;
        }
        if self.max_turns == 0 {
            return Err(Error::Config("max_turns must be at least 1".into()));
        }
        Ok(())
    }
}

const PLACES: &[&str] = &[
    "forbes avenue",
    "downtown",
    "oakland",
    "squirrel hill",
    "east pittsburgh",
    "pittsburgh",
    "the airport",
    "carnegie mellon",
    "south side",
    "shadyside",
];
const NEIGHBORHOODS: &[&str] = &["highland park", "lawrenceville", "bloomfield"];
const TIMES: &[&str] = &["six pm", "seven thirty", "noon", "eight am", "nine fifteen", "ten pm"];
const ROUTES: &[&str] = &["61c", "54c", "28x", "71a"];

/// Lexicon covering every entity the synthetic generator emits.
pub fn synth_lexicon() -> EntityLexicon {
    let pairs = PLACES
        .iter()
        .map(|s| (EntityType::Place, *s))
        .chain(NEIGHBORHOODS.iter().map(|s| (EntityType::Neighborhood, *s)))
        .chain(TIMES.iter().map(|s| (EntityType::Time, *s)))
        .chain(ROUTES.iter().map(|s| (EntityType::Route, *s)));
    EntityLexicon::from_pairs(pairs).expect("static lexicon is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SynthSlot {
    Departure,
    Arrival,
    Time,
}

const SYNTH_SLOTS: [SynthSlot; 3] = [SynthSlot::Departure, SynthSlot::Arrival, SynthSlot::Time];

fn pick<'a>(rng: &mut impl Rng, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn ask_text(slot: SynthSlot, detailed: bool, rng: &mut impl Rng) -> String {
    match (slot, detailed) {
        (SynthSlot::Departure, false) => "where would you like to leave from".into(),
        (SynthSlot::Departure, true) => format!(
            "where are you leaving from? for example, you can say, {}",
            pick(rng, PLACES)
        ),
        (SynthSlot::Arrival, false) => "where are you going".into(),
        (SynthSlot::Arrival, true) => format!(
            "where do you want to go? for example, you can say, {}",
            pick(rng, PLACES)
        ),
        (SynthSlot::Time, false) => "when are you going to take that bus".into(),
        (SynthSlot::Time, true) => format!(
            "what time do you want to travel? for example, you can say, {}",
            pick(rng, TIMES)
        ),
    }
}

fn inform_text(slot: SynthSlot, value: &str, rng: &mut impl Rng) -> String {
    let patterns: &[&str] = match slot {
        SynthSlot::Departure => &["leaving from {}", "i am at {}", "from {}", "{}"],
        SynthSlot::Arrival => &["going to {}", "to {}", "i want to go to {}", "{}"],
        SynthSlot::Time => &["{}", "at {}", "around {}", "leaving at {}"],
    };
    pick(rng, patterns).replace("{}", value)
}

/// Generates a deterministic synthetic bus-information corpus.
pub fn synth_corpus(seed: u64, cfg: &SynthConfig) -> Result<Vec<Dialog>> {
    cfg.validate()?;
    let mut dialogs = Vec::with_capacity(cfg.n_dialogs);
    for i in 0..cfg.n_dialogs {
        let mut rng = rng_from(seed, 0xC0_4905, i as u64);
        dialogs.push(synth_dialog(&format!("syn{seed}-{i:05}"), cfg, &mut rng));
    }
    assign_splits(&mut dialogs, cfg.train_fraction, cfg.dev_fraction, seed)?;
    Ok(dialogs)
}

fn synth_dialog(id: &str, cfg: &SynthConfig, rng: &mut impl Rng) -> Dialog {
    let goal = [pick(rng, PLACES), pick(rng, PLACES), pick(rng, TIMES)];
    let route = pick(rng, ROUTES);
    let covered = rng.gen_bool(cfg.coverage);
    let mut filled = [false; 3];
    let mut asked = SynthSlot::Departure;
    let mut totals = [0u32; 4];
    let mut turns = Vec::new();

    for t in 0..cfg.max_turns {
        let events = [
            rng.gen_bool(cfg.interruption_rate),
            rng.gen_bool(cfg.button_rate),
            rng.gen_bool(cfg.repetition_rate),
            rng.gen_bool(cfg.start_over_rate),
        ];
        let [interrupted, button_used, repetition, start_over] = events;
        for (tot, &e) in totals.iter_mut().zip(&events) {
            *tot += e as u32;
        }
        let now = events.iter().filter(|&&e| e).count() as f64;
        let so_far = totals.iter().sum::<u32>() as f64;
        let score = cfg.turn_weight * now + cfg.cumulative_weight * so_far;
        let mut label = if score >= cfg.negative_threshold {
            SentimentLabel::Negative
        } else {
            SentimentLabel::Neutral
        };
        let positive_cue = label != SentimentLabel::Negative && rng.gen_bool(cfg.positive_rate);
        if positive_cue {
            label = SentimentLabel::Positive;
        }
        if rng.gen_bool(cfg.label_noise) {
            let shift = rng.gen_range(1..3);
            label = SentimentLabel::from_index((label.index() + shift) % 3).expect("index < 3");
        }

        let slot_index = SYNTH_SLOTS.iter().position(|s| *s == asked).expect("known slot");
        let (mut user_text, user_act, confidence) = if start_over {
            filled = [false; 3];
            (pick(rng, &["start over", "start again"]).to_string(), UserAct::StartOver, rng.gen_range(0.4..1.0))
        } else if repetition {
            (
                pick(rng, &["repeat", "say that again", "what did you say"]).to_string(),
                UserAct::RepeatRequest,
                rng.gen_range(0.4..1.0),
            )
        } else if rng.gen_bool(cfg.noise_rate) {
            let text = if rng.gen_bool(cfg.empty_asr_rate) {
                String::new()
            } else {
                pick(rng, &["yeah", "um", "uh huh", "okay", "no", "hello", "what"]).to_string()
            };
            (text, UserAct::Noise, rng.gen_range(0.0..0.35))
        } else {
            filled[slot_index] = true;
            let entity = if asked == SynthSlot::Time {
                EntityType::Time
            } else {
                EntityType::Place
            };
            (
                inform_text(asked, goal[slot_index], rng),
                UserAct::Inform { entity },
                rng.gen_range(0.55..1.0),
            )
        };
        if positive_cue {
            let cue = pick(rng, &["great thank you", "awesome thanks", "perfect"]);
            user_text = if user_text.is_empty() {
                cue.to_string()
            } else {
                format!("{cue} {user_text}")
            };
        }

        let detailed = cfg.adaptive_system && label == SentimentLabel::Negative;
        let next = SYNTH_SLOTS.iter().zip(filled).find(|(_, f)| !f).map(|(s, _)| *s);
        let (system_text, done) = match next {
            None if covered => (
                format!("there is a {route} leaving {} at {}", goal[0], goal[2]),
                true,
            ),
            None => (
                "let me look that up for you. sorry, there is no result that matches your request".to_string(),
                true,
            ),
            Some(_) if t + 1 == cfg.max_turns => ("i am sorry, i could not help you. goodbye".to_string(), true),
            Some(slot) => {
                let ask = ask_text(slot, detailed, rng);
                asked = slot;
                if start_over {
                    (format!("okay, let's start over. {ask}"), false)
                } else {
                    (ask, false)
                }
            }
        };

        turns.push(Turn {
            turn_index: t,
            user_text,
            user_act: Some(user_act),
            system_text,
            system_action_id: None,
            interrupted,
            button_used,
            repetition,
            start_over,
            sentiment_label: Some(label),
            acoustic_key: Some(format!("{id}_{t:02}")),
            asr_confidence: Some(confidence),
        });
        if done {
            break;
        }
    }
    Dialog {
        dialog_id: id.to_string(),
        turns,
        split: Split::Train,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(pairs: &[(EntityType, &str)]) -> EntityLexicon {
        EntityLexicon::from_pairs(pairs.iter().map(|(e, s)| (*e, *s))).unwrap()
    }

    fn record(id: &str, turn: usize) -> String {
        format!(
            r#"{{"schema_version":1,"dialog_id":"{id}","split":"train","turn_index":{turn},"user_text":"hi","system_text":"where are you going"}}"#
        )
    }

    #[test]
    fn empty_log_is_empty() {
        assert!(parse_dialog_log("".as_bytes(), 1).unwrap().is_empty());
    }

    #[test]
    fn two_line_log_is_one_dialog() {
        let text = format!("{}\n{}\n", record("a", 0), record("a", 1));
        let dialogs = parse_dialog_log(text.as_bytes(), 1).unwrap();
        assert_eq!(dialogs.len(), 1);
        let idx: Vec<usize> = dialogs[0].turns.iter().map(|t| t.turn_index).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn log_errors() {
        let dup = format!("{}\n{}\n{}\n", record("a", 0), record("b", 0), record("a", 1));
        assert!(matches!(
            parse_dialog_log(dup.as_bytes(), 1),
            Err(Error::DuplicateDialog(id)) if id == "a"
        ));
        let version = record("a", 0).replace("\"schema_version\":1", "\"schema_version\":2");
        assert!(matches!(
            parse_dialog_log(version.as_bytes(), 1),
            Err(Error::SchemaVersion { line: 1, expected: 1, found: 2 })
        ));
        let garbage = format!("{}\nnot json\n{}\n", record("a", 0), record("a", 2));
        match parse_dialog_log(garbage.as_bytes(), 1) {
            Err(Error::Parse(lines)) => {
                assert_eq!(lines.len(), 2);
                assert!(lines[0].starts_with("line 2"));
                assert!(lines[1].starts_with("line 3"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            load_dialog_log("/definitely/not/here.jsonl", 1),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn log_round_trip() {
        let dialogs = synth_corpus(3, &SynthConfig { n_dialogs: 5, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_dialog_log(&path, &dialogs).unwrap();
        assert_eq!(load_dialog_log(&path, LOG_SCHEMA_VERSION).unwrap(), dialogs);
    }

    #[test]
    fn delexicalize_single_match() {
        let l = lex(&[(EntityType::Place, "forbes avenue")]);
        let d = delexicalize("leaving from forbes avenue", &l);
        assert_eq!(d.text, "leaving from <place>");
        assert_eq!(d.bindings.len(), 1);
        assert_eq!(d.bindings[0].entity, EntityType::Place);
        assert_eq!(d.bindings[0].surface, "forbes avenue");
    }

    #[test]
    fn delexicalize_no_match_is_identity() {
        let l = lex(&[(EntityType::Place, "oakland")]);
        let d = delexicalize("hello", &l);
        assert_eq!(d.text, "hello");
        assert!(d.bindings.is_empty());
    }

    #[test]
    fn delexicalize_respects_word_boundaries() {
        let l = lex(&[(EntityType::Route, "61c")]);
        assert_eq!(delexicalize("the 61cx bus", &l).text, "the 61cx bus");
        assert_eq!(delexicalize("the 61c, please", &l).text, "the <route>, please");
    }

    #[test]
    fn ambiguous_surface_uses_priority() {
        let l = lex(&[(EntityType::Time, "noon"), (EntityType::Place, "noon")]);
        assert_eq!(l.entity_of("noon"), Some(EntityType::Place));
        let l = lex(&[(EntityType::Place, "28x"), (EntityType::Route, "28x")]);
        assert_eq!(l.entity_of("28x"), Some(EntityType::Route));
    }

    #[test]
    fn lexicon_file_format() {
        let l = EntityLexicon::parse("place\tdowntown\n# comment\ntime\tnoon\n").unwrap();
        assert_eq!(l.len(), 2);
        assert!(EntityLexicon::parse("place downtown").is_err());
        assert!(EntityLexicon::parse("planet\tmars").is_err());
        assert!(EntityLexicon::parse("place\t ").is_err());
        assert_eq!(EntityLexicon::parse(&l.to_text()).unwrap(), l);
    }

    /// Every way to cover `text` with non-overlapping word-bounded matches,
    /// as span lists `(start, len, surface)`.
    fn all_tilings(text: &str, surfaces: &[&str]) -> Vec<Vec<(usize, usize)>> {
        fn rec(text: &str, surfaces: &[&str], from: usize, acc: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
            out.push(acc.clone());
            for start in from..text.len() {
                if !text.is_char_boundary(start) || !boundary_before(text, start) {
                    continue;
                }
                for s in surfaces {
                    if text[start..].starts_with(s) && boundary_after(text, start + s.len()) {
                        acc.push((start, s.len()));
                        rec(text, surfaces, start + s.len(), acc, out);
                        acc.pop();
                    }
                }
            }
        }
        let mut out = Vec::new();
        rec(text, surfaces, 0, &mut Vec::new(), &mut out);
        out
    }

    /// The longest-match-first tiling is the one whose span list is greatest
    /// under "earliest start wins, then longer span wins", among maximal tilings.
    fn oracle_spans(text: &str, surfaces: &[&str]) -> Vec<(usize, usize)> {
        let tilings = all_tilings(text, surfaces);
        let key = |t: &Vec<(usize, usize)>| -> Vec<(i64, i64)> {
            t.iter().map(|&(s, l)| (-(s as i64), l as i64)).collect()
        };
        // A tiling is greedy-consistent if no match could start earlier than
        // each chosen span (after the previous one ended).
        let greedy = tilings
            .into_iter()
            .filter(|t| {
                let mut pos = 0;
                for &(s, _) in t {
                    let earliest = (pos..s).find(|&p| {
                        text.is_char_boundary(p)
                            && boundary_before(text, p)
                            && surfaces.iter().any(|x| text[p..].starts_with(x) && boundary_after(text, p + x.len()))
                    });
                    if earliest.is_some() {
                        return false;
                    }
                    pos = s + t.iter().find(|x| x.0 == s).unwrap().1;
                }
                !(pos..text.len()).any(|p| {
                    text.is_char_boundary(p)
                        && boundary_before(text, p)
                        && surfaces.iter().any(|x| text[p..].starts_with(x) && boundary_after(text, p + x.len()))
                })
            })
            .max_by_key(key)
            .unwrap_or_default();
        greedy
    }

    #[test]
    fn overlapping_surfaces_longest_wins_against_oracle() {
        let surfaces = ["east pittsburgh", "pittsburgh", "east"];
        let l = lex(&[
            (EntityType::Place, "east pittsburgh"),
            (EntityType::Place, "pittsburgh"),
            (EntityType::Neighborhood, "east"),
        ]);
        for text in [
            "to east pittsburgh please",
            "pittsburgh to east pittsburgh",
            "east east pittsburgh pittsburgh",
            "eastpittsburgh",
        ] {
            let d = delexicalize(text, &l);
            let spans = oracle_spans(text, &surfaces);
            let got: Vec<(usize, usize)> = {
                // Map binding offsets in the output back to input offsets.
                let mut shift: i64 = 0;
                d.bindings
                    .iter()
                    .map(|b| {
                        let start = (b.offset as i64 - shift) as usize;
                        shift += b.entity.marker().len() as i64 - b.surface.len() as i64;
                        (start, b.surface.len())
                    })
                    .collect()
            };
            assert_eq!(got, spans, "text `{text}`");
        }
        let d = delexicalize("to east pittsburgh", &l);
        assert_eq!(d.text, "to <place>");
        assert_eq!(d.bindings.len(), 1);
    }

    #[test]
    fn templates_collapse_entity_values() {
        let l = synth_lexicon();
        let mut a = Dialog {
            dialog_id: "a".into(),
            turns: vec![Turn::new(0, "hi", "there is a 61c leaving oakland at noon")],
            split: Split::Train,
        };
        a.turns.push(Turn::new(1, "ok", "there is a 28x leaving downtown at six pm"));
        let inv = build_template_inventory(std::slice::from_ref(&a), &l);
        assert_eq!(inv.len(), 1);
        assert_eq!(inv.templates()[0].template_id, 0);
        assert_eq!(inv.templates()[0].delexicalized_text, "there is a <route> leaving <place> at <time>");
        assert_eq!(inv.templates()[0].slots.len(), 3);
        inv.assign_ids(std::slice::from_mut(&mut a), &l).unwrap();
        assert!(a.turns.iter().all(|t| t.system_action_id == Some(0)));
    }

    #[test]
    fn template_texts_are_fixed_points() {
        let l = synth_lexicon();
        let dialogs = synth_corpus(1, &SynthConfig { n_dialogs: 50, ..Default::default() }).unwrap();
        let inv = build_template_inventory(&dialogs, &l);
        for t in inv.templates() {
            assert_eq!(delexicalize(&t.delexicalized_text, &l).text, t.delexicalized_text);
        }
        let again = build_template_inventory(&dialogs, &l);
        assert_eq!(inv.templates(), again.templates());
        let parsed = TemplateInventory::parse(&inv.to_text()).unwrap();
        assert_eq!(parsed.templates(), inv.templates());
    }

    #[test]
    fn clean_filter() {
        let cfg = CleanDataConfig::default();
        let ok = Dialog {
            dialog_id: "ok".into(),
            turns: vec![Turn::new(0, "downtown", "x")],
            split: Split::Train,
        };
        let mut empty = ok.clone();
        empty.dialog_id = "empty".into();
        empty.turns.push(Turn::new(1, "  ", "y"));
        let mut noisy = ok.clone();
        noisy.dialog_id = "noisy".into();
        noisy.turns[0].asr_confidence = Some(0.1);
        noisy.turns.push(Turn { asr_confidence: Some(0.2), ..Turn::new(1, "um", "y") });
        noisy.turns.push(Turn { asr_confidence: Some(0.9), ..Turn::new(2, "noon", "z") });
        let all = vec![ok.clone(), empty, noisy];
        let kept = filter_clean_data(&all, &cfg);
        assert_eq!(kept, vec![ok.clone()]);
        assert_eq!(filter_clean_data(&[ok.clone()], &cfg), vec![ok]);
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig { n_dialogs: 20, ..Default::default() };
        let a = synth_corpus(42, &cfg).unwrap();
        let b = synth_corpus(42, &cfg).unwrap();
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        write_dialog_records(&mut wa, &a).unwrap();
        write_dialog_records(&mut wb, &b).unwrap();
        assert_eq!(wa, wb);
        assert_ne!(a, synth_corpus(43, &cfg).unwrap());
    }

    #[test]
    fn synth_zero_rate_and_invalid_rate() {
        let cfg = SynthConfig { n_dialogs: 50, interruption_rate: 0.0, ..Default::default() };
        let d = synth_corpus(1, &cfg).unwrap();
        assert!(d.iter().flat_map(|d| &d.turns).all(|t| !t.interrupted));
        let bad = SynthConfig { button_rate: 1.5, ..Default::default() };
        assert!(synth_corpus(1, &bad).is_err());
    }

    #[test]
    fn synth_event_rate_matches_config() {
        let cfg = SynthConfig {
            n_dialogs: 2500,
            interruption_rate: 0.33,
            ..Default::default()
        };
        let d = synth_corpus(9, &cfg).unwrap();
        let turns: Vec<&Turn> = d.iter().flat_map(|d| &d.turns).collect();
        assert!(turns.len() >= 10_000, "only {} turns", turns.len());
        let rate = |f: fn(&Turn) -> bool| turns.iter().filter(|t| f(t)).count() as f64 / turns.len() as f64;
        assert!((rate(|t| t.interrupted) - 0.33).abs() <= 0.02);
        assert!((rate(|t| t.button_used) - cfg.button_rate).abs() <= 0.02);
        assert!((rate(|t| t.repetition) - cfg.repetition_rate).abs() <= 0.02);
        assert!((rate(|t| t.start_over) - cfg.start_over_rate).abs() <= 0.02);
    }

    #[test]
    fn synth_turn_indices_and_labels() {
        let d = synth_corpus(5, &SynthConfig { n_dialogs: 30, ..Default::default() }).unwrap();
        for dialog in &d {
            assert!(!dialog.turns.is_empty());
            for (i, t) in dialog.turns.iter().enumerate() {
                assert_eq!(t.turn_index, i);
                assert!(t.sentiment_label.is_some());
            }
        }
    }

    #[test]
    fn splits_partition_and_are_stable() {
        let mut a = synth_corpus(2, &SynthConfig { n_dialogs: 100, ..Default::default() }).unwrap();
        let b = a.clone();
        assign_splits(&mut a, 0.6, 0.2, 77).unwrap();
        let mut c = b.clone();
        assign_splits(&mut c, 0.6, 0.2, 77).unwrap();
        assert_eq!(a, c);
        let count = |s| a.iter().filter(|d| d.split == s).count();
        assert_eq!(count(Split::Train) + count(Split::Dev) + count(Split::Test), 100);
        assert_eq!(count(Split::Train), 60);
        assert_eq!(count(Split::Dev), 20);
    }

    proptest! {
        #[test]
        fn delexicalize_round_trips(words in proptest::collection::vec(
            prop_oneof![
                Just("east pittsburgh"), Just("pittsburgh"), Just("forbes avenue"), Just("61c"),
                Just("noon"), Just("to"), Just("from"), Just("<place>"), Just("x"), Just(",")
            ], 0..12),
            seps in proptest::collection::vec(prop_oneof![Just(" "), Just(""), Just("  ")], 12))
        {
            let mut text = String::new();
            for (w, s) in words.iter().zip(&seps) {
                text.push_str(w);
                text.push_str(s);
            }
            let d = delexicalize(&text, &synth_lexicon());
            prop_assert_eq!(d.relexicalize(), text);
            prop_assert_eq!(delexicalize(&d.text, &synth_lexicon()).text, d.text.clone());
        }
    }
}
