//! Supervised hybrid-code-network policy: an LSTM over per-turn context
//! features that classifies the next system action template.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::corpus::{delexicalize, fill_template, Dialog, EntityLexicon, EntityType, SentimentLabel, TemplateInventory};
use crate::error::{Error, Result};
use crate::features::{tokenize, AcousticTable, DialogicFeatures};
use crate::neural::{argmax, cross_entropy, softmax, AdaDelta, LstmState, Network};
use crate::sentiment::{evaluate_predictions, EvalReport, SentimentDetector};
use crate::stats::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlVariant {
    Baseline,
    PlusDialogic,
    PlusSentiment,
}

impl SlVariant {
    pub const ALL: [SlVariant; 3] = [SlVariant::Baseline, SlVariant::PlusDialogic, SlVariant::PlusSentiment];

    pub fn name(self) -> &'static str {
        match self {
            SlVariant::Baseline => "baseline",
            SlVariant::PlusDialogic => "plus_dialogic",
            SlVariant::PlusSentiment => "plus_sentiment",
        }
    }

    pub fn extra_dim(self) -> usize {
        match self {
            SlVariant::Baseline => 0,
            SlVariant::PlusDialogic => DialogicFeatures::DIM,
            SlVariant::PlusSentiment => 3,
        }
    }
}

impl FromStr for SlVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SlVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown policy variant `{s}`"))
    }
}

impl fmt::Display for SlVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlFeatureConfig {
    pub variant: SlVariant,
    pub use_bow: bool,
    pub use_embedding: bool,
    pub embedding_path: Option<String>,
}

impl Default for SlFeatureConfig {
    fn default() -> Self {
        SlFeatureConfig {
            variant: SlVariant::Baseline,
            use_bow: true,
            use_embedding: false,
            embedding_path: None,
        }
    }
}

impl SlFeatureConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = SlFeatureConfig::default();
        let embedding_path = kv.take::<String>("embedding_path")?;
        let cfg = SlFeatureConfig {
            variant: kv.take_or("variant", d.variant)?,
            use_bow: kv.take_or("use_bow", d.use_bow)?,
            use_embedding: kv.take_or("use_embedding", embedding_path.is_some())?,
            embedding_path,
        };
        if cfg.use_embedding && cfg.embedding_path.is_none() {
            return Err(Error::Config("use_embedding needs embedding_path".into()));
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("variant", self.variant);
        kv.set("use_bow", self.use_bow);
        kv.set("use_embedding", self.use_embedding);
        if let Some(p) = &self.embedding_path {
            kv.set("embedding_path", p);
        }
        kv
    }
}

/// Word vectors from a text file: `word v1 v2 ...` per line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Embeddings {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl Embeddings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut vectors = BTreeMap::new();
        let mut dim = None;
        let mut bad = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            match v {
                Ok(v) if v.is_empty() => bad.push(format!("line {}: no vector values", n + 1)),
                Ok(v) => match dim {
                    Some(d) if d != v.len() => {
                        bad.push(format!("line {}: expected {d} values, found {}", n + 1, v.len()))
                    }
                    _ => {
                        dim = Some(v.len());
                        vectors.insert(word.to_lowercase(), v);
                    }
                },
                Err(e) => bad.push(format!("line {}: {e}", n + 1)),
            }
        }
        if !bad.is_empty() {
            return Err(Error::Parse(bad));
        }
        Ok(Embeddings {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Mean vector of the known tokens, zero when none is known.
    pub fn mean(&self, tokens: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let mut n = 0;
        for t in tokens {
            if let Some(v) = self.vectors.get(t) {
                out.iter_mut().zip(v).for_each(|(o, x)| *o += x);
                n += 1;
            }
        }
        if n > 0 {
            out.iter_mut().for_each(|o| *o /= n as f64);
        }
        out
    }
}

/// Per-turn input layout and the state needed to build it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlFeaturizer {
    pub config: SlFeatureConfig,
    pub vocabulary: Vec<String>,
    #[serde(skip)]
    vocab_index: HashMap<String, usize>,
    /// Restricted to the vocabulary so the model file stays self-contained.
    pub embeddings: Option<Embeddings>,
    pub n_templates: usize,
    pub lexicon: EntityLexicon,
}

pub const ENTITY_BITS: usize = 4;

/// Per-turn signals available when building one input vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnContext {
    /// Entity types seen in the user's turns so far, by `EntityType::feature_index`.
    pub entities: [bool; ENTITY_BITS],
    pub last_action: Option<usize>,
    pub dialogic: DialogicFeatures,
    pub sentiment: Option<SentimentLabel>,
}

impl SlFeaturizer {
    /// Fits the bag-of-words vocabulary on the delexicalized user turns of `train`.
    pub fn fit(
        train: &[Dialog],
        n_templates: usize,
        lexicon: &EntityLexicon,
        config: &SlFeatureConfig,
        embeddings: Option<&Embeddings>,
    ) -> Result<Self> {
        if config.use_embedding && embeddings.is_none() {
            return Err(Error::Config("use_embedding is set but no embeddings were supplied".into()));
        }
        let mut words = BTreeSet::new();
        for d in train {
            for t in &d.turns {
                words.extend(tokenize(&delexicalize(&t.user_text, lexicon).text));
            }
        }
        let vocabulary: Vec<String> = words.into_iter().collect();
        let embeddings = match (config.use_embedding, embeddings) {
            (true, Some(e)) => Some(Embeddings {
                dim: e.dim,
                vectors: vocabulary
                    .iter()
                    .filter_map(|w| e.vectors.get(w).map(|v| (w.clone(), v.clone())))
                    .collect(),
            }),
            _ => None,
        };
        let mut f = SlFeaturizer {
            config: config.clone(),
            vocabulary,
            vocab_index: HashMap::new(),
            embeddings,
            n_templates,
            lexicon: lexicon.clone(),
        };
        f.reindex();
        Ok(f)
    }

    fn reindex(&mut self) {
        self.vocab_index = self.vocabulary.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn bow_dim(&self) -> usize {
        if self.config.use_bow {
            self.vocabulary.len()
        } else {
            0
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.as_ref().map_or(0, |e| e.dim)
    }

    pub fn dim(&self) -> usize {
        self.bow_dim() + self.embedding_dim() + ENTITY_BITS + self.n_templates + self.config.variant.extra_dim()
    }

    /// Delexicalized text and the entity types it mentions.
    pub fn read_user(&self, user_text: &str) -> (String, Vec<EntityType>) {
        let delex = delexicalize(user_text, &self.lexicon);
        let mut entities: Vec<EntityType> = delex.entities().collect();
        entities.extend(EntityType::ALL.into_iter().filter(|e| delex.text.contains(e.marker())));
        (delex.text, entities)
    }

    pub fn encode(&self, delex_text: &str, ctx: &TurnContext) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.dim());
        let tokens = tokenize(delex_text);
        if self.config.use_bow {
            let base = x.len();
            x.resize(base + self.vocabulary.len(), 0.0);
            for t in &tokens {
                if let Some(&i) = self.vocab_index.get(t) {
                    x[base + i] = 1.0;
                }
            }
        }
        if let Some(e) = &self.embeddings {
            x.extend(e.mean(&tokens));
        }
        x.extend(ctx.entities.iter().map(|&b| f64::from(u8::from(b))));
        let base = x.len();
        x.resize(base + self.n_templates, 0.0);
        if let Some(a) = ctx.last_action {
            if a >= self.n_templates {
                return Err(Error::OutOfRange {
                    index: a,
                    len: self.n_templates,
                });
            }
            x[base + a] = 1.0;
        }
        match self.config.variant {
            SlVariant::Baseline => {}
            SlVariant::PlusDialogic => x.extend(ctx.dialogic.to_vec()),
            SlVariant::PlusSentiment => {
                let label = ctx
                    .sentiment
                    .ok_or_else(|| Error::MissingModel("plus_sentiment needs a predicted sentiment label".into()))?;
                let mut one_hot = [0.0; 3];
                one_hot[label.index()] = 1.0;
                x.extend(one_hot);
            }
        }
        Ok(x)
    }

    /// Teacher-forced inputs and gold targets of one dialog.
    pub fn featurize_dialog(
        &self,
        dialog: &Dialog,
        detector: Option<&SentimentDetector>,
        acoustic: Option<&AcousticTable>,
    ) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let sentiment = match (self.config.variant, detector) {
            (SlVariant::PlusSentiment, Some(d)) => Some(d.predict_dialog(dialog, acoustic)?),
            (SlVariant::PlusSentiment, None) => {
                return Err(Error::MissingModel("plus_sentiment needs a sentiment model".into()));
            }
            _ => None,
        };
        let dialogic = crate::features::extract_dialogic_all(dialog);
        let mut ctx = TurnContext {
            entities: [false; ENTITY_BITS],
            last_action: None,
            dialogic: DialogicFeatures::default(),
            sentiment: None,
        };
        let mut xs = Vec::with_capacity(dialog.turns.len());
        let mut ys = Vec::with_capacity(dialog.turns.len());
        for (t, turn) in dialog.turns.iter().enumerate() {
            let target = turn.system_action_id.ok_or_else(|| {
                Error::Data(format!(
                    "dialog `{}` turn {}: no system action id",
                    dialog.dialog_id, turn.turn_index
                ))
            })?;
            if target >= self.n_templates {
                return Err(Error::OutOfRange {
                    index: target,
                    len: self.n_templates,
                });
            }
            let (text, entities) = self.read_user(&turn.user_text);
            for e in entities {
                ctx.entities[e.feature_index()] = true;
            }
            ctx.dialogic = dialogic[t];
            ctx.sentiment = sentiment.as_ref().map(|s| s[t].label());
            xs.push(self.encode(&text, &ctx)?);
            ys.push(target);
            ctx.last_action = Some(target);
        }
        Ok((xs, ys))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub clip: f64,
    pub rho: f64,
    pub adadelta_eps: f64,
}

impl Default for SlTrainConfig {
    fn default() -> Self {
        SlTrainConfig {
            hidden: 128,
            epochs: 12,
            patience: 3,
            clip: 5.0,
            rho: AdaDelta::DEFAULT_RHO,
            adadelta_eps: AdaDelta::DEFAULT_EPS,
        }
    }
}

impl SlTrainConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = SlTrainConfig::default();
        let cfg = SlTrainConfig {
            hidden: kv.take_or("hidden", d.hidden)?,
            epochs: kv.take_or("epochs", d.epochs)?,
            patience: kv.take_or("patience", d.patience)?,
            clip: kv.take_or("clip", d.clip)?,
            rho: kv.take_or("rho", d.rho)?,
            adadelta_eps: kv.take_or("adadelta_eps", d.adadelta_eps)?,
        };
        if cfg.hidden == 0 {
            return Err(Error::Config("hidden must be positive".into()));
        }
        if !(cfg.clip > 0.0) {
            return Err(Error::Config(format!("clip must be positive, got {}", cfg.clip)));
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("hidden", self.hidden);
        kv.set("epochs", self.epochs);
        kv.set("patience", self.patience);
        kv.set("clip", self.clip);
        kv.set("rho", self.rho);
        kv.set("adadelta_eps", self.adadelta_eps);
        kv
    }
}

const POLICY_FORMAT: &str = "sentidial-policy";
const POLICY_VERSION: u32 = 1;

/// A trained policy with everything needed to featurize and decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    format: String,
    version: u32,
    pub featurizer: SlFeaturizer,
    pub net: Network,
    pub inventory: TemplateInventory,
    pub detector: Option<SentimentDetector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlMetrics {
    pub weighted_f1: f64,
    pub turn_accuracy: f64,
    pub dialog_accuracy: f64,
    pub n_turns: usize,
    pub n_dialogs: usize,
    pub report: EvalReport,
}

impl PolicyModel {
    /// Untrained model with seeded random weights.
    pub fn init(
        featurizer: SlFeaturizer,
        inventory: TemplateInventory,
        detector: Option<SentimentDetector>,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        if featurizer.n_templates != inventory.len() || inventory.is_empty() {
            return Err(Error::Shape(format!(
                "featurizer expects {} templates, inventory has {}",
                featurizer.n_templates,
                inventory.len()
            )));
        }
        if featurizer.config.variant == SlVariant::PlusSentiment && detector.is_none() {
            return Err(Error::MissingModel("plus_sentiment needs a sentiment model".into()));
        }
        let net = Network::random(featurizer.dim(), hidden, inventory.len(), &mut rng_from(seed, 0x5C1, 0));
        Ok(PolicyModel {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION,
            featurizer,
            net,
            inventory,
            detector,
        })
    }

    pub fn featurize(&self, dialog: &Dialog, acoustic: Option<&AcousticTable>) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        self.featurizer.featurize_dialog(dialog, self.detector.as_ref(), acoustic)
    }

    /// Teacher-forced argmax predictions for every turn.
    pub fn predict_dialog(&self, dialog: &Dialog, acoustic: Option<&AcousticTable>) -> Result<Vec<usize>> {
        let (xs, _) = self.featurize(dialog, acoustic)?;
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let cache = self.net.forward_sequence(&xs)?;
        Ok(cache.logits.iter().map(|z| argmax(z)).collect())
    }

    pub fn evaluate(&self, dialogs: &[Dialog], acoustic: Option<&AcousticTable>) -> Result<SlMetrics> {
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        let mut correct_dialogs = 0;
        for d in dialogs {
            let (_, ys) = self.featurize(d, acoustic)?;
            let p = self.predict_dialog(d, acoustic)?;
            if ys == p {
                correct_dialogs += 1;
            }
            truth.extend(ys);
            pred.extend(p);
        }
        sl_metrics(&truth, &pred, correct_dialogs, dialogs.len(), self.inventory.len())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a model; with `expected`, refuses one trained under another feature config.
    pub fn load(path: impl AsRef<Path>, expected: Option<&SlFeatureConfig>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model: PolicyModel = serde_json::from_str(&text)
            .map_err(|e| Error::IncompatibleModel(format!("{}: {e}", path.display())))?;
        if model.format != POLICY_FORMAT || model.version != POLICY_VERSION {
            return Err(Error::IncompatibleModel(format!(
                "{}: expected {POLICY_FORMAT} v{POLICY_VERSION}, found {} v{}",
                path.display(),
                model.format,
                model.version
            )));
        }
        if let Some(cfg) = expected {
            if *cfg != model.featurizer.config {
                return Err(Error::IncompatibleModel(format!(
                    "{}: trained with variant {} (bow {}, embedding {}), requested variant {} (bow {}, embedding {})",
                    path.display(),
                    model.featurizer.config.variant,
                    model.featurizer.config.use_bow,
                    model.featurizer.config.use_embedding,
                    cfg.variant,
                    cfg.use_bow,
                    cfg.use_embedding
                )));
            }
        }
        if model.net.input_size() != model.featurizer.dim() || model.net.actions() != model.inventory.len() {
            return Err(Error::IncompatibleModel(format!(
                "{}: network shape does not match its featurizer",
                path.display()
            )));
        }
        model.featurizer.reindex();
        model.inventory.reindex();
        Ok(model)
    }
}

/// Turn-level weighted F1 and accuracy plus dialog accuracy.
pub fn sl_metrics(
    truth: &[usize],
    pred: &[usize],
    correct_dialogs: usize,
    n_dialogs: usize,
    n_templates: usize,
) -> Result<SlMetrics> {
    let report = evaluate_predictions(truth, pred, n_templates)?;
    Ok(SlMetrics {
        weighted_f1: report.weighted_f1,
        turn_accuracy: report.accuracy,
        dialog_accuracy: correct_dialogs as f64 / n_dialogs.max(1) as f64,
        n_turns: truth.len(),
        n_dialogs,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlTrainResult {
    pub model: PolicyModel,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
}

/// Trains with one AdaDelta update per dialog. With a non-empty `dev`, the
/// parameters of the best dev-F1 epoch are kept and training stops after
/// `patience` epochs without improvement.
pub fn train_sl(
    mut model: PolicyModel,
    train: &[Dialog],
    dev: &[Dialog],
    acoustic: Option<&AcousticTable>,
    cfg: &SlTrainConfig,
    seed: u64,
) -> Result<SlTrainResult> {
    if train.is_empty() {
        return Err(Error::Data("no training dialogs".into()));
    }
    let data: Vec<(Vec<Vec<f64>>, Vec<usize>)> = train
        .iter()
        .map(|d| model.featurize(d, acoustic))
        .filter(|r| r.as_ref().map_or(true, |(xs, _)| !xs.is_empty()))
        .collect::<Result<_>>()?;
    let dim = model.featurizer.dim();
    if let Some(bad) = data.iter().flat_map(|(xs, _)| xs).find(|x| x.len() != dim) {
        return Err(Error::Shape(format!("input dimension drifted: {} vs {dim}", bad.len())));
    }

    let mut opt = AdaDelta::new(
        &model.net.tensors().iter().map(|t| t.len()).collect::<Vec<_>>(),
        cfg.rho,
        cfg.adadelta_eps,
    );
    let mut rng = rng_from(seed, 0x5C2, 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0, model.net.clone());
    if !dev.is_empty() {
        best.0 = model.evaluate(dev, acoustic)?.weighted_f1;
    }
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for &i in &order {
            let (xs, ys) = &data[i];
            let cache = model.net.forward_sequence(xs)?;
            let (l, upstream) = cross_entropy(&cache, ys)?;
            loss += l;
            let mut grads = model.net.backward_sequence(&cache, &upstream)?;
            grads.clip_global_norm(cfg.clip);
            opt.step_network(&mut model.net, &grads)?;
        }
        let turns: usize = data.iter().map(|(_, ys)| ys.len()).sum();
        let dev_f1 = if dev.is_empty() {
            None
        } else {
            Some(model.evaluate(dev, acoustic)?.weighted_f1)
        };
        history.push(EpochStats {
            epoch,
            train_loss: loss / turns as f64,
            dev_f1,
        });
        match dev_f1 {
            Some(f1) if f1 > best.0 => best = (f1, epoch, model.net.clone()),
            Some(_) if epoch - best.1 >= cfg.patience => break,
            Some(_) => {}
            None => best = (f64::NAN, epoch, model.net.clone()),
        }
    }
    model.net = best.2;
    Ok(SlTrainResult {
        model,
        history,
        best_epoch: best.1,
    })
}

/// Per-turn user-side events reported to a live session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TurnEvents {
    pub interrupted: bool,
    pub button: bool,
    pub repetition: bool,
    pub start_over: bool,
}

/// Incremental decoding with carried LSTM state.
#[derive(Debug, Clone)]
pub struct SlSession<'m> {
    model: &'m PolicyModel,
    state: LstmState,
    ctx: TurnContext,
    values: BTreeMap<EntityType, String>,
}

impl<'m> SlSession<'m> {
    pub fn new(model: &'m PolicyModel) -> Self {
        SlSession {
            model,
            state: model.net.initial_state(),
            ctx: TurnContext {
                entities: [false; ENTITY_BITS],
                last_action: None,
                dialogic: DialogicFeatures::default(),
                sentiment: None,
            },
            values: BTreeMap::new(),
        }
    }

    pub fn last_sentiment(&self) -> Option<SentimentLabel> {
        self.ctx.sentiment
    }

    /// Action distribution for the next user turn; advances the session.
    pub fn observe(&mut self, user_text: &str, events: TurnEvents) -> Result<Vec<f64>> {
        let f = &self.model.featurizer;
        let delex = delexicalize(user_text, &f.lexicon);
        for b in &delex.bindings {
            self.values.insert(b.entity, b.surface.clone());
        }
        let (text, entities) = f.read_user(user_text);
        for e in entities {
            self.ctx.entities[e.feature_index()] = true;
        }
        self.ctx.dialogic = self
            .ctx
            .dialogic
            .advance(events.interrupted, events.button, events.repetition, events.start_over);
        if let Some(d) = &self.model.detector {
            self.ctx.sentiment = Some(d.predict_parts(None, &self.ctx.dialogic, user_text)?.label());
        }
        let x = f.encode(&text, &self.ctx)?;
        let logits = self.model.net.step(&mut self.state, &x)?;
        Ok(softmax(&logits))
    }

    /// Argmax template (lowest id on ties); it becomes the next last action.
    pub fn predict_action(&mut self, user_text: &str, events: TurnEvents) -> Result<usize> {
        let p = self.observe(user_text, events)?;
        let a = argmax(&p);
        self.ctx.last_action = Some(a);
        Ok(a)
    }

    /// Predicted template filled with the entity values heard so far.
    pub fn respond(&mut self, user_text: &str, events: TurnEvents) -> Result<(usize, String)> {
        let a = self.predict_action(user_text, events)?;
        let template = &self.model.inventory.get(a).expect("head size matches inventory").delexicalized_text;
        Ok((a, fill_template(template, &self.values)))
    }
}

/// CSV rows `seed,variant,f1,dialog_acc`.
pub fn write_metrics_csv(rows: &[(u64, SlVariant, SlMetrics)], out: impl Write) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        seed: u64,
        variant: &'static str,
        f1: f64,
        dialog_acc: f64,
    }
    let mut w = csv::Writer::from_writer(out);
    for (seed, v, m) in rows {
        w.serialize(Row {
            seed: *seed,
            variant: v.name(),
            f1: m.weighted_f1,
            dialog_acc: m.dialog_accuracy,
        })?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
