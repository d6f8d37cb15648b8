//! Simulated bus-information environment: a goal-driven user with ASR noise,
//! sentiment sampled from a bank of real (or synthetic) user turns, action
//! masking and the four reward functions.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{check_rate, KeyValues};
use crate::corpus::Dialog;
use crate::error::{Error, Result};
use crate::features::{extract_dialogic_all, DialogicFeatures};
use crate::sentiment::{sentiment_score, DialogicSentiment, ScoreWeights};
use crate::stats::{rng_from, Rng as StdRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Departure,
    Arrival,
    Time,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Departure, Slot::Arrival, Slot::Time];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Departure => "departure",
            Slot::Arrival => "arrival",
            Slot::Time => "time",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SysAction {
    AskDeparture,
    AskArrival,
    AskTime,
    GiveInfo,
    GiveNoResult,
}

impl SysAction {
    pub const COUNT: usize = 5;
    pub const ALL: [SysAction; 5] = [
        SysAction::AskDeparture,
        SysAction::AskArrival,
        SysAction::AskTime,
        SysAction::GiveInfo,
        SysAction::GiveNoResult,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SysAction::AskDeparture => "ask_departure",
            SysAction::AskArrival => "ask_arrival",
            SysAction::AskTime => "ask_time",
            SysAction::GiveInfo => "give_info",
            SysAction::GiveNoResult => "give_no_result",
        }
    }

    pub fn asked_slot(self) -> Option<Slot> {
        match self {
            SysAction::AskDeparture => Some(Slot::Departure),
            SysAction::AskArrival => Some(Slot::Arrival),
            SysAction::AskTime => Some(Slot::Time),
            _ => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        self.asked_slot().is_none()
    }

    pub fn text(self) -> &'static str {
        match self {
            SysAction::AskDeparture => "where are you leaving from?",
            SysAction::AskArrival => "where do you want to go?",
            SysAction::AskTime => "what time do you want to travel?",
            SysAction::GiveInfo => "the bus leaves <departure> at <time>.",
            SysAction::GiveNoResult => {
                "let me look that up for you. sorry, there is no result that matches your request."
            }
        }
    }
}

impl FromStr for SysAction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SysAction::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown system action `{s}`"))
    }
}

impl fmt::Display for SysAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The user's fixed goal; values are placeholder tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    /// Whether each slot's value is in the schedule; time is always covered.
    pub covered: [bool; 3],
}

impl UserGoal {
    pub fn covered() -> Self {
        UserGoal { covered: [true; 3] }
    }

    pub fn is_covered(&self) -> bool {
        self.covered.iter().all(|&c| c)
    }

    pub fn token(&self, slot: Slot) -> String {
        if self.covered[slot.index()] {
            format!("<{}>", slot.name())
        } else {
            format!("<uncovered_{}>", slot.name())
        }
    }

    /// Covered with probability `coverage`; otherwise the departure, the
    /// arrival or both are uncovered, chosen uniformly.
    pub fn sample(coverage: f64, rng: &mut impl Rng) -> Self {
        if rng.gen_bool(coverage) {
            return Self::covered();
        }
        let covered = match rng.gen_range(0..3) {
            0 => [false, true, true],
            1 => [true, false, true],
            _ => [false, false, true],
        };
        UserGoal { covered }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimUserAct {
    Inform(Slot),
    Noise,
    /// Reply to a question about a slot the user already gave.
    AlreadyInformed(Slot),
}

impl SimUserAct {
    pub fn text(&self, goal: &UserGoal) -> String {
        match self {
            SimUserAct::Inform(Slot::Departure) => format!("I am at {}.", goal.token(Slot::Departure)),
            SimUserAct::Inform(Slot::Arrival) => format!("I want to go to {}.", goal.token(Slot::Arrival)),
            SimUserAct::Inform(Slot::Time) => format!("At {}.", goal.token(Slot::Time)),
            SimUserAct::Noise => "(noise)".into(),
            SimUserAct::AlreadyInformed(_) => "You already knew that!".into(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            SimUserAct::Inform(s) => format!("inform_{}", s.name()),
            SimUserAct::Noise => "noise".into(),
            SimUserAct::AlreadyInformed(s) => format!("already_informed_{}", s.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserResponse {
    pub act: SimUserAct,
    pub repetition: bool,
    pub interruption: bool,
    pub button: bool,
    pub start_over: bool,
}

/// Per-dialog counts of each system action issued so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SummaryStats {
    pub counts: [u32; 5],
}

impl SummaryStats {
    pub fn record(&mut self, action: SysAction) {
        self.counts[action.index()] += 1;
    }

    /// Counts at or above `clamp` collapse to `clamp`.
    pub fn clamped(&self, clamp: u32) -> [u32; 5] {
        self.counts.map(|c| c.min(clamp))
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub noise_prob: f64,
    pub coverage: f64,
    pub interruption_rate: f64,
    pub button_rate: f64,
    pub start_over_rate: f64,
    /// Summary-statistics counts are clamped at this value before matching.
    pub clamp: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            noise_prob: 0.10,
            coverage: 0.8,
            interruption_rate: 0.075,
            button_rate: 0.0,
            start_over_rate: 0.0,
            clamp: 3,
        }
    }
}

impl SimConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = SimConfig::default();
        let clamp = match kv.take::<String>("clamp")? {
            None => d.clamp,
            Some(s) if s == "none" => u32::MAX,
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("key `clamp`: expected a count or `none`, got `{s}`")))?,
        };
        let cfg = SimConfig {
            noise_prob: kv.take_or("noise_prob", d.noise_prob)?,
            coverage: kv.take_or("coverage", d.coverage)?,
            interruption_rate: kv.take_or("interruption_rate", d.interruption_rate)?,
            button_rate: kv.take_or("button_rate", d.button_rate)?,
            start_over_rate: kv.take_or("start_over_rate", d.start_over_rate)?,
            clamp,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("noise_prob", self.noise_prob);
        kv.set("coverage", self.coverage);
        kv.set("interruption_rate", self.interruption_rate);
        kv.set("button_rate", self.button_rate);
        kv.set("start_over_rate", self.start_over_rate);
        kv.set("clamp", if self.clamp == u32::MAX { "none".to_string() } else { self.clamp.to_string() });
        kv
    }

    pub fn validate(&self) -> Result<()> {
        check_rate("noise_prob", self.noise_prob)?;
        check_rate("coverage", self.coverage)?;
        check_rate("interruption_rate", self.interruption_rate)?;
        check_rate("button_rate", self.button_rate)?;
        check_rate("start_over_rate", self.start_over_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardVariant {
    Baseline,
    Srrs,
    Srrp,
    Srrip,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 4] = [
        RewardVariant::Baseline,
        RewardVariant::Srrs,
        RewardVariant::Srrp,
        RewardVariant::Srrip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::Baseline => "baseline",
            RewardVariant::Srrs => "srrs",
            RewardVariant::Srrp => "srrp",
            RewardVariant::Srrip => "srrip",
        }
    }

    pub fn uses_sentiment(self) -> bool {
        self != RewardVariant::Baseline
    }
}

impl FromStr for RewardVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        RewardVariant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown reward variant `{s}`"))
    }
}

impl fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    pub success: f64,
    pub failure: f64,
    pub step: f64,
    pub repetition_penalty: f64,
    pub interruption_penalty: f64,
    pub weights: ScoreWeights,
    pub max_turns: usize,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            variant: RewardVariant::Baseline,
            success: 20.0,
            failure: -10.0,
            step: -1.0,
            repetition_penalty: -2.5,
            interruption_penalty: -1.0,
            weights: ScoreWeights::default(),
            max_turns: 15,
            gamma: 0.9,
        }
    }
}

impl RewardConfig {
    pub fn with_variant(variant: RewardVariant) -> Self {
        RewardConfig {
            variant,
            ..Self::default()
        }
    }

    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = RewardConfig::default();
        let cfg = RewardConfig {
            variant: kv.take_or("reward_variant", d.variant)?,
            success: kv.take_or("success_reward", d.success)?,
            failure: kv.take_or("failure_reward", d.failure)?,
            step: kv.take_or("step_reward", d.step)?,
            repetition_penalty: kv.take_or("repetition_penalty", d.repetition_penalty)?,
            interruption_penalty: kv.take_or("interruption_penalty", d.interruption_penalty)?,
            weights: ScoreWeights {
                negative: kv.take_or("score_negative", d.weights.negative)?,
                neutral: kv.take_or("score_neutral", d.weights.neutral)?,
                positive: kv.take_or("score_positive", d.weights.positive)?,
            },
            max_turns: kv.take_or("max_turns", d.max_turns)?,
            gamma: kv.take_or("gamma", d.gamma)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("reward_variant", self.variant);
        kv.set("success_reward", self.success);
        kv.set("failure_reward", self.failure);
        kv.set("step_reward", self.step);
        kv.set("repetition_penalty", self.repetition_penalty);
        kv.set("interruption_penalty", self.interruption_penalty);
        kv.set("score_negative", self.weights.negative);
        kv.set("score_neutral", self.weights.neutral);
        kv.set("score_positive", self.weights.positive);
        kv.set("max_turns", self.max_turns);
        kv.set("gamma", self.gamma);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(Error::Config("max_turns must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DialogResult {
    Success,
    Failure,
    Ongoing,
}

impl DialogResult {
    pub fn name(self) -> &'static str {
        match self {
            DialogResult::Success => "success",
            DialogResult::Failure => "failure",
            DialogResult::Ongoing => "ongoing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchKind {
    Matched,
    NoMatchRepetition,
    NoMatchPlain,
}

impl MatchKind {
    pub fn name(self) -> &'static str {
        match self {
            MatchKind::Matched => "matched",
            MatchKind::NoMatchRepetition => "no_match_repetition",
            MatchKind::NoMatchPlain => "no_match_plain",
        }
    }
}

/// Reward components; the turn reward is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Terminal reward, or the flat per-turn reward.
    pub base: f64,
    pub sentiment: f64,
    pub repetition: f64,
    pub interruption: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.base + self.sentiment + self.repetition + self.interruption
    }
}

/// Where the sentiment of a proceeding turn came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SentimentSample<'a> {
    Matched(&'a DialogicFeatures),
    /// A random bank row used when nothing matched.
    Fallback(&'a DialogicFeatures),
    None,
}

pub fn compute_reward(
    cfg: &RewardConfig,
    result: DialogResult,
    sample: SentimentSample<'_>,
    repetition: bool,
    interruption: bool,
    model: Option<&dyn DialogicSentiment>,
) -> Result<RewardBreakdown> {
    let mut r = RewardBreakdown::default();
    match result {
        DialogResult::Success => r.base = cfg.success,
        DialogResult::Failure => r.base = cfg.failure,
        DialogResult::Ongoing if cfg.variant == RewardVariant::Baseline => r.base = cfg.step,
        DialogResult::Ongoing => {
            match sample {
                SentimentSample::Matched(f) | SentimentSample::Fallback(f) => {
                    if f.is_zero() {
                        r.base = cfg.step;
                    } else {
                        let model = model.ok_or_else(|| {
                            Error::MissingModel(format!("reward variant {} needs a sentiment model", cfg.variant))
                        })?;
                        r.sentiment = sentiment_score(&model.predict_dialogic(f), &cfg.weights);
                    }
                }
                SentimentSample::None if cfg.variant != RewardVariant::Srrs && repetition => {
                    r.repetition = cfg.repetition_penalty;
                }
                SentimentSample::None => r.base = cfg.step,
            }
            if cfg.variant == RewardVariant::Srrip && interruption {
                r.interruption = cfg.interruption_penalty;
            }
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleBankRow {
    pub s_real: SummaryStats,
    pub dialogic: DialogicFeatures,
}

/// Bank rows indexed by clamped summary statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleBank {
    rows: Vec<SampleBankRow>,
    clamp: u32,
    index: HashMap<[u32; 5], Vec<usize>>,
}

const BANK_HEADER: [&str; 13] = [
    "ask_departure",
    "ask_arrival",
    "ask_time",
    "give_info",
    "give_no_result",
    "interruption",
    "total_interruptions",
    "button_usage",
    "total_button_usages",
    "repetition",
    "total_repetitions",
    "start_over",
    "total_start_over",
];

impl SampleBank {
    pub fn new(rows: Vec<SampleBankRow>, clamp: u32) -> Self {
        let mut index: HashMap<[u32; 5], Vec<usize>> = HashMap::new();
        for (i, r) in rows.iter().enumerate() {
            index.entry(r.s_real.clamped(clamp)).or_default().push(i);
        }
        SampleBank { rows, clamp, index }
    }

    pub fn rows(&self) -> &[SampleBankRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn clamp(&self) -> u32 {
        self.clamp
    }

    /// Indices of rows whose clamped statistics equal the clamped `s_sim`.
    pub fn matches(&self, s_sim: &SummaryStats) -> &[usize] {
        self.index
            .get(&s_sim.clamped(self.clamp))
            .map_or(&[], Vec::as_slice)
    }

    pub fn distinct_keys(&self) -> usize {
        self.index.len()
    }

    pub fn random_row(&self, rng: &mut impl Rng) -> Option<&SampleBankRow> {
        if self.rows.is_empty() {
            None
        } else {
            Some(&self.rows[rng.gen_range(0..self.rows.len())])
        }
    }

    /// Whitespace-separated table: 5 summary counts then 8 dialogic features.
    pub fn to_text(&self) -> String {
        let mut out = BANK_HEADER.join(" ");
        out.push('\n');
        for r in &self.rows {
            let vals: Vec<String> = r
                .s_real
                .counts
                .iter()
                .chain(r.dialogic.to_array().iter())
                .map(u32::to_string)
                .collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, clamp: u32) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.split_whitespace().eq(BANK_HEADER.iter().copied()) => {}
            Some((n, _)) => {
                return Err(Error::Parse(vec![format!("line {}: unexpected sample-bank header", n + 1)]));
            }
            None => return Ok(SampleBank::new(Vec::new(), clamp)),
        }
        let mut rows = Vec::new();
        let mut bad = Vec::new();
        for (n, line) in lines {
            let vals: std::result::Result<Vec<u32>, _> = line.split_whitespace().map(str::parse).collect();
            match vals {
                Ok(v) if v.len() == 13 => {
                    let mut counts = [0; 5];
                    counts.copy_from_slice(&v[..5]);
                    let mut d = [0; 8];
                    d.copy_from_slice(&v[5..]);
                    rows.push(SampleBankRow {
                        s_real: SummaryStats { counts },
                        dialogic: DialogicFeatures::from_array(d),
                    });
                }
                Ok(v) => bad.push(format!("line {}: expected 13 columns, found {}", n + 1, v.len())),
                Err(e) => bad.push(format!("line {}: {e}", n + 1)),
            }
        }
        if bad.is_empty() {
            Ok(SampleBank::new(rows, clamp))
        } else {
            Err(Error::Parse(bad))
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>, clamp: u32) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, clamp)
    }
}

/// Uniform choice among the bank rows matching `s_sim`.
pub fn sample_sentiment<'b>(bank: &'b SampleBank, s_sim: &SummaryStats, rng: &mut impl Rng) -> Option<&'b SampleBankRow> {
    let m = bank.matches(s_sim);
    if m.is_empty() {
        None
    } else {
        Some(&bank.rows[m[rng.gen_range(0..m.len())]])
    }
}

/// Keyword rules mapping real system utterances to simulated actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionBuckets {
    rules: Vec<(SysAction, String)>,
}

impl Default for ActionBuckets {
    fn default() -> Self {
        Self::parse(include_str!("../data/action_buckets.tsv")).expect("shipped bucket table parses")
    }
}

impl ActionBuckets {
    /// `action<TAB>keyword` lines; `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        let mut bad = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((a, kw)) => match a.trim().parse::<SysAction>() {
                    Ok(a) => rules.push((a, kw.trim().to_lowercase())),
                    Err(e) => bad.push(format!("line {}: {e}", n + 1)),
                },
                None => bad.push(format!("line {}: expected `action<TAB>keyword`", n + 1)),
            }
        }
        if bad.is_empty() {
            Ok(ActionBuckets { rules })
        } else {
            Err(Error::Parse(bad))
        }
    }

    pub fn classify(&self, system_text: &str) -> Option<SysAction> {
        let text = system_text.to_lowercase();
        self.rules
            .iter()
            .find(|(_, kw)| text.contains(kw.as_str()))
            .map(|(a, _)| *a)
    }
}

/// One row per user utterance: the counts of mapped system actions that
/// preceded it, and its dialogic features.
pub fn build_sample_bank(dialogs: &[Dialog], buckets: &ActionBuckets) -> Vec<SampleBankRow> {
    let mut rows = Vec::new();
    for d in dialogs {
        let mut stats = SummaryStats::default();
        for (turn, dialogic) in d.turns.iter().zip(extract_dialogic_all(d)) {
            rows.push(SampleBankRow { s_real: stats, dialogic });
            if let Some(a) = buckets.classify(&turn.system_text) {
                stats.record(a);
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// System actions issued so far.
    pub turn: usize,
    pub filled: [bool; 3],
    pub stats: SummaryStats,
    pub last_action: Option<SysAction>,
    pub last_user_act: Option<SimUserAct>,
    pub consecutive_asks: [u32; 3],
    /// The simulated user's own event history.
    pub dialogic: DialogicFeatures,
    pub result: DialogResult,
}

impl EnvState {
    fn fresh() -> Self {
        EnvState {
            turn: 0,
            filled: [false; 3],
            stats: SummaryStats::default(),
            last_action: None,
            last_user_act: None,
            consecutive_asks: [0; 3],
            dialogic: DialogicFeatures::default(),
            result: DialogResult::Ongoing,
        }
    }

    pub fn all_filled(&self) -> bool {
        self.filled.iter().all(|&f| f)
    }
}

/// Ask actions are always allowed; GiveInfo only once every slot is filled
/// and the goal is covered, GiveNoResult once every slot is filled and it is not.
pub fn action_mask(state: &EnvState, goal: &UserGoal) -> [bool; 5] {
    let done = state.all_filled();
    [true, true, true, done && goal.is_covered(), done && !goal.is_covered()]
}

pub fn user_respond(
    state: &EnvState,
    action: SysAction,
    sim: &SimConfig,
    rng: &mut impl Rng,
) -> Option<UserResponse> {
    let slot = action.asked_slot()?;
    let repetition = state.filled[slot.index()];
    let noise = rng.gen_bool(sim.noise_prob);
    let act = match (noise, repetition) {
        (true, _) => SimUserAct::Noise,
        (false, true) => SimUserAct::AlreadyInformed(slot),
        (false, false) => SimUserAct::Inform(slot),
    };
    Some(UserResponse {
        act,
        repetition,
        interruption: rng.gen_bool(sim.interruption_rate),
        button: rng.gen_bool(sim.button_rate),
        start_over: rng.gen_bool(sim.start_over_rate),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub done: bool,
    pub result: DialogResult,
    /// `None` on terminal turns.
    pub match_kind: Option<MatchKind>,
    pub user: Option<UserResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub turn: usize,
    pub action: SysAction,
    pub user_act: Option<SimUserAct>,
    pub match_kind: Option<MatchKind>,
    pub breakdown: RewardBreakdown,
    pub reward: f64,
    pub result: DialogResult,
}

/// One dialog in progress.
#[derive(Debug, Clone)]
pub struct Episode {
    pub state: EnvState,
    pub goal: UserGoal,
    /// The user's opening utterance.
    pub opening: SimUserAct,
    pub trace: Vec<TraceRecord>,
    user_rng: StdRng,
    sample_rng: StdRng,
}

impl Episode {
    pub fn is_done(&self) -> bool {
        self.state.result != DialogResult::Ongoing
    }

    pub fn total_reward(&self) -> f64 {
        self.trace.iter().map(|t| t.reward).sum()
    }

    /// Tab-separated, one turn per line, with a header.
    pub fn trace_text(&self) -> String {
        let mut out =
            String::from("turn\taction\tuser_act\tmatch_kind\tbase\tsentiment\trepetition\tinterruption\treward\tresult\n");
        for t in &self.trace {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                t.turn,
                t.action,
                t.user_act.map_or("-".to_string(), |a| a.name()),
                t.match_kind.map_or("-", MatchKind::name),
                t.breakdown.base,
                t.breakdown.sentiment,
                t.breakdown.repetition,
                t.breakdown.interruption,
                t.reward,
                t.result.name()
            ));
        }
        out
    }

    pub fn write_trace(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(self.trace_text().as_bytes())
    }
}

const USER_STREAM: u64 = 0x05E7;
const SAMPLE_STREAM: u64 = 0x5A3B;

/// Immutable simulator setup shared by all rollouts.
#[derive(Clone, Copy)]
pub struct Environment<'a> {
    pub reward: RewardConfig,
    pub sim: SimConfig,
    bank: &'a SampleBank,
    model: Option<&'a dyn DialogicSentiment>,
}

impl fmt::Debug for Environment<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Environment")
            .field("reward", &self.reward)
            .field("sim", &self.sim)
            .field("bank_rows", &self.bank.len())
            .field("has_model", &self.model.is_some())
            .finish()
    }
}

impl<'a> Environment<'a> {
    pub fn new(
        reward: RewardConfig,
        sim: SimConfig,
        bank: &'a SampleBank,
        model: Option<&'a dyn DialogicSentiment>,
    ) -> Result<Self> {
        reward.validate()?;
        sim.validate()?;
        if reward.variant.uses_sentiment() && model.is_none() {
            return Err(Error::MissingModel(format!(
                "reward variant {} needs a sentiment model",
                reward.variant
            )));
        }
        Ok(Environment {
            reward,
            sim,
            bank,
            model,
        })
    }

    pub fn bank(&self) -> &SampleBank {
        self.bank
    }

    /// Starts a dialog: samples the goal and the user's opening, which
    /// informs the departure unless it is lost to noise.
    pub fn reset(&self, seed: u64) -> Episode {
        let mut user_rng = rng_from(seed, USER_STREAM, 0);
        let goal = UserGoal::sample(self.sim.coverage, &mut user_rng);
        let opening = if user_rng.gen_bool(self.sim.noise_prob) {
            SimUserAct::Noise
        } else {
            SimUserAct::Inform(Slot::Departure)
        };
        self.start(goal, opening, user_rng, seed)
    }

    /// Starts a dialog with a given goal and opening act.
    pub fn reset_with(&self, goal: UserGoal, opening: SimUserAct, seed: u64) -> Episode {
        self.start(goal, opening, rng_from(seed, USER_STREAM, 0), seed)
    }

    fn start(&self, goal: UserGoal, opening: SimUserAct, user_rng: StdRng, seed: u64) -> Episode {
        let mut state = EnvState::fresh();
        if let SimUserAct::Inform(s) = opening {
            state.filled[s.index()] = true;
        }
        state.last_user_act = Some(opening);
        Episode {
            state,
            goal,
            opening,
            trace: Vec::new(),
            user_rng,
            sample_rng: rng_from(seed, SAMPLE_STREAM, 0),
        }
    }

    pub fn mask(&self, episode: &Episode) -> [bool; 5] {
        action_mask(&episode.state, &episode.goal)
    }

    fn check_action(&self, ep: &Episode, action: SysAction) -> Result<()> {
        if ep.is_done() {
            return Err(Error::MaskedAction(format!("{action} (dialog already finished)")));
        }
        if !self.mask(ep)[action.index()] {
            return Err(Error::MaskedAction(action.name().into()));
        }
        Ok(())
    }

    /// Takes `action`; the simulated user answers.
    pub fn step(&self, ep: &mut Episode, action: SysAction) -> Result<StepOutcome> {
        self.check_action(ep, action)?;
        let user = user_respond(&ep.state, action, &self.sim, &mut ep.user_rng);
        self.apply(ep, action, user)
    }

    /// Takes `action` with an externally supplied user answer, which must be
    /// present exactly for ask actions. Used when a person plays the user.
    pub fn step_with_response(&self, ep: &mut Episode, action: SysAction, user: Option<UserResponse>) -> Result<StepOutcome> {
        self.check_action(ep, action)?;
        if user.is_some() != action.asked_slot().is_some() {
            return Err(Error::Data(format!(
                "{action}: a user response is required after ask actions and only there"
            )));
        }
        self.apply(ep, action, user)
    }

    fn apply(&self, ep: &mut Episode, action: SysAction, user: Option<UserResponse>) -> Result<StepOutcome> {
        let state = &mut ep.state;
        state.turn += 1;
        state.stats.record(action);
        state.last_action = Some(action);

        let result = if action.is_terminal() {
            DialogResult::Success
        } else if state.turn >= self.reward.max_turns {
            DialogResult::Failure
        } else {
            DialogResult::Ongoing
        };

        if let Some(u) = &user {
            let slot = action.asked_slot().expect("ask action");
            if let SimUserAct::Inform(s) = u.act {
                state.filled[s.index()] = true;
            }
            for (i, c) in state.consecutive_asks.iter_mut().enumerate() {
                *c = if i == slot.index() { *c + 1 } else { 0 };
            }
            state.last_user_act = Some(u.act);
            state.dialogic = state
                .dialogic
                .advance(u.interruption, u.button, u.repetition, u.start_over);
        }

        let (sample, match_kind) = if result == DialogResult::Ongoing {
            let u = user.as_ref().expect("ongoing turns have a user response");
            let matched = sample_sentiment(self.bank, &state.stats, &mut ep.sample_rng);
            let kind = match (matched.is_some(), u.repetition) {
                (true, _) => MatchKind::Matched,
                (false, true) => MatchKind::NoMatchRepetition,
                (false, false) => MatchKind::NoMatchPlain,
            };
            let sample = match matched {
                Some(r) => SentimentSample::Matched(&r.dialogic),
                None if self.reward.variant == RewardVariant::Srrs => self
                    .bank
                    .random_row(&mut ep.sample_rng)
                    .map_or(SentimentSample::None, |r| SentimentSample::Fallback(&r.dialogic)),
                None => SentimentSample::None,
            };
            (sample, Some(kind))
        } else {
            (SentimentSample::None, None)
        };

        let (repetition, interruption) = user.map_or((false, false), |u| (u.repetition, u.interruption));
        let breakdown = compute_reward(&self.reward, result, sample, repetition, interruption, self.model)?;
        let reward = breakdown.total();
        state.result = result;
        ep.trace.push(TraceRecord {
            turn: state.turn,
            action,
            user_act: user.map(|u| u.act),
            match_kind,
            breakdown,
            reward,
            result,
        });
        Ok(StepOutcome {
            reward,
            breakdown,
            done: result != DialogResult::Ongoing,
            result,
            match_kind,
            user,
        })
    }
}

/// Hand-written policy used to profile bank coverage: with probability
/// `random_rate` a uniformly random allowed action, otherwise ask the first
/// unfilled slot (departure, arrival, time) or give the allowed answer.
pub fn reference_action(mask: &[bool; 5], state: &EnvState, random_rate: f64, rng: &mut impl Rng) -> SysAction {
    if rng.gen_bool(random_rate) {
        let allowed: Vec<SysAction> = SysAction::ALL.into_iter().filter(|a| mask[a.index()]).collect();
        return allowed[rng.gen_range(0..allowed.len())];
    }
    match Slot::ALL.into_iter().find(|s| !state.filled[s.index()]) {
        Some(Slot::Departure) => SysAction::AskDeparture,
        Some(Slot::Arrival) => SysAction::AskArrival,
        Some(Slot::Time) => SysAction::AskTime,
        None if mask[SysAction::GiveInfo.index()] => SysAction::GiveInfo,
        None => SysAction::GiveNoResult,
    }
}

/// Fractions of all simulated turns by sentiment source.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoverageProfile {
    pub turns: usize,
    pub matched: f64,
    pub no_match_repetition: f64,
    pub no_match_plain: f64,
    pub terminal: f64,
    pub interruption: f64,
}

/// Runs the reference policy and counts how turns find sentiment samples.
pub fn coverage_profile(env: &Environment<'_>, random_rate: f64, n_dialogs: usize, seed: u64) -> Result<CoverageProfile> {
    let mut counts = [0usize; 5];
    let mut turns = 0;
    for i in 0..n_dialogs {
        let mut ep = env.reset(crate::stats::derive_seed(seed, 0xC0FE, i as u64));
        let mut rng = rng_from(seed, 0x9E1, i as u64);
        while !ep.is_done() {
            let a = reference_action(&env.mask(&ep), &ep.state, random_rate, &mut rng);
            let out = env.step(&mut ep, a)?;
            turns += 1;
            match out.match_kind {
                Some(MatchKind::Matched) => counts[0] += 1,
                Some(MatchKind::NoMatchRepetition) => counts[1] += 1,
                Some(MatchKind::NoMatchPlain) => counts[2] += 1,
                None => counts[3] += 1,
            }
            if out.user.is_some_and(|u| u.interruption) {
                counts[4] += 1;
            }
        }
    }
    let f = |c: usize| if turns == 0 { 0.0 } else { c as f64 / turns as f64 };
    Ok(CoverageProfile {
        turns,
        matched: f(counts[0]),
        no_match_repetition: f(counts[1]),
        no_match_plain: f(counts[2]),
        terminal: f(counts[3]),
        interruption: f(counts[4]),
    })
}

/// Settings of the synthetic sample-bank generator.
///
/// Candidate rows come from `real_dialogs` dialogs between the reference
/// policy and a user whose event rates grow with the repetitions so far:
/// `p(event) = min(0.95, base + per_repeat * total_repetitions_before)`.
/// Candidate keys are then admitted, repetition-heavy and frequent first, skipping any key that would overshoot either the
/// matched share `target_coverage` or leave fewer than `target_repetition`
/// unmatched repetition turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub real_dialogs: usize,
    pub reference_dialogs: usize,
    pub reference_random_rate: f64,
    pub target_coverage: f64,
    /// Share of turns that should be unmatched repetitions.
    pub target_repetition: f64,
    pub interruption_base: f64,
    pub interruption_per_repeat: f64,
    pub button_base: f64,
    pub button_per_repeat: f64,
    pub start_over_per_repeat: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            real_dialogs: 413,
            reference_dialogs: 4000,
            reference_random_rate: 0.75,
            target_coverage: 0.36,
            target_repetition: 0.15,
            interruption_base: 0.05,
            interruption_per_repeat: 0.3,
            button_base: 0.01,
            button_per_repeat: 0.05,
            start_over_per_repeat: 0.02,
        }
    }
}

impl BankConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self> {
        let d = BankConfig::default();
        let cfg = BankConfig {
            real_dialogs: kv.take_or("bank_real_dialogs", d.real_dialogs)?,
            reference_dialogs: kv.take_or("bank_reference_dialogs", d.reference_dialogs)?,
            reference_random_rate: kv.take_or("bank_reference_random_rate", d.reference_random_rate)?,
            target_coverage: kv.take_or("bank_target_coverage", d.target_coverage)?,
            target_repetition: kv.take_or("bank_target_repetition", d.target_repetition)?,
            interruption_base: kv.take_or("bank_interruption_base", d.interruption_base)?,
            interruption_per_repeat: kv.take_or("bank_interruption_per_repeat", d.interruption_per_repeat)?,
            button_base: kv.take_or("bank_button_base", d.button_base)?,
            button_per_repeat: kv.take_or("bank_button_per_repeat", d.button_per_repeat)?,
            start_over_per_repeat: kv.take_or("bank_start_over_per_repeat", d.start_over_per_repeat)?,
        };
        check_rate("bank_reference_random_rate", cfg.reference_random_rate)?;
        check_rate("bank_target_coverage", cfg.target_coverage)?;
        check_rate("bank_target_repetition", cfg.target_repetition)?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("bank_real_dialogs", self.real_dialogs);
        kv.set("bank_reference_dialogs", self.reference_dialogs);
        kv.set("bank_reference_random_rate", self.reference_random_rate);
        kv.set("bank_target_coverage", self.target_coverage);
        kv.set("bank_target_repetition", self.target_repetition);
        kv.set("bank_interruption_base", self.interruption_base);
        kv.set("bank_interruption_per_repeat", self.interruption_per_repeat);
        kv.set("bank_button_base", self.button_base);
        kv.set("bank_button_per_repeat", self.button_per_repeat);
        kv.set("bank_start_over_per_repeat", self.start_over_per_repeat);
        kv
    }
}

/// Generates a synthetic sample bank whose coverage of reference-policy
/// turns approximates `cfg.target_coverage`.
pub fn synth_sample_bank(seed: u64, cfg: &BankConfig, sim: &SimConfig, max_turns: usize) -> Result<SampleBank> {
    let empty = SampleBank::new(Vec::new(), sim.clamp);
    let reward = RewardConfig {
        max_turns,
        ..RewardConfig::default()
    };
    let env = Environment::new(reward, *sim, &empty, None)?;

    let mut candidates: Vec<SampleBankRow> = Vec::new();
    for i in 0..cfg.real_dialogs {
        let mut ep = env.reset(crate::stats::derive_seed(seed, 0xBA4C, i as u64));
        let mut policy_rng = rng_from(seed, 0xBA4D, i as u64);
        let mut event_rng = rng_from(seed, 0xBA4E, i as u64);
        let mut dialogic = DialogicFeatures::default();
        while !ep.is_done() {
            let a = reference_action(&env.mask(&ep), &ep.state, cfg.reference_random_rate, &mut policy_rng);
            let out = env.step(&mut ep, a)?;
            let Some(u) = out.user else { continue };
            if out.done {
                continue;
            }
            let reps = dialogic.total_repetitions as f64;
            let p = |base: f64, slope: f64| (base + slope * reps).min(0.95);
            dialogic = dialogic.advance(
                event_rng.gen_bool(p(cfg.interruption_base, cfg.interruption_per_repeat)),
                event_rng.gen_bool(p(cfg.button_base, cfg.button_per_repeat)),
                u.repetition,
                event_rng.gen_bool(p(0.0, cfg.start_over_per_repeat)),
            );
            candidates.push(SampleBankRow {
                s_real: ep.state.stats,
                dialogic,
            });
        }
    }

    // Per key: visits on repetition turns and on other proceeding turns.
    let mut visits: HashMap<[u32; 5], [usize; 2]> = HashMap::new();
    let mut total_turns = 0usize;
    let mut repetition_turns = 0usize;
    for i in 0..cfg.reference_dialogs {
        let mut ep = env.reset(crate::stats::derive_seed(seed, 0xC0FE, i as u64));
        let mut rng = rng_from(seed, 0x9E1, i as u64);
        while !ep.is_done() {
            let a = reference_action(&env.mask(&ep), &ep.state, cfg.reference_random_rate, &mut rng);
            let out = env.step(&mut ep, a)?;
            total_turns += 1;
            if let (false, Some(u)) = (out.done, out.user) {
                repetition_turns += usize::from(u.repetition);
                visits.entry(ep.state.stats.clamped(sim.clamp)).or_default()[usize::from(!u.repetition)] += 1;
            }
        }
    }

    let n = total_turns as f64;
    let mut rep_budget = (repetition_turns as f64 - cfg.target_repetition * n).max(0.0).round() as usize;
    let mut plain_budget = (cfg.target_coverage * n - rep_budget as f64).max(0.0).round() as usize;
    let mut keys: Vec<[u32; 5]> = candidates.iter().map(|r| r.s_real.clamped(sim.clamp)).collect();
    keys.sort();
    keys.dedup();
    // Repetition-heavy keys first, then by visit count.
    keys.sort_by_key(|k| {
        let [rep, plain] = visits.get(k).copied().unwrap_or_default();
        std::cmp::Reverse((rep * 1000 / (rep + plain).max(1), rep + plain))
    });
    let mut admitted = std::collections::HashSet::new();
    for k in keys {
        let [rep, plain] = visits.get(&k).copied().unwrap_or_default();
        if rep + plain > 0 && rep <= rep_budget && plain <= plain_budget {
            rep_budget -= rep;
            plain_budget -= plain;
            admitted.insert(k);
        }
    }
    let rows = candidates
        .into_iter()
        .filter(|r| admitted.contains(&r.s_real.clamped(sim.clamp)))
        .collect();
    Ok(SampleBank::new(rows, sim.clamp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, Turn};
    use crate::sentiment::{FixedSentiment, SentimentProbs};
    use proptest::prelude::*;

    fn no_noise() -> SimConfig {
        SimConfig {
            noise_prob: 0.0,
            interruption_rate: 0.0,
            ..SimConfig::default()
        }
    }

    fn fixture_model() -> FixedSentiment {
        FixedSentiment(SentimentProbs::new(0.7525, 0.2475, 0.0).unwrap())
    }

    fn uncovered_goal() -> UserGoal {
        UserGoal {
            covered: [false, false, true],
        }
    }

    #[test]
    fn baseline_example_dialog_totals_17() {
        let bank = SampleBank::default();
        let env = Environment::new(RewardConfig::default(), no_noise(), &bank, None).unwrap();
        let mut ep = env.reset_with(uncovered_goal(), SimUserAct::Inform(Slot::Departure), 1);
        let rewards: Vec<f64> = [
            SysAction::AskTime,
            SysAction::AskTime,
            SysAction::AskArrival,
            SysAction::GiveNoResult,
        ]
        .into_iter()
        .map(|a| env.step(&mut ep, a).unwrap().reward)
        .collect();
        assert_eq!(rewards, vec![-1.0, -1.0, -1.0, 20.0]);
        assert_eq!(ep.trace[1].user_act, Some(SimUserAct::AlreadyInformed(Slot::Time)));
        assert!((ep.total_reward() - 17.0).abs() < 1e-9);
        assert_eq!(ep.state.result, DialogResult::Success);
    }

    #[test]
    fn srrp_example_dialog_totals_11_49() {
        let row = SampleBankRow {
            s_real: SummaryStats { counts: [0, 2, 0, 0, 0] },
            dialogic: DialogicFeatures::from_array([1, 1, 0, 0, 1, 1, 0, 0]),
        };
        let bank = SampleBank::new(vec![row], 3);
        let model = fixture_model();
        let env = Environment::new(
            RewardConfig::with_variant(RewardVariant::Srrp),
            no_noise(),
            &bank,
            Some(&model),
        )
        .unwrap();
        let mut ep = env.reset_with(uncovered_goal(), SimUserAct::Inform(Slot::Departure), 1);
        let outs: Vec<StepOutcome> = [
            SysAction::AskArrival,
            SysAction::AskArrival,
            SysAction::AskDeparture,
            SysAction::AskTime,
            SysAction::GiveNoResult,
        ]
        .into_iter()
        .map(|a| env.step(&mut ep, a).unwrap())
        .collect();
        let kinds: Vec<Option<MatchKind>> = outs.iter().map(|o| o.match_kind).collect();
        assert_eq!(
            kinds,
            vec![
                Some(MatchKind::NoMatchPlain),
                Some(MatchKind::Matched),
                Some(MatchKind::NoMatchRepetition),
                Some(MatchKind::NoMatchPlain),
                None
            ]
        );
        let expected = [-1.0, -4.01, -2.5, -1.0, 20.0];
        for (o, e) in outs.iter().zip(expected) {
            assert!((o.reward - e).abs() < 1e-9, "{} vs {e}", o.reward);
        }
        assert!((ep.total_reward() - 11.49).abs() < 1e-9);
    }

    #[test]
    fn reward_variant_examples() {
        let model = fixture_model();
        let m: Option<&dyn DialogicSentiment> = Some(&model);
        for v in RewardVariant::ALL {
            let cfg = RewardConfig::with_variant(v);
            let r = compute_reward(&cfg, DialogResult::Success, SentimentSample::None, true, true, m).unwrap();
            assert_eq!(r.total(), 20.0);
            let r = compute_reward(&cfg, DialogResult::Failure, SentimentSample::None, true, true, m).unwrap();
            assert_eq!(r.total(), -10.0);
        }
        let srrp = RewardConfig::with_variant(RewardVariant::Srrp);
        let r = compute_reward(&srrp, DialogResult::Ongoing, SentimentSample::None, true, false, m).unwrap();
        assert_eq!(r.total(), -2.5);
        let srrip = RewardConfig::with_variant(RewardVariant::Srrip);
        let r = compute_reward(&srrip, DialogResult::Ongoing, SentimentSample::None, false, true, m).unwrap();
        assert_eq!(r.total(), -2.0);
        assert_eq!(r.interruption, -1.0);
        let zero = DialogicFeatures::default();
        let srrs = RewardConfig::with_variant(RewardVariant::Srrs);
        let r = compute_reward(&srrs, DialogResult::Ongoing, SentimentSample::Fallback(&zero), true, true, m).unwrap();
        assert_eq!(r.total(), -1.0);
        let hot = DialogicFeatures::from_array([1; 8]);
        assert!(compute_reward(&srrs, DialogResult::Ongoing, SentimentSample::Matched(&hot), false, false, None).is_err());
    }

    #[test]
    fn environment_requires_model_for_sentiment_variants() {
        let bank = SampleBank::default();
        assert!(matches!(
            Environment::new(RewardConfig::with_variant(RewardVariant::Srrs), SimConfig::default(), &bank, None),
            Err(Error::MissingModel(_))
        ));
    }

    #[test]
    fn reset_is_deterministic_and_coverage_rate() {
        let bank = SampleBank::default();
        let env = Environment::new(RewardConfig::default(), SimConfig::default(), &bank, None).unwrap();
        let a = env.reset(9);
        let b = env.reset(9);
        assert_eq!(a.goal, b.goal);
        assert_eq!(a.state, b.state);
        let covered = (0..10_000).filter(|&s| env.reset(s).goal.is_covered()).count();
        assert!((covered as f64 / 10_000.0 - 0.8).abs() <= 0.02);

        let always = SimConfig { coverage: 1.0, ..SimConfig::default() };
        let env = Environment::new(RewardConfig::default(), always, &bank, None).unwrap();
        assert!((0..500).all(|s| env.reset(s).goal.is_covered()));
    }

    #[test]
    fn noise_extremes_and_repetition_flag() {
        let mut rng = rng_from(1, 0, 0);
        let state = EnvState::fresh();
        let quiet = SimConfig { noise_prob: 0.0, ..SimConfig::default() };
        let loud = SimConfig { noise_prob: 1.0, ..SimConfig::default() };
        for _ in 0..200 {
            let r = user_respond(&state, SysAction::AskArrival, &quiet, &mut rng).unwrap();
            assert_eq!(r.act, SimUserAct::Inform(Slot::Arrival));
            let r = user_respond(&state, SysAction::AskArrival, &loud, &mut rng).unwrap();
            assert_eq!(r.act, SimUserAct::Noise);
        }
        let mut filled = EnvState::fresh();
        filled.filled[Slot::Time.index()] = true;
        let r = user_respond(&filled, SysAction::AskTime, &quiet, &mut rng).unwrap();
        assert!(r.repetition);
        assert!(user_respond(&filled, SysAction::GiveInfo, &quiet, &mut rng).is_none());
    }

    #[test]
    fn mask_examples() {
        let mut s = EnvState::fresh();
        let covered = UserGoal::covered();
        assert_eq!(action_mask(&s, &covered), [true, true, true, false, false]);
        s.filled = [true; 3];
        assert_eq!(action_mask(&s, &covered), [true, true, true, true, false]);
        assert_eq!(action_mask(&s, &uncovered_goal()), [true, true, true, false, true]);
    }

    #[test]
    fn masked_step_is_rejected() {
        let bank = SampleBank::default();
        let env = Environment::new(RewardConfig::default(), SimConfig::default(), &bank, None).unwrap();
        let mut ep = env.reset(3);
        assert!(matches!(env.step(&mut ep, SysAction::GiveInfo), Err(Error::MaskedAction(_))));
    }

    #[test]
    fn external_response_matches_simulated_step() {
        let bank = SampleBank::default();
        let env = Environment::new(RewardConfig::default(), SimConfig::default(), &bank, None).unwrap();
        let mut a = env.reset(8);
        let mut b = env.reset(8);
        for action in [SysAction::AskArrival, SysAction::AskTime, SysAction::AskArrival] {
            let sim = env.step(&mut a, action).unwrap();
            let ext = env.step_with_response(&mut b, action, sim.user).unwrap();
            assert_eq!(sim, ext);
        }
        assert_eq!(a.state, b.state);
        assert!(env.step_with_response(&mut b, SysAction::AskTime, None).is_err());
    }

    #[test]
    fn fifteen_asks_fail_with_terminal_reward_only() {
        let bank = SampleBank::default();
        let env = Environment::new(RewardConfig::default(), SimConfig::default(), &bank, None).unwrap();
        let mut ep = env.reset(4);
        let mut last = None;
        for _ in 0..15 {
            last = Some(env.step(&mut ep, SysAction::AskDeparture).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(last.result, DialogResult::Failure);
        assert_eq!(last.reward, -10.0);
        assert_eq!(ep.trace.len(), 15);
        assert!(env.step(&mut ep, SysAction::AskTime).is_err());
    }

    #[test]
    fn sampling_examples() {
        let mut rng = rng_from(2, 0, 0);
        let empty = SampleBank::default();
        assert!(sample_sentiment(&empty, &SummaryStats::default(), &mut rng).is_none());

        let key = SummaryStats { counts: [1, 0, 0, 0, 0] };
        let row = |i: u32| SampleBankRow {
            s_real: key,
            dialogic: DialogicFeatures::from_array([i, i, 0, 0, 0, 0, 0, 0]),
        };
        let one = SampleBank::new(vec![row(7)], 3);
        assert_eq!(sample_sentiment(&one, &key, &mut rng), Some(&row(7)));

        let other = SampleBankRow {
            s_real: SummaryStats { counts: [0, 1, 0, 0, 0] },
            dialogic: DialogicFeatures::default(),
        };
        let three = SampleBank::new(vec![row(1), other, row(2), row(3)], 3);
        let mut hits = [0usize; 3];
        for _ in 0..30_000 {
            let r = sample_sentiment(&three, &key, &mut rng).unwrap();
            hits[r.dialogic.interruption as usize - 1] += 1;
        }
        for h in hits {
            assert!((h as f64 / 30_000.0 - 1.0 / 3.0).abs() <= 0.01, "{hits:?}");
        }
    }

    #[test]
    fn clamping_merges_high_counts() {
        let row = SampleBankRow {
            s_real: SummaryStats { counts: [5, 0, 0, 0, 0] },
            dialogic: DialogicFeatures::default(),
        };
        let bank = SampleBank::new(vec![row], 3);
        assert_eq!(bank.matches(&SummaryStats { counts: [3, 0, 0, 0, 0] }).len(), 1);
        let strict = SampleBank::new(vec![row], u32::MAX);
        assert!(strict.matches(&SummaryStats { counts: [3, 0, 0, 0, 0] }).is_empty());
    }

    proptest! {
        #[test]
        fn sample_is_none_iff_no_equal_key(
            keys in proptest::collection::vec(proptest::array::uniform5(0u32..3), 0..6),
            query in proptest::array::uniform5(0u32..3),
        ) {
            let rows: Vec<SampleBankRow> = keys.iter().map(|&k| SampleBankRow {
                s_real: SummaryStats { counts: k },
                dialogic: DialogicFeatures::default(),
            }).collect();
            let bank = SampleBank::new(rows, u32::MAX);
            let q = SummaryStats { counts: query };
            let mut rng = rng_from(0, 0, 0);
            let got = sample_sentiment(&bank, &q, &mut rng);
            prop_assert_eq!(got.is_some(), keys.contains(&query));
            if let Some(r) = got {
                prop_assert_eq!(r.s_real.counts, query);
            }
        }
    }

    #[test]
    fn bank_file_round_trip() {
        let bank = synth_sample_bank(1, &BankConfig { real_dialogs: 50, reference_dialogs: 300, ..Default::default() }, &SimConfig::default(), 15).unwrap();
        assert!(!bank.is_empty());
        let back = SampleBank::parse(&bank.to_text(), 3).unwrap();
        assert_eq!(back.rows(), bank.rows());
        assert!(SampleBank::parse("a b c\n", 3).is_err());
        let bad = format!("{}\n1 2 3\n", BANK_HEADER.join(" "));
        assert!(SampleBank::parse(&bad, 3).is_err());
    }

    #[test]
    fn buckets_and_real_bank() {
        let b = ActionBuckets::default();
        assert_eq!(b.classify("Where are you leaving from?"), Some(SysAction::AskDeparture));
        assert_eq!(b.classify("where are you going"), Some(SysAction::AskArrival));
        assert_eq!(b.classify("When would you like to travel?"), Some(SysAction::AskTime));
        assert_eq!(
            b.classify("let me look that up for you. sorry, there is no result that matches your request"),
            Some(SysAction::GiveNoResult)
        );
        assert_eq!(b.classify("there is a 61c leaving oakland at noon"), Some(SysAction::GiveInfo));
        assert_eq!(b.classify("goodbye"), None);

        assert!(build_sample_bank(&[], &b).is_empty());
        let d = Dialog {
            dialog_id: "x".into(),
            turns: vec![
                Turn { interrupted: true, ..Turn::new(0, "oakland", "where are you going") },
                Turn::new(1, "downtown", "where are you going"),
                Turn::new(2, "noon", "goodbye"),
            ],
            split: Split::Train,
        };
        let rows = build_sample_bank(&[d], &b);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].s_real.counts, [0; 5]);
        assert_eq!(rows[2].s_real.counts, [0, 2, 0, 0, 0]);
        assert_eq!(rows[2].dialogic.total_interruptions, 1);
    }

    #[test]
    fn synthetic_bank_is_deterministic() {
        let cfg = BankConfig { real_dialogs: 60, reference_dialogs: 400, ..Default::default() };
        let a = synth_sample_bank(5, &cfg, &SimConfig::default(), 15).unwrap();
        let b = synth_sample_bank(5, &cfg, &SimConfig::default(), 15).unwrap();
        assert_eq!(a.to_text(), b.to_text());
    }
}
