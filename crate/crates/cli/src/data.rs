//! `ingest` and `synth-data`.

use serde::Serialize;

use sentidial_core::corpus::{
    build_template_inventory, filter_clean_data, load_dialog_log, synth_corpus, synth_lexicon, write_dialog_log,
    CleanDataConfig, LOG_SCHEMA_VERSION,
};
use sentidial_core::simenv::{build_sample_bank, ActionBuckets};
use sentidial_core::{synth_acoustic, Dialog, EntityLexicon, Error, Result, SampleBank, SentimentLabel, Split, SynthConfig};

use crate::run::{Overrides, Run};

#[derive(Serialize)]
struct Metric {
    metric: &'static str,
    value: f64,
}

fn metric(metric: &'static str, value: impl Into<f64>) -> Metric {
    Metric {
        metric,
        value: value.into(),
    }
}

fn count_turns(dialogs: &[Dialog]) -> u32 {
    dialogs.iter().map(|d| d.len() as u32).sum()
}

pub fn ingest(input: &Overrides) -> Result<()> {
    let mut run = Run::start("ingest", input)?;
    let log = run.required_path("log")?;
    let lexicon_path = run.required_path("lexicon")?;
    let buckets_path = run.optional_path("buckets")?;
    let schema_version = run.take_or("schema_version", LOG_SCHEMA_VERSION)?;
    let d = CleanDataConfig::default();
    let clean_cfg = CleanDataConfig {
        min_confidence: run.take_or("min_confidence", d.min_confidence)?,
        max_low_confidence_fraction: run.take_or("max_low_confidence_fraction", d.max_low_confidence_fraction)?,
    };
    let clamp = run.take_or("clamp", 3u32)?;
    let run = run.begin()?;

    let lexicon = EntityLexicon::read(&lexicon_path)?;
    let buckets = match &buckets_path {
        Some(p) => ActionBuckets::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => ActionBuckets::default(),
    };
    let mut dialogs = load_dialog_log(&log, schema_version)?;
    let inventory = build_template_inventory(&dialogs, &lexicon);
    inventory.assign_ids(&mut dialogs, &lexicon)?;
    let clean = filter_clean_data(&dialogs, &clean_cfg);
    let bank = SampleBank::new(build_sample_bank(&clean, &buckets), clamp);

    write_dialog_log(run.path("dialogs.jsonl"), &dialogs)?;
    write_dialog_log(run.path("clean.jsonl"), &clean)?;
    run.write("templates.tsv", &inventory.to_text())?;
    bank.write(run.path("bank.txt"))?;
    let split_count = |s: Split| dialogs.iter().filter(|d| d.split == s).count() as u32;
    run.write_csv(
        "summary.csv",
        [
            metric("dialogs", dialogs.len() as u32),
            metric("turns", count_turns(&dialogs)),
            metric("train_dialogs", split_count(Split::Train)),
            metric("dev_dialogs", split_count(Split::Dev)),
            metric("test_dialogs", split_count(Split::Test)),
            metric("templates", inventory.len() as u32),
            metric("clean_dialogs", clean.len() as u32),
            metric("clean_turns", count_turns(&clean)),
            metric("bank_rows", bank.len() as u32),
            metric("bank_keys", bank.distinct_keys() as u32),
        ],
    )?;
    println!(
        "{} dialogs, {} templates, {} clean dialogs, {} bank rows -> {}",
        dialogs.len(),
        inventory.len(),
        clean.len(),
        bank.len(),
        run.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SplitRow {
    split: String,
    dialogs: usize,
    turns: usize,
    negative: usize,
    neutral: usize,
    positive: usize,
}

pub fn synth_data(input: &Overrides) -> Result<()> {
    let mut run = Run::start("synth-data", input)?;
    let cfg = SynthConfig::from_kv(run.kv())?;
    run.record(cfg.to_kv());
    let acoustic_dim = run.take_or("acoustic_dim", 20usize)?;
    let acoustic_signal = run.take_or("acoustic_signal", 0.8f64)?;
    let run = run.begin()?;

    let dialogs = synth_corpus(run.seed, &cfg)?;
    let acoustic = synth_acoustic(&dialogs, acoustic_dim, acoustic_signal, run.seed)?;
    write_dialog_log(run.path("dialogs.jsonl"), &dialogs)?;
    synth_lexicon().write(run.path("lexicon.tsv"))?;
    acoustic.write_csv(run.path("acoustic.csv"))?;

    let rows = [Split::Train, Split::Dev, Split::Test].map(|s| {
        let part: Vec<&Dialog> = dialogs.iter().filter(|d| d.split == s).collect();
        let label_count = |l: SentimentLabel| {
            part.iter()
                .flat_map(|d| &d.turns)
                .filter(|t| t.sentiment_label == Some(l))
                .count()
        };
        SplitRow {
            split: s.to_string(),
            dialogs: part.len(),
            turns: part.iter().map(|d| d.len()).sum(),
            negative: label_count(SentimentLabel::Negative),
            neutral: label_count(SentimentLabel::Neutral),
            positive: label_count(SentimentLabel::Positive),
        }
    });
    run.write_csv("summary.csv", rows)?;
    println!("{} synthetic dialogs -> {}", dialogs.len(), run.out.display());
    Ok(())
}
