//! `train-sentiment` and `eval-sentiment`.

use std::path::Path;

use serde::Serialize;

use sentidial_core::corpus::{load_dialog_log, split_of, LOG_SCHEMA_VERSION};
use sentidial_core::sentiment::{run_protocol, summarize_f1, EvalReport};
use sentidial_core::stats::derive_seed;
use sentidial_core::{
    AcousticTable, DetectorConfig, Dialog, Error, FeatureFamilies, Result, SentimentDetector, SentimentLabel, Split,
};

use crate::run::{Overrides, Run, Started};

pub fn load_corpus(path: &Path) -> Result<Vec<Dialog>> {
    load_dialog_log(path, LOG_SCHEMA_VERSION)
}

pub fn load_acoustic(path: Option<&Path>) -> Result<Option<AcousticTable>> {
    path.map(AcousticTable::read_csv).transpose()
}

/// Every non-empty combination of the selected families, smallest first.
fn family_subsets(f: FeatureFamilies) -> Vec<FeatureFamilies> {
    let mut out = Vec::new();
    for bits in 1u8..8 {
        let s = FeatureFamilies {
            acoustic: bits & 1 != 0,
            dialogic: bits & 2 != 0,
            textual: bits & 4 != 0,
        };
        let inside = (!s.acoustic || f.acoustic) && (!s.dialogic || f.dialogic) && (!s.textual || f.textual);
        if inside {
            out.push(s);
        }
    }
    out.sort_by_key(|s| (s.acoustic as u8 + s.dialogic as u8 + s.textual as u8, s.name()));
    out
}

#[derive(Serialize)]
struct RunRow {
    features: String,
    seed: u64,
    weighted_f1: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    features: String,
    runs: usize,
    mean_f1: f64,
    std_f1: f64,
    max_f1: f64,
}

#[derive(Serialize)]
struct ImportanceRow {
    rank: usize,
    feature: String,
    importance: f64,
}

pub fn train(input: &Overrides) -> Result<()> {
    let mut run = Run::start("train-sentiment", input)?;
    let corpus_path = run.required_path("corpus")?;
    let acoustic_path = run.optional_path("acoustic")?;
    let cfg = DetectorConfig::from_kv(run.kv())?;
    run.record(cfg.to_kv());
    let n_seeds = run.take_or("seeds", 20usize)?;
    let ablation = run.take_or("ablation", false)?;
    let run = run.begin()?;

    let dialogs = load_corpus(&corpus_path)?;
    let acoustic = load_acoustic(acoustic_path.as_deref())?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| derive_seed(run.seed, 0x5E7, i)).collect();
    let families = if ablation {
        family_subsets(cfg.families)
    } else {
        vec![cfg.families]
    };
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for f in families {
        let c = DetectorConfig { families: f, ..cfg };
        let results = run_protocol(&dialogs, acoustic.as_ref(), &c, seeds.iter().copied())?;
        let s = summarize_f1(&results);
        runs.extend(results.iter().map(|r| RunRow {
            features: f.name(),
            seed: r.seed,
            weighted_f1: r.report.weighted_f1,
            accuracy: r.report.accuracy,
        }));
        println!("{:<26} mean F1 {:.4}  std {:.4}  max {:.4}", f.name(), s.mean, s.std, s.max);
        summary.push(SummaryRow {
            features: f.name(),
            runs: s.n,
            mean_f1: s.mean,
            std_f1: s.std,
            max_f1: s.max,
        });
    }
    run.write_csv("runs.csv", runs)?;
    run.write_csv("summary.csv", summary)?;

    // The saved model is trained on the corpus's own training split.
    let train = split_of(&dialogs, Split::Train);
    if train.is_empty() {
        return Err(Error::Data("corpus has no training-split dialogs".into()));
    }
    let det = SentimentDetector::train(&train, &dialogs, acoustic.as_ref(), &cfg, run.seed)?;
    det.save(run.path("model.json"))?;
    let names = det.featurizer.feature_names();
    let mut ranked: Vec<(String, f64)> = names.into_iter().zip(det.forest.importances()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    run.write_csv(
        "importances.csv",
        ranked.into_iter().enumerate().map(|(rank, (feature, importance))| ImportanceRow {
            rank: rank + 1,
            feature,
            importance,
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ClassRow {
    class: String,
    precision: f64,
    recall: f64,
    f1: f64,
    support: usize,
}

pub fn write_report(run: &Started, name: &str, report: &EvalReport) -> Result<()> {
    let mut rows: Vec<ClassRow> = report
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| ClassRow {
            class: SentimentLabel::from_index(i).map_or_else(|| i.to_string(), |l| l.name().to_string()),
            precision: c.precision,
            recall: c.recall,
            f1: c.f1,
            support: c.support,
        })
        .collect();
    let n: usize = report.classes.iter().map(|c| c.support).sum();
    let weighted = |f: fn(&ClassRow) -> f64| rows.iter().map(|r| f(r) * r.support as f64).sum::<f64>() / n.max(1) as f64;
    let (precision, recall) = (weighted(|r| r.precision), weighted(|r| r.recall));
    rows.push(ClassRow {
        class: "weighted".into(),
        precision,
        recall,
        f1: report.weighted_f1,
        support: n,
    });
    run.write_csv(name, rows)
}

/// `all` or one split name.
pub fn select_split(dialogs: Vec<Dialog>, split: &str) -> Result<Vec<Dialog>> {
    if split == "all" {
        return Ok(dialogs);
    }
    let s: Split = split.parse().map_err(Error::Config)?;
    Ok(dialogs.into_iter().filter(|d| d.split == s).collect())
}

pub fn eval(input: &Overrides) -> Result<()> {
    let mut run = Run::start("eval-sentiment", input)?;
    let model_path = run.required_path("model")?;
    let corpus_path = run.required_path("corpus")?;
    let acoustic_path = run.optional_path("acoustic")?;
    let split = run.take_or("split", "test".to_string())?;
    let run = run.begin()?;

    let det = SentimentDetector::load(&model_path)?;
    let dialogs = select_split(load_corpus(&corpus_path)?, &split)?;
    let acoustic = load_acoustic(acoustic_path.as_deref())?;
    let report = det.evaluate(&dialogs, acoustic.as_ref())?;
    write_report(&run, "report.csv", &report)?;
    println!(
        "{} ({}): weighted F1 {:.4}, accuracy {:.4}",
        det.featurizer.families.name(),
        split,
        report.weighted_f1,
        report.accuracy
    );
    Ok(())
}
