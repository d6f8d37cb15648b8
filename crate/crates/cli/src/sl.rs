//! `train-sl` and `eval-sl`.

use serde::Serialize;

use sentidial_core::corpus::{build_template_inventory, split_of};
use sentidial_core::policy::{train_sl, write_metrics_csv, Embeddings, SlFeaturizer};
use sentidial_core::{
    EntityLexicon, Error, PolicyModel, Result, SentimentDetector, SlFeatureConfig, SlMetrics, SlTrainConfig, SlVariant,
    Split,
};

use crate::run::{Overrides, Run, Started};
use crate::sentiment::{load_acoustic, load_corpus, select_split, write_report};

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    train_loss: f64,
    dev_f1: Option<f64>,
}

fn write_metrics(run: &Started, seed: u64, variant: SlVariant, m: &SlMetrics) -> Result<()> {
    let path = run.path("metrics.csv");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_metrics_csv(&[(seed, variant, m.clone())], f)?;
    write_report(run, "report.csv", &m.report)
}

pub fn train(input: &Overrides) -> Result<()> {
    let mut run = Run::start("train-sl", input)?;
    let corpus_path = run.required_path("corpus")?;
    let lexicon_path = run.required_path("lexicon")?;
    let sentiment_path = run.optional_path("sentiment_model")?;
    let acoustic_path = run.optional_path("acoustic")?;
    let features = SlFeatureConfig::from_kv(run.kv())?;
    run.record(features.to_kv());
    let cfg = SlTrainConfig::from_kv(run.kv())?;
    run.record(cfg.to_kv());
    let run = run.begin()?;

    let lexicon = EntityLexicon::read(&lexicon_path)?;
    let mut dialogs = load_corpus(&corpus_path)?;
    let inventory = build_template_inventory(&dialogs, &lexicon);
    inventory.assign_ids(&mut dialogs, &lexicon)?;
    let acoustic = load_acoustic(acoustic_path.as_deref())?;
    let embeddings = features.embedding_path.as_deref().map(Embeddings::read).transpose()?;
    let detector = sentiment_path.as_deref().map(SentimentDetector::load).transpose()?;
    let [train, dev, test] = [Split::Train, Split::Dev, Split::Test].map(|s| split_of(&dialogs, s));
    if test.is_empty() {
        return Err(Error::Data("corpus has no test-split dialogs".into()));
    }

    let featurizer = SlFeaturizer::fit(&train, inventory.len(), &lexicon, &features, embeddings.as_ref())?;
    let model = PolicyModel::init(featurizer, inventory, detector, cfg.hidden, run.seed)?;
    let result = train_sl(model, &train, &dev, acoustic.as_ref(), &cfg, run.seed)?;
    result.model.save(run.path("model.json"))?;
    run.write("templates.tsv", &result.model.inventory.to_text())?;
    run.write_csv(
        "history.csv",
        result.history.iter().map(|e| EpochRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            dev_f1: e.dev_f1,
        }),
    )?;
    let m = result.model.evaluate(&test, acoustic.as_ref())?;
    write_metrics(&run, run.seed, features.variant, &m)?;
    println!(
        "{}: {} templates, best epoch {}, test F1 {:.4}, dialog accuracy {:.4}",
        features.variant,
        result.model.inventory.len(),
        result.best_epoch,
        m.weighted_f1,
        m.dialog_accuracy
    );
    Ok(())
}

pub fn eval(input: &Overrides) -> Result<()> {
    let mut run = Run::start("eval-sl", input)?;
    let model_path = run.required_path("model")?;
    let corpus_path = run.required_path("corpus")?;
    let acoustic_path = run.optional_path("acoustic")?;
    let split = run.take_or("split", "test".to_string())?;
    let expect = run.optional::<SlVariant>("variant")?;
    let run = run.begin()?;

    let model = PolicyModel::load(&model_path, None)?;
    let variant = model.featurizer.config.variant;
    if let Some(v) = expect {
        if v != variant {
            return Err(Error::IncompatibleModel(format!(
                "{}: trained as {variant}, requested {v}",
                model_path.display()
            )));
        }
    }
    let mut dialogs = select_split(load_corpus(&corpus_path)?, &split)?;
    model.inventory.assign_ids(&mut dialogs, &model.featurizer.lexicon)?;
    let acoustic = load_acoustic(acoustic_path.as_deref())?;
    let m = model.evaluate(&dialogs, acoustic.as_ref())?;
    write_metrics(&run, run.seed, variant, &m)?;
    println!(
        "{variant} ({split}): F1 {:.4}, turn accuracy {:.4}, dialog accuracy {:.4}",
        m.weighted_f1, m.turn_accuracy, m.dialog_accuracy
    );
    Ok(())
}
