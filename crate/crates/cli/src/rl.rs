//! `train-rl` and `eval-rl`, plus the simulator setup shared with `chat` and `export`.

use std::path::PathBuf;

use serde::Serialize;

use sentidial_core::rltrain::{convergent_success, eval_seeds, evaluate_policy, train_rl_with_policies};
use sentidial_core::simenv::synth_sample_bank;
use sentidial_core::stats::{derive_seed, Summary};
use sentidial_core::{
    BankConfig, DialogicDetector, DialogicSentiment, Environment, PolicySet, Result, RewardConfig, RlConfig,
    SampleBank, SentimentDetector, SimConfig,
};

use crate::run::{Overrides, Run, Started};

/// Simulator settings as read from a run's keys.
#[derive(Debug, Clone)]
pub struct EnvSettings {
    pub reward: RewardConfig,
    pub sim: SimConfig,
    bank_path: Option<PathBuf>,
    bank_cfg: Option<BankConfig>,
    sentiment_path: Option<PathBuf>,
}

impl EnvSettings {
    /// Reads `bank` (or the `bank_*` synthesis keys), `sentiment_model` and
    /// the reward and simulator keys.
    pub fn read(run: &mut Run) -> Result<Self> {
        let bank_path = run.optional_path("bank")?;
        let sentiment_path = run.optional_path("sentiment_model")?;
        let reward = RewardConfig::from_kv(run.kv())?;
        run.record(reward.to_kv());
        let sim = SimConfig::from_kv(run.kv())?;
        run.record(sim.to_kv());
        let bank_cfg = if bank_path.is_none() {
            let c = BankConfig::from_kv(run.kv())?;
            run.record(c.to_kv());
            Some(c)
        } else {
            None
        };
        Ok(EnvSettings {
            reward,
            sim,
            bank_path,
            bank_cfg,
            sentiment_path,
        })
    }

    /// Loads or synthesizes the bank and loads the detector.
    pub fn load(&self, seed: u64) -> Result<EnvParts> {
        let bank = match (&self.bank_path, &self.bank_cfg) {
            (Some(p), _) => SampleBank::read(p, self.sim.clamp)?,
            (None, Some(c)) => synth_sample_bank(derive_seed(seed, 0xBA4C, 0), c, &self.sim, self.reward.max_turns)?,
            (None, None) => unreachable!("read() sets one of the two"),
        };
        let detector = self
            .sentiment_path
            .as_deref()
            .map(|p| SentimentDetector::load(p).and_then(DialogicDetector::new))
            .transpose()?;
        Ok(EnvParts {
            settings: self.clone(),
            bank,
            detector,
        })
    }
}

pub struct EnvParts {
    pub settings: EnvSettings,
    pub bank: SampleBank,
    pub detector: Option<DialogicDetector>,
}

impl EnvParts {
    pub fn env(&self) -> Result<Environment<'_>> {
        Environment::new(
            self.settings.reward,
            self.settings.sim,
            &self.bank,
            self.detector.as_ref().map(|d| d as &dyn DialogicSentiment),
        )
    }

    pub fn synthesized(&self) -> bool {
        self.settings.bank_path.is_none()
    }
}

#[derive(Serialize)]
struct MeanRow {
    dialogs: usize,
    mean_success: f64,
    std_success: f64,
    mean_length: f64,
    std_length: f64,
}

#[derive(Serialize)]
struct RepeatRow {
    repeat: usize,
    seed: u64,
    convergent_success: Option<f64>,
    final_success: f64,
    final_length: f64,
}

fn write_mean_curve(run: &Started, curve: &[(usize, Summary, Summary)]) -> Result<()> {
    run.write_csv(
        "mean_curve.csv",
        curve.iter().map(|(dialogs, s, l)| MeanRow {
            dialogs: *dialogs,
            mean_success: s.mean,
            std_success: s.std,
            mean_length: l.mean,
            std_length: l.std,
        }),
    )
}

pub fn train(input: &Overrides) -> Result<()> {
    let mut run = Run::start("train-rl", input)?;
    let settings = EnvSettings::read(&mut run)?;
    let cfg = RlConfig::from_kv(run.kv())?;
    run.record(cfg.to_kv());
    let run = run.begin()?;

    let parts = settings.load(run.seed)?;
    if parts.synthesized() {
        parts.bank.write(run.path("bank.txt"))?;
    }
    let env = parts.env()?;
    let (report, policies) = train_rl_with_policies(&env, &cfg, run.seed)?;
    report.write_csv_file(run.path("curves.csv"))?;
    let curve = report.mean_curve();
    write_mean_curve(&run, &curve)?;
    run.write_csv(
        "summary.csv",
        report.runs.iter().map(|r| {
            let last = r.checkpoints.last().expect("initial checkpoint always present");
            RepeatRow {
                repeat: r.repeat,
                seed: r.seed,
                convergent_success: convergent_success(&r.checkpoints, cfg.converge_after).ok(),
                final_success: last.success_rate,
                final_length: last.mean_length,
            }
        }),
    )?;
    policies.save(run.path("policies.json"))?;
    if let Some((dialogs, s, l)) = curve.last() {
        println!(
            "{}: {} repeats, after {dialogs} dialogs success {:.3} (std {:.3}), length {:.2}",
            env.reward.variant,
            report.runs.len(),
            s.mean,
            s.std,
            l.mean
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    repeat: usize,
    success_rate: f64,
    mean_length: f64,
    mean_reward: f64,
}

pub fn eval(input: &Overrides) -> Result<()> {
    let mut run = Run::start("eval-rl", input)?;
    let policies_path = run.required_path("policies")?;
    let settings = EnvSettings::read(&mut run)?;
    let n = run.take_or("eval_dialogs", 500usize)?;
    let run = run.begin()?;

    let set = PolicySet::load(&policies_path)?;
    let parts = settings.load(run.seed)?;
    let env = parts.env()?;
    let seeds = eval_seeds(run.seed, n);
    let rows = set
        .policies
        .iter()
        .enumerate()
        .map(|(repeat, p)| {
            let e = evaluate_policy(&env, p, &seeds)?;
            Ok(EvalRow {
                repeat,
                success_rate: e.success_rate,
                mean_length: e.mean_length,
                mean_reward: e.mean_reward,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let success = Summary::of(&rows.iter().map(|r| r.success_rate).collect::<Vec<_>>());
    let length = Summary::of(&rows.iter().map(|r| r.mean_length).collect::<Vec<_>>());
    run.write_csv("eval.csv", rows)?;
    println!(
        "{} policies ({} training): success {:.3} (std {:.3}), length {:.2}",
        set.policies.len(),
        set.variant,
        success.mean,
        success.std,
        length.mean
    );
    Ok(())
}
