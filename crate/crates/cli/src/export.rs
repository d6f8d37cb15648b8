//! `export`: gnuplot curve data, a single greedy dialog trace, or the
//! sample-bank coverage profile.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sentidial_core::rltrain::greedy_action;
use sentidial_core::simenv::coverage_profile;
use sentidial_core::stats::Summary;
use sentidial_core::{Error, PolicySet, Result};

use crate::rl::EnvSettings;
use crate::run::{Overrides, Run};

#[derive(Deserialize)]
struct CurveRow {
    dialogs: usize,
    success_rate: f64,
    mean_length: f64,
    reward_variant: String,
}

pub fn export(input: &Overrides) -> Result<()> {
    let mut run = Run::start("export", input)?;
    let kind: String = run.required("kind")?;
    match kind.as_str() {
        "curves" => curves(run),
        "trace" => trace(run),
        "profile" => profile(run),
        other => Err(Error::Config(format!(
            "unknown export kind `{other}` (expected curves, trace or profile)"
        ))),
    }
}

/// One gnuplot data block per reward variant (select with `index`).
fn curves(mut run: Run) -> Result<()> {
    let inputs: String = run.required("curves")?;
    let run = run.begin()?;
    // variant -> dialogs -> (success values, length values), variants in input order
    let mut order: Vec<String> = Vec::new();
    let mut data: BTreeMap<String, BTreeMap<usize, (Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for p in inputs.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let path = PathBuf::from(p);
        let mut rdr = csv::Reader::from_path(&path)?;
        for row in rdr.deserialize::<CurveRow>() {
            let row = row?;
            if !order.contains(&row.reward_variant) {
                order.push(row.reward_variant.clone());
            }
            let cell = data
                .entry(row.reward_variant)
                .or_default()
                .entry(row.dialogs)
                .or_default();
            cell.0.push(row.success_rate);
            cell.1.push(row.mean_length);
        }
    }
    if order.is_empty() {
        return Err(Error::Data("no curve rows in the given files".into()));
    }
    let mut text = String::from("# dialogs mean_success std_success mean_length std_length\n");
    for (i, v) in order.iter().enumerate() {
        if i > 0 {
            text.push_str("\n\n");
        }
        writeln!(text, "# {v}").expect("writing to a String");
        for (dialogs, (s, l)) in &data[v] {
            let (s, l) = (Summary::of(s), Summary::of(l));
            writeln!(text, "{dialogs} {} {} {} {}", s.mean, s.std, l.mean, l.std).expect("writing to a String");
        }
    }
    run.write("curves.dat", &text)?;
    println!("{} variants -> {}", order.len(), run.path("curves.dat").display());
    Ok(())
}

/// Greedy dialog of one saved policy, turn by turn with the reward breakdown.
fn trace(mut run: Run) -> Result<()> {
    let policies = run.required_path("policies")?;
    let repeat = run.take_or("repeat", 0usize)?;
    let settings = EnvSettings::read(&mut run)?;
    let episode_seed = run.optional::<u64>("episode_seed")?;
    let run = run.begin()?;

    let set = PolicySet::load(&policies)?;
    let policy = set.policies.get(repeat).ok_or(Error::OutOfRange {
        index: repeat,
        len: set.policies.len(),
    })?;
    let parts = settings.load(run.seed)?;
    let env = parts.env()?;
    let mut ep = env.reset(episode_seed.unwrap_or(run.seed));
    let mut lstm = policy.net.initial_state();
    while !ep.is_done() {
        let a = greedy_action(policy, &mut lstm, &env, &ep)?;
        env.step(&mut ep, a)?;
    }
    run.write("trace.tsv", &ep.trace_text())?;
    print!("{}", ep.trace_text());
    Ok(())
}

#[derive(Serialize)]
struct Metric {
    metric: &'static str,
    value: f64,
}

/// How often simulated turns find a matching bank row under the reference policy.
fn profile(mut run: Run) -> Result<()> {
    let settings = EnvSettings::read(&mut run)?;
    let random_rate = run.take_or("random_rate", 0.75f64)?;
    let dialogs = run.take_or("dialogs", 2000usize)?;
    let run = run.begin()?;

    let parts = settings.load(run.seed)?;
    let env = parts.env()?;
    let p = coverage_profile(&env, random_rate, dialogs, run.seed)?;
    let rows = [
        ("turns", p.turns as f64),
        ("matched", p.matched),
        ("no_match_repetition", p.no_match_repetition),
        ("no_match_plain", p.no_match_plain),
        ("terminal", p.terminal),
        ("interruption", p.interruption),
        ("bank_rows", parts.bank.len() as f64),
        ("bank_keys", parts.bank.distinct_keys() as f64),
    ];
    run.write_csv("profile.csv", rows.map(|(metric, value)| Metric { metric, value }))?;
    for (m, v) in rows {
        println!("{m:<20} {v}");
    }
    Ok(())
}
