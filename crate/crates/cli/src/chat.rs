//! `chat`: a line-oriented REPL against a trained policy.
//!
//! Supervised mode (`mode = sl`) reads user utterances. A line may start with
//! event markers `+interrupt`, `+button`, `+repeat`, `+startover` that report
//! what the user did on that turn besides speaking.
//!
//! Reinforcement mode (`mode = rl`) reads simulated user acts:
//! `inform departure|arrival|time` or `noise`, with the same event markers.
//! The first act of a dialog is the user's opening.
//!
//! Both modes understand `/quit`, `/reset` and `/trace`.

use std::io::{BufRead, BufReader, IsTerminal, Write};
use std::path::Path;

use sentidial_core::policy::TurnEvents;
use sentidial_core::rltrain::greedy_action;
use sentidial_core::simenv::{Episode, SimUserAct, Slot, UserGoal, UserResponse};
use sentidial_core::{
    DialogicFeatures, DialogicSentiment, Error, PolicyModel, PolicySet, Result, SentimentDetector, SentimentProbs,
    SlSession, SysAction,
};

use crate::rl::EnvSettings;
use crate::run::{Overrides, Run};

/// Collects everything shown to the user so it can be saved as a transcript.
struct Console {
    transcript: String,
    echo_input: bool,
}

impl Console {
    fn say(&mut self, line: &str) {
        println!("{line}");
        self.transcript.push_str(line);
        self.transcript.push('\n');
    }

    fn heard(&mut self, line: &str) {
        if self.echo_input {
            println!("> {line}");
        }
        self.transcript.push_str("> ");
        self.transcript.push_str(line);
        self.transcript.push('\n');
    }

    fn prompt(&self) {
        if !self.echo_input {
            print!("> ");
            let _ = std::io::stdout().flush();
        }
    }
}

fn parse_events(line: &str) -> (TurnEvents, Vec<String>, String) {
    let mut events = TurnEvents::default();
    let mut unknown = Vec::new();
    let mut rest = line.trim();
    while let Some(tail) = rest.strip_prefix('+') {
        let (word, after) = tail.split_once(char::is_whitespace).unwrap_or((tail, ""));
        match word {
            "interrupt" => events.interrupted = true,
            "button" => events.button = true,
            "repeat" => events.repetition = true,
            "startover" => events.start_over = true,
            other => unknown.push(other.to_string()),
        }
        rest = after.trim_start();
    }
    (events, unknown, rest.to_string())
}

fn show_probs(p: &SentimentProbs) -> String {
    format!(
        "sentiment: {} (neg {:.2}, neu {:.2}, pos {:.2})",
        p.label().name(),
        p.p_neg,
        p.p_neu,
        p.p_pos
    )
}

enum Command {
    Quit,
    Reset,
    Trace,
    Unknown(String),
}

fn command(line: &str) -> Option<Command> {
    let c = line.strip_prefix('/')?;
    Some(match c.trim() {
        "quit" | "exit" => Command::Quit,
        "reset" => Command::Reset,
        "trace" => Command::Trace,
        other => Command::Unknown(other.to_string()),
    })
}

pub fn chat(input: &Overrides) -> Result<()> {
    let mut run = Run::start("chat", input)?;
    let model_path = run.required_path("model")?;
    let input_path = run.optional_path("input")?;
    let mode = run.take_or("mode", "sl".to_string())?;
    let mut lines: Box<dyn BufRead> = match &input_path {
        Some(p) => Box::new(BufReader::new(std::fs::File::open(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(std::io::stdin().lock()),
    };
    let echo_input = input_path.is_some() || !std::io::stdin().is_terminal();
    let mut console = Console {
        transcript: String::new(),
        echo_input,
    };
    match mode.as_str() {
        "sl" => {
            let sentiment_path = run.optional_path("sentiment_model")?;
            let run = run.begin()?;
            chat_sl(&model_path, sentiment_path.as_deref(), &mut lines, &mut console)?;
            run.write("transcript.txt", &console.transcript)
        }
        "rl" => {
            let repeat = run.take_or("repeat", 0usize)?;
            let goal = run.take_or("goal", "covered".to_string())?;
            let settings = EnvSettings::read(&mut run)?;
            let goal = parse_goal(&goal)?;
            let run = run.begin()?;
            let set = PolicySet::load(&model_path)?;
            let policy = set.policies.get(repeat).ok_or(Error::OutOfRange {
                index: repeat,
                len: set.policies.len(),
            })?;
            let parts = settings.load(run.seed)?;
            let rl = RlChat {
                env: parts.env()?,
                detector: parts.detector.as_ref().map(|d| d as &dyn DialogicSentiment),
                policy,
                goal,
                seed: run.seed,
            };
            rl.run(&mut lines, &mut console)?;
            run.write("transcript.txt", &console.transcript)
        }
        other => Err(Error::Config(format!("unknown chat mode `{other}` (expected sl or rl)"))),
    }
}

fn read_line(lines: &mut dyn BufRead) -> Result<Option<String>> {
    let mut buf = String::new();
    let n = lines.read_line(&mut buf).map_err(|e| Error::io("<input>", e))?;
    Ok((n > 0).then(|| buf.trim_end_matches(['\n', '\r']).to_string()))
}

fn chat_sl(
    model_path: &Path,
    sentiment_path: Option<&Path>,
    lines: &mut dyn BufRead,
    console: &mut Console,
) -> Result<()> {
    let model = PolicyModel::load(model_path, None)?;
    let display = match sentiment_path {
        Some(p) => Some(SentimentDetector::load(p)?),
        None => model.detector.clone(),
    };
    for d in model.detector.iter().chain(display.iter()) {
        if d.featurizer.families.acoustic {
            return Err(Error::IncompatibleModel(
                "chat has no audio; the sentiment model must not use acoustic features".into(),
            ));
        }
    }
    let mut session = SlSession::new(&model);
    let mut dialogic = DialogicFeatures::default();
    let mut history: Vec<String> = Vec::new();
    console.say(&format!(
        "policy {} with {} templates; type an utterance, /reset, /trace or /quit",
        model.featurizer.config.variant,
        model.inventory.len()
    ));
    loop {
        console.prompt();
        let Some(line) = read_line(lines)? else { break };
        if line.trim().is_empty() {
            continue;
        }
        console.heard(&line);
        match command(&line) {
            Some(Command::Quit) => break,
            Some(Command::Reset) => {
                session = SlSession::new(&model);
                dialogic = DialogicFeatures::default();
                history.clear();
                console.say("(new dialog, turn 0)");
                continue;
            }
            Some(Command::Trace) => {
                console.say("turn\tuser\ttemplate\tsentiment");
                for h in &history {
                    console.say(h);
                }
                continue;
            }
            Some(Command::Unknown(c)) => {
                console.say(&format!("unknown command /{c}"));
                continue;
            }
            None => {}
        }
        let (events, unknown, text) = parse_events(&line);
        for u in unknown {
            console.say(&format!("(ignoring unknown event +{u})"));
        }
        dialogic = dialogic.advance(events.interrupted, events.button, events.repetition, events.start_over);
        let (id, reply) = session.respond(&text, events)?;
        console.say(&format!("system [{id}]: {reply}"));
        let label = match &display {
            Some(d) => {
                let p = d.predict_parts(None, &dialogic, &text)?;
                console.say(&show_probs(&p));
                p.label().name()
            }
            None => "-",
        };
        history.push(format!("{}\t{text}\t{id}\t{label}", history.len()));
    }
    Ok(())
}

fn parse_goal(s: &str) -> Result<UserGoal> {
    let covered = match s {
        "covered" => [true; 3],
        "uncovered_departure" => [false, true, true],
        "uncovered_arrival" => [true, false, true],
        "uncovered_both" => [false, false, true],
        other => {
            return Err(Error::Config(format!(
                "unknown goal `{other}` (covered, uncovered_departure, uncovered_arrival, uncovered_both)"
            )))
        }
    };
    Ok(UserGoal { covered })
}

fn parse_act(text: &str) -> std::result::Result<SimUserAct, String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    match words.as_slice() {
        ["noise"] => Ok(SimUserAct::Noise),
        ["inform", slot] => Slot::ALL
            .into_iter()
            .find(|s| s.name() == *slot)
            .map(SimUserAct::Inform)
            .ok_or_else(|| format!("unknown slot `{slot}`")),
        _ => Err(format!("expected `inform departure|arrival|time` or `noise`, got `{text}`")),
    }
}

struct RlChat<'a> {
    env: sentidial_core::Environment<'a>,
    detector: Option<&'a dyn DialogicSentiment>,
    policy: &'a sentidial_core::RlPolicy,
    goal: UserGoal,
    seed: u64,
}

struct Dialog {
    ep: Episode,
    lstm: sentidial_core::neural::LstmState,
    asked: Option<SysAction>,
}

impl RlChat<'_> {
    fn run(&self, lines: &mut dyn BufRead, console: &mut Console) -> Result<()> {
        let mut dialogs = 0u64;
        let mut current: Option<Dialog> = None;
        console.say("act as the user: `inform departure|arrival|time` or `noise`; /reset, /trace, /quit");
        console.say("(new dialog; give your opening act)");
        loop {
            console.prompt();
            let Some(line) = read_line(lines)? else { break };
            if line.trim().is_empty() {
                continue;
            }
            console.heard(&line);
            match command(&line) {
                Some(Command::Quit) => break,
                Some(Command::Reset) => {
                    current = None;
                    console.say("(new dialog, turn 0; give your opening act)");
                    continue;
                }
                Some(Command::Trace) => {
                    match &current {
                        Some(d) => console.say(d.ep.trace_text().trim_end()),
                        None => console.say("(no dialog yet)"),
                    }
                    continue;
                }
                Some(Command::Unknown(c)) => {
                    console.say(&format!("unknown command /{c}"));
                    continue;
                }
                None => {}
            }
            let (events, unknown, text) = parse_events(&line);
            for u in unknown {
                console.say(&format!("(ignoring unknown event +{u})"));
            }
            let act = match parse_act(&text) {
                Ok(a) => a,
                Err(e) => {
                    console.say(&format!("({e})"));
                    continue;
                }
            };
            match &mut current {
                None => {
                    let ep = self
                        .env
                        .reset_with(self.goal.clone(), act, sentidial_core::stats::derive_seed(self.seed, 0xC4A7, dialogs));
                    dialogs += 1;
                    let mut d = Dialog {
                        lstm: self.policy.net.initial_state(),
                        ep,
                        asked: None,
                    };
                    self.system_turn(&mut d, console)?;
                    current = Some(d);
                }
                Some(d) => {
                    let Some(asked) = d.asked else {
                        console.say("(the dialog is over; /reset to start another)");
                        continue;
                    };
                    let slot = asked.asked_slot().expect("only ask actions wait for an answer");
                    let response = UserResponse {
                        act,
                        repetition: d.ep.state.filled[slot.index()],
                        interruption: events.interrupted,
                        button: events.button,
                        start_over: events.start_over,
                    };
                    let out = self.env.step_with_response(&mut d.ep, asked, Some(response))?;
                    console.say(&format!("reward: {}", out.reward));
                    if let Some(det) = self.detector {
                        console.say(&show_probs(&det.predict_dialogic(&d.ep.state.dialogic)));
                    }
                    d.asked = None;
                    if out.done {
                        console.say(&format!("(dialog finished: {})", out.result.name()));
                    } else {
                        self.system_turn(d, console)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Lets the policy act; stops after a question or at the end of the dialog.
    fn system_turn(&self, d: &mut Dialog, console: &mut Console) -> Result<()> {
        let a = greedy_action(self.policy, &mut d.lstm, &self.env, &d.ep)?;
        console.say(&format!("system [{}]: {}", a.name(), a.text()));
        if a.asked_slot().is_some() {
            d.asked = Some(a);
        } else {
            let out = self.env.step_with_response(&mut d.ep, a, None)?;
            console.say(&format!("reward: {}", out.reward));
            console.say(&format!("(dialog finished: {})", out.result.name()));
        }
        Ok(())
    }
}
