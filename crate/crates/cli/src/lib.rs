//! `sentidial`: command-line front end for corpus preparation, sentiment
//! detection, supervised and reinforcement policy training, and chatting with
//! a trained policy.

mod chat;
mod data;
mod export;
mod rl;
mod run;
mod sentiment;
mod sl;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sentidial_core::{ErrorKind, Result};

use run::Overrides;

#[derive(Parser, Debug)]
#[command(name = "sentidial", version, about = "Sentiment-adaptive dialog policy learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Everything else is a `key = value`
/// setting, given in a config file or with `--set`.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` settings file; a previous run's manifest.txt works too
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one setting (repeatable)
    #[arg(long = "set", short = 's', value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed (beats SENTIDIAL_SEED and the config file)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: runs/<subcommand>]
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a dialog log, build the template inventory, CleanData and the sample bank
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Dialog log (one JSON record per turn)
        #[arg(long)]
        log: Option<PathBuf>,
        /// Entity lexicon (`type<TAB>surface` lines)
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Generate a synthetic corpus, lexicon and acoustic table
    SynthData {
        #[command(flatten)]
        common: Common,
    },
    /// Run the repeated-split sentiment protocol and train a detector
    TrainSentiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Feature families, e.g. `dialogic`, `acoustic+textual`, `all`
        #[arg(long)]
        features: Option<String>,
    },
    /// Score a saved sentiment detector
    EvalSentiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train the supervised template policy
    TrainSl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// baseline, plus_dialogic or plus_sentiment
        #[arg(long)]
        variant: Option<String>,
    },
    /// Score a saved supervised policy
    EvalSl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train policies with REINFORCE against the user simulator
    TrainRl {
        #[command(flatten)]
        common: Common,
        /// baseline, srrs, srrp or srrip
        #[arg(long)]
        variant: Option<String>,
        /// Dialogic-only sentiment detector (needed by sentiment rewards)
        #[arg(long)]
        sentiment_model: Option<PathBuf>,
    },
    /// Evaluate saved reinforcement-learned policies
    EvalRl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policies: Option<PathBuf>,
    },
    /// Talk to a trained policy
    Chat {
        #[command(flatten)]
        common: Common,
        /// Policy file from train-sl (mode=sl) or train-rl (mode=rl)
        #[arg(long)]
        model: Option<PathBuf>,
        /// Read the session from a file instead of stdin
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Export curves for gnuplot, a dialog trace, or a bank coverage profile
    Export {
        #[command(flatten)]
        common: Common,
        /// curves, trace or profile
        #[arg(long)]
        kind: Option<String>,
    },
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { common, log, lexicon } => {
            data::ingest(&Overrides::new(common).with("log", path(&log)).with("lexicon", path(&lexicon)))
        }
        Command::SynthData { common } => data::synth_data(&Overrides::new(common)),
        Command::TrainSentiment { common, corpus, features } => {
            sentiment::train(&Overrides::new(common).with("corpus", path(&corpus)).with("features", features))
        }
        Command::EvalSentiment { common, model, corpus } => {
            sentiment::eval(&Overrides::new(common).with("model", path(&model)).with("corpus", path(&corpus)))
        }
        Command::TrainSl { common, corpus, variant } => {
            sl::train(&Overrides::new(common).with("corpus", path(&corpus)).with("variant", variant))
        }
        Command::EvalSl { common, model, corpus } => {
            sl::eval(&Overrides::new(common).with("model", path(&model)).with("corpus", path(&corpus)))
        }
        Command::TrainRl {
            common,
            variant,
            sentiment_model,
        } => rl::train(
            &Overrides::new(common)
                .with("reward_variant", variant)
                .with("sentiment_model", path(&sentiment_model)),
        ),
        Command::EvalRl { common, policies } => rl::eval(&Overrides::new(common).with("policies", path(&policies))),
        Command::Chat { common, model, input } => {
            chat::chat(&Overrides::new(common).with("model", path(&model)).with("input", path(&input)))
        }
        Command::Export { common, kind } => export::export(&Overrides::new(common).with("kind", kind)),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Runtime => 4,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}
