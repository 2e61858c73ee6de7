use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use logit_ensemble::eval::ExtractionRule;
use logit_ensemble_cli::decode::{cmd_decode, DecodeOptions};
use logit_ensemble_cli::evaluate::{cmd_eval, EvalMode, EvalOptions};
use logit_ensemble_cli::selftest::{cmd_selftest, Fault};
use logit_ensemble_cli::Exit;

#[derive(Parser)]
#[command(name = "logit-ensemble", version, about = "Ensemble decoding over K reasoning traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every prompt of a run config and write JSONL records.
    Decode {
        #[arg(long)]
        config: PathBuf,
        /// Only the first N prompts.
        #[arg(long)]
        limit: Option<usize>,
        /// Append to the existing output, skipping ids it already holds.
        #[arg(long)]
        resume: bool,
    },
    /// Score decode records against gold answers.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// boxed, final-line or regex:<pattern>
        #[arg(long, default_value = "final-line")]
        extract: String,
        /// Score records from different configurations together.
        #[arg(long)]
        allow_mixed: bool,
    },
    /// Run the built-in conformance suites.
    Selftest {
        #[arg(long)]
        suite: Option<String>,
        /// Deliberately break a component to check that the suites notice.
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Config.into() } else { Exit::Success.into() };
        }
    };
    let exit = match cli.command {
        Command::Decode { config, limit, resume } => cmd_decode(&config, &DecodeOptions { limit, resume }),
        Command::Eval { results, gold, mode, k, extract, allow_mixed } => match extract.parse::<ExtractionRule>() {
            Ok(rule) => cmd_eval(&results, &gold, &EvalOptions { mode, k, rule, allow_mixed }),
            Err(e) => {
                eprintln!("config error: --extract: {e}");
                Exit::Config
            }
        },
        Command::Selftest { suite, inject_fault } => cmd_selftest(suite.as_deref(), inject_fault),
    };
    exit.into()
}
