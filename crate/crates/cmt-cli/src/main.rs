//! `cmt` — one subcommand per step of the offline trajectory-model workflow:
//! generate datasets, train the representation, tune the prompt adaptor,
//! train across tasks, roll out with online context, and report scores.
//!
//! Exit codes: 0 success, 1 bad invocation, 2 runtime failure.

mod commands;
mod config;
mod runmeta;

use clap::Parser;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "cmt",
    version,
    about = "Offline trajectory auto-encoder workflow: data, training, tuning, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand, Debug)]
enum Command {
    /// Generate an offline episode dataset for one environment task.
    GenData(commands::GenDataArgs),
    /// Train encoder and generator on one dataset (representation stage).
    Pretrain(commands::PretrainArgs),
    /// Tune the prompt adaptor against a frozen checkpoint (improvement stage).
    Tune(commands::TuneArgs),
    /// Train across several task datasets with context conditioning.
    MetaTrain(commands::MetaTrainArgs),
    /// Roll out on a task, feeding earlier episodes back as context.
    MetaTest(commands::MetaTestArgs),
    /// Score a checkpoint against a dataset's reference policies.
    Eval(commands::EvalArgs),
    /// Summarize dataset or checkpoint artifacts.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
