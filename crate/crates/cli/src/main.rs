//! `kann`: synthesize hidden-state data, fit Koopman operators, and write
//! spectra, projections, prediction errors and silhouette curves.
//!
//! Exit codes: 0 on success, 1 for runtime or data errors, 2 for usage errors.

mod analysis;
mod args;
mod output;
mod report;
mod synth;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// An error caused by how the tool was invoked rather than by the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// The error chain joined with ": ", skipping causes whose text the
/// previous message already ends with.
fn message(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let part = cause.to_string();
        if !text.ends_with(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

fn run(cli: Cli) -> anyhow::Result<()> {
    cli.global.validate()?;
    std::fs::create_dir_all(&cli.global.out)
        .map_err(|e| anyhow::anyhow!("cannot create output directory {}: {e}", cli.global.out.display()))?;
    match cli.command {
        Command::Synth { generator } => synth::run(&cli.global, generator),
        Command::Fit(a) => analysis::fit(&cli.global, &a),
        Command::Spectrum(a) => analysis::spectrum(&cli.global, &a),
        Command::Project(a) => analysis::project(&cli.global, &a),
        Command::Predict(a) => analysis::predict(&cli.global, &a),
        Command::Silhouette(a) => analysis::silhouette(&cli.global, &a),
        Command::Report => report::show(&cli.global),
    }
}
