//! `regime-ogarch` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 fit failure.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use regime_ogarch::Error;

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::FitFailure { .. } | Error::NonStationary(_) | Error::FilterDegeneracy { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Forecast(a) => commands::forecast(a),
        Command::Backtest(a) => commands::backtest(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        let fit = CliError::Core(Error::FitFailure {
            best_point: vec![],
            best_value: 0.0,
            evals: 1,
        });
        assert_eq!(fit.exit_code(), 3);
        assert_eq!(CliError::Core(Error::NonStationary(1.0)).exit_code(), 3);
        assert_eq!(CliError::Core(Error::InvalidInput("x".into())).exit_code(), 2);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
    }
}
