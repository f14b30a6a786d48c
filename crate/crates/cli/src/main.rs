use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;

use args::Cli;

const EXIT_USER: u8 = 1;
const EXIT_INTERNAL: u8 = 2;

/// A failure that is the caller's fault rather than a defect.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use ispsearch::Error as E;
    if err.downcast_ref::<UserError>().is_some() {
        return EXIT_USER;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::NonFiniteGradient(_)
            | E::ShapeMismatch { .. }
            | E::IncompleteTrajectory(_)
            | E::EpisodeFinished { .. }
            | E::NotNormalized(_)
            | E::UnsquashedParameter { .. },
        ) => EXIT_INTERNAL,
        Some(_) => EXIT_USER,
        None => EXIT_INTERNAL,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USER) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
