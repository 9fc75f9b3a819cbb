mod args;
mod commands;
mod output;

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;

/// Errors caused by the numbers rather than the inputs.
fn is_internal(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<pyrprune::Error>(),
            Some(pyrprune::Error::NonFinite { .. } | pyrprune::Error::Divergence { .. })
        )
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    match panic::catch_unwind(AssertUnwindSafe(|| commands::dispatch(&cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_internal(&e) { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(2),
    }
}
