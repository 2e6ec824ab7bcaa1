//! Command-line front end: one binary with a subcommand per pipeline stage.
//!
//! Every subcommand except `al-run` accepts `--config FILE`, a JSON object of
//! default flag values keyed by flag name; flags given on the command line
//! win. Results are JSON on stdout (or `--out`), a human summary goes to
//! stderr. Exit codes: 0 success, 1 data error, 2 usage error.

mod args;
mod confidence_cmd;
mod dataset;
mod eval;
mod pipeline;
mod report;
mod selection_cmd;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub use args::Cli;
use args::{Command, ConfidenceCommand};

/// Invalid invocation; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match args::merge_config_file(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_DATA
            }
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build()?;
    let out = report::Output::new(cli.out.clone());
    pool.install(|| match cli.command {
        Command::Normalize(a) => pipeline::normalize(&a, &out),
        Command::Extract(a) => pipeline::extract(&a, &out),
        Command::Synth(a) => pipeline::synth(&a, &out),
        Command::Eval { level } => eval::run(&level, &out),
        Command::Confidence { estimator } => match estimator {
            ConfidenceCommand::Pce(a) => confidence_cmd::pce(&a, &out),
            ConfidenceCommand::Dov(a) => confidence_cmd::ensemble(&a, false, &out),
            ConfidenceCommand::Dap(a) => confidence_cmd::ensemble(&a, true, &out),
            ConfidenceCommand::RfrTrain(a) => confidence_cmd::rfr_train(&a, &out),
            ConfidenceCommand::RfrPredict(a) => confidence_cmd::rfr_predict(&a, &out),
        },
        Command::RejectCurve(a) => selection_cmd::reject_curve(&a, &out),
        Command::Select(a) => selection_cmd::select(&a, &out),
        Command::AlRun(a) => selection_cmd::al_run(&a, &out),
    })
}
