//! Command-line front end: `drift`, `needle`, `multi-needle`,
//! `stream-compare`, `accounting` and `replay`.
//!
//! Exit codes: 0 on success, 1 on a configuration error (bad flags, bad
//! config file, unreadable model, parameters that do not fit the model),
//! 2 when the run itself fails.

mod args;
mod config;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::{Cli, Command, PolicyKind, ReplayArgs, RunArgs};
pub use config::{config_file_args, resolve, AccountingSpec, CommandKind, ModelSource, RunConfig};
pub use run::{execute, Failure, GridCell, Header, Report, TrialRecord, ARTIFACT_VERSION};

use crate::error::Result;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "KVFOLD_OUT_DIR";

/// Maps `f` over `items` on up to `jobs` threads. Results keep input order,
/// and the first error in input order is returned.
pub fn par_map<I, O, F>(items: &[I], jobs: usize, f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O> + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<Result<O>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                s.spawn(move || {
                    (w..items.len()).step_by(jobs).map(|i| (i, f(&items[i]))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("kvfold-out"))
}

fn kind_and_args(cmd: Command) -> std::result::Result<(CommandKind, RunArgs), ReplayArgs> {
    match cmd {
        Command::Drift(a) => Ok((CommandKind::Drift, a)),
        Command::Needle(a) => Ok((CommandKind::Needle, a)),
        Command::MultiNeedle(a) => Ok((CommandKind::MultiNeedle, a)),
        Command::StreamCompare(a) => Ok((CommandKind::StreamCompare, a)),
        Command::Accounting(a) => Ok((CommandKind::Accounting, a)),
        Command::Replay(r) => Err(r),
    }
}

fn parse(argv: &[OsString]) -> std::result::Result<Cli, i32> {
    let report = |e: clap::Error| {
        let code = match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
            _ => 1,
        };
        let _ = e.print();
        code
    };
    let cli = Cli::try_parse_from(argv).map_err(report)?;
    let config = match &cli.command {
        Command::Replay(_) => None,
        Command::Drift(a)
        | Command::Needle(a)
        | Command::MultiNeedle(a)
        | Command::StreamCompare(a)
        | Command::Accounting(a) => a.config.clone(),
    };
    let Some(path) = config else { return Ok(cli) };
    let file_args = std::fs::read_to_string(&path)
        .map_err(|e| format!("{}: {e}", path.display()))
        .and_then(|text| config_file_args(&text))
        .map_err(|msg| {
            eprintln!("error: config file: {msg}");
            1
        })?;
    // File settings go right after the subcommand so later command-line flags win.
    let sub = argv.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map_or(1, |i| i + 2);
    let mut merged: Vec<OsString> = argv[..sub].to_vec();
    merged.extend(file_args.into_iter().map(OsString::from));
    merged.extend_from_slice(&argv[sub..]);
    Cli::try_parse_from(&merged).map_err(report)
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn main_with_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(&argv) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let (cfg, jobs, out) = match kind_and_args(cli.command) {
        Ok((kind, a)) => match resolve(kind, &a) {
            Ok(cfg) => (cfg, a.jobs.unwrap_or(1), out_dir(a.out)),
            Err(msg) => {
                eprintln!("error: {msg}");
                return 1;
            }
        },
        Err(replay) => match Header::read(&replay.file) {
            Ok(h) if h.artifact == "kvfold" && h.artifact_version == ARTIFACT_VERSION => {
                (h.config, replay.jobs.unwrap_or(1), out_dir(replay.out))
            }
            Ok(h) => {
                eprintln!("error: {} is not a kvfold v{ARTIFACT_VERSION} artifact (got {} v{})", replay.file.display(), h.artifact, h.artifact_version);
                return 1;
            }
            Err(e) => {
                eprintln!("error: {}: {e}", replay.file.display());
                return 1;
            }
        },
    };
    match execute(&cfg, &out, jobs) {
        Ok(report) => {
            print!("{}", report.summary);
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
