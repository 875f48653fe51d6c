//! Command-line grammar for the `saarthi` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{HilMode, RunConfig, Strategy};

#[derive(Debug, Parser)]
#[command(name = "saarthi", version, about = "Agentic formal verification runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the verification pipeline on one design.
    Run(Box<RunArgs>),
    /// Summarize previously stored runs.
    Report {
        #[arg(long = "runs", value_name = "DIR")]
        runs: PathBuf,
    },
    /// Run every design in a benchmark manifest and render the KPI matrix.
    Bench {
        #[arg(long = "suite", value_name = "MANIFEST")]
        suite: PathBuf,
        #[arg(long = "out", value_name = "DIR", default_value = "bench-out")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HilArg {
    Never,
    Terminate,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long = "spec", value_name = "PATH")]
    spec: PathBuf,
    #[arg(long = "rtl", value_name = "PATH")]
    rtl: Vec<PathBuf>,
    #[arg(long = "model", value_name = "ID", default_value = crate::config::DEFAULT_MODEL)]
    model: String,
    #[arg(long = "strategy", value_enum, default_value = "sequential")]
    strategy: StrategyArg,
    #[arg(long = "hil", value_enum, default_value = "terminate")]
    hil: HilArg,
    #[arg(long = "max-replies", value_name = "N", default_value_t = crate::config::DEFAULT_MAX_REPLIES,
          value_parser = clap::value_parser!(u32).range(1..))]
    max_replies: u32,
    #[arg(long = "max-iter", value_name = "N", default_value_t = crate::config::DEFAULT_MAX_ITER,
          value_parser = clap::value_parser!(u32).range(1..))]
    max_iter: u32,
    #[arg(long = "temperature", value_name = "F", default_value_t = crate::config::DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long = "vote", value_name = "N", default_value_t = 0)]
    vote: u32,
    #[arg(long = "out", value_name = "DIR", default_value = crate::config::DEFAULT_OUT_DIR)]
    out: PathBuf,
    #[arg(long = "serve")]
    serve: bool,
    /// Agent roster document (defaults to the bundled roster).
    #[arg(long = "agents", value_name = "PATH")]
    agents: Option<PathBuf>,
    /// Task document (defaults to the bundled tasks).
    #[arg(long = "tasks", value_name = "PATH")]
    tasks: Option<PathBuf>,
    /// Replay model traffic from this cassette.
    #[arg(long = "cassette", value_name = "PATH")]
    cassette: Option<PathBuf>,
    /// Record live traffic into the cassette instead of replaying it.
    #[arg(long = "record", requires = "cassette")]
    record: bool,
    #[arg(long = "base-url", value_name = "URL")]
    base_url: Option<String>,
    /// Mock prover verdict fixture (JSON).
    #[arg(long = "prover-fixture", value_name = "PATH", conflicts_with = "prover_cmd")]
    prover_fixture: Option<PathBuf>,
    /// Shell command run inside each prover task directory.
    #[arg(long = "prover-cmd", value_name = "CMD")]
    prover_cmd: Option<String>,
    #[arg(long = "bind", value_name = "ADDR")]
    bind: Option<String>,
}

/// A usage error with the exit code the binary should return.
#[derive(Debug)]
pub struct UsageError {
    pub message: String,
    pub exit_code: i32,
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for UsageError {}

impl From<clap::Error> for UsageError {
    fn from(err: clap::Error) -> Self {
        UsageError {
            message: err.to_string(),
            exit_code: err.exit_code(),
        }
    }
}

impl RunArgs {
    pub fn into_config(self) -> Result<RunConfig, UsageError> {
        let config = RunConfig {
            strategy: match self.strategy {
                StrategyArg::Sequential => Strategy::Sequential,
            },
            model_id: self.model,
            spec_path: self.spec,
            rtl_paths: self.rtl,
            hil_mode: match self.hil {
                HilArg::Never => HilMode::Never,
                HilArg::Terminate => HilMode::Terminate,
            },
            max_replies: self.max_replies,
            max_iter: self.max_iter,
            temperature: self.temperature,
            vote_samples: self.vote,
            out_dir: self.out,
            service_mode: self.serve,
            agents_path: self.agents,
            tasks_path: self.tasks,
            cassette: self.cassette,
            record: self.record,
            base_url: self.base_url,
            prover_fixture: self.prover_fixture,
            prover_cmd: self.prover_cmd,
            bind: self.bind,
        };
        config.check_invariants().map_err(|e| UsageError {
            message: e.to_string(),
            exit_code: 2,
        })?;
        Ok(config)
    }
}

/// Parses the flags of the `run` subcommand (without the program name or the
/// subcommand itself).
pub fn parse_cli_args<I, T>(argv: I) -> Result<RunConfig, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    #[derive(Parser)]
    #[command(name = "saarthi run")]
    struct RunOnly {
        #[command(flatten)]
        args: RunArgs,
    }
    let args: Vec<OsString> = std::iter::once(OsString::from("saarthi-run"))
        .chain(argv.into_iter().map(Into::into))
        .collect();
    RunOnly::try_parse_from(args)?.args.into_config()
}

pub fn parse_command<I, T>(argv: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Strategy;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as PropStrategy;

    #[test]
    fn defaults_applied() {
        let c = parse_cli_args(["--spec", "fifo.md", "--model", "mock"]).unwrap();
        assert_eq!(c.model_id, "mock");
        assert_eq!(c.max_iter, 5);
        assert_eq!(c.hil_mode, HilMode::Terminate);
        assert_eq!(c.max_replies, 3);
        assert_eq!(c.temperature, 0.2);
        assert_eq!(c.vote_samples, 0);
        assert_eq!(c.strategy, Strategy::Sequential);
        assert!(!c.service_mode);
    }

    #[test]
    fn max_iter_passthrough() {
        let c = parse_cli_args(["--spec", "fifo.md", "--max-iter", "1"]).unwrap();
        assert_eq!(c.max_iter, 1);
    }

    #[test]
    fn zero_max_iter_is_a_usage_error() {
        let err = parse_cli_args(["--max-iter", "0"]).unwrap_err();
        assert_ne!(err.exit_code, 0);
        let err = parse_cli_args(["--spec", "a", "--max-iter", "0"]).unwrap_err();
        assert_ne!(err.exit_code, 0);
    }

    #[test]
    fn rejects_unknown_flag_missing_spec_bad_number() {
        assert!(parse_cli_args(["--spec", "a", "--frobnicate"]).is_err());
        assert!(parse_cli_args(["--model", "mock"]).is_err());
        assert!(parse_cli_args(["--spec", "a", "--temperature", "warm"]).is_err());
        assert!(parse_cli_args(["--spec", "a", "--vote", "2"]).is_err());
    }

    #[test]
    fn subcommands_parse() {
        let cli = parse_command(["saarthi", "report", "--runs", "runs"]).unwrap();
        assert!(matches!(cli.command, Command::Report { .. }));
        let cli = parse_command(["saarthi", "bench", "--suite", "m.json"]).unwrap();
        assert!(matches!(cli.command, Command::Bench { .. }));
        let cli = parse_command(["saarthi", "run", "--spec", "s.md", "--rtl", "a.sv", "--rtl", "b.sv"]).unwrap();
        match cli.command {
            Command::Run(args) => assert_eq!(args.into_config().unwrap().rtl_paths.len(), 2),
            _ => panic!(),
        }
    }

    fn path_strategy() -> impl PropStrategy<Value = PathBuf> {
        "[a-z][a-z0-9_/]{0,12}\\.[a-z]{1,3}".prop_map(PathBuf::from)
    }

    proptest! {
        #[test]
        fn flags_round_trip(
            spec in path_strategy(),
            rtl in proptest::collection::vec(path_strategy(), 0..3),
            model in "[a-z][a-z0-9.-]{0,10}",
            never in any::<bool>(),
            max_replies in 1u32..20,
            max_iter in 1u32..20,
            temp_hundredths in 0u32..=200,
            vote in prop_oneof![Just(0u32), (0u32..5).prop_map(|k| 2 * k + 1)],
            serve in any::<bool>(),
            cassette in proptest::option::of(path_strategy()),
            record in any::<bool>(),
            prover_cmd in proptest::option::of("[a-z ./-]{1,12}"),
        ) {
            let config = RunConfig {
                model_id: model,
                spec_path: spec,
                rtl_paths: rtl,
                hil_mode: if never { HilMode::Never } else { HilMode::Terminate },
                max_replies,
                max_iter,
                temperature: temp_hundredths as f64 / 100.0,
                vote_samples: vote,
                service_mode: serve,
                record: record && cassette.is_some(),
                cassette,
                prover_cmd,
                ..RunConfig::default()
            };
            let parsed = parse_cli_args(config.to_args()).unwrap();
            prop_assert_eq!(parsed, config);
        }
    }
}
