use std::io::{self, BufReader, Write};
use std::process::ExitCode;

use saarthi_cli::{
    load_runs, render_runs_report, run_bench, run_summary, BenchManifest, CliError, PromptHuman,
};
use saarthi_core::cli::{parse_command, Command};
use saarthi_core::config::RunConfig;
use saarthi_core::pipeline::NoObserver;
use saarthi_core::record::Outcome;
use saarthi_core::setup::launch;
use saarthi_core::store::Level;
use saarthi_service::{default_launcher, spawn_server, Service, ServiceOptions};

const DEFAULT_BIND: &str = "127.0.0.1:8787";

fn terminal_human() -> PromptHuman<BufReader<io::Stdin>, io::Stderr> {
    PromptHuman::new(BufReader::new(io::stdin()), io::stderr())
}

fn run(config: RunConfig) -> Result<i32, CliError> {
    if config.service_mode {
        return serve(config);
    }
    let console: Box<dyn Write + Send> = Box::new(io::stderr());
    let record = launch(&config, &terminal_human(), &NoObserver, Some((Level::Info, console)))?;
    print!("{}", run_summary(&record, &config.out_dir));
    Ok(if record.outcome == Outcome::Success { 0 } else { 1 })
}

/// Serves the HTTP interface, starts the configured run through it and
/// keeps serving until interrupted.
fn serve(config: RunConfig) -> Result<i32, CliError> {
    let service = Service::new(default_launcher(), ServiceOptions::default());
    if let Err(e) = service.load_history(&config.out_dir) {
        eprintln!("warning: earlier runs not loaded: {e}");
    }
    let bind = config.bind.clone().unwrap_or_else(|| DEFAULT_BIND.to_string());
    let server = spawn_server(service.clone(), &bind, true)?;
    let run_id = service.start_run(config)?;
    println!("serving http://{}\nrun {run_id} started", server.addr);
    server.join()?;
    Ok(0)
}

fn report(dir: &std::path::Path) -> Result<i32, CliError> {
    let (records, warnings) = load_runs(dir)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", render_runs_report(&records)?);
    Ok(0)
}

fn bench(suite: &std::path::Path, out: &std::path::Path) -> Result<i32, CliError> {
    let manifest = BenchManifest::load(suite)?;
    let outcome = run_bench(&manifest, out, &terminal_human())?;
    print!("{}", outcome.report.markdown);
    eprintln!("wrote {} and {}", out.join("report.md").display(), out.join("report.csv").display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match parse_command(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Run(args) => match args.into_config() {
            Ok(config) => run(config),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(e.exit_code as u8);
            }
        },
        Command::Report { runs } => report(&runs),
        Command::Bench { suite, out } => bench(&suite, &out),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
