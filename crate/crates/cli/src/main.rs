use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use orlext::probes::{run, ExperimentConfig, Verb};

/// Runs one experiment verb on a line-oriented `key = value` configuration.
///
/// Exit status: 0 on success, 2 when a numerical invariant or a check
/// fails, 1 on a usage or input error.
#[derive(Debug, Parser)]
#[command(name = "orlext", version)]
struct Cli {
    /// cphi, ahlfors, whitney, reflect, norm, extend, ratio, hsplit, cutoff, probe or suite.
    verb: String,

    /// Configuration file; defaults apply to every key it omits.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides one key after the file is read; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Print the JSON report on stdout.
    #[arg(long)]
    json: bool,
}

fn configure(cli: &Cli) -> orlext::Result<ExperimentConfig> {
    let verb: Verb = cli.verb.parse()?;
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| orlext::Error::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    cfg.set("verb", verb.name())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cfg = match configure(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cfg) {
        Ok(report) => {
            if cli.json {
                print!("{}", report.to_json());
            }
            for c in report.checks.iter().chain(report.parts.iter().flat_map(|p| &p.checks)) {
                eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_invariant_violation() { 2 } else { 1 })
        }
    }
}
