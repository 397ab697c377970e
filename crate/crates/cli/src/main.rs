mod config;
mod error;
mod registry;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use decoupling_core::identities::{render, run_identity_suite, SuiteOptions};
use decoupling_core::verify::ProbeReport;

use crate::config::{env_seed, Experiment, Overrides, DEFAULT_SEED};
use crate::error::{CliError, Result};

#[derive(Parser)]
#[command(name = "decoupling-lab", version, about = "Numerical checks of decoupling inequalities for chaoses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the exact identity suite. Exit 1 if any group fails.
    Verify {
        /// Print the suite as JSON only.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the pinned normalization exponent; a negative control.
        #[arg(long, hide = true, allow_hyphen_values = true)]
        gamma: Option<f64>,
    },
    /// Run one probe from a TOML config. Exit 1 on an unexpected outcome,
    /// 2 on bad input, 3 when a resource guard trips.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
        /// JSON output path; a CSV with the same stem is written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate saved probe reports into summary.csv and summary.md.
    Report {
        /// Glob of report JSON files.
        pattern: String,
        /// Without it both summaries go to stdout, CSV first.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// List probe names and their tags.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify { json, seed, gamma } => verify(json, seed, gamma),
        Command::Probe {
            config,
            seed,
            replicates,
            out,
        } => probe(&config, Overrides { seed, replicates, out }),
        Command::Report { pattern, out_dir } => report(&pattern, out_dir.as_deref()),
        Command::List => {
            for e in registry::REGISTRY {
                println!("{}\t{}\t{}", e.name, e.tag, e.summary);
            }
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn verify(json: bool, seed: Option<u64>, gamma: Option<f64>) -> Result<bool> {
    let seed = match seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(DEFAULT_SEED),
    };
    let suite = run_identity_suite(&SuiteOptions {
        seed,
        gamma_override: gamma,
    })?;
    if json {
        let text = serde_json::to_string_pretty(&suite).map_err(|e| CliError::Config(e.to_string()))?;
        println!("{text}");
    } else {
        print!("{}", render(&suite));
        let failed: Vec<&str> = suite.groups.iter().filter(|g| !g.passed).map(|g| g.group).collect();
        if !failed.is_empty() {
            println!("failed groups: {}", failed.join(", "));
        }
    }
    Ok(suite.passed)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn summary_lines(r: &ProbeReport) -> Vec<String> {
    vec![
        format!("probe {} [{}]", r.probe, r.tag),
        format!("  lhs {:.6e} (se {:.2e})", r.lhs.mean, r.lhs.se),
        format!("  rhs {:.6e} (se {:.2e})", r.rhs.mean, r.rhs.se),
        format!(
            "  ratio {}  verdict {}  expectation {:?}  outcome {}",
            r.ratio.map_or_else(|| "-".into(), |x| format!("{x:.4e}")),
            r.verdict,
            r.expectation,
            r.outcome
        ),
        format!("  seed {}  M {}", r.seed, r.replicates),
    ]
}

fn probe(config: &Path, overrides: Overrides) -> Result<bool> {
    let exp = Experiment::load(config, &overrides)?;
    let entry = registry::lookup(&exp.raw.probe)?;
    let report = (entry.run)(&exp)?;
    let json = report.to_json() + "\n";
    let lines = summary_lines(&report);
    match &exp.out {
        Some(path) => {
            write_file(path, json.as_bytes())?;
            let csv_path = path.with_extension("csv");
            write_file(&csv_path, &report::single_csv(&report)?)?;
            for l in &lines {
                println!("{l}");
            }
            println!("  wrote {} and {}", path.display(), csv_path.display());
        }
        None => {
            let mut err = std::io::stderr().lock();
            for l in &lines {
                let _ = writeln!(err, "{l}");
            }
            print!("{json}");
        }
    }
    Ok(report.outcome.is_expected())
}

fn report(pattern: &str, out_dir: Option<&Path>) -> Result<bool> {
    let loaded = report::load_glob(pattern)?;
    let csv = report::csv_string(&loaded)?;
    let md = report::markdown(&loaded);
    match out_dir {
        Some(dir) => {
            write_file(&dir.join("summary.csv"), csv.as_bytes())?;
            write_file(&dir.join("summary.md"), md.as_bytes())?;
            println!("{} reports summarized into {}", loaded.len(), dir.display());
        }
        None => {
            print!("{csv}");
            println!();
            print!("{md}");
        }
    }
    Ok(true)
}
