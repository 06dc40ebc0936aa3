use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockguide::harness::{
    demo_config, emit_standard_series, load_config, run_grid, summary, write_csv, ExperimentConfig, DEMOS,
};
use blockguide::selftest;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "blockguide",
    version,
    about = "Reward-guided diffusion sampling on analytic priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment config.
    Run {
        config: PathBuf,
        /// Seed list override (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output directory for results.csv and series/.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock times (makes output non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Run a packaged scenario; `demo list` shows them.
    Demo {
        scenario: String,
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

fn execute(mut cfg: ExperimentConfig, seeds: Vec<u64>, out: Option<PathBuf>, timing: bool) -> blockguide::Result<bool> {
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    cfg.timing |= timing;
    let out = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&out).map_err(|e| blockguide::Error::Io {
        path: out.clone(),
        source: e,
    })?;

    let table = run_grid(&cfg)?;
    print!("{}", summary(&table));
    if table.is_empty() {
        eprintln!("every cell failed; nothing written");
        return Ok(false);
    }
    let csv = out.join("results.csv");
    write_csv(&table, &csv)?;
    let swept: Vec<&str> = cfg.sweep.iter().map(|a| a.field.as_str()).collect();
    emit_standard_series(&table, &swept, cfg.timing, out.join("series"))?;
    println!("wrote {}", csv.display());
    Ok(table.failures.is_empty())
}

fn list_demos() {
    for (name, about, _) in DEMOS {
        println!("{name:<14} {about}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seeds,
            out,
            timing,
        } => load_config(&config).and_then(|cfg| execute(cfg, seeds, out, timing)),
        Command::Demo {
            scenario,
            seeds,
            out,
            timing,
        } => {
            if scenario == "list" {
                list_demos();
                return ExitCode::SUCCESS;
            }
            let out = out.unwrap_or_else(|| Path::new("results").join(&scenario));
            demo_config(&scenario).and_then(|cfg| execute(cfg, seeds, Some(out), timing))
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("{} {:<40} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
