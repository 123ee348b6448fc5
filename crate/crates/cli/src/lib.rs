//! Command-line driver: loads a scenario, runs one experiment, writes
//! deterministic CSV/SVG artifacts, and exits nonzero iff any row fails.

pub mod experiments;
pub mod report;
pub mod scenario;
pub mod svg;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand};

use report::{print_rows, rows_to_csv, ResultRow};
use scenario::Scenario;

#[derive(Parser)]
#[command(name = "tdlab", about = "transport density laboratory", version)]
pub struct Cli {
    /// JSON scenario config; a built-in translate instance if omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSV and SVG artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 or absent = library default).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
pub enum Cmd {
    /// Solve the transport problem and certify optimality.
    Solve,
    /// Rasterize the transport density and flow.
    Sigma,
    /// Lorentz norms and the quasinorm equivalence check.
    Lorentz,
    /// Interpolant densities along t for an atomic target.
    Interp,
    /// Atomic-target norm bound with resolution stability.
    Prop21,
    /// Target-projection convergence sweep.
    Prop23,
    /// Two-sided interpolation envelope and epsilon stability.
    Prop25,
    /// Monte Carlo and brute-force reference checks.
    Oracle,
}

impl Cmd {
    fn name(self) -> &'static str {
        match self {
            Cmd::Solve => "solve",
            Cmd::Sigma => "sigma",
            Cmd::Lorentz => "lorentz",
            Cmd::Interp => "interp",
            Cmd::Prop21 => "prop21",
            Cmd::Prop23 => "prop23",
            Cmd::Prop25 => "prop25",
            Cmd::Oracle => "oracle",
        }
    }
}

fn execute(cli: &Cli) -> Result<Vec<ResultRow>> {
    let mut scen = match &cli.config {
        Some(path) => Scenario::from_file(path)?,
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        scen.seed = seed;
    }
    #[cfg(feature = "parallel")]
    if let Some(threads) = cli.threads {
        if threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .ok(); // already built is fine
        }
    }
    let rows = match cli.cmd {
        Cmd::Solve => experiments::run_solve(&scen, &cli.out)?,
        Cmd::Sigma => experiments::run_sigma(&scen, &cli.out)?,
        Cmd::Lorentz => experiments::run_lorentz(&scen, &cli.out)?,
        Cmd::Interp => experiments::run_interp(&scen, &cli.out)?,
        Cmd::Prop21 => experiments::run_prop21(&scen, &cli.out)?,
        Cmd::Prop23 => experiments::run_prop23(&scen, &cli.out)?,
        Cmd::Prop25 => experiments::run_prop25(&scen, &cli.out)?,
        Cmd::Oracle => experiments::run_oracle(&scen, &cli.out)?,
    };
    std::fs::create_dir_all(&cli.out)?;
    std::fs::write(
        cli.out.join(format!("{}_{}_results.csv", scen.name, cli.cmd.name())),
        rows_to_csv(&rows),
    )?;
    Ok(rows)
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let started = Instant::now();
    match execute(&cli) {
        Ok(rows) => {
            print_rows(&rows);
            // timing to stderr only: artifacts stay bitwise reproducible
            eprintln!(
                "{}: {} rows in {:.2}s",
                cli.cmd.name(),
                rows.len(),
                started.elapsed().as_secs_f64()
            );
            if rows.iter().all(|r| r.pass) {
                0
            } else {
                1
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    }
}
