use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergocert_core::model::load_model;
use ergocert_core::report::{error_exit_code, run_certify, run_rate, run_report, run_simulate, Settings};

/// Certified convergence envelopes for finite Markov chains and CTMCs.
///
/// Exit codes: 0 all validations pass, 1 a requested certificate cannot be
/// established, 2 a certified envelope failed validation, 3 input error.
#[derive(Parser)]
#[command(name = "ergocert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract all applicable certificates and print them as JSON.
    Certify(Common),
    /// Compute the envelopes; writes rates.csv with --out.
    Rate(Common),
    /// Decay tables of the test measures as CSV.
    Simulate(Common),
    /// Certify, rate, simulate and validate; one JSON report.
    Report(Common),
}

#[derive(Args)]
struct Common {
    model: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "n-max", visible_alias = "n")]
    n_max: Option<usize>,
    #[arg(long = "t-max", visible_alias = "t")]
    t_max: Option<f64>,
    /// Number of tabulation points (and time points for generators).
    #[arg(long = "grid-size")]
    grid_size: Option<usize>,
    /// Directory for the JSON and CSV outputs.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn settings(&self) -> Settings {
        Settings { seed: self.seed, tol: self.tol, n_max: self.n_max, t_max: self.t_max, grid_size: self.grid_size }
    }
}

fn write(dir: &Path, name: &str, content: &str) -> Result<(), u8> {
    std::fs::write(dir.join(name), content).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", dir.join(name).display());
        3
    })
}

fn run(cli: Cli) -> Result<u8, u8> {
    let (name, common) = match &cli.command {
        Command::Certify(c) => ("certify", c),
        Command::Rate(c) => ("rate", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Report(c) => ("report", c),
    };
    let model = load_model(&common.model).map_err(|e| {
        eprintln!("input error: {e}");
        3
    })?;
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(|e| {
            eprintln!("error: cannot create {}: {e}", dir.display());
            3
        })?;
    }
    let settings = common.settings();
    let fail = |e: ergocert_core::Error| {
        eprintln!("error: {e}");
        error_exit_code(&e) as u8
    };
    eprintln!("{name}: {} ({} states)", model.file.name, model.size());
    let code = match &cli.command {
        Command::Certify(_) => {
            let rep = run_certify(&model, &settings).map_err(fail)?;
            emit(common.out.as_deref(), "certificates.json", &rep.to_json())?;
            rep.status.exit_code()
        }
        Command::Rate(_) => {
            let (rep, csv) = run_rate(&model, &settings).map_err(fail)?;
            emit(common.out.as_deref(), "rates.json", &rep.to_json())?;
            if let Some(dir) = &common.out {
                write(dir, "rates.csv", &csv)?;
            }
            rep.status.exit_code()
        }
        Command::Simulate(_) => {
            let tables = run_simulate(&model, &settings).map_err(fail)?;
            match &common.out {
                Some(dir) => {
                    for (file, t) in &tables {
                        write(dir, file, &t.to_csv())?;
                    }
                }
                None => print!("{}", tables[0].1.to_csv()),
            }
            0
        }
        Command::Report(_) => {
            let (rep, tables) = run_report(&model, &settings).map_err(fail)?;
            emit(common.out.as_deref(), "report.json", &rep.to_json())?;
            if let Some(dir) = &common.out {
                for (file, t) in &tables {
                    write(dir, file, &t.to_csv())?;
                }
            }
            for t in rep.trajectories.iter().filter(|t| !t.passed) {
                eprintln!("violation: {} (tv ratio {}, v1 ratio {})", t.csv, t.tv_ratio, t.v1_ratio);
            }
            rep.status.exit_code()
        }
    };
    Ok(code as u8)
}

/// JSON goes to stdout, and into the output directory when one is given.
fn emit(out: Option<&Path>, name: &str, json: &str) -> Result<(), u8> {
    print!("{json}");
    match out {
        Some(dir) => write(dir, name, json),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(c) | Err(c) => ExitCode::from(c),
    }
}
