use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use relu1d::presets::{preset, presets};
use relu1d::runner::{compare_fit_files, exit_code, run_scenario};
use relu1d::scenario::{OutputKind, Scenario};
use relu1d::{Error, Result};

#[derive(Parser)]
#[command(name = "relu1d", version, about = "Gradient dynamics of shallow univariate ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write every requested artifact
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a built-in scenario
    Preset {
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Print the scenario as a config file instead of running it
        #[arg(long)]
        dump: bool,
    },
    /// List the built-in scenarios
    Presets,
    /// Fit only the kernel interpolant of a scenario
    Kernel {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Fit only the natural cubic spline of a scenario
    Spline {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario and write only velocity fields and attractor reports
    Field {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sup distance between two fit files on a shared grid
    Compare { a: PathBuf, b: PathBuf },
}

fn run_and_report(scn: &Scenario, out: &Path) -> Result<()> {
    let summary = run_scenario(scn, out)?;
    println!("{}", summary.dir.display());
    for f in &summary.files {
        println!("  {f}");
    }
    Ok(())
}

fn only(mut scn: Scenario, kinds: &[OutputKind], train: bool) -> Scenario {
    scn.outputs = kinds.to_vec();
    if !train {
        scn.train.steps = 0;
        scn.variants.clear();
    }
    scn
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, out } => run_and_report(&Scenario::from_path(&config)?, &out),
        Command::Preset {
            name,
            seed,
            out,
            dump,
        } => {
            let mut scn = preset(&name).ok_or_else(|| {
                Error::Config(format!("unknown preset {name:?}; try `relu1d presets`"))
            })?;
            if let Some(seed) = seed {
                scn.seed = seed;
            }
            if dump {
                print!("{}", scn.to_toml_string()?);
                return Ok(());
            }
            run_and_report(&scn, &out)
        }
        Command::Presets => {
            for name in presets() {
                println!("{name}");
            }
            Ok(())
        }
        Command::Kernel { config, out } => {
            let scn = Scenario::from_path(&config)?;
            if scn.kernel.is_none() {
                return Err(Error::Config("the scenario has no [kernel] table".into()));
            }
            run_and_report(&only(scn, &[OutputKind::KernelFit], false), &out)
        }
        Command::Spline { config, out } => {
            let scn = Scenario::from_path(&config)?;
            run_and_report(&only(scn, &[OutputKind::SplineFit], false), &out)
        }
        Command::Field { config, out } => {
            let scn = Scenario::from_path(&config)?;
            run_and_report(&only(scn, &[OutputKind::Field, OutputKind::Attractors], true), &out)
        }
        Command::Compare { a, b } => {
            let v = compare_fit_files(&a, &b)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("relu1d: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
