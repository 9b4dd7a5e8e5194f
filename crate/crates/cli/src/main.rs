use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use impsym::config::{builtin_case, ConfigError, RunConfig};
use impsym::pipeline::{
    casestudy_table, cmd_abstract, cmd_casestudy, cmd_certify, cmd_simulate, cmd_synthesize, PipelineError,
    DEFLATION_NOTE, SAMPLING_NOTE,
};
use impsym::SafetyController;

#[derive(Parser)]
#[command(name = "impsym", version, about = "Symbolic safety controllers for impulsive systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override `run.seed`
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Use the built-in case (1, 2 or 3) when no config file is given
    #[arg(long, value_name = "N", default_value_t = 1)]
    case: u8,
    /// Built-in case 1 with gains c = d = 5 instead of 10
    #[arg(long = "case1-caption-params")]
    case1_low_gain: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the stability certificate and the dwell-time condition
    Certify(Common),
    /// Build the symbolic model and report its size and blocking states
    Abstract(Common),
    /// Synthesize a safety controller
    Synthesize(Common),
    /// Simulate the closed loop of a controller and write CSV trajectories
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Controller file written by `synthesize`
        #[arg(long, value_name = "PATH")]
        controller: PathBuf,
    },
    /// Run the three built-in storage-delivery cases
    Casestudy(Common),
}

fn load(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError::Invalid { key: "--config".into(), message: format!("{}: {e}", path.display()) })?;
            RunConfig::parse(&text)?
        }
        None => builtin_case(common.case, common.case1_low_gain && common.case == 1).ok_or_else(|| {
            ConfigError::Invalid { key: "--case".into(), message: format!("no built-in case {}", common.case) }
        })?,
    };
    if let Some(seed) = common.seed {
        config.run.seed = seed;
    }
    Ok(config)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Certify(common) => {
            let outcome = cmd_certify(&load(&common)?)?;
            let path = write(&common.out, "certify.txt", &outcome.text)?;
            print!("{}", outcome.text);
            eprintln!("wrote {}", path.display());
            outcome.into_result().map(|_| ())
        }
        Command::Abstract(common) => {
            let (summary, model) = cmd_abstract(&load(&common)?)?;
            let mut dump = Vec::new();
            model.write_dump(&mut dump)?;
            write(&common.out, "model.txt", &String::from_utf8_lossy(&dump))?;
            write(&common.out, "abstract.txt", &summary.to_text())?;
            print!("{}", summary.to_text());
            Ok(())
        }
        Command::Synthesize(common) => {
            let config = load(&common)?;
            let outcome = cmd_synthesize(&config)?;
            let path = write(&common.out, "controller.txt", &outcome.controller.to_text())?;
            write(&common.out, "summary.txt", &outcome.result.to_text())?;
            print!("{}", outcome.result.to_text());
            println!("runtime_seconds = {:.3}", outcome.result.runtime.as_secs_f64());
            if config.deflate {
                println!("{DEFLATION_NOTE}");
            }
            println!("{SAMPLING_NOTE}");
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Simulate { common, controller } => {
            let config = load(&common)?;
            let text = fs::read_to_string(&controller)?;
            let controller = SafetyController::parse(&text).map_err(|e| ConfigError::Invalid {
                key: "--controller".into(),
                message: e.to_string(),
            })?;
            let csv = cmd_simulate(&config, &controller)?;
            let path = write(&common.out, "trajectories.csv", &csv)?;
            println!("{SAMPLING_NOTE}");
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Casestudy(common) => {
            let results = cmd_casestudy(&common.out, common.seed.unwrap_or(0), common.case1_low_gain)?;
            print!("{}", casestudy_table(&results));
            for r in &results {
                println!("{} runtime_seconds = {:.3}", r.label, r.runtime.as_secs_f64());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
