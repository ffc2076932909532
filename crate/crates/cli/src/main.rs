use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecg_field::experiment::{compare_files, preset, run_file, PRESETS};
use ecg_field::Error;

/// Finite-field dipole and polarizability experiments with explicitly
/// correlated Gaussians.
#[derive(Parser)]
#[command(name = "ecg-field", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment configuration and write report.json, sweep.csv and basis.json.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.directory` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate two report.json files side by side with ratios.
    Compare { a: PathBuf, b: PathBuf },
    /// List the bundled experiment presets.
    Presets {
        /// Print the configuration of one preset instead.
        #[arg(long, value_name = "NAME")]
        show: Option<String>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::DegenerateBasis(_) => 3,
        Error::Construction(_) => 1,
        _ => 2,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.12e}"))
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, out } => {
            let output = run_file(&config, out.as_deref())?;
            let r = &output.report;
            println!("experiment {} ({:?} protocol, {} fields)", r.name, r.sweep.protocol, r.sweep.fields.len());
            println!("  e0              {}", fmt_opt(r.summary.e0));
            println!("  e1              {}", fmt_opt(r.summary.e1));
            println!("  e2              {}", fmt_opt(r.summary.e2));
            println!("  dipole          {}", fmt_opt(r.summary.dipole));
            println!("  polarizability  {}", fmt_opt(r.summary.polarizability));
            println!("  {}", r.summary.verdict);
            for file in &output.files {
                println!("wrote {}", file.display());
            }
        }
        Command::Compare { a, b } => print!("{}", compare_files(&a, &b)?),
        Command::Presets { show: Some(name) } => {
            let p = preset(&name).ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                Error::Validation(vec![format!("unknown preset {name}; available: {}", names.join(", "))])
            })?;
            print!("{}", p.json);
        }
        Command::Presets { show: None } => {
            for p in PRESETS {
                let description = p.config()?.description.unwrap_or_default();
                println!("{:<22}{description}", p.name);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
