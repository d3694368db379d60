use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use labp::runner::{exit_code, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "labp", version, about = "Per-mode resolvent and dispersive-flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a JSON config.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run { config, out, threads, resolution } = cli.command;
    let outcome = ExperimentConfig::load(&config).and_then(|mut c| {
        if let Some(o) = out {
            c.out_dir = o;
        }
        if threads.is_some() {
            c.threads = threads;
        }
        if let Some(r) = resolution {
            c.resolution = r;
        }
        run_experiment(&c)
    });
    match &outcome {
        Ok(s) => {
            println!("wrote {} rows to {}", s.rows, s.csv_path.display());
            println!("manifest: {}", s.manifest_path.display());
            if s.warnings > 0 {
                eprintln!("{} flagged rows", s.warnings);
            }
            for f in &s.failures {
                eprintln!("failed tuple {f}");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&outcome) as u8)
}
