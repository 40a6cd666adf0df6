use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use interlace_lab::error::CliError;
use interlace_lab::oracle::{green_table, write_table};
use interlace_lab::{parse_config, run, Overrides};

#[derive(Parser)]
#[command(name = "interlace-lab", version, about = "Random interlacement occupation-time experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (overrides `threads`).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config and print the resolved parameters.
    Validate { config: PathBuf },
    /// Regenerate reference tables.
    Oracle {
        #[command(subcommand)]
        which: Oracle,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// Golden Green values for offsets up to `extent`, as CSV.
    Green {
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 5)]
        extent: u32,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, out, seed, threads } => {
            let mut cfg = parse_config(&config)?;
            if threads == Some(0) {
                return Err(CliError::Validation(vec!["--threads must be at least 1".into()]));
            }
            cfg.apply(&Overrides { seed, threads, out });
            let manifest = run(&cfg)?;
            for f in &manifest.files {
                println!("{}  {}", f.sha256, cfg.out.join(&f.name).display());
            }
            println!("summary: {}", manifest.summary);
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = parse_config(&config)?;
            println!("{}", serde_json::to_string_pretty(&cfg.echo).unwrap_or_default());
            if !cfg.defaulted.is_empty() {
                println!("defaulted: {}", cfg.defaulted.join(", "));
            }
            Ok(())
        }
        Command::Oracle { which: Oracle::Green { d, tol, extent, out } } => {
            let table = green_table(d, extent, tol)?;
            match out {
                Some(path) => fs::write(&path, table.to_bytes()?).map_err(|e| CliError::io(path, e)),
                None => write_table(&table, &mut std::io::stdout().lock()),
            }
        }
    }
}
