use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gradsq::commands;

#[derive(Parser)]
#[command(
    name = "gradsq",
    version,
    about = "Layer-wise vs entire-model gradient compression experiments"
)]
struct Cli {
    /// Overrides `[run] seed` and `[verify] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the statistical verification suite.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Only checks whose name equals this or starts with it followed by `.`.
        #[arg(long)]
        filter: Option<String>,
        /// Report CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train once and write the metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired layer-wise and entire-model runs plus a summary.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot `grad_norm_sq` from metrics CSVs into an SVG.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn init_threads() -> Result<(), String> {
    if let Ok(v) = std::env::var("GRADSQ_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| format!("GRADSQ_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                commands::EXIT_USAGE
            } else {
                commands::EXIT_OK
            });
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(commands::EXIT_USAGE);
    }
    let seed = cli.seed;
    let result = match &cli.command {
        Command::Verify { config, filter, out } => {
            commands::cmd_verify(config, filter.as_deref(), out.as_deref(), seed)
        }
        Command::Train { config, out } => commands::cmd_train(config, out, seed),
        Command::Compare { config, out } => commands::cmd_compare(config, out, seed),
        Command::Plot { out, inputs } => commands::cmd_plot(out, inputs),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
