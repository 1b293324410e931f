mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crowding_core::{Error, ErrorKind};

/// Learning from crowds with generative annotation augmentation.
#[derive(Debug, Parser)]
#[command(name = "crowding", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` config file; absent keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic crowd dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method and save its best-validation checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "crowding")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a saved checkpoint on each labeled split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Methods by annotation-removal fraction by seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ablation variants by seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete the annotation grid of the training instances with
    /// generated labels.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print every config key with its default value.
    Keys,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Internal => 1,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("CROWDING_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CROWDING_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Synth { common, out } => commands::synth(common.config.as_deref(), common.seed, &out),
        Command::Train {
            common,
            data,
            method,
            out,
        } => commands::train(&data, common.config.as_deref(), common.seed, &method, &out),
        Command::Eval { checkpoint, data, out } => commands::eval(&checkpoint, &data, out.as_deref()),
        Command::Sweep { common, data, out } => commands::sweep(&data, common.config.as_deref(), common.seed, &out),
        Command::Ablate { common, data, out } => commands::ablate(&data, common.config.as_deref(), common.seed, &out),
        Command::Augment {
            data,
            checkpoint,
            out,
            seed,
        } => commands::augment(&data, &checkpoint, &out, seed),
        Command::Keys => {
            print!("{}", commands::key_reference());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
