//! `gcpress`: train models, code images, and inspect containers.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gcpress_core::Error;

#[derive(Parser, Debug)]
#[command(name = "gcpress", version, about = "Generative extreme image compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write it, its loss log and checkpoints to --out.
    Train(TrainArgs),
    /// Compress a PNG into a .gcx container.
    Encode(EncodeArgs),
    /// Reconstruct a PNG from a .gcx container.
    Decode(DecodeArgs),
    /// Round-trip every PNG in a folder and report file,bpp,psnr,ms_ssim as CSV.
    Eval(EvalArgs),
    /// Decode a latent of uniformly random symbols.
    Sample(SampleArgs),
    /// Print a container's header and bit breakdown as key=value lines.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// key=value config file; built-in desk defaults fill the rest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
    /// key=value overrides applied after the config file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Polygon label map text (selective models only).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// `all`, `none`, or comma-separated `class` / `class:instance` entries.
    #[arg(long)]
    preserve: Option<String>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dir: PathBuf,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the training image size; rounded up to a multiple of s.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical { .. } => 3,
        e if e.is_data_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a.config.as_deref(), &a.out, &a.overrides),
        Command::Encode(a) => commands::encode(&a.model, &a.input, &a.out, a.labels.as_deref(), a.preserve.as_deref()),
        Command::Decode(a) => commands::decode(&a.model, &a.input, &a.out),
        Command::Eval(a) => commands::eval(&a.model, &a.dir, a.out.as_deref()),
        Command::Sample(a) => commands::sample(&a.model, a.seed, &a.out, a.width, a.height),
        Command::Inspect(a) => commands::inspect(&a.input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gcpress: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
