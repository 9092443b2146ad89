//! `deepcabac` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "deepcabac",
    version,
    about = "Compress neural network weights with RD quantization and CABAC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize and code every weight tensor of a .dcnw file.
    Encode {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        coding: CodingArgs,
        /// Grid coarseness S.
        #[arg(long = "s", default_value_t = 64)]
        s: u32,
    },
    /// Reconstruct weights from a .dcnb file into a .dcnw file.
    Decode {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Print the headers of a .dcnb file.
    Inspect { input: PathBuf },
    /// Encode once per S and keep the smallest result.
    Sweep {
        input: PathBuf,
        /// Output directory for best.dcnb and sweep.tsv.
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        coding: CodingArgs,
        /// Inclusive S range as A:B.
        #[arg(long = "s-range", default_value = "0:256", value_parser = parse_range)]
        s_range: (u32, u32),
    },
}

#[derive(Args, Clone, Copy)]
struct CodingArgs {
    /// Lagrange multiplier between distortion and bits.
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    /// Number of greater-than flags before the fixed-length remainder.
    #[arg(long = "n-flags", default_value_t = 4)]
    n_flags: u8,
    /// Context model adaptation shift (1..=14).
    #[arg(long = "adapt-shift", default_value_t = 4)]
    adapt_shift: u8,
    /// Candidate indices on each side of the nearest grid point.
    #[arg(long = "search-halfwidth", default_value_t = 2)]
    search_halfwidth: u32,
    /// Weight all errors equally even when sigma entries are present.
    #[arg(long = "uniform-eta")]
    uniform_eta: bool,
    /// Smallest-deviation stand-in for layers without sigma (default w_max/1024).
    #[arg(long = "grid-floor")]
    grid_floor: Option<f64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B")?;
    let a: u32 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: u32 = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode {
            input,
            output,
            coding,
            s,
        } => commands::encode(&input, &output, coding.options(s)),
        Command::Decode { input, output } => commands::decode(&input, &output),
        Command::Inspect { input } => commands::inspect(&input),
        Command::Sweep {
            input,
            output,
            coding,
            s_range,
        } => commands::sweep(&input, &output, coding.options(0), s_range),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("deepcabac: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
