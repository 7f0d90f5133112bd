use clap::{Parser, Subcommand};

mod bench;
mod commands;
mod config;
mod error;
mod synth;

use config::CommonArgs;

#[derive(Debug, Parser)]
#[command(name = "expertseg", version, about = "Joint denoising and segmentation with learned region experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a single self-supervised expert on the whole image.
    Denoise(CommonArgs),
    /// Segment with two frozen experts.
    Segment(CommonArgs),
    /// Alternate expert training and segmentation.
    Joint(CommonArgs),
    /// Sweep noise levels and lambda over a dataset.
    Bench(bench::BenchArgs),
    /// Generate a synthetic phantom with ground truth.
    Synth(synth::SynthArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Denoise(a) => commands::denoise(a),
        Command::Segment(a) => commands::segment(a),
        Command::Joint(a) => commands::joint(a),
        Command::Bench(a) => bench::bench(a),
        Command::Synth(a) => synth::synth(a),
    };
    match result {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.code as i32);
        }
    }
}
