//! Synthetic phantoms with ground truth.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use expertseg::io::{write_binary_mask, write_png, BitDepth};
use expertseg::synth::{add_gaussian_noise_scaled, gen_phantom, NoiseScale, PhantomKind, PhantomParams, DEFAULT_SIZE};

use crate::commands::write_manifest;
use crate::error::{CliError, ExitCode};

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// stripes, disk, texture-pair or piecewise-smooth.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    pub size: usize,
    /// Noise level on the 0-255 scale.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Scale the noise by the image maximum instead of the unit range.
    #[arg(long)]
    pub relative_noise: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Foreground disk radius in pixels.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Stripe or texture period in pixels.
    #[arg(long)]
    pub period: Option<f64>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    kind: String,
    size: usize,
    seed: u64,
    noise: f64,
    noise_scale: &'a str,
    radius: f64,
    period: f64,
    foreground_fraction: f64,
}

pub fn synth(args: &SynthArgs) -> Result<String, CliError> {
    let kind: PhantomKind =
        args.kind.parse().map_err(|e: expertseg::Error| CliError::new(ExitCode::BadInput, e.to_string()))?;
    let mut params = PhantomParams { radius: args.radius, ..PhantomParams::default() };
    if let Some(p) = args.period {
        params.period = p;
    }
    let scale = if args.relative_noise { NoiseScale::ImageMax } else { NoiseScale::Absolute };
    let manifest = format!(
        "command = \"synth\"\nkind = \"{kind}\"\nsize = {}\nnoise = {:?}\nrelative_noise = {}\nseed = {}\nout_dir = {:?}\nperiod = {:?}\n{}",
        args.size,
        args.noise,
        args.relative_noise,
        args.seed,
        args.out_dir.display().to_string(),
        params.period,
        args.radius.map_or(String::new(), |r| format!("radius = {r:?}\n")),
    );
    let phantom = gen_phantom(kind, args.size, &params, args.seed)?;
    write_manifest(&args.out_dir, &manifest)?;
    let dir = &args.out_dir;
    write_png(&phantom.image, dir.join("clean.png"), BitDepth::Sixteen)?;
    write_binary_mask(&phantom.mask, dir.join("mask.png"))?;
    let noisy = add_gaussian_noise_scaled(&phantom.image, args.noise, args.seed, scale)?;
    write_png(&noisy, dir.join("noisy.png"), BitDepth::Sixteen)?;
    let sidecar = Sidecar {
        kind: kind.to_string(),
        size: args.size,
        seed: args.seed,
        noise: args.noise,
        noise_scale: if args.relative_noise { "image-max" } else { "absolute" },
        radius: params.radius.unwrap_or(0.3 * args.size as f64),
        period: params.period,
        foreground_fraction: phantom.mask.coverage(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(dir.join("synth.json"), json + "\n")?;
    Ok(format!("synth: {kind} {0}x{0}, noise {1} -> {2}", args.size, args.noise, dir.display()))
}
