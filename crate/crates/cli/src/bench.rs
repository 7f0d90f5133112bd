//! Noise-level by lambda sweeps over a directory of images with ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::Serialize;

use expertseg::metrics::{dice, psnr, ssim};
use expertseg::rng::split_seed;
use expertseg::segmentation::threshold;
use expertseg::synth::add_gaussian_noise;
use expertseg::{run_joint, run_joint_accelerated, Image, JointConfig, Mask};

use crate::commands::{read_input, write_manifest};
use crate::config::{read_mask, CommonArgs, RunConfig};
use crate::error::{CliError, ExitCode};

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory of clean images.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory of ground-truth masks, matched to images by file stem.
    #[arg(long)]
    pub gt: PathBuf,
    /// Comma-separated noise levels on the 0-255 scale.
    #[arg(long, default_value = "10,30,50")]
    pub noise: String,
    /// Number of lambda values, evenly spaced as (i+1)/n for i < n.
    #[arg(long, default_value_t = 10)]
    pub lambda_grid: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Row {
    image: String,
    noise: String,
    lambda: String,
    dice: f64,
    psnr: f64,
    ssim: f64,
    seconds: f64,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::new(ExitCode::BadInput, format!("cannot list {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file() && p.extension().and_then(|x| x.to_str()).is_some_and(|x| matches!(x, "png" | "pgm" | "pnm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn lambda_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i + 1) as f64 / n as f64).collect()
}

fn parse_levels(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::usage(format!("bad noise level '{t}'"))))
        .collect()
}

fn evaluate_cell(
    clean: &Image,
    truth: &Mask,
    noisy: &Image,
    cfg: &RunConfig,
    joint: &JointConfig,
) -> Result<(f64, f64, f64), CliError> {
    let spec = cfg.init_spec()?;
    let out =
        if joint.mu > 0.0 { run_joint_accelerated(noisy, &spec, joint)? } else { run_joint(noisy, &spec, joint)? };
    let hard = threshold(&out.mask, 0.5)?;
    Ok((dice(&hard, truth)?, psnr(&out.composed, clean)?, ssim(&out.composed, clean)?))
}

fn write_csv(path: &Path, rows: &[Row]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::new(ExitCode::Failure, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::new(ExitCode::Failure, e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<String, CliError> {
    let cfg = RunConfig::resolve("bench", &args.common)?;
    let levels = parse_levels(&args.noise)?;
    if args.lambda_grid == 0 {
        return Err(CliError::usage("--lambda-grid must be positive"));
    }
    let base = cfg.joint_config()?;
    let gt_files: BTreeMap<String, PathBuf> = image_files(&args.gt)?.into_iter().map(|p| (stem(&p), p)).collect();
    let mut pairs = Vec::new();
    for img in image_files(&args.dataset)? {
        match gt_files.get(&stem(&img)) {
            Some(gt) => pairs.push((img.clone(), gt.clone())),
            None => eprintln!("skipping {}: no ground truth with the same stem", img.display()),
        }
    }
    if pairs.is_empty() {
        return Err(CliError::new(ExitCode::Failure, "no image/ground-truth pairs found"));
    }
    let mut manifest = cfg.to_toml();
    manifest.push_str(&format!(
        "\n[bench]\ndataset = {:?}\ngt = {:?}\nnoise = {:?}\nlambda_grid = {}\n",
        args.dataset.display().to_string(),
        args.gt.display().to_string(),
        args.noise,
        args.lambda_grid
    ));
    write_manifest(&cfg.out_dir, &manifest)?;

    let grid = lambda_grid(args.lambda_grid);
    let mut evaluations = Vec::new();
    let mut best_rows = Vec::new();
    let mut counter = 0u64;
    for (img_path, gt_path) in &pairs {
        let clean = read_input(img_path)?;
        let truth = threshold(&read_mask(gt_path)?, 0.5)?;
        if truth.dims() != clean.dims() {
            eprintln!("skipping {}: ground truth has a different size", img_path.display());
            continue;
        }
        let name = stem(img_path);
        for &level in &levels {
            let noise_seed = split_seed(cfg.seed, counter);
            counter += 1;
            let noisy = add_gaussian_noise(&clean, level, noise_seed)?;
            let mut best: Option<Row> = None;
            for &lambda in &grid {
                let joint = JointConfig { lambda, seed: split_seed(cfg.seed, counter), ..base.clone() };
                counter += 1;
                let start = Instant::now();
                let (d, p, s) = match evaluate_cell(&clean, &truth, &noisy, &cfg, &joint) {
                    Ok(v) => v,
                    Err(e) => {
                        eprintln!("{name} noise {level} lambda {lambda}: {e}");
                        continue;
                    }
                };
                let row = Row {
                    image: name.clone(),
                    noise: level.to_string(),
                    lambda: lambda.to_string(),
                    dice: d,
                    psnr: p,
                    ssim: s,
                    seconds: start.elapsed().as_secs_f64(),
                };
                if best.as_ref().is_none_or(|b| row.dice > b.dice) {
                    best = Some(row.clone());
                }
                evaluations.push(row);
            }
            best_rows.extend(best);
        }
    }
    if best_rows.is_empty() {
        return Err(CliError::new(ExitCode::Failure, "every evaluation failed"));
    }
    let n = best_rows.len() as f64;
    let mean = |f: fn(&Row) -> f64| best_rows.iter().map(f).sum::<f64>() / n;
    let aggregate = Row {
        image: "mean".into(),
        noise: "all".into(),
        lambda: String::new(),
        dice: mean(|r| r.dice),
        psnr: mean(|r| r.psnr),
        ssim: mean(|r| r.ssim),
        seconds: mean(|r| r.seconds),
    };
    let mut results = best_rows.clone();
    results.push(aggregate.clone());
    write_csv(&cfg.out_dir.join("evaluations.csv"), &evaluations)?;
    write_csv(&cfg.out_dir.join("results.csv"), &results)?;
    Ok(format!(
        "bench: {} evaluations, {} best rows, mean dice {:.4} -> {}",
        evaluations.len(),
        best_rows.len(),
        aggregate.dice,
        cfg.out_dir.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_evenly_spaced_in_unit_interval() {
        let g = lambda_grid(10);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[9], 1.0);
        assert!(g.windows(2).all(|w| (w[1] - w[0] - 0.1).abs() < 1e-12));
    }

    #[test]
    fn levels_parse() {
        assert_eq!(parse_levels("10, 30,50").unwrap(), vec![10.0, 30.0, 50.0]);
        assert!(parse_levels("10,x").is_err());
    }
}
