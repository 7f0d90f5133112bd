//! `denoise`, `segment` and `joint`.

use std::path::{Path, PathBuf};

use expertseg::driver::reports_csv;
use expertseg::experts::train_expert;
use expertseg::io::{read_image, write_binary_mask, write_png, BitDepth};
use expertseg::rng::{stream_rng, streams};
use expertseg::segmentation::{fidelity_map, solve_pd};
use expertseg::{initialize, run_joint, run_joint_accelerated, Expert, Image, InitMode, Mask, PdConfig};

use crate::config::{read_mask, CommonArgs, RunConfig};
use crate::error::{CliError, ExitCode};

/// Runs write their manifest before any artifact.
pub fn write_manifest(out_dir: &Path, body: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("manifest.toml"), body)?;
    Ok(())
}

pub fn read_input(path: &Path) -> Result<Image, CliError> {
    read_image(path).map_err(|e| CliError::new(ExitCode::BadInput, format!("cannot read {}: {e}", path.display())))
}

/// Grayscale images as 16-bit PNG, colour ones as 8-bit RGB.
pub fn save_image(img: &Image, path: &Path) -> Result<(), CliError> {
    let depth = if img.channels() == 1 { BitDepth::Sixteen } else { BitDepth::Eight };
    write_png(img, path, depth)?;
    Ok(())
}

fn save_soft_mask(u: &Mask, path: &Path) -> Result<(), CliError> {
    write_png(&u.to_image(), path, BitDepth::Sixteen)?;
    Ok(())
}

fn load_expert(path: &Path) -> Result<Expert, CliError> {
    Expert::load(path)
        .map_err(|e| CliError::new(ExitCode::BadInput, format!("cannot load expert {}: {e}", path.display())))
}

fn frozen_experts(cfg: &RunConfig) -> Result<Option<(Expert, Expert)>, CliError> {
    match (&cfg.fg_model, &cfg.bg_model) {
        (Some(a), Some(b)) => Ok(Some((load_expert(a)?, load_expert(b)?))),
        (None, None) => Ok(None),
        _ => Err(CliError::usage("--fg-model and --bg-model must be given together")),
    }
}

fn scalar(f: &Image) -> Image {
    if f.channels() > 1 {
        f.luma()
    } else {
        f.clone()
    }
}

pub fn denoise(args: &CommonArgs) -> Result<String, CliError> {
    let cfg = RunConfig::resolve("denoise", args)?;
    let f = read_input(cfg.input()?)?;
    let (kind, _) = cfg.expert_kinds()?;
    write_manifest(&cfg.out_dir, &cfg.to_toml())?;
    let fresh = Expert::new(kind, &mut stream_rng(cfg.seed, streams::INIT_EXPERT))?;
    let train = cfg.train_config();
    let mut planes = Vec::new();
    let mut trace = String::from("channel,epoch,train_loss,validation,best_validation\n");
    let mut epochs = 0;
    let mut last = None;
    for c in 0..f.channels() {
        let plane = f.channel(c);
        let trained = train_expert(fresh.clone(), &plane, &Mask::ones(f.height(), f.width()), &train)?;
        for e in &trained.trace.epochs {
            trace.push_str(&format!("{c},{},{:e},{:e},{:e}\n", e.epoch, e.train_loss, e.validation, e.best_validation));
        }
        epochs += trained.trace.len();
        planes.push(trained.output);
        last = Some(trained.expert);
    }
    let out = Image::from_channels(&planes)?;
    let path = cfg.out_dir.join("denoised.png");
    save_image(&out, &path)?;
    std::fs::write(cfg.out_dir.join("trace.csv"), trace)?;
    if f.channels() == 1 {
        last.expect("one channel trained").save(cfg.out_dir.join("expert.bin"))?;
    }
    Ok(format!("denoise: {kind} expert, {epochs} epochs -> {}", path.display()))
}

pub fn segment(args: &CommonArgs) -> Result<String, CliError> {
    let cfg = RunConfig::resolve("segment", args)?;
    let f = read_input(cfg.input()?)?;
    let (fg, bg) = frozen_experts(&cfg)?.ok_or_else(|| CliError::usage("segment needs --fg-model and --bg-model"))?;
    let spec = cfg.init_spec()?;
    let joint = cfg.joint_config()?;
    write_manifest(&cfg.out_dir, &cfg.to_toml())?;
    let fs = scalar(&f);
    let fid = fidelity_map(&fs, &fg.denoise(&fs)?, &bg.denoise(&fs)?, cfg.mean_filter)?;
    let initial = match spec.mode {
        InitMode::ThresholdDenoised => None,
        _ => Some(initialize(&f, &spec, &joint)?.0),
    };
    let pd = PdConfig { initial, record_trace: true, ..cfg.pd_config()? };
    let out = solve_pd(&fid, cfg.lambda, &pd)?;
    write_binary_mask(&out.mask, cfg.out_dir.join("mask.png"))?;
    save_soft_mask(&out.mask, &cfg.out_dir.join("soft_mask.png"))?;
    std::fs::write(cfg.out_dir.join("pd_trace.csv"), out.trace_csv())?;
    Ok(format!(
        "segment: {} iterations ({}), foreground {:.4} -> {}",
        out.iterations,
        if out.converged { "converged" } else { "iteration cap" },
        out.mask.coverage(),
        cfg.out_dir.display()
    ))
}

pub fn joint(args: &CommonArgs) -> Result<String, CliError> {
    let cfg = RunConfig::resolve("joint", args)?;
    let f = read_input(cfg.input()?)?;
    let mut joint = cfg.joint_config()?;
    joint.frozen = frozen_experts(&cfg)?;
    if let Some(p) = &cfg.ground_truth {
        joint.ground_truth = Some(expertseg::segmentation::threshold(&read_mask(p)?, 0.5)?);
    }
    let spec = cfg.init_spec()?;
    write_manifest(&cfg.out_dir, &cfg.to_toml())?;
    let out = if cfg.mu > 0.0 { run_joint_accelerated(&f, &spec, &joint)? } else { run_joint(&f, &spec, &joint)? };
    for r in &out.reports {
        eprintln!("round {}: energy {:.6e}, {:.2} s", r.k, r.energy, r.seconds);
    }
    let dir: &PathBuf = &cfg.out_dir;
    write_binary_mask(&out.mask, dir.join("mask.png"))?;
    save_soft_mask(&out.mask, &dir.join("soft_mask.png"))?;
    save_image(&out.composed, &dir.join("denoised.png"))?;
    save_image(&out.fg.output, &dir.join("fg_output.png"))?;
    save_image(&out.bg.output, &dir.join("bg_output.png"))?;
    std::fs::write(dir.join("reports.csv"), reports_csv(&out.reports))?;
    out.fg.expert.save(dir.join("fg_expert.bin"))?;
    out.bg.expert.save(dir.join("bg_expert.bin"))?;
    let last = out.reports.last().expect("at least one round");
    if out.degenerate {
        return Err(CliError::new(
            ExitCode::DegenerateMask,
            format!("foreground degenerated to coverage {:.4} in round {}", out.mask.coverage(), last.k),
        ));
    }
    let dice = last.dice.map_or(String::new(), |d| format!(", dice {d:.4}"));
    Ok(format!(
        "joint: {} rounds, energy {:.6e}, foreground {:.4}{dice} -> {}",
        out.reports.len(),
        last.energy,
        out.mask.coverage(),
        dir.display()
    ))
}
