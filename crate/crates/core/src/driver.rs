//! Alternating minimization: train the experts on the current regions, solve
//! the segmentation subproblem with the experts fixed, repeat.

use std::time::Instant;

use crate::error::{shape_err, Error, Result};
use crate::experts::{train_expert, Expert, ExpertKind, TrainConfig, TrainedExpert};
use crate::grid::{rasterize_box, BoxRegion, Image, Mask};
use crate::metrics::dice;
use crate::rng::{stream_rng, streams};
use crate::segmentation::{solve_pd, threshold, EnergyModel, PdConfig};

/// Foreground mass fractions outside this band count as a collapsed mask.
pub const DEGENERATE_BAND: (f64, f64) = (0.001, 0.999);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Denoise the whole image with a fresh expert and threshold the result.
    ThresholdDenoised,
    /// Foreground and background boxes.
    Boxes,
    /// A caller-supplied mask.
    GivenMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub mode: InitMode,
    pub threshold: f64,
    pub fg_box: Option<BoxRegion>,
    pub bg_box: Option<BoxRegion>,
    pub mask: Option<Mask>,
}

impl InitSpec {
    pub fn threshold_denoised(threshold: f64) -> Self {
        Self { mode: InitMode::ThresholdDenoised, threshold, fg_box: None, bg_box: None, mask: None }
    }

    pub fn boxes(fg: BoxRegion, bg: BoxRegion) -> Self {
        Self { mode: InitMode::Boxes, threshold: 0.5, fg_box: Some(fg), bg_box: Some(bg), mask: None }
    }

    pub fn given(mask: Mask) -> Self {
        Self { mode: InitMode::GivenMask, threshold: 0.5, fg_box: None, bg_box: None, mask: Some(mask) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub lambda: f64,
    pub expert_fg: ExpertKind,
    pub expert_bg: ExpertKind,
    pub train: TrainConfig,
    pub pd: PdConfig,
    /// Stop when the energy decrease falls below this fraction of the
    /// previous decrease.
    pub stop_ratio: f64,
    pub max_outer: usize,
    /// Weight of the proximal reference term; only the accelerated loop uses it.
    pub mu: f64,
    pub mean_width: Option<usize>,
    pub seed: u64,
    /// Use these experts as they are instead of training.
    pub frozen: Option<(Expert, Expert)>,
    /// Reject a segmentation step that would raise the energy.
    pub monotone_guard: bool,
    /// Ground truth for the Dice column of the reports.
    pub ground_truth: Option<Mask>,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            expert_fg: ExpertKind::LinearFilter { kernel: 15 },
            expert_bg: ExpertKind::LinearFilter { kernel: 15 },
            train: TrainConfig::default(),
            pd: PdConfig::default(),
            stop_ratio: 0.15,
            max_outer: 6,
            mu: 0.0,
            mean_width: None,
            seed: 0,
            frozen: None,
            monotone_guard: true,
            ground_truth: None,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.stop_ratio > 0.0 && self.stop_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!("stop ratio must lie in (0,1), got {}", self.stop_ratio)));
        }
        if self.max_outer == 0 {
            return Err(Error::InvalidArgument("at least one outer iteration is needed".into()));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be nonnegative, got {}", self.mu)));
        }
        if let Some(w) = self.mean_width {
            if w % 2 == 0 {
                return Err(Error::InvalidArgument(format!("mean filter width must be odd, got {w}")));
            }
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    /// Outer round, starting at 1.
    pub k: usize,
    /// Relaxed energy after this round's segmentation step.
    pub energy: f64,
    pub fg_epochs: usize,
    pub bg_epochs: usize,
    pub seg_iterations: usize,
    pub seg_converged: bool,
    /// `|u^k - u^(k-1)|_2`.
    pub mask_change: f64,
    /// False when the monotone guard kept the previous mask.
    pub accepted: bool,
    pub dice: Option<f64>,
    pub seconds: f64,
}

/// CSV of the reports. Wall-clock time is left out so that reruns produce
/// identical files.
pub fn reports_csv(reports: &[IterationReport]) -> String {
    let mut s = String::from("k,energy,fg_epochs,bg_epochs,seg_iterations,seg_converged,mask_change,accepted,dice\n");
    for r in reports {
        let dice = r.dice.map_or(String::new(), |d| format!("{d:.6}"));
        s.push_str(&format!(
            "{},{:.10e},{},{},{},{},{:.6e},{},{}\n",
            r.k, r.energy, r.fg_epochs, r.bg_epochs, r.seg_iterations, r.seg_converged, r.mask_change, r.accepted, dice
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    /// Final relaxed mask.
    pub mask: Mask,
    pub fg: TrainedExpert,
    pub bg: TrainedExpert,
    pub composed: Image,
    /// `E^0, E^1, ...`; `E^0` is the initial mask under the first experts.
    pub energies: Vec<f64>,
    pub reports: Vec<IterationReport>,
    /// Set when the foreground collapsed or filled the image.
    pub degenerate: bool,
    /// Set when the energy-decrease rule ended the loop.
    pub stopped_early: bool,
}

impl JointOutcome {
    pub fn hard_mask(&self) -> Mask {
        threshold(&self.mask, 0.5).expect("0.5 is a valid threshold")
    }
}

/// Initial foreground and background training regions.
pub fn initialize(f: &Image, spec: &InitSpec, cfg: &JointConfig) -> Result<(Mask, Mask)> {
    let f = scalar_view(f);
    let (h, w) = f.dims();
    match spec.mode {
        InitMode::ThresholdDenoised => {
            if !(spec.threshold > 0.0 && spec.threshold < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "init threshold must lie in (0,1), got {}",
                    spec.threshold
                )));
            }
            let smooth = if cfg.expert_fg.is_trainable() {
                let expert = Expert::new(cfg.expert_fg, &mut stream_rng(cfg.seed, streams::INIT_EXPERT))?;
                train_expert(expert, &f, &Mask::ones(h, w), &cfg.train)?.output
            } else {
                f.clone()
            };
            let u = Mask::from_predicate(h, w, |r, c| smooth.at(r, c) > spec.threshold);
            let ub = u.complement();
            Ok((u, ub))
        }
        InitMode::Boxes => {
            let (fg, bg) = match (spec.fg_box, spec.bg_box) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::InvalidArgument("box initialization needs both boxes".into())),
            };
            if fg.overlaps(&bg) {
                return Err(Error::OverlappingBoxes);
            }
            Ok((rasterize_box(h, w, fg)?, rasterize_box(h, w, bg)?))
        }
        InitMode::GivenMask => {
            let m =
                spec.mask.as_ref().ok_or_else(|| Error::InvalidArgument("mask initialization needs a mask".into()))?;
            m.require_grid((h, w), "initial mask")?;
            Ok((m.clone(), m.complement()))
        }
    }
}

/// Stop when the last step did not decrease the energy, or decreased it by
/// less than `p` times the step before.
pub fn stop_check(energies: &[f64], p: f64) -> bool {
    let n = energies.len();
    if n < 2 {
        return false;
    }
    let (prev, last) = (energies[n - 2], energies[n - 1]);
    if last >= prev {
        return true;
    }
    if n < 3 {
        return false;
    }
    let before = energies[n - 3];
    (prev - last) < p * (before - prev)
}

/// `u * d_f + (1 - u) * d_b`, per channel.
pub fn compose_denoised(u: &Mask, d_f: &Image, d_b: &Image) -> Result<Image> {
    if d_f.dims() != d_b.dims() || d_f.channels() != d_b.channels() {
        return Err(shape_err("background output", d_b.dims(), d_f.dims()));
    }
    u.require_grid(d_f.dims(), "blend mask")?;
    let ch = d_f.channels();
    let data = d_f
        .data()
        .iter()
        .zip(d_b.data())
        .enumerate()
        .map(|(i, (a, b))| {
            let m = u.data()[i / ch];
            m * a + (1.0 - m) * b
        })
        .collect();
    Image::new(d_f.height(), d_f.width(), ch, data)
}

fn scalar_view(f: &Image) -> Image {
    if f.channels() > 1 {
        f.luma()
    } else {
        f.clone()
    }
}

fn mass_fraction(u: &Mask) -> f64 {
    u.sum() / u.len() as f64
}

fn is_degenerate(u: &Mask) -> bool {
    let m = mass_fraction(u);
    m < DEGENERATE_BAND.0 || m > DEGENERATE_BAND.1
}

fn l2_change(a: &Mask, b: &Mask) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct ExpertPair {
    fg: Expert,
    bg: Expert,
    frozen: bool,
}

impl ExpertPair {
    fn new(cfg: &JointConfig) -> Result<Self> {
        match &cfg.frozen {
            Some((fg, bg)) => Ok(Self { fg: fg.clone(), bg: bg.clone(), frozen: true }),
            None => Ok(Self {
                fg: Expert::new(cfg.expert_fg, &mut stream_rng(cfg.seed, streams::FOREGROUND_EXPERT))?,
                bg: Expert::new(cfg.expert_bg, &mut stream_rng(cfg.seed, streams::BACKGROUND_EXPERT))?,
                frozen: false,
            }),
        }
    }

    /// Train (or just apply, when frozen) both experts on their regions. The
    /// trained parameters carry over to the next round.
    fn update(&mut self, f: &Image, u: &Mask, ub: &Mask, cfg: &TrainConfig) -> Result<(TrainedExpert, TrainedExpert)> {
        let fit = |e: &Expert, region: &Mask| -> Result<TrainedExpert> {
            if self.frozen {
                Ok(TrainedExpert {
                    expert: e.clone(),
                    output: e.denoise(f)?,
                    trace: crate::experts::TrainingTrace {
                        epochs: Vec::new(),
                        stop: crate::experts::StopReason::ClosedForm,
                    },
                })
            } else {
                train_expert(e.clone(), f, region, cfg)
            }
        };
        let fg = fit(&self.fg, u)?;
        let bg = fit(&self.bg, ub)?;
        self.fg = fg.expert.clone();
        self.bg = bg.expert.clone();
        Ok((fg, bg))
    }
}

/// Per-channel outputs for colour inputs: each final expert is refined on
/// every channel with the final regions.
fn channel_outputs(f: &Image, u: &Mask, experts: &ExpertPair, cfg: &TrainConfig) -> Result<(Image, Image)> {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let ub = u.complement();
    for c in 0..f.channels() {
        let plane = f.channel(c);
        if experts.frozen {
            fg.push(experts.fg.denoise(&plane)?);
            bg.push(experts.bg.denoise(&plane)?);
        } else {
            fg.push(train_expert(experts.fg.clone(), &plane, u, cfg)?.output);
            bg.push(train_expert(experts.bg.clone(), &plane, &ub, cfg)?.output);
        }
    }
    Ok((Image::from_channels(&fg)?, Image::from_channels(&bg)?))
}

fn dice_against(u: &Mask, truth: Option<&Mask>) -> Result<Option<f64>> {
    truth.map(|t| dice(&threshold(u, 0.5)?, t)).transpose()
}

enum Variant {
    Plain,
    Accelerated,
}

/// Alternate expert training and segmentation until the energy-decrease rule
/// fires, the mask degenerates, or `max_outer` rounds have run.
pub fn run_joint(f: &Image, spec: &InitSpec, cfg: &JointConfig) -> Result<JointOutcome> {
    run(f, spec, cfg, Variant::Plain)
}

/// As [`run_joint`], but every segmentation step is pulled towards the
/// previous mask by `mu/2 |u - u_R|^2` and the loop always runs `max_outer`
/// rounds.
pub fn run_joint_accelerated(f: &Image, spec: &InitSpec, cfg: &JointConfig) -> Result<JointOutcome> {
    if !(cfg.mu > 0.0) {
        return Err(Error::InvalidArgument("the accelerated loop needs mu > 0".into()));
    }
    run(f, spec, cfg, Variant::Accelerated)
}

fn run(f: &Image, spec: &InitSpec, cfg: &JointConfig, variant: Variant) -> Result<JointOutcome> {
    cfg.validate()?;
    let fs = scalar_view(f);
    if let Some(t) = &cfg.ground_truth {
        t.require_grid(fs.dims(), "ground truth")?;
    }
    let (mut u, mut ub) = initialize(f, spec, cfg)?;
    if is_degenerate(&u) || is_degenerate(&ub.complement()) {
        return Err(Error::InvalidArgument(format!(
            "initial regions are degenerate (foreground mass {:.4})",
            mass_fraction(&u)
        )));
    }
    let mut experts = ExpertPair::new(cfg)?;
    let mut energies = Vec::new();
    let mut reports = Vec::new();
    let mut degenerate = false;
    let mut stopped_early = false;
    let mut last = None;

    for k in 1..=cfg.max_outer {
        let start = Instant::now();
        let (fg, bg) = experts.update(&fs, &u, &ub, &cfg.train)?;
        let model = EnergyModel::new(&fs, &fg.output, &bg.output, cfg.lambda, cfg.mean_width)?.with_grid(cfg.pd.grid);
        let current = model.relaxed(&u)?;
        if k == 1 {
            energies.push(current);
        }
        let mut pd = PdConfig { initial: Some(u.clone()), energy_offset: model.background_total(), ..cfg.pd.clone() };
        if let Variant::Accelerated = variant {
            pd.mu = cfg.mu;
            pd.reference = Some(u.clone());
        } else {
            pd.mu = 0.0;
            pd.reference = None;
        }
        let outcome = solve_pd(&model.fidelity(), cfg.lambda, &pd)?;
        let candidate_energy = model.relaxed(&outcome.mask)?;
        let accepted = !matches!(variant, Variant::Plain) || !cfg.monotone_guard || candidate_energy <= current;
        let (next, energy) = if accepted { (outcome.mask, candidate_energy) } else { (u.clone(), current) };
        if !energy.is_finite() {
            return Err(Error::Divergence(format!("energy at outer round {k}")));
        }
        let mask_change = l2_change(&next, &u);
        u = next;
        ub = u.complement();
        energies.push(energy);
        reports.push(IterationReport {
            k,
            energy,
            fg_epochs: fg.trace.len(),
            bg_epochs: bg.trace.len(),
            seg_iterations: outcome.iterations,
            seg_converged: outcome.converged,
            mask_change,
            accepted,
            dice: dice_against(&u, cfg.ground_truth.as_ref())?,
            seconds: start.elapsed().as_secs_f64(),
        });
        last = Some((fg, bg));
        if is_degenerate(&u) {
            degenerate = true;
            break;
        }
        if matches!(variant, Variant::Plain) && stop_check(&energies, cfg.stop_ratio) {
            stopped_early = true;
            break;
        }
    }

    let (fg, bg) = last.expect("at least one outer round runs");
    let composed = if f.channels() > 1 && !degenerate {
        let (df, db) = channel_outputs(f, &u, &experts, &cfg.train)?;
        compose_denoised(&u, &df, &db)?
    } else {
        compose_denoised(&u, &fg.output, &bg.output)?
    };
    Ok(JointOutcome { mask: u, fg, bg, composed, energies, reports, degenerate, stopped_early })
}
