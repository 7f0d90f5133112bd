//! Resolved run configuration: defaults, then the config file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use expertseg::experts::ExpertKind;
use expertseg::segmentation::StepRule;
use expertseg::{BoxRegion, InitSpec, JointConfig, Mask, PdConfig, TrainConfig};

use crate::error::{CliError, ExitCode};

/// Every knob of a run. Serialized verbatim into the run manifest, and
/// loadable again with `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub lambda: f64,
    pub mu: f64,
    /// `threshold`, `boxes` or `mask`.
    pub init: String,
    pub init_threshold: f64,
    pub init_mask: Option<PathBuf>,
    pub fg_box: Option<String>,
    pub bg_box: Option<String>,
    pub expert_fg: String,
    pub expert_bg: String,
    pub fg_model: Option<PathBuf>,
    pub bg_model: Option<PathBuf>,
    pub mean_filter: Option<usize>,
    pub max_outer: usize,
    pub stop_ratio: f64,
    pub ground_truth: Option<PathBuf>,
    pub learning_rate: f64,
    pub patience: usize,
    pub window: usize,
    pub max_epochs: usize,
    pub pd_max_iter: usize,
    pub pd_tol: f64,
    /// `printed` or `sqrt`.
    pub step_rule: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let pd = PdConfig::default();
        let joint = JointConfig::default();
        Self {
            command: None,
            input: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            lambda: joint.lambda,
            mu: 0.0,
            init: "threshold".into(),
            init_threshold: 0.5,
            init_mask: None,
            fg_box: None,
            bg_box: None,
            expert_fg: joint.expert_fg.to_string(),
            expert_bg: joint.expert_bg.to_string(),
            fg_model: None,
            bg_model: None,
            mean_filter: None,
            max_outer: joint.max_outer,
            stop_ratio: joint.stop_ratio,
            ground_truth: None,
            learning_rate: train.learning_rate,
            patience: train.patience,
            window: train.window,
            max_epochs: train.max_epochs,
            pd_max_iter: pd.max_iter,
            pd_tol: pd.tol,
            step_rule: "printed".into(),
        }
    }
}

/// Flags shared by `denoise`, `segment`, `joint` and `bench`. Each one, when
/// given, overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Declarative TOML file with any of the keys below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Weight of the reference-mask term; > 0 selects the accelerated loop.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Initialization: threshold, boxes or mask.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub init_threshold: Option<f64>,
    #[arg(long)]
    pub init_mask: Option<PathBuf>,
    /// Foreground box as x,y,w,h.
    #[arg(long)]
    pub fg_box: Option<String>,
    /// Background box as x,y,w,h.
    #[arg(long)]
    pub bg_box: Option<String>,
    /// constant, linear[:K] or cnn[:WIDTH].
    #[arg(long)]
    pub expert_fg: Option<String>,
    #[arg(long)]
    pub expert_bg: Option<String>,
    /// Load and freeze a foreground expert (blob with a .desc sidecar).
    #[arg(long)]
    pub fg_model: Option<PathBuf>,
    #[arg(long)]
    pub bg_model: Option<PathBuf>,
    /// Odd width of the mean filter applied to the residuals.
    #[arg(long)]
    pub mean_filter: Option<usize>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub stop_ratio: Option<f64>,
    /// Binary ground-truth mask for Dice reporting.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub pd_max_iter: Option<usize>,
    #[arg(long)]
    pub pd_tol: Option<f64>,
    /// Accelerated step rule: printed or sqrt.
    #[arg(long)]
    pub step_rule: Option<String>,
}

macro_rules! override_fields {
    ($cfg:ident, $args:ident; $($field:ident),*; $($opt:ident),*) => {
        $(if let Some(v) = &$args.$field { $cfg.$field = v.clone(); })*
        $(if $args.$opt.is_some() { $cfg.$opt = $args.$opt.clone(); })*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(ExitCode::BadInput, format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::new(ExitCode::BadInput, format!("invalid config {}: {e}", path.display())))
    }

    pub fn resolve(command: &str, args: &CommonArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        override_fields!(cfg, args;
            out_dir, seed, lambda, mu, init, init_threshold, expert_fg, expert_bg, max_outer, stop_ratio,
            learning_rate, patience, window, max_epochs, pd_max_iter, pd_tol, step_rule;
            input, init_mask, fg_box, bg_box, fg_model, bg_model, mean_filter, ground_truth);
        cfg.command = Some(command.to_string());
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input.as_deref().ok_or_else(|| CliError::new(ExitCode::BadInput, "--input is required"))
    }

    pub fn expert_kinds(&self) -> Result<(ExpertKind, ExpertKind), CliError> {
        let parse = |s: &str| s.parse::<ExpertKind>().map_err(|e| CliError::new(ExitCode::BadInput, e.to_string()));
        Ok((parse(&self.expert_fg)?, parse(&self.expert_bg)?))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            patience: self.patience,
            window: self.window,
            tolerance: TrainConfig::default().tolerance,
            max_epochs: self.max_epochs,
        }
    }

    pub fn pd_config(&self) -> Result<PdConfig, CliError> {
        let step_rule = match self.step_rule.as_str() {
            "printed" => StepRule::AsPrinted,
            "sqrt" => StepRule::SquareRoot,
            other => return Err(CliError::usage(format!("unknown step rule '{other}'"))),
        };
        Ok(PdConfig { max_iter: self.pd_max_iter, tol: self.pd_tol, step_rule, ..PdConfig::default() })
    }

    pub fn joint_config(&self) -> Result<JointConfig, CliError> {
        let (expert_fg, expert_bg) = self.expert_kinds()?;
        Ok(JointConfig {
            lambda: self.lambda,
            expert_fg,
            expert_bg,
            train: self.train_config(),
            pd: self.pd_config()?,
            stop_ratio: self.stop_ratio,
            max_outer: self.max_outer,
            mu: self.mu,
            mean_width: self.mean_filter,
            seed: self.seed,
            ..JointConfig::default()
        })
    }

    pub fn init_spec(&self) -> Result<InitSpec, CliError> {
        let parse_box = |s: &Option<String>, which: &str| -> Result<BoxRegion, CliError> {
            let s = s
                .as_deref()
                .ok_or_else(|| CliError::new(ExitCode::InvalidBoxes, format!("--{which}-box is required")))?;
            s.parse().map_err(|e: expertseg::Error| CliError::new(ExitCode::InvalidBoxes, e.to_string()))
        };
        match self.init.as_str() {
            "threshold" => Ok(InitSpec::threshold_denoised(self.init_threshold)),
            "boxes" => Ok(InitSpec::boxes(parse_box(&self.fg_box, "fg")?, parse_box(&self.bg_box, "bg")?)),
            "mask" => {
                let p = self.init_mask.as_ref().ok_or_else(|| CliError::usage("--init mask needs --init-mask"))?;
                Ok(InitSpec::given(read_mask(p)?))
            }
            other => Err(CliError::usage(format!("unknown init mode '{other}'"))),
        }
    }
}

pub fn read_mask(path: &Path) -> Result<Mask, CliError> {
    expertseg::io::read_mask(path)
        .map_err(|e| CliError::new(ExitCode::BadInput, format!("cannot read mask {}: {e}", path.display())))
}
