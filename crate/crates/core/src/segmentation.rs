//! The convex two-region segmentation subproblem.
//!
//! With both experts fixed, the energy in the relaxed mask `u` is
//! `lambda * TV(u) + sum f~ u + const`, optionally plus `mu/2 |u - u_R|^2`,
//! over `u` in [0,1]. It is minimized with a first-order primal-dual scheme.

use crate::error::{shape_err, Error, Result};
use crate::experts::require_outputs;
use crate::grid::{divergence_into, gradient_into, mean_filter, tv_isotropic, GridSpec, Image, Mask, ScalarGrid};

/// Energy value returned for masks outside [0,1].
pub const INFEASIBLE: f64 = f64::MAX;

/// Per-pixel data term `(f - D_F f)^2 - (f - D_B f)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FidelityMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!("fidelity map {height}x{width} with {} values", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("fidelity value at index {i} is not finite")));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Pointwise minimizer without regularization: 1 where `f~ <= 0`.
    pub fn indicator(&self) -> Mask {
        Mask::from_raw(self.height, self.width, self.data.iter().map(|&v| if v <= 0.0 { 1.0 } else { 0.0 }).collect())
    }
}

/// Squared foreground and background residuals, optionally of mean-filtered
/// differences.
fn squared_residuals(f: &Image, d: &Image, mean_width: Option<usize>) -> Result<Vec<f64>> {
    let diff = f.zip_map(d, |a, b| a - b)?;
    let diff = match mean_width {
        Some(w) => mean_filter(&diff, w)?,
        None => diff,
    };
    Ok(diff.data().iter().map(|r| r * r).collect())
}

pub fn fidelity_map(f: &Image, d_f: &Image, d_b: &Image, mean_width: Option<usize>) -> Result<FidelityMap> {
    require_outputs(f, d_f, d_b)?;
    let rf = squared_residuals(f, d_f, mean_width)?;
    let rb = squared_residuals(f, d_b, mean_width)?;
    FidelityMap::new(f.height(), f.width(), rf.iter().zip(&rb).map(|(a, b)| a - b).collect())
}

/// Everything needed to evaluate the relaxed or binary energy of a mask for
/// fixed expert outputs.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    height: usize,
    width: usize,
    fg: Vec<f64>,
    bg: Vec<f64>,
    lambda: f64,
    grid: GridSpec,
    mu: f64,
    reference: Option<Mask>,
}

impl EnergyModel {
    pub fn new(f: &Image, d_f: &Image, d_b: &Image, lambda: f64, mean_width: Option<usize>) -> Result<Self> {
        require_outputs(f, d_f, d_b)?;
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(Self {
            height: f.height(),
            width: f.width(),
            fg: squared_residuals(f, d_f, mean_width)?,
            bg: squared_residuals(f, d_b, mean_width)?,
            lambda,
            grid: GridSpec::default(),
            mu: 0.0,
            reference: None,
        })
    }

    /// Adds `mu/2 |u - reference|^2`.
    pub fn with_reference(mut self, mu: f64, reference: &Mask) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be nonnegative, got {mu}")));
        }
        reference.require_grid((self.height, self.width), "reference mask")?;
        self.mu = mu;
        self.reference = Some(reference.clone());
        Ok(self)
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = grid;
        self
    }

    pub fn fidelity(&self) -> FidelityMap {
        let data = self.fg.iter().zip(&self.bg).map(|(a, b)| a - b).collect();
        FidelityMap::new(self.height, self.width, data).expect("residuals are finite")
    }

    /// The background residual sum, i.e. the energy of the empty mask minus
    /// regularization.
    pub fn background_total(&self) -> f64 {
        self.bg.iter().sum()
    }

    /// `lambda TV(u) + sum u r_F + sum (1-u) r_B (+ mu/2 |u-u_R|^2)`, or
    /// [`INFEASIBLE`] if some value leaves [0,1].
    pub fn relaxed(&self, u: &impl ScalarGrid) -> Result<f64> {
        u.check_scalar()?;
        if u.grid_dims() != (self.height, self.width) {
            return Err(shape_err("energy mask", u.grid_dims(), (self.height, self.width)));
        }
        let vals = u.values();
        if vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Ok(INFEASIBLE);
        }
        let tv = if self.lambda > 0.0 { self.lambda * tv_isotropic(u, self.grid)? } else { 0.0 };
        let data: f64 = vals.iter().zip(&self.fg).zip(&self.bg).map(|((u, a), b)| u * a + (1.0 - u) * b).sum();
        let prox = match &self.reference {
            Some(r) if self.mu > 0.0 => {
                0.5 * self.mu * vals.iter().zip(r.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            _ => 0.0,
        };
        Ok(tv + data + prox)
    }

    /// Energy of a hard segmentation, perimeter realized as TV of the indicator.
    pub fn binary(&self, mask: &Mask) -> Result<f64> {
        if !mask.is_binary() {
            return Err(Error::InvalidArgument("binary energy needs a {0,1} mask".into()));
        }
        let plain = Self { mu: 0.0, reference: None, ..self.clone() };
        plain.relaxed(mask)
    }
}

pub fn relaxed_energy(
    u: &impl ScalarGrid,
    f: &Image,
    d_f: &Image,
    d_b: &Image,
    lambda: f64,
    mean_width: Option<usize>,
) -> Result<f64> {
    EnergyModel::new(f, d_f, d_b, lambda, mean_width)?.relaxed(u)
}

pub fn binary_energy(mask: &Mask, f: &Image, d_f: &Image, d_b: &Image, lambda: f64) -> Result<f64> {
    EnergyModel::new(f, d_f, d_b, lambda, None)?.binary(mask)
}

/// `clamp((u0 + tau mu u_R - tau f~) / (1 + tau mu))` pointwise.
pub fn prox_data(u0: &Image, tau: f64, fid: &FidelityMap, mu: f64, reference: Option<&Mask>) -> Result<Mask> {
    u0.require_single_channel()?;
    if u0.dims() != fid.dims() {
        return Err(shape_err("prox input", u0.dims(), fid.dims()));
    }
    check_reference(mu, reference, fid.dims())?;
    let mut out = u0.data().to_vec();
    prox_in_place(&mut out, tau, fid.data(), mu, reference.map(|r| r.data()));
    Ok(Mask::from_raw(fid.height, fid.width, out))
}

fn prox_in_place(x: &mut [f64], tau: f64, fid: &[f64], mu: f64, reference: Option<&[f64]>) {
    match reference {
        Some(r) if mu > 0.0 => {
            let scale = 1.0 / (1.0 + tau * mu);
            for ((v, fv), rv) in x.iter_mut().zip(fid).zip(r) {
                *v = ((*v + tau * mu * rv - tau * fv) * scale).clamp(0.0, 1.0);
            }
        }
        _ => {
            for (v, fv) in x.iter_mut().zip(fid) {
                *v = (*v - tau * fv).clamp(0.0, 1.0);
            }
        }
    }
}

fn check_reference(mu: f64, reference: Option<&Mask>, dims: (usize, usize)) -> Result<()> {
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be nonnegative, got {mu}")));
    }
    match (mu > 0.0, reference) {
        (true, Some(r)) => r.require_grid(dims, "reference mask"),
        (false, None) => Ok(()),
        (true, None) => Err(Error::InvalidArgument("mu > 0 needs a reference mask".into())),
        (false, Some(_)) => Err(Error::InvalidArgument("a reference mask needs mu > 0".into())),
    }
}

/// Step-size adaptation used when the problem is strongly convex (`mu > 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepRule {
    /// `theta = 1 / (1 + 2 mu tau)`.
    #[default]
    AsPrinted,
    /// `theta = 1 / sqrt(1 + 2 mu tau)`, the classical accelerated rule.
    SquareRoot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdConfig {
    pub tau: f64,
    pub sigma: f64,
    /// Over-relaxation for `mu == 0`; the accelerated rule overrides it.
    pub eta: f64,
    /// Stop once `|u_new - u|_2 <= tol * sqrt(pixels)`.
    pub tol: f64,
    pub max_iter: usize,
    pub mu: f64,
    /// Present iff `mu > 0`.
    pub reference: Option<Mask>,
    pub step_rule: StepRule,
    /// Starting mask; defaults to the pointwise indicator of `f~ <= 0`.
    pub initial: Option<Mask>,
    pub grid: GridSpec,
    pub record_trace: bool,
    /// Added to the trace energies, e.g. the background residual sum, so they
    /// report the full relaxed energy rather than its `u`-dependent part.
    pub energy_offset: f64,
}

impl Default for PdConfig {
    fn default() -> Self {
        let step = 1.0 / 8f64.sqrt();
        Self {
            tau: step,
            sigma: step,
            eta: 1.0,
            tol: 1e-6,
            max_iter: 5000,
            mu: 0.0,
            reference: None,
            step_rule: StepRule::AsPrinted,
            initial: None,
            grid: GridSpec::default(),
            record_trace: false,
            energy_offset: 0.0,
        }
    }
}

impl PdConfig {
    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        if !(self.tau > 0.0 && self.sigma > 0.0) {
            return Err(Error::InvalidArgument("step sizes must be positive".into()));
        }
        let h = self.grid.spacing();
        if self.tau * self.sigma * 8.0 / (h * h) > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "tau*sigma = {} exceeds the bound {}",
                self.tau * self.sigma,
                h * h / 8.0
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if !(self.eta >= 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidArgument(format!("eta must lie in [0,1], got {}", self.eta)));
        }
        check_reference(self.mu, self.reference.as_ref(), dims)?;
        if let Some(init) = &self.initial {
            init.require_grid(dims, "initial mask")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdTraceRow {
    pub iteration: usize,
    pub residual: f64,
    pub dual_max_norm: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdOutcome {
    pub mask: Mask,
    pub iterations: usize,
    /// False when the iteration cap was hit first.
    pub converged: bool,
    pub trace: Vec<PdTraceRow>,
}

impl PdOutcome {
    /// CSV with header `iteration,residual,dual_max_norm,energy`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,residual,dual_max_norm,energy\n");
        for r in &self.trace {
            s.push_str(&format!("{},{:e},{:e},{:e}\n", r.iteration, r.residual, r.dual_max_norm, r.energy));
        }
        s
    }
}

/// State visible to a [`solve_pd_observed`] callback after each iteration.
#[derive(Debug)]
pub struct PdIterate<'a> {
    pub iteration: usize,
    pub u: &'a [f64],
    pub v1: &'a [f64],
    pub v2: &'a [f64],
    pub tau: f64,
    pub sigma: f64,
}

pub fn solve_pd(fid: &FidelityMap, lambda: f64, cfg: &PdConfig) -> Result<PdOutcome> {
    solve_pd_observed(fid, lambda, cfg, |_| {})
}

/// Primal-dual iterations on `lambda TV(u) + <f~, u> (+ mu/2 |u - u_R|^2)`.
pub fn solve_pd_observed(
    fid: &FidelityMap,
    lambda: f64,
    cfg: &PdConfig,
    mut observe: impl FnMut(&PdIterate),
) -> Result<PdOutcome> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    let (h, w) = fid.dims();
    cfg.validate((h, w))?;
    let n = h * w;
    let spacing = cfg.grid.spacing();
    let f = fid.data();
    let mu = cfg.mu;
    let reference = cfg.reference.as_ref().map(|r| r.data());

    let mut u = match &cfg.initial {
        Some(m) => m.data().to_vec(),
        None => fid.indicator().data().to_vec(),
    };
    let mut u_prev = u.clone();
    let mut ubar = u.clone();
    let mut v1 = vec![0.0; n];
    let mut v2 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    let mut div = vec![0.0; n];
    let (mut tau, mut sigma, mut eta) = (cfg.tau, cfg.sigma, cfg.eta);
    let stop = cfg.tol * (n as f64).sqrt();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=cfg.max_iter {
        iterations = it;
        if lambda > 0.0 {
            gradient_into(h, w, &ubar, spacing, &mut g1, &mut g2);
            for (((a, b), ga), gb) in v1.iter_mut().zip(v2.iter_mut()).zip(&g1).zip(&g2) {
                let x = *a + sigma * ga;
                let y = *b + sigma * gb;
                let scale = ((x * x + y * y).sqrt() / lambda).max(1.0);
                *a = x / scale;
                *b = y / scale;
            }
            divergence_into(h, w, &v1, &v2, spacing, &mut div);
        }
        u_prev.copy_from_slice(&u);
        for (x, d) in u.iter_mut().zip(&div) {
            *x += tau * d;
        }
        prox_in_place(&mut u, tau, f, mu, reference);
        let residual = u.iter().zip(&u_prev).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if !residual.is_finite() {
            return Err(Error::Divergence(format!("primal-dual residual at iteration {it}")));
        }
        if mu > 0.0 {
            let theta = match cfg.step_rule {
                StepRule::AsPrinted => 1.0 / (1.0 + 2.0 * mu * tau),
                StepRule::SquareRoot => 1.0 / (1.0 + 2.0 * mu * tau).sqrt(),
            };
            tau *= theta;
            sigma /= theta;
            eta = theta;
        }
        for ((b, a), p) in ubar.iter_mut().zip(&u).zip(&u_prev) {
            *b = a + eta * (a - p);
        }
        observe(&PdIterate { iteration: it, u: &u, v1: &v1, v2: &v2, tau, sigma });
        if cfg.record_trace {
            let dual_max_norm = v1.iter().zip(&v2).map(|(a, b)| (a * a + b * b).sqrt()).fold(0.0, f64::max);
            trace.push(PdTraceRow {
                iteration: it,
                residual,
                dual_max_norm,
                energy: trace_energy(&u, h, w, f, lambda, cfg, reference),
            });
        }
        if residual <= stop {
            converged = true;
            break;
        }
    }
    Ok(PdOutcome { mask: Mask::from_raw(h, w, u), iterations, converged, trace })
}

fn trace_energy(
    u: &[f64],
    h: usize,
    w: usize,
    f: &[f64],
    lambda: f64,
    cfg: &PdConfig,
    reference: Option<&[f64]>,
) -> f64 {
    let mask = Mask::from_raw(h, w, u.to_vec());
    let tv = if lambda > 0.0 { lambda * tv_isotropic(&mask, cfg.grid).expect("mask is scalar") } else { 0.0 };
    let data: f64 = u.iter().zip(f).map(|(a, b)| a * b).sum();
    let prox = match reference {
        Some(r) if cfg.mu > 0.0 => 0.5 * cfg.mu * u.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
        _ => 0.0,
    };
    tv + data + prox + cfg.energy_offset
}

/// Hard segmentation `{u >= t}`.
pub fn threshold(u: &Mask, t: f64) -> Result<Mask> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0,1], got {t}")));
    }
    Ok(Mask::from_raw(u.height(), u.width(), u.data().iter().map(|&v| if v >= t { 1.0 } else { 0.0 }).collect()))
}
