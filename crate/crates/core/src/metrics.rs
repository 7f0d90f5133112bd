//! Segmentation and image quality metrics.

use crate::error::{shape_err, Error, Result};
use crate::grid::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Absent when no ground-truth mask was supplied.
    pub dice: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
}

/// `2|A n B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    b.require_grid(a.dims(), "dice operand")?;
    if !a.is_binary() || !b.is_binary() {
        return Err(Error::InvalidArgument("dice needs binary masks".into()));
    }
    let inter: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let total = a.sum() + b.sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter / total)
}

fn mse(x: &Image, reference: &Image) -> Result<f64> {
    if x.dims() != reference.dims() || x.channels() != reference.channels() {
        return Err(shape_err("metric operand", x.dims(), reference.dims()));
    }
    let n = x.len() as f64;
    Ok(x.data().iter().zip(reference.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio in dB for a peak value of 1. Identical images
/// give `f64::INFINITY`.
pub fn psnr(x: &Image, reference: &Image) -> Result<f64> {
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filtering over fully contained windows only.
fn filter_valid(data: &[f64], h: usize, w: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        let row = &data[r * w..(r + 1) * w];
        for c in 0..ow {
            tmp[r * ow + c] = win.iter().zip(&row[c..c + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for (t, wv) in win.iter().enumerate() {
            let src = &tmp[(r + t) * ow..(r + t + 1) * ow];
            for (o, s) in out[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                *o += wv * s;
            }
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity with an 11x11 Gaussian window (std 1.5) on the
/// [0,1] range. RGB inputs are compared on luma; images smaller than the
/// window use the largest odd window that fits.
pub fn ssim(x: &Image, reference: &Image) -> Result<f64> {
    if x.dims() != reference.dims() || x.channels() != reference.channels() {
        return Err(shape_err("ssim operand", x.dims(), reference.dims()));
    }
    let (x, y) = if x.channels() > 1 { (x.luma(), reference.luma()) } else { (x.clone(), reference.clone()) };
    let (h, w) = x.dims();
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let win = gaussian_window(size, SSIM_SIGMA);
    let xs = x.data();
    let ys = y.data();
    let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a * b).collect();
    let (mx, _, _) = filter_valid(xs, h, w, &win);
    let (my, _, _) = filter_valid(ys, h, w, &win);
    let (sxx, _, _) = filter_valid(&xx, h, w, &win);
    let (syy, _, _) = filter_valid(&yy, h, w, &win);
    let (sxy, oh, ow) = filter_valid(&xy, h, w, &win);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (a, b) = (mx[i], my[i]);
        let va = sxx[i] - a * a;
        let vb = syy[i] - b * b;
        let cov = sxy[i] - a * b;
        total += ((2.0 * a * b + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((a * a + b * b + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / (oh * ow) as f64)
}

/// PSNR and SSIM of `x` against `clean`, plus Dice of `mask` against `truth`
/// when both are given.
pub fn evaluate(x: &Image, clean: &Image, segmentation: Option<(&Mask, &Mask)>) -> Result<MetricReport> {
    let dice = match segmentation {
        Some((m, t)) => Some(dice(m, t)?),
        None => None,
    };
    Ok(MetricReport { dice, psnr: psnr(x, clean)?, ssim: ssim(x, clean)? })
}
