//! Gaussian noise and synthetic ground-truth phantoms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::rng::{stream_rng, streams};

/// How a noise level maps to a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScale {
    /// `sigma = level / 255`.
    #[default]
    Absolute,
    /// `sigma = level / 255 * max(img)`.
    ImageMax,
}

/// Additive i.i.d. Gaussian noise, not clipped.
pub fn add_gaussian_noise(img: &Image, level: f64, seed: u64) -> Result<Image> {
    add_gaussian_noise_scaled(img, level, seed, NoiseScale::Absolute)
}

pub fn add_gaussian_noise_scaled(img: &Image, level: f64, seed: u64, scale: NoiseScale) -> Result<Image> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be nonnegative, got {level}")));
    }
    if level == 0.0 {
        return Ok(img.clone());
    }
    let sigma = match scale {
        NoiseScale::Absolute => level / 255.0,
        NoiseScale::ImageMax => level / 255.0 * img.min_max().1,
    };
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = stream_rng(seed, streams::NOISE);
    let mut out = img.clone();
    for v in out.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    /// Horizontal stripes inside a centered disk, vertical stripes outside.
    Stripes,
    /// Bright disk on a dark background.
    Disk,
    /// Two oriented textures with equal region means.
    TexturePair,
    /// Smooth ramps with a shaded disk, for denoising checks.
    PiecewiseSmooth,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 4] =
        [PhantomKind::Stripes, PhantomKind::Disk, PhantomKind::TexturePair, PhantomKind::PiecewiseSmooth];
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::Stripes => "stripes",
            PhantomKind::Disk => "disk",
            PhantomKind::TexturePair => "texture-pair",
            PhantomKind::PiecewiseSmooth => "piecewise-smooth",
        })
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhantomKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown phantom kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomParams {
    /// Radius of the foreground disk in pixels; `None` means 0.3 * size.
    pub radius: Option<f64>,
    /// Stripe or texture period in pixels.
    pub period: f64,
    /// Background and foreground levels of the disk phantom.
    pub low: f64,
    pub high: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self { radius: None, period: 8.0, low: 0.2, high: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub kind: PhantomKind,
    pub size: usize,
    pub params: PhantomParams,
    pub seed: u64,
    pub image: Image,
    /// Foreground ground truth.
    pub mask: Mask,
}

pub const DEFAULT_SIZE: usize = 256;
pub const MIN_SIZE: usize = 64;

fn disk_mask(size: usize, radius: f64) -> Mask {
    let c = (size as f64 - 1.0) / 2.0;
    Mask::from_predicate(size, size, |r, col| {
        let (dy, dx) = (r as f64 - c, col as f64 - c);
        dx * dx + dy * dy <= radius * radius
    })
}

/// Deterministic in `(kind, size, params, seed)`.
pub fn gen_phantom(kind: PhantomKind, size: usize, params: &PhantomParams, seed: u64) -> Result<Phantom> {
    if size < MIN_SIZE {
        return Err(Error::InvalidArgument(format!("phantom size must be at least {MIN_SIZE}, got {size}")));
    }
    let radius = params.radius.unwrap_or(0.3 * size as f64);
    if !(radius > 0.0) || !(params.period > 0.0) {
        return Err(Error::InvalidArgument("phantom radius and period must be positive".into()));
    }
    let mask = disk_mask(size, radius);
    let mut rng = stream_rng(seed, streams::PHANTOM);
    let k = 2.0 * PI / params.period;
    let image = match kind {
        PhantomKind::Disk => {
            Image::from_fn(size, size, |r, c| if mask.at(r, c) > 0.5 { params.high } else { params.low })
        }
        PhantomKind::Stripes => {
            let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
            Image::from_fn(size, size, |r, c| {
                if mask.at(r, c) > 0.5 {
                    0.5 + 0.4 * (k * r as f64 + p1).sin()
                } else {
                    0.5 + 0.4 * (k * c as f64 + p2).sin()
                }
            })
        }
        PhantomKind::TexturePair => texture_pair(size, &mask, params.period, &mut rng),
        PhantomKind::PiecewiseSmooth => {
            let n = size as f64;
            let c = (n - 1.0) / 2.0;
            Image::from_fn(size, size, |r, col| {
                let (y, x) = (r as f64, col as f64);
                if mask.at(r, col) > 0.5 {
                    let d2 = ((x - c).powi(2) + (y - c).powi(2)) / (radius * radius);
                    0.85 - 0.25 * d2
                } else if y > 0.8 * n && x < 0.5 * n {
                    0.55
                } else {
                    0.15 + 0.3 * x / n + 0.1 * (PI * y / n).sin()
                }
            })
        }
    };
    Ok(Phantom { kind, size, params: *params, seed, image, mask })
}

/// A horizontal grating in the foreground and a vertical grating of 1.5x
/// period in the background, each with a faint cross modulation, then shifted
/// so that both region means equal 0.5.
fn texture_pair(size: usize, mask: &Mask, period: f64, rng: &mut impl Rng) -> Image {
    let k1 = 2.0 * PI / period;
    let k2 = 2.0 * PI / (1.5 * period);
    let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let (q1, q2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let mut img = Image::from_fn(size, size, |r, c| {
        let (y, x) = (r as f64, c as f64);
        if mask.at(r, c) > 0.5 {
            0.5 + 0.3 * (k1 * y + p1).sin() + 0.05 * (0.11 * x + q1).sin()
        } else {
            0.5 + 0.3 * (k2 * x + p2).sin() + 0.05 * (0.13 * y + q2).sin()
        }
    });
    let (mut sum_in, mut n_in, mut sum_out, mut n_out) = (0.0, 0.0, 0.0, 0.0);
    for (v, m) in img.data().iter().zip(mask.data()) {
        if *m > 0.5 {
            sum_in += v;
            n_in += 1.0;
        } else {
            sum_out += v;
            n_out += 1.0;
        }
    }
    let (shift_in, shift_out) = (0.5 - sum_in / n_in, 0.5 - sum_out / n_out);
    for (v, m) in img.data_mut().iter_mut().zip(mask.data()) {
        *v += if *m > 0.5 { shift_in } else { shift_out };
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gradient, GridSpec};
    use crate::metrics::psnr;

    #[test]
    fn zero_noise_is_identity() {
        let img = Image::filled(8, 8, 0.3);
        assert_eq!(add_gaussian_noise(&img, 0.0, 1).unwrap(), img);
    }

    #[test]
    fn noise_std_matches_level() {
        let img = Image::filled(256, 256, 0.5);
        let noisy = add_gaussian_noise(&img, 30.0, 7).unwrap();
        let n = noisy.len() as f64;
        let mean = noisy.data().iter().sum::<f64>() / n;
        let var = noisy.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want = 30.0 / 255.0;
        assert!((var.sqrt() - want).abs() <= 0.03 * want);
    }

    #[test]
    fn noise_is_seeded() {
        let img = Image::filled(16, 16, 0.5);
        assert_eq!(add_gaussian_noise(&img, 10.0, 3).unwrap(), add_gaussian_noise(&img, 10.0, 3).unwrap());
        assert_ne!(add_gaussian_noise(&img, 10.0, 3).unwrap(), add_gaussian_noise(&img, 10.0, 4).unwrap());
        let scaled = add_gaussian_noise_scaled(&img, 10.0, 3, NoiseScale::ImageMax).unwrap();
        let plain = add_gaussian_noise(&img, 10.0, 3).unwrap();
        for ((s, p), c) in scaled.data().iter().zip(plain.data()).zip(img.data()) {
            assert!(((s - c) - 0.5 * (p - c)).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let ph = gen_phantom(PhantomKind::Disk, 64, &PhantomParams::default(), 0).unwrap();
        let mut last = f64::INFINITY;
        for level in [10.0, 30.0, 50.0] {
            let p = psnr(&add_gaussian_noise(&ph.image, level, 11).unwrap(), &ph.image).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn disk_area_matches_analytic() {
        let params = PhantomParams { radius: Some(20.0), ..PhantomParams::default() };
        let ph = gen_phantom(PhantomKind::Disk, 64, &params, 0).unwrap();
        let area = ph.mask.sum();
        let analytic = PI * 400.0;
        // within one boundary ring of width one pixel
        assert!((area - analytic).abs() <= 2.0 * PI * 20.0, "{area} vs {analytic}");
        assert!(ph.image.data().iter().all(|&v| v == 0.2 || v == 0.9));
    }

    #[test]
    fn texture_means_equalized() {
        let ph = gen_phantom(PhantomKind::TexturePair, 96, &PhantomParams::default(), 5).unwrap();
        let (mut a, mut na, mut b, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for (v, m) in ph.image.data().iter().zip(ph.mask.data()) {
            if *m > 0.5 {
                a += v;
                na += 1.0;
            } else {
                b += v;
                nb += 1.0;
            }
        }
        assert!((a / na - b / nb).abs() < 1e-6);
    }

    #[test]
    fn stripes_orientation_differs_by_region() {
        let ph = gen_phantom(PhantomKind::Stripes, 128, &PhantomParams::default(), 2).unwrap();
        let g = gradient(&ph.image, GridSpec::default()).unwrap();
        let (mut rows_in, mut cols_in, mut rows_out, mut cols_out) = (0.0, 0.0, 0.0, 0.0);
        // stay away from the region boundary, where both components jump
        let inner = crate::grid::Mask::from_predicate(128, 128, |r, c| {
            let (dy, dx) = (r as f64 - 63.5, c as f64 - 63.5);
            (dx * dx + dy * dy).sqrt() < 0.3 * 128.0 - 2.0
        });
        let outer = crate::grid::Mask::from_predicate(128, 128, |r, c| {
            let (dy, dx) = (r as f64 - 63.5, c as f64 - 63.5);
            (dx * dx + dy * dy).sqrt() > 0.3 * 128.0 + 2.0
        });
        for i in 0..128 * 128 {
            if inner.data()[i] > 0.5 {
                rows_in += g.v1[i].abs();
                cols_in += g.v2[i].abs();
            }
            if outer.data()[i] > 0.5 {
                rows_out += g.v1[i].abs();
                cols_out += g.v2[i].abs();
            }
        }
        assert!(rows_in > 10.0 * cols_in);
        assert!(cols_out > 10.0 * rows_out);
    }

    #[test]
    fn generators_are_pure() {
        for kind in PhantomKind::ALL {
            let a = gen_phantom(kind, 64, &PhantomParams::default(), 9).unwrap();
            let b = gen_phantom(kind, 64, &PhantomParams::default(), 9).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.mask.dims(), a.image.dims());
            assert_eq!(kind.to_string().parse::<PhantomKind>().unwrap(), kind);
        }
        assert!("plaid".parse::<PhantomKind>().is_err());
        assert!(gen_phantom(PhantomKind::Disk, 32, &PhantomParams::default(), 0).is_err());
    }
}
