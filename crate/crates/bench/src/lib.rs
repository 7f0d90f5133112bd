//! Shared fixtures for the benchmarks.

use expertseg::experts::fit_constant;
use expertseg::segmentation::fidelity_map;
use expertseg::synth::{add_gaussian_noise, gen_phantom, PhantomKind, PhantomParams};
use expertseg::{FidelityMap, Image};

/// Noisy phantom of the given kind and size, fixed seed.
pub fn noisy_phantom(kind: PhantomKind, size: usize, level: f64) -> (Image, expertseg::Mask) {
    let ph = gen_phantom(kind, size, &PhantomParams::default(), 0).expect("valid phantom");
    (add_gaussian_noise(&ph.image, level, 0).expect("valid noise"), ph.mask)
}

/// Fidelity map of a noisy disk with constant experts fitted on the true regions.
pub fn disk_fidelity(size: usize) -> FidelityMap {
    let (f, mask) = noisy_phantom(PhantomKind::Disk, size, 30.0);
    let d_f = fit_constant(&f, &mask).unwrap().denoise(&f).unwrap();
    let d_b = fit_constant(&f, &mask.complement()).unwrap().denoise(&f).unwrap();
    fidelity_map(&f, &d_f, &d_b, None).unwrap()
}
