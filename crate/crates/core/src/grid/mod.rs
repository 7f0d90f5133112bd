//! Pixel grids and the discrete operators defined on them.
//!
//! All grids are row-major. The first index (row) is the vertical axis and the
//! second index (column) the horizontal one; `gradient` component 1 differences
//! along rows, component 2 along columns.

mod ops;

pub use ops::{
    checkerboard_merge, checkerboard_split, divergence, gradient, mean_filter, project_ball_2inf, project_interval,
    rasterize_box, tv_isotropic, CheckerboardSplit,
};
pub(crate) use ops::{divergence_into, gradient_into, reflect_index};

use crate::error::{shape_err, Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Grid spacing used by the differential operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    h: f64,
}

impl GridSpec {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {h}")));
        }
        Ok(Self { h })
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { h: 1.0 }
    }
}

/// A real-valued image with one or three interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!("{} values for a {height}x{width}x{channels} image", data.len())));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Single-channel image from row-major values.
    pub fn gray(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(height, width, 1, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self { height, width, channels: 1, data: vec![value; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, channels: 1, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value at (row, col) of a single-channel image.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.channels, 1);
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert_eq!(self.channels, 1);
        self.data[row * self.width + col] = value;
    }

    pub fn require_single_channel(&self) -> Result<()> {
        if self.channels == 1 {
            Ok(())
        } else {
            Err(Error::MultiChannel(self.channels))
        }
    }

    pub fn require_same_grid(&self, other: &Image, what: &str) -> Result<()> {
        if self.dims() != other.dims() || self.channels != other.channels {
            return Err(shape_err(what, self.dims(), other.dims()));
        }
        Ok(())
    }

    /// Extract channel `c` as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels);
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image { height: self.height, width: self.width, channels: 1, data }
    }

    /// Interleave single-channel planes into one image.
    pub fn from_channels(planes: &[Image]) -> Result<Image> {
        let first = planes.first().ok_or_else(|| Error::InvalidArgument("no channels given".into()))?;
        for p in planes {
            p.require_single_channel()?;
            first.require_same_grid(p, "channel planes")?;
        }
        let n = first.data.len();
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            for p in planes {
                data.push(p.data[i]);
            }
        }
        Image::new(first.height, first.width, planes.len(), data)
    }

    /// BT.601 luma of an RGB image; single-channel images are returned as is.
    pub fn luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
            .collect();
        Image { height: self.height, width: self.width, channels: 1, data }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Map intensities into [0,1]. Images already inside the range are left
    /// untouched; anything else is rescaled affinely from its own min/max.
    pub fn normalize(&mut self) {
        let (lo, hi) = self.min_max();
        if lo >= 0.0 && hi <= 1.0 {
            return;
        }
        if hi - lo <= f64::EPSILON {
            self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            return;
        }
        let scale = 1.0 / (hi - lo);
        for v in &mut self.data {
            *v = ((*v - lo) * scale).clamp(0.0, 1.0);
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.require_same_grid(other, "zip_map")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Image { data, ..self.clone() })
    }

    /// Drop the trailing row/column so both extents are even.
    pub fn crop_to_even(&self) -> Image {
        let h = self.height & !1;
        let w = self.width & !1;
        if h == self.height && w == self.width {
            return self.clone();
        }
        assert!(h > 0 && w > 0, "cannot crop a 1-pixel extent to even size");
        let ch = self.channels;
        let mut data = Vec::with_capacity(h * w * ch);
        for r in 0..h {
            let start = r * self.width * ch;
            data.extend_from_slice(&self.data[start..start + w * ch]);
        }
        Image { height: h, width: w, channels: ch, data }
    }
}

/// A relaxed segmentation function with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("mask dimensions must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!("{} values for a {height}x{width} mask", data.len())));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("mask value {bad} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Caller guarantees every value lies in [0,1].
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0)
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

    /// Binary mask from a predicate.
    pub fn from_predicate(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(if f(r, c) { 1.0 } else { 0.0 });
            }
        }
        Self { height, width, data }
    }

    /// Clamp arbitrary values of a single-channel image into a mask.
    pub fn from_image_clamped(img: &Image) -> Result<Self> {
        img.require_single_channel()?;
        let data = img.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self { height: img.height(), width: img.width(), data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Fraction of the grid covered, counting soft values fractionally.
    pub fn coverage(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn complement(&self) -> Mask {
        Mask { data: self.data.iter().map(|v| 1.0 - v).collect(), ..self.clone() }
    }

    pub fn to_image(&self) -> Image {
        Image { height: self.height, width: self.width, channels: 1, data: self.data.clone() }
    }

    pub fn require_grid(&self, dims: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(shape_err(what, self.dims(), dims));
        }
        Ok(())
    }
}

/// Two-component per-pixel field, the dual variable of the TV term.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    pub height: usize,
    pub width: usize,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

impl DualField {
    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        Self { height, width, v1: vec![0.0; n], v2: vec![0.0; n] }
    }

    pub fn new(height: usize, width: usize, v1: Vec<f64>, v2: Vec<f64>) -> Result<Self> {
        if v1.len() != height * width || v2.len() != height * width {
            return Err(Error::Shape(format!("dual components must hold {} values", height * width)));
        }
        Ok(Self { height, width, v1, v2 })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Pointwise Euclidean norms.
    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.v1.iter().zip(&self.v2).map(|(a, b)| (a * a + b * b).sqrt())
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().fold(0.0, f64::max)
    }

    pub fn dot(&self, other: &DualField) -> f64 {
        let a: f64 = self.v1.iter().zip(&other.v1).map(|(x, y)| x * y).sum();
        let b: f64 = self.v2.iter().zip(&other.v2).map(|(x, y)| x * y).sum();
        a + b
    }
}

/// Anything with a single-channel scalar value per pixel.
pub trait ScalarGrid {
    fn grid_dims(&self) -> (usize, usize);
    fn values(&self) -> &[f64];
    fn check_scalar(&self) -> Result<()>;
}

impl ScalarGrid for Image {
    fn grid_dims(&self) -> (usize, usize) {
        self.dims()
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
    fn check_scalar(&self) -> Result<()> {
        self.require_single_channel()
    }
}

impl ScalarGrid for Mask {
    fn grid_dims(&self) -> (usize, usize) {
        self.dims()
    }
    fn values(&self) -> &[f64] {
        &self.data
    }
    fn check_scalar(&self) -> Result<()> {
        Ok(())
    }
}

/// Axis-aligned box: `x` is the column and `y` the row of the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxRegion {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoxRegion {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn overlaps(&self, other: &BoxRegion) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

impl std::str::FromStr for BoxRegion {
    type Err = Error;

    /// Parses `x,y,w,h`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("box '{s}': {e}")))?;
        match parts.as_slice() {
            &[x, y, w, h] => Ok(Self { x, y, w, h }),
            _ => Err(Error::InvalidArgument(format!("box '{s}' must be x,y,w,h"))),
        }
    }
}

impl std::fmt::Display for BoxRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}
