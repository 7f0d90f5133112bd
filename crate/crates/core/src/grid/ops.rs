use super::{BoxRegion, DualField, GridSpec, Image, Mask, ScalarGrid};
use crate::error::{Error, Result};

/// Forward differences with Neumann boundary: the last row of component 1 and
/// the last column of component 2 are zero.
pub fn gradient(u: &impl ScalarGrid, grid: GridSpec) -> Result<DualField> {
    u.check_scalar()?;
    let (h, w) = u.grid_dims();
    let mut field = DualField::zeros(h, w);
    gradient_into(h, w, u.values(), grid.spacing(), &mut field.v1, &mut field.v2);
    Ok(field)
}

pub(crate) fn gradient_into(h: usize, w: usize, u: &[f64], spacing: f64, g1: &mut [f64], g2: &mut [f64]) {
    let inv = 1.0 / spacing;
    for r in 0..h {
        let row = &u[r * w..(r + 1) * w];
        let out1 = &mut g1[r * w..(r + 1) * w];
        if r + 1 < h {
            let next = &u[(r + 1) * w..(r + 2) * w];
            for c in 0..w {
                out1[c] = (next[c] - row[c]) * inv;
            }
        } else {
            out1.fill(0.0);
        }
        let out2 = &mut g2[r * w..(r + 1) * w];
        for c in 0..w - 1 {
            out2[c] = (row[c + 1] - row[c]) * inv;
        }
        out2[w - 1] = 0.0;
    }
}

/// Discrete divergence, the negative adjoint of [`gradient`].
pub fn divergence(v: &DualField, grid: GridSpec) -> Image {
    let (h, w) = v.dims();
    let mut out = vec![0.0; h * w];
    divergence_into(h, w, &v.v1, &v.v2, grid.spacing(), &mut out);
    Image::gray(h, w, out).expect("divergence preserves the grid")
}

pub(crate) fn divergence_into(h: usize, w: usize, v1: &[f64], v2: &[f64], spacing: f64, out: &mut [f64]) {
    let inv = 1.0 / spacing;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let d1 = if h == 1 {
                0.0
            } else if r == 0 {
                v1[i]
            } else if r == h - 1 {
                -v1[i - w]
            } else {
                v1[i] - v1[i - w]
            };
            let d2 = if w == 1 {
                0.0
            } else if c == 0 {
                v2[i]
            } else if c == w - 1 {
                -v2[i - 1]
            } else {
                v2[i] - v2[i - 1]
            };
            out[i] = (d1 + d2) * inv;
        }
    }
}

/// Isotropic total variation, the sum of pointwise gradient magnitudes.
pub fn tv_isotropic(u: &impl ScalarGrid, grid: GridSpec) -> Result<f64> {
    Ok(gradient(u, grid)?.norms().sum())
}

/// Clamp every value into [0,1].
pub fn project_interval(u: &Image) -> Result<Mask> {
    Mask::from_image_clamped(u)
}

/// Pointwise projection onto the Euclidean ball of radius `radius`.
pub fn project_ball_2inf(v: &DualField, radius: f64) -> Result<DualField> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("ball radius must be positive, got {radius}")));
    }
    let mut out = v.clone();
    project_ball_in_place(&mut out.v1, &mut out.v2, radius);
    Ok(out)
}

pub(crate) fn project_ball_in_place(v1: &mut [f64], v2: &mut [f64], radius: f64) {
    for (a, b) in v1.iter_mut().zip(v2.iter_mut()) {
        let n = (*a * *a + *b * *b).sqrt();
        let scale = (n / radius).max(1.0);
        if scale > 1.0 {
            *a /= scale;
            *b /= scale;
        }
    }
}

/// Half-sample symmetric reflection: index -1 maps to 0, n maps to n-1.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Box average of odd width with mirrored borders, applied per channel.
pub fn mean_filter(img: &Image, width: usize) -> Result<Image> {
    if width == 0 || width.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("mean filter width must be odd, got {width}")));
    }
    if width == 1 {
        return Ok(img.clone());
    }
    let planes: Vec<Image> = (0..img.channels()).map(|c| box_plane(&img.channel(c), width)).collect();
    if planes.len() == 1 {
        Ok(planes.into_iter().next().unwrap())
    } else {
        Image::from_channels(&planes)
    }
}

fn box_plane(img: &Image, width: usize) -> Image {
    let (h, w) = img.dims();
    let half = (width / 2) as isize;
    let norm = 1.0 / width as f64;
    let src = img.data();
    let mut horiz = vec![0.0; h * w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..w {
            let mut acc = 0.0;
            for d in -half..=half {
                acc += row[reflect_index(c as isize + d, w)];
            }
            horiz[r * w + c] = acc * norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for d in -half..=half {
            let rr = reflect_index(r as isize + d, h);
            let src_row = &horiz[rr * w..(rr + 1) * w];
            let dst = &mut out[r * w..(r + 1) * w];
            for c in 0..w {
                dst[c] += src_row[c];
            }
        }
        out[r * w..(r + 1) * w].iter_mut().for_each(|v| *v *= norm);
    }
    Image::gray(h, w, out).expect("box filter preserves the grid")
}

/// The four checkerboard sub-images of an even-sized image.
///
/// `row_*` keep every row and half the columns (m x n/2); `col_*` keep every
/// column and half the rows (m/2 x n). The `even` images hold the pixels with
/// even `row + col`, the `odd` images the complementary ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckerboardSplit {
    pub row_even: Image,
    pub row_odd: Image,
    pub col_even: Image,
    pub col_odd: Image,
}

/// Checkerboard downsampling. Odd extents are cropped to even first.
pub fn checkerboard_split(img: &Image) -> Result<CheckerboardSplit> {
    if img.height() < 2 || img.width() < 2 {
        return Err(Error::InvalidArgument("checkerboard split needs at least 2x2 pixels".into()));
    }
    let img = img.crop_to_even();
    let (m, n) = img.dims();
    let ch = img.channels();
    let src = img.data();
    let half_n = n / 2;
    let half_m = m / 2;

    let mut row_even = Vec::with_capacity(m * half_n * ch);
    let mut row_odd = Vec::with_capacity(m * half_n * ch);
    for i in 0..m {
        for j in 0..half_n {
            let ce = 2 * j + i % 2;
            let co = 2 * j + 1 - i % 2;
            row_even.extend_from_slice(&src[(i * n + ce) * ch..(i * n + ce + 1) * ch]);
            row_odd.extend_from_slice(&src[(i * n + co) * ch..(i * n + co + 1) * ch]);
        }
    }
    let mut col_even = Vec::with_capacity(half_m * n * ch);
    let mut col_odd = Vec::with_capacity(half_m * n * ch);
    for i in 0..half_m {
        for j in 0..n {
            let re = 2 * i + j % 2;
            let ro = 2 * i + 1 - j % 2;
            col_even.extend_from_slice(&src[(re * n + j) * ch..(re * n + j + 1) * ch]);
            col_odd.extend_from_slice(&src[(ro * n + j) * ch..(ro * n + j + 1) * ch]);
        }
    }
    Ok(CheckerboardSplit {
        row_even: Image::new(m, half_n, ch, row_even)?,
        row_odd: Image::new(m, half_n, ch, row_odd)?,
        col_even: Image::new(half_m, n, ch, col_even)?,
        col_odd: Image::new(half_m, n, ch, col_odd)?,
    })
}

/// Inverse of the row-compacted split: interleave `row_even` and `row_odd`
/// back into the full m x n grid.
pub fn checkerboard_merge(row_even: &Image, row_odd: &Image) -> Result<Image> {
    row_even.require_same_grid(row_odd, "checkerboard halves")?;
    let (m, half_n) = row_even.dims();
    let ch = row_even.channels();
    let n = 2 * half_n;
    let mut out = vec![0.0; m * n * ch];
    for i in 0..m {
        for j in 0..half_n {
            let ce = 2 * j + i % 2;
            let co = 2 * j + 1 - i % 2;
            let s = (i * half_n + j) * ch;
            out[(i * n + ce) * ch..(i * n + ce + 1) * ch].copy_from_slice(&row_even.data()[s..s + ch]);
            out[(i * n + co) * ch..(i * n + co + 1) * ch].copy_from_slice(&row_odd.data()[s..s + ch]);
        }
    }
    Image::new(m, n, ch, out)
}

/// Binary indicator of an axis-aligned box.
pub fn rasterize_box(height: usize, width: usize, b: BoxRegion) -> Result<Mask> {
    if b.w == 0 || b.h == 0 {
        return Err(Error::BoxOutOfBounds(format!("box {b} has zero area")));
    }
    if b.x >= width {
        return Err(Error::BoxOutOfBounds(format!("x = {} exceeds grid width {width}", b.x)));
    }
    if b.y >= height {
        return Err(Error::BoxOutOfBounds(format!("y = {} exceeds grid height {height}", b.y)));
    }
    if b.x + b.w > width {
        return Err(Error::BoxOutOfBounds(format!("x + w = {} exceeds grid width {width}", b.x + b.w)));
    }
    if b.y + b.h > height {
        return Err(Error::BoxOutOfBounds(format!("y + h = {} exceeds grid height {height}", b.y + b.h)));
    }
    Ok(Mask::from_predicate(height, width, |r, c| r >= b.y && r < b.y + b.h && c >= b.x && c < b.x + b.w))
}
