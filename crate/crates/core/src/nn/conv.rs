use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Upper bound on the im2col scratch buffer, in values.
const COLS_BUDGET: usize = 1 << 20;

/// Same-size 2-D cross-correlation with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// (out channels, in channels, k, k)
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

/// Gradients of one convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub input: Option<Tensor>,
}

impl ConvLayer {
    pub fn new(weight: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        let [o, _, kh, kw] = weight.shape();
        if kh != kw || kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel must be square and odd, got {kh}x{kw}")));
        }
        if let Some(b) = &bias {
            if b.len() != o {
                return Err(Error::Shape(format!("{} biases for {o} output channels", b.len())));
            }
        }
        Ok(Self { weight, bias })
    }

    /// Uniform initialization in +-sqrt(1/fan_in).
    pub fn init(in_ch: usize, out_ch: usize, k: usize, with_bias: bool, rng: &mut impl Rng) -> Result<Self> {
        let fan_in = (in_ch * k * k) as f64;
        let bound = (1.0 / fan_in).sqrt();
        let n = out_ch * in_ch * k * k;
        let w = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = with_bias.then(|| (0..out_ch).map(|_| rng.random_range(-bound..bound)).collect());
        Self::new(Tensor::new([out_ch, in_ch, k, k], w)?, bias)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.shape()[2]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape()[1] != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                x.shape()[1]
            )));
        }
        Ok(())
    }

    fn direct(&self) -> bool {
        self.in_channels() == 1 && self.out_channels() == 1
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        let o = self.out_channels();
        let mut out = Tensor::zeros([n, o, h, w]);
        let plane = h * w;
        for b in 0..n {
            let xb = &x.data()[b * self.in_channels() * plane..(b + 1) * self.in_channels() * plane];
            let ob = &mut out.data_mut()[b * o * plane..(b + 1) * o * plane];
            if self.direct() {
                direct_forward(xb, self.weight.data(), self.kernel_size(), h, w, ob);
            } else {
                self.gemm_forward(xb, h, w, ob);
            }
            if let Some(bias) = &self.bias {
                for (ch, bv) in bias.iter().enumerate() {
                    ob[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        Ok(out)
    }

    /// Gradients given the layer input `x` and the output gradient `dy`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, want_input: bool) -> Result<ConvGrads> {
        self.check_input(x)?;
        let [n, c, h, w] = x.shape();
        let o = self.out_channels();
        if dy.shape() != [n, o, h, w] {
            return Err(Error::Shape(format!("output gradient {:?} for input {:?}", dy.shape(), x.shape())));
        }
        let plane = h * w;
        let mut dw = vec![0.0; self.weight.len()];
        let mut dx = want_input.then(|| Tensor::zeros(x.shape()));
        for b in 0..n {
            let xb = &x.data()[b * c * plane..(b + 1) * c * plane];
            let dyb = &dy.data()[b * o * plane..(b + 1) * o * plane];
            let dxb = dx.as_mut().map(|t| &mut t.data_mut()[b * c * plane..(b + 1) * c * plane]);
            if self.direct() {
                direct_backward(xb, dyb, self.weight.data(), self.kernel_size(), h, w, &mut dw, dxb);
            } else {
                self.gemm_backward(xb, dyb, h, w, &mut dw, dxb);
            }
        }
        let bias = self.bias.as_ref().map(|_| {
            let mut db = vec![0.0; o];
            for b in 0..n {
                for (ch, slot) in db.iter_mut().enumerate() {
                    let start = (b * o + ch) * plane;
                    *slot += dy.data()[start..start + plane].iter().sum::<f64>();
                }
            }
            db
        });
        Ok(ConvGrads { weight: dw, bias, input: dx })
    }

    fn band_rows(&self, w: usize) -> usize {
        let ckk = self.in_channels() * self.kernel_size() * self.kernel_size();
        (COLS_BUDGET / (ckk * w)).max(1)
    }

    fn gemm_forward(&self, x: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let (c, k, o) = (self.in_channels(), self.kernel_size(), self.out_channels());
        let ckk = c * k * k;
        let rows = self.band_rows(w).min(h);
        let mut cols = vec![0.0; ckk * rows * w];
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + rows).min(h);
            let np = (r1 - r0) * w;
            im2col_band(x, c, h, w, k, r0, r1, &mut cols[..ckk * np]);
            // SAFETY: all strides index inside `weight` (o x ckk), `cols`
            // (ckk x np) and the output band (o planes of h*w starting at r0*w).
            unsafe {
                matrixmultiply::dgemm(
                    o,
                    ckk,
                    np,
                    1.0,
                    self.weight.data().as_ptr(),
                    ckk as isize,
                    1,
                    cols.as_ptr(),
                    np as isize,
                    1,
                    0.0,
                    out.as_mut_ptr().add(r0 * w),
                    (h * w) as isize,
                    1,
                );
            }
            r0 = r1;
        }
    }

    fn gemm_backward(&self, x: &[f64], dy: &[f64], h: usize, w: usize, dw: &mut [f64], mut dx: Option<&mut [f64]>) {
        let (c, k, o) = (self.in_channels(), self.kernel_size(), self.out_channels());
        let ckk = c * k * k;
        let rows = self.band_rows(w).min(h);
        let mut cols = vec![0.0; ckk * rows * w];
        let mut dcols = if dx.is_some() { vec![0.0; ckk * rows * w] } else { Vec::new() };
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + rows).min(h);
            let np = (r1 - r0) * w;
            im2col_band(x, c, h, w, k, r0, r1, &mut cols[..ckk * np]);
            // SAFETY: dW (o x ckk) += dY band (o x np) * cols^T (np x ckk).
            unsafe {
                matrixmultiply::dgemm(
                    o,
                    np,
                    ckk,
                    1.0,
                    dy.as_ptr().add(r0 * w),
                    (h * w) as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    np as isize,
                    1.0,
                    dw.as_mut_ptr(),
                    ckk as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_deref_mut() {
                // SAFETY: dcols (ckk x np) = W^T (ckk x o) * dY band (o x np).
                unsafe {
                    matrixmultiply::dgemm(
                        ckk,
                        o,
                        np,
                        1.0,
                        self.weight.data().as_ptr(),
                        1,
                        ckk as isize,
                        dy.as_ptr().add(r0 * w),
                        (h * w) as isize,
                        1,
                        0.0,
                        dcols.as_mut_ptr(),
                        np as isize,
                        1,
                    );
                }
                col2im_band(&dcols[..ckk * np], c, h, w, k, r0, r1, dx);
            }
            r0 = r1;
        }
    }
}

/// Valid output column range for a horizontal tap offset `shift`.
#[inline]
fn valid_cols(w: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (w as isize - shift).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn im2col_band(x: &[f64], c: usize, h: usize, w: usize, k: usize, r0: usize, r1: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let np = (r1 - r0) * w;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let q = (ci * k + ky) * k + kx;
                let dst = &mut cols[q * np..(q + 1) * np];
                let shift = kx as isize - pad;
                let (lo, hi) = valid_cols(w, shift);
                for r in r0..r1 {
                    let drow = &mut dst[(r - r0) * w..(r - r0 + 1) * w];
                    let sr = r as isize + ky as isize - pad;
                    if sr < 0 || sr >= h as isize || lo >= hi {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &xc[sr as usize * w..(sr as usize + 1) * w];
                    drow[..lo].fill(0.0);
                    drow[hi..].fill(0.0);
                    let s0 = (lo as isize + shift) as usize;
                    drow[lo..hi].copy_from_slice(&srow[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_band(dcols: &[f64], c: usize, h: usize, w: usize, k: usize, r0: usize, r1: usize, dx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let np = (r1 - r0) * w;
    for ci in 0..c {
        let dxc = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let q = (ci * k + ky) * k + kx;
                let src = &dcols[q * np..(q + 1) * np];
                let shift = kx as isize - pad;
                let (lo, hi) = valid_cols(w, shift);
                if lo >= hi {
                    continue;
                }
                for r in r0..r1 {
                    let sr = r as isize + ky as isize - pad;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let srow = &src[(r - r0) * w..(r - r0 + 1) * w];
                    let s0 = (lo as isize + shift) as usize;
                    let drow = &mut dxc[sr as usize * w + s0..sr as usize * w + s0 + (hi - lo)];
                    for (d, s) in drow.iter_mut().zip(&srow[lo..hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn direct_forward(x: &[f64], kernel: &[f64], k: usize, h: usize, w: usize, out: &mut [f64]) {
    let pad = (k / 2) as isize;
    for r in 0..h {
        let orow = &mut out[r * w..(r + 1) * w];
        for ky in 0..k {
            let sr = r as isize + ky as isize - pad;
            if sr < 0 || sr >= h as isize {
                continue;
            }
            let srow = &x[sr as usize * w..(sr as usize + 1) * w];
            for kx in 0..k {
                let wt = kernel[ky * k + kx];
                let shift = kx as isize - pad;
                let (lo, hi) = valid_cols(w, shift);
                if lo >= hi {
                    continue;
                }
                let s0 = (lo as isize + shift) as usize;
                for (o, s) in orow[lo..hi].iter_mut().zip(&srow[s0..s0 + (hi - lo)]) {
                    *o += wt * s;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn direct_backward(
    x: &[f64],
    dy: &[f64],
    kernel: &[f64],
    k: usize,
    h: usize,
    w: usize,
    dw: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let pad = (k / 2) as isize;
    for ky in 0..k {
        for kx in 0..k {
            let shift = kx as isize - pad;
            let (lo, hi) = valid_cols(w, shift);
            if lo >= hi {
                continue;
            }
            let s0 = (lo as isize + shift) as usize;
            let wt = kernel[ky * k + kx];
            let mut acc = 0.0;
            for r in 0..h {
                let sr = r as isize + ky as isize - pad;
                if sr < 0 || sr >= h as isize {
                    continue;
                }
                let srow = &x[sr as usize * w..(sr as usize + 1) * w];
                let grow = &dy[r * w..(r + 1) * w];
                acc += grow[lo..hi].iter().zip(&srow[s0..s0 + (hi - lo)]).map(|(g, s)| g * s).sum::<f64>();
                if let Some(dx) = dx.as_deref_mut() {
                    let drow = &mut dx[sr as usize * w + s0..sr as usize * w + s0 + (hi - lo)];
                    for (d, g) in drow.iter_mut().zip(&grow[lo..hi]) {
                        *d += wt * g;
                    }
                }
            }
            dw[ky * k + kx] += acc;
        }
    }
}

/// Nested-loop reference convolution, used as an oracle.
pub fn conv2d_naive(x: &Tensor, layer: &ConvLayer) -> Tensor {
    let [n, c, h, w] = x.shape();
    let [o, _, k, _] = layer.weight.shape();
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros([n, o, h, w]);
    let mut idx = 0;
    for b in 0..n {
        for oc in 0..o {
            for r in 0..h {
                for col in 0..w {
                    let mut acc = layer.bias.as_ref().map_or(0.0, |bias| bias[oc]);
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sr = r as isize + ky as isize - pad;
                                let sc = col as isize + kx as isize - pad;
                                if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                                    continue;
                                }
                                acc += layer.weight.at(oc, ic, ky, kx) * x.at(b, ic, sr as usize, sc as usize);
                            }
                        }
                    }
                    out.data_mut()[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    out
}
