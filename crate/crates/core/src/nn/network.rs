use rand::Rng;

use super::{ConvLayer, Tensor};
use crate::error::{Error, Result};
use crate::grid::reflect_index;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    Sigmoid,
    /// Grow each spatial side by `p` with mirrored borders.
    MirrorPad(usize),
    /// Drop `p` pixels from each spatial side.
    Crop(usize),
}

/// A plain feed-forward stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Activations kept for the backward pass; `activations[0]` is the input and
/// `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Tensor>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Parameter gradients in [`Network::params`] order, plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Option<Tensor>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Layer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(conv) => conv.forward(x),
            Layer::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                Tensor::new(x.shape(), data)
            }
            Layer::Sigmoid => {
                let data = x.data().iter().map(|&v| sigmoid(v)).collect();
                Tensor::new(x.shape(), data)
            }
            Layer::MirrorPad(p) => Ok(mirror_pad(x, *p)),
            Layer::Crop(p) => crop(x, *p),
        }
    }
}

fn mirror_pad(x: &Tensor, p: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = Tensor::zeros([n, c, ph, pw]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(ph * pw)) {
        for r in 0..ph {
            let sr = reflect_index(r as isize - p as isize, h);
            for col in 0..pw {
                dst[r * pw + col] = src[sr * w + reflect_index(col as isize - p as isize, w)];
            }
        }
    }
    out
}

/// Adjoint of [`mirror_pad`]: folds padded gradients back onto their sources.
fn mirror_fold(g: &Tensor, p: usize) -> Tensor {
    let [n, c, ph, pw] = g.shape();
    let (h, w) = (ph - 2 * p, pw - 2 * p);
    let mut out = Tensor::zeros([n, c, h, w]);
    for (src, dst) in g.data().chunks(ph * pw).zip(out.data_mut().chunks_mut(h * w)) {
        for r in 0..ph {
            let sr = reflect_index(r as isize - p as isize, h);
            for col in 0..pw {
                dst[sr * w + reflect_index(col as isize - p as isize, w)] += src[r * pw + col];
            }
        }
    }
    out
}

fn crop(x: &Tensor, p: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if h <= 2 * p || w <= 2 * p {
        return Err(Error::Shape(format!("cannot crop {p} from a {h}x{w} map")));
    }
    let (ch, cw) = (h - 2 * p, w - 2 * p);
    let mut out = Tensor::zeros([n, c, ch, cw]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(ch * cw)) {
        for r in 0..ch {
            dst[r * cw..(r + 1) * cw].copy_from_slice(&src[(r + p) * w + p..(r + p) * w + p + cw]);
        }
    }
    Ok(out)
}

/// Adjoint of [`crop`]: zero border.
fn uncrop(g: &Tensor, p: usize) -> Tensor {
    let [n, c, ch, cw] = g.shape();
    let (h, w) = (ch + 2 * p, cw + 2 * p);
    let mut out = Tensor::zeros([n, c, h, w]);
    for (src, dst) in g.data().chunks(ch * cw).zip(out.data_mut().chunks_mut(h * w)) {
        for r in 0..ch {
            dst[(r + p) * w + p..(r + p) * w + p + cw].copy_from_slice(&src[r * cw..(r + 1) * cw]);
        }
    }
    out
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut channels: Option<usize> = None;
        for layer in &layers {
            if let Layer::Conv(conv) = layer {
                if let Some(c) = channels {
                    if c != conv.in_channels() {
                        return Err(Error::Shape(format!(
                            "layer expects {} channels but receives {c}",
                            conv.in_channels()
                        )));
                    }
                }
                channels = Some(conv.out_channels());
            }
        }
        Ok(Self { layers })
    }

    /// One k x k filter, no bias, no activation, mirrored borders.
    pub fn linear_filter(k: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::mirrored_filter(ConvLayer::init(1, 1, k, false, rng)?)
    }

    pub fn mirrored_filter(conv: ConvLayer) -> Result<Self> {
        let p = conv.kernel_size() / 2;
        Self::new(vec![Layer::MirrorPad(p), Layer::Conv(conv), Layer::Crop(p)])
    }

    /// Four 3x3 convolutions of `width` channels with ReLU in between, then a
    /// 1x1 convolution to one channel and a sigmoid.
    pub fn conv_net(width: usize, rng: &mut impl Rng) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("conv net width must be positive".into()));
        }
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for _ in 0..4 {
            layers.push(Layer::Conv(ConvLayer::init(in_ch, width, 3, true, rng)?));
            layers.push(Layer::Relu);
            in_ch = width;
        }
        layers.push(Layer::Conv(ConvLayer::init(width, 1, 1, true, rng)?));
        layers.push(Layer::Sigmoid);
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    /// Channel widths along the stack, input first.
    pub fn widths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for conv in self.conv_layers() {
            if out.is_empty() {
                out.push(conv.in_channels());
            }
            out.push(conv.out_channels());
        }
        out
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<ForwardCache> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap())?;
            activations.push(next);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse-mode pass from the loss gradient w.r.t. the network output.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Tensor, want_input: bool) -> Result<Gradients> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::InvalidArgument("forward cache does not belong to this network".into()));
        }
        if output_grad.shape() != cache.output().shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} vs output {:?}",
                output_grad.shape(),
                cache.output().shape()
            )));
        }
        let first_conv = self.layers.iter().position(|l| matches!(l, Layer::Conv(_)));
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut grad = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[i];
            let output = &cache.activations[i + 1];
            match layer {
                Layer::Relu => {
                    for (g, o) in grad.data_mut().iter_mut().zip(output.data()) {
                        if *o <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                Layer::Sigmoid => {
                    for (g, s) in grad.data_mut().iter_mut().zip(output.data()) {
                        *g *= s * (1.0 - s);
                    }
                }
                Layer::MirrorPad(p) => grad = mirror_fold(&grad, *p),
                Layer::Crop(p) => grad = uncrop(&grad, *p),
                Layer::Conv(conv) => {
                    let need_input = want_input || Some(i) != first_conv;
                    let g = conv.backward(input, &grad, need_input)?;
                    let mut slots = vec![g.weight];
                    if let Some(b) = g.bias {
                        slots.push(b);
                    }
                    per_layer[i] = slots;
                    match g.input {
                        Some(dx) => grad = dx,
                        None => {
                            grad = Tensor::zeros(input.shape());
                        }
                    }
                }
            }
        }
        let params = per_layer.into_iter().flatten().collect();
        Ok(Gradients { params, input: want_input.then_some(grad) })
    }

    /// Parameter slices in declaration order: each conv's weight, then its bias.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for conv in self.conv_layers() {
            out.push(conv.weight.data());
            if let Some(b) = &conv.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Conv(conv) = layer {
                out.push(conv.weight.data_mut());
                if let Some(b) = &mut conv.bias {
                    out.push(b.as_mut_slice());
                }
            }
        }
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }
}
