//! Flat binary parameter format.
//!
//! Layout: the magic `S2S1`, a little-endian `u32` layer count, then per layer
//! four `u32`s (out channels, in channels, kernel size, bias flag), then every
//! layer's weights followed by its biases as little-endian `f64`, in
//! declaration order.

use super::{ConvLayer, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"S2S1";

pub fn encode<'a>(layers: impl IntoIterator<Item = &'a ConvLayer>) -> Vec<u8> {
    let layers: Vec<&ConvLayer> = layers.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in &layers {
        let [o, i, k, _] = l.weight.shape();
        for v in [o, i, k, l.bias.is_some() as usize] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    for l in &layers {
        for v in l.weight.data().iter().chain(l.bias.iter().flatten()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated parameter blob".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<ConvLayer>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let count = r.u32()?;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let (o, i, k, b) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        if b > 1 {
            return Err(Error::Format(format!("bias flag {b}")));
        }
        shapes.push((o, i, k, b == 1));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (o, i, k, has_bias) in shapes {
        let weight = Tensor::new([o, i, k, k], r.f64s(o * i * k * k)?)?;
        let bias = if has_bias { Some(r.f64s(o)?) } else { None };
        layers.push(ConvLayer::new(weight, bias)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(layers)
}
