use crate::error::{Error, Result};
use crate::grid::Image;

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!("{} values for tensor shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    /// 1x1xHxW tensor from a single-channel image.
    pub fn from_image(img: &Image) -> Result<Self> {
        img.require_single_channel()?;
        Ok(Self { shape: [1, 1, img.height(), img.width()], data: img.data().to_vec() })
    }

    /// Inverse of [`Tensor::from_image`].
    pub fn to_image(&self) -> Result<Image> {
        let [n, c, h, w] = self.shape;
        if n != 1 || c != 1 {
            return Err(Error::Shape(format!("tensor {:?} is not a single image", self.shape)));
        }
        Image::gray(h, w, self.data.clone())
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
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

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn scale(&self, a: f64) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| v * a).collect() }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { shape: self.shape, data })
    }
}
