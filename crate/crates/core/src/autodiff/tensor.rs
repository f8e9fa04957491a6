use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::ComplexImage;

/// A dense row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!("tensor extents must be positive: {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// A complex image as a `[2, H, W]` tensor: real plane then imaginary plane.
    pub fn from_image(x: &ComplexImage) -> Self {
        let n = x.len();
        let mut data = vec![0.0; 2 * n];
        for (i, v) in x.data().iter().enumerate() {
            data[i] = v.re;
            data[n + i] = v.im;
        }
        Self {
            shape: vec![2, x.height(), x.width()],
            data,
        }
    }

    /// Inverse of [`Tensor::from_image`].
    pub fn to_image(&self) -> Result<ComplexImage> {
        if self.shape.len() != 3 || self.shape[0] != 2 {
            return Err(Error::shape("Tensor::to_image", &[2, 0, 0], &self.shape));
        }
        let n = self.shape[1] * self.shape[2];
        let data = (0..n)
            .map(|i| Complex64::new(self.data[i], self.data[n + i]))
            .collect();
        ComplexImage::new(self.shape[1], self.shape[2], data)
    }

    pub(crate) fn add_assign(&mut self, other: &[f64]) {
        for (a, b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }
}

/// Planar complex slice `[re..., im...]` → interleaved complex values.
pub(crate) fn planar_to_complex(x: &[f64]) -> Vec<Complex64> {
    let n = x.len() / 2;
    (0..n).map(|i| Complex64::new(x[i], x[n + i])).collect()
}

pub(crate) fn complex_to_planar(x: &[Complex64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; 2 * n];
    for (i, v) in x.iter().enumerate() {
        out[i] = v.re;
        out[n + i] = v.im;
    }
    out
}
