//! Single-channel image with `f64` samples, row-major.

use thiserror::Error;

use crate::tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum PlaneError {
    #[error("plane of {height}×{width} needs {expected} samples, got {found}")]
    Length {
        height: usize,
        width: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected a batch of N×1×H×W, got {0:?}")]
    Shape(Vec<usize>),
    #[error("planes differ in size: {0:?} vs {1:?}")]
    Mismatch([usize; 2], [usize; 2]),
    #[error("empty batch")]
    Empty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, PlaneError> {
        if data.len() != height * width {
            return Err(PlaneError::Length {
                height,
                width,
                expected: height * width,
                found: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        Self {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..height * width).map(|k| f(k / width, k % width)).collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pixelwise combination of two equally sized planes.
    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Result<Self, PlaneError> {
        if self.dims() != other.dims() {
            return Err(PlaneError::Mismatch(self.dims(), other.dims()));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `1×1×H×W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, 1, self.height, self.width], self.data.iter().map(|&v| T::lit(v)).collect())
            .expect("length checked at construction")
    }

    /// `N×1×H×W` batch of equally sized planes.
    pub fn stack<T: Real>(planes: &[&Plane]) -> Result<Tensor<T>, PlaneError> {
        let first = planes.first().ok_or(PlaneError::Empty)?;
        let mut data = Vec::with_capacity(planes.len() * first.len());
        for p in planes {
            if p.dims() != first.dims() {
                return Err(PlaneError::Mismatch(first.dims(), p.dims()));
            }
            data.extend(p.data.iter().map(|&v| T::lit(v)));
        }
        Ok(Tensor::from_vec(&[planes.len(), 1, first.height, first.width], data).expect("sizes checked"))
    }

    /// Splits an `N×1×H×W` tensor into planes.
    pub fn unstack<T: Real>(t: &Tensor<T>) -> Result<Vec<Plane>, PlaneError> {
        let &[n, 1, h, w] = t.shape() else {
            return Err(PlaneError::Shape(t.shape().to_vec()));
        };
        let data = t.data();
        Ok((0..n)
            .map(|k| Plane {
                height: h,
                width: w,
                data: data[k * h * w..(k + 1) * h * w]
                    .iter()
                    .map(|v| v.to_f64().unwrap_or(f64::NAN))
                    .collect(),
            })
            .collect())
    }
}
