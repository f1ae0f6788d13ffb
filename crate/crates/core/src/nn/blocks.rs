//! Learned building blocks shared by the encoder, fusion heads and decoder.

use super::params::{ParamBuilder, ParamError};
use crate::tensor::{invalid, Real, Result, Tensor};

/// 2-D convolution layer with bias.
#[derive(Clone, Debug)]
pub struct Conv<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl<T: Real> Conv<T> {
    /// `k×k` convolution from `cin` to `cout` channels. Padding keeps the spatial
    /// size at stride 1.
    pub fn new(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self, ParamError> {
        let weight = b.weight(&format!("{name}.w"), &[cout, cin, k, k], cin * k * k)?;
        let bias = b.bias(&format!("{name}.b"), cout)?;
        Ok(Self {
            weight,
            bias,
            stride,
            dilation,
            padding: dilation * (k - 1) / 2,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight, Some(&self.bias), self.stride, self.dilation, self.padding)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// `y = relu(x' + conv(relu(conv(x'))))`, where `x'` is `x` through a 1×1
/// projection when the channel count changes.
#[derive(Clone, Debug)]
pub struct ResBlock<T: Real> {
    pub proj: Option<Conv<T>>,
    pub conv1: Conv<T>,
    pub conv2: Conv<T>,
}

impl<T: Real> ResBlock<T> {
    pub fn new(b: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize) -> Result<Self, ParamError> {
        let proj = (cin != cout)
            .then(|| Conv::new(b, &format!("{name}.proj"), cin, cout, 1, 1, 1))
            .transpose()?;
        Ok(Self {
            proj,
            conv1: Conv::new(b, &format!("{name}.conv1"), cout, cout, 3, 1, 1)?,
            conv2: Conv::new(b, &format!("{name}.conv2"), cout, cout, 3, 1, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let expected = self.proj.as_ref().unwrap_or(&self.conv1).in_channels();
        if x.rank() != 4 || x.shape()[1] != expected {
            return Err(invalid(
                "res_block",
                format!("expected {expected} input channels, got shape {:?}", x.shape()),
            ));
        }
        let skip = match &self.proj {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        let branch = self.conv2.forward(&self.conv1.forward(&skip)?.relu())?;
        Ok(skip.add(&branch)?.relu())
    }
}

/// Efficient channel attention: `x ⊙ sigmoid(conv1d_k(gap(x)))`.
#[derive(Clone, Debug)]
pub struct Eca<T: Real> {
    pub weight: Tensor<T>,
}

impl<T: Real> Eca<T> {
    pub fn new(b: &mut ParamBuilder<'_, T>, name: &str, k: usize) -> Result<Self, ParamError> {
        Ok(Self {
            weight: b.weight(&format!("{name}.w"), &[k], k)?,
        })
    }

    /// Per-channel attention weights, `N×C`, each in (0, 1).
    pub fn attention(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.global_avg_pool()?.conv1d_channels(&self.weight)?.sigmoid())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.attention(x)?;
        let (n, c) = (x.shape()[0], x.shape()[1]);
        x.mul(&s.reshape(&[n, c, 1, 1])?)
    }
}

/// Dense layer with bias.
#[derive(Clone, Debug)]
pub struct Linear<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(b: &mut ParamBuilder<'_, T>, name: &str, fin: usize, fout: usize) -> Result<Self, ParamError> {
        Ok(Self {
            weight: b.weight(&format!("{name}.w"), &[fout, fin], fin)?,
            bias: b.bias(&format!("{name}.b"), fout)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(&self.weight, Some(&self.bias))
    }
}

/// Pooled features to unit-norm embeddings: `gap → fc → relu → fc → L2 normalize`.
#[derive(Clone, Debug)]
pub struct ProjectionHead<T: Real> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> ProjectionHead<T> {
    pub fn new(b: &mut ParamBuilder<'_, T>, name: &str, channels: usize, dim: usize) -> Result<Self, ParamError> {
        Ok(Self {
            fc1: Linear::new(b, &format!("{name}.fc1"), channels, channels)?,
            fc2: Linear::new(b, &format!("{name}.fc2"), channels, dim)?,
        })
    }

    /// `N×C×H×W → N×D` with unit-norm rows.
    pub fn forward(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.fc1.forward(&f.global_avg_pool()?)?.relu();
        self.fc2.forward(&h)?.l2_normalize_rows()
    }
}
