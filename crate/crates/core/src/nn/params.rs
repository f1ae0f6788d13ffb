//! Named parameter store and deterministic initialization.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{Real, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("parameter `{0}` is missing")]
    Missing(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter `{0}` declared twice")]
    Duplicate(String),
    #[error("trainable parameter `{0}` has no gradient buffer")]
    NoGrad(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One named tensor of the model.
#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Ordered map from hierarchical names (`encoder.stage2.res.conv1.w`) to
/// tensors. Insertion order is preserved so serialized checkpoints are stable.
#[derive(Clone, Debug, Default)]
pub struct ModelParams<T: Real = f32> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> Result<(), ParamError> {
        if self.entries.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        let tensor = if trainable && !tensor.requires_grad() {
            Tensor::param(tensor.shape(), tensor.to_vec())?
        } else {
            tensor
        };
        self.entries.insert(name.to_string(), Param { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|p| &p.tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for p in self.entries.values() {
            p.tensor.zero_grad();
        }
    }

    /// Deep copy in another precision; trainable flags are kept.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::new();
        for (name, p) in &self.entries {
            let t = p.tensor.cast::<U>();
            out.insert(name, t, p.trainable).expect("names are unique");
        }
        out
    }

    /// Deep copy sharing nothing with `self`.
    pub fn deep_clone(&self) -> Self {
        self.cast::<T>()
    }
}

enum Mode {
    Init(ChaCha8Rng),
    Load,
}

/// Declares parameters while a network is being assembled.
///
/// In init mode each declaration draws fresh values (Kaiming-uniform weights,
/// zero biases) from a ChaCha8 stream seeded once, so the result depends only
/// on the seed and declaration order. In load mode declarations fetch and
/// shape-check existing entries.
pub struct ParamBuilder<'a, T: Real> {
    params: &'a mut ModelParams<T>,
    mode: Mode,
    declared: usize,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn init(params: &'a mut ModelParams<T>, seed: u64) -> Self {
        Self {
            params,
            mode: Mode::Init(ChaCha8Rng::seed_from_u64(seed)),
            declared: 0,
        }
    }

    pub fn load(params: &'a mut ModelParams<T>) -> Self {
        Self {
            params,
            mode: Mode::Load,
            declared: 0,
        }
    }

    /// Number of declarations so far.
    pub fn declared(&self) -> usize {
        self.declared
    }

    fn fetch(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>, ParamError> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| ParamError::Missing(name.to_string()))?;
        if t.shape() != shape {
            return Err(ParamError::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t.clone())
    }

    /// Weight with values in `±sqrt(6 / fan_in)`.
    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Tensor<T>, ParamError> {
        self.declared += 1;
        match &mut self.mode {
            Mode::Load => self.fetch(name, shape),
            Mode::Init(rng) => {
                let bound = kaiming_bound(fan_in);
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
                self.params.insert(name, Tensor::param(shape, data)?, true)?;
                self.fetch(name, shape)
            }
        }
    }

    pub fn bias(&mut self, name: &str, len: usize) -> Result<Tensor<T>, ParamError> {
        self.declared += 1;
        match self.mode {
            Mode::Load => self.fetch(name, &[len]),
            Mode::Init(_) => {
                self.params.insert(name, Tensor::param(&[len], vec![T::zero(); len])?, true)?;
                self.fetch(name, &[len])
            }
        }
    }
}

/// Uniform Kaiming bound for ReLU networks.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}
