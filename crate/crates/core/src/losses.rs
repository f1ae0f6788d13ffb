//! Training objective: fidelity to the source average, gradient transfer,
//! correlation, contrastive agreement and auxiliary reconstruction.
//!
//! All ℓ1 terms are per-pixel means so weights keep their meaning across
//! resolutions. Images are `N×1×H×W` in [0, 1].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TrainingOutput;
use crate::tensor::{Real, Tensor, TensorError};

/// Variance floor of the correlation term.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("contrastive term needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("loss weights must be finite and non-negative: {0}")]
    BadWeight(&'static str),
    #[error("term `{0}` has a nonzero weight but its inputs were not computed")]
    MissingInput(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T, E = LossError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub avg: f64,
    pub grad: f64,
    pub cc: f64,
    pub mi: f64,
    pub rec: f64,
    /// InfoNCE temperature.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            avg: 5.0,
            grad: 2.0,
            cc: 1.0,
            mi: 0.1,
            rec: 0.1,
            tau: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("avg", self.avg),
            ("grad", self.grad),
            ("cc", self.cc),
            ("mi", self.mi),
            ("rec", self.rec),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::BadWeight(name));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(LossError::BadWeight("tau"));
        }
        Ok(())
    }

    /// Copy with one named term switched off; `None` for an unknown name.
    pub fn without(&self, term: &str) -> Option<Self> {
        let mut w = *self;
        match term {
            "avg" => w.avg = 0.0,
            "grad" => w.grad = 0.0,
            "cc" => w.cc = 0.0,
            "mi" => w.mi = 0.0,
            "rec" => w.rec = 0.0,
            _ => return None,
        }
        Some(w)
    }
}

/// Scalar values of one evaluation. Terms with zero weight are not computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub avg: Option<f64>,
    pub grad: Option<f64>,
    pub cc: Option<f64>,
    pub mi: Option<f64>,
    pub rec: Option<f64>,
}

impl LossBreakdown {
    pub const TERMS: [&'static str; 5] = ["avg", "grad", "cc", "mi", "rec"];

    pub fn terms(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("avg", self.avg),
            ("grad", self.grad),
            ("cc", self.cc),
            ("mi", self.mi),
            ("rec", self.rec),
        ]
    }

    /// `Σ λ·term`, recomputed from the recorded values.
    pub fn recompose(&self, w: &LossWeights) -> f64 {
        let weights = [w.avg, w.grad, w.cc, w.mi, w.rec];
        self.terms()
            .iter()
            .zip(weights)
            .filter_map(|((_, v), l)| v.map(|v| l * v))
            .sum()
    }
}

fn average<T: Real>(i1: &Tensor<T>, i2: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(i1.add(i2)?.scale(T::lit(0.5)))
}

/// Mean absolute deviation from `(I1 + I2)/2`.
pub fn loss_avg<T: Real>(fused: &Tensor<T>, i1: &Tensor<T>, i2: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(fused.sub(&average(i1, i2)?)?.abs().mean()?)
}

/// Mean `| |∇I_f| − max(|∇I1|, |∇I2|) |` with Sobel magnitudes.
pub fn loss_grad<T: Real>(fused: &Tensor<T>, i1: &Tensor<T>, i2: &Tensor<T>) -> Result<Tensor<T>> {
    let target = i1.sobel_magnitude()?.maximum(&i2.sobel_magnitude()?)?;
    Ok(fused.sobel_magnitude()?.sub(&target)?.abs().mean()?)
}

/// `1 − ρ(I_f, I_avg)` per image, averaged over the batch, with variances
/// floored at [`VARIANCE_FLOOR`].
pub fn loss_cc<T: Real>(fused: &Tensor<T>, i1: &Tensor<T>, i2: &Tensor<T>) -> Result<Tensor<T>> {
    let avg = average(i1, i2)?;
    if fused.shape() != avg.shape() || fused.rank() == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "loss_cc",
            lhs: fused.shape().to_vec(),
            rhs: avg.shape().to_vec(),
        }
        .into());
    }
    let n = fused.shape()[0];
    let floor = T::lit(VARIANCE_FLOOR);
    let mut sum: Option<Tensor<T>> = None;
    for b in 0..n {
        let f = fused.narrow(0, b, 1)?;
        let a = avg.narrow(0, b, 1)?;
        let denom = f.variance()?.clamp_min(floor).mul(&a.variance()?.clamp_min(floor))?.sqrt();
        let term = f.covariance(&a)?.div(&denom)?.neg().add_scalar(T::one());
        sum = Some(match sum {
            Some(s) => s.add(&term)?,
            None => term,
        });
    }
    let sum = sum.ok_or(TensorError::Empty("loss_cc"))?;
    Ok(sum.scale(T::one() / T::lit(n as f64)))
}

/// Symmetric InfoNCE over both sources. Row `i` of `z_fused` is positive with
/// row `i` of each source and negative with every other row of that source.
pub fn loss_infonce<T: Real>(z_fused: &Tensor<T>, z1: &Tensor<T>, z2: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    let n = z_fused.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(LossError::BatchTooSmall(n));
    }
    let inv_tau = T::lit(1.0 / tau);
    let l1 = z_fused.matmul_transposed(z1)?.scale(inv_tau).cross_entropy_diagonal()?;
    let l2 = z_fused.matmul_transposed(z2)?.scale(inv_tau).cross_entropy_diagonal()?;
    Ok(l1.add(&l2)?.scale(T::lit(0.5)))
}

/// Sum of the two mean-ℓ1 reconstruction errors.
pub fn loss_rec<T: Real>(r1: &Tensor<T>, r2: &Tensor<T>, i1: &Tensor<T>, i2: &Tensor<T>) -> Result<Tensor<T>> {
    let e1 = r1.sub(i1)?.abs().mean()?;
    let e2 = r2.sub(i2)?.abs().mean()?;
    Ok(e1.add(&e2)?)
}

/// Auxiliary inputs of the objective; only needed when the matching weight is nonzero.
pub struct LossInputs<'a, T: Real> {
    pub fused: &'a Tensor<T>,
    pub i1: &'a Tensor<T>,
    pub i2: &'a Tensor<T>,
    pub recon: Option<(&'a Tensor<T>, &'a Tensor<T>)>,
    /// `(z_fused, z1, z2)`.
    pub embeddings: Option<(&'a Tensor<T>, &'a Tensor<T>, &'a Tensor<T>)>,
}

impl<'a, T: Real> LossInputs<'a, T> {
    pub fn from_training(out: &'a TrainingOutput<T>, i1: &'a Tensor<T>, i2: &'a Tensor<T>) -> Self {
        Self {
            fused: &out.fusion.fused,
            i1,
            i2,
            recon: out.recon.as_ref().map(|(a, b)| (a, b)),
            embeddings: out
                .embeddings
                .as_ref()
                .map(|e| (&e.fused, &e.source1, &e.source2)),
        }
    }
}

/// Weighted objective as a differentiable scalar plus its breakdown.
pub fn loss_total<T: Real>(x: &LossInputs<'_, T>, w: &LossWeights) -> Result<(Tensor<T>, LossBreakdown)> {
    w.validate()?;
    let mut total: Option<Tensor<T>> = None;
    let mut bd = LossBreakdown::default();
    let mut acc = |weight: f64, term: Tensor<T>, slot: &mut Option<f64>| -> Result<()> {
        *slot = Some(term.item().to_f64().unwrap_or(f64::NAN));
        let weighted = term.scale(T::lit(weight));
        total = Some(match total.take() {
            Some(t) => t.add(&weighted)?,
            None => weighted,
        });
        Ok(())
    };
    if w.avg > 0.0 {
        acc(w.avg, loss_avg(x.fused, x.i1, x.i2)?, &mut bd.avg)?;
    }
    if w.grad > 0.0 {
        acc(w.grad, loss_grad(x.fused, x.i1, x.i2)?, &mut bd.grad)?;
    }
    if w.cc > 0.0 {
        acc(w.cc, loss_cc(x.fused, x.i1, x.i2)?, &mut bd.cc)?;
    }
    if w.mi > 0.0 {
        let (zf, z1, z2) = x.embeddings.ok_or(LossError::MissingInput("mi"))?;
        acc(w.mi, loss_infonce(zf, z1, z2, w.tau)?, &mut bd.mi)?;
    }
    if w.rec > 0.0 {
        let (r1, r2) = x.recon.ok_or(LossError::MissingInput("rec"))?;
        acc(w.rec, loss_rec(r1, r2, x.i1, x.i2)?, &mut bd.rec)?;
    }
    let total = total.unwrap_or_else(|| Tensor::scalar(T::zero()));
    bd.total = total.item().to_f64().unwrap_or(f64::NAN);
    Ok((total, bd))
}
