//! Classical fusion rules used as reference points.

use std::str::FromStr;

use medfuse_core::model::pad_reflect;
use medfuse_core::plane::{Plane, PlaneError};
use medfuse_core::tensor::{Tensor, TensorError, WaveletBands};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Plane(#[from] PlaneError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown baseline `{0}` (expected `average` or `dwt_max`)")]
    Unknown(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Average,
    DwtMax,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Average => "average",
            Method::DwtMax => "dwt_max",
        }
    }

    pub fn fuse(&self, a: &Plane, b: &Plane) -> Result<Plane, BaselineError> {
        match self {
            Method::Average => average(a, b),
            Method::DwtMax => dwt_max(a, b),
        }
    }
}

impl FromStr for Method {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(Method::Average),
            "dwt_max" => Ok(Method::DwtMax),
            other => Err(BaselineError::Unknown(other.to_string())),
        }
    }
}

pub fn average(a: &Plane, b: &Plane) -> Result<Plane, BaselineError> {
    Ok(a.zip_map(b, |x, y| 0.5 * (x + y))?)
}

const LEVELS: u32 = 2;

/// Two-level Haar fusion: coarsest approximation averaged, every detail band
/// taken from the source with the larger magnitude, result clipped to [0, 1].
/// Odd extents are mirrored up to a multiple of 4 and cropped back.
pub fn dwt_max(a: &Plane, b: &Plane) -> Result<Plane, BaselineError> {
    if a.dims() != b.dims() {
        return Err(PlaneError::Mismatch(a.dims(), b.dims()).into());
    }
    let [h, w] = a.dims();
    let m = 1 << LEVELS;
    let (ph, pw) = (h.next_multiple_of(m), w.next_multiple_of(m));
    let prep = |p: &Plane| -> Result<Tensor<f64>, BaselineError> { Ok(pad_reflect(&p.to_tensor::<f64>(), ph, pw)?) };
    let (mut xa, mut xb) = (prep(a)?, prep(b)?);
    let mut details = Vec::new();
    for _ in 0..LEVELS {
        let (ba, bb) = (xa.haar_dwt()?, xb.haar_dwt()?);
        details.push((
            ba.lh.select_max_abs(&bb.lh)?,
            ba.hl.select_max_abs(&bb.hl)?,
            ba.hh.select_max_abs(&bb.hh)?,
        ));
        xa = ba.ll;
        xb = bb.ll;
    }
    let mut ll = xa.add(&xb)?.scale(0.5);
    for (lh, hl, hh) in details.into_iter().rev() {
        ll = WaveletBands { ll, lh, hl, hh }.inverse()?;
    }
    let out = ll.narrow(2, 0, h)?.narrow(3, 0, w)?;
    Ok(Plane::unstack(&out)?.remove(0).map(|v| v.clamp(0.0, 1.0)))
}

/// Independent uniform noise, the floor every real method should beat.
pub fn noise(height: usize, width: usize, seed: u64) -> Plane {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Plane::from_fn(height, width, |_, _| rng.gen_range(0.0..1.0))
}
