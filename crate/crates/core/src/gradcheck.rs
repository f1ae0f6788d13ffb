//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward function (under
//! [`no_grad`]), so it is independent of every backward rule it verifies.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{no_grad, Result, Tensor};

/// Default central-difference step for `f64` checks.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative-error denominators are floored here so that coordinates whose
/// true gradient is (near) zero compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `max_i |a_i − n_i| / max(|a_i|, |n_i|, REL_FLOOR)`.
    pub max_rel_error: f64,
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` over all checked coordinates.
    pub norm_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    pub fn assert_below(&self, tol: f64) {
        assert!(
            self.max_rel_error < tol,
            "gradient check failed: max rel {:.3e} (norm rel {:.3e}, abs {:.3e}) over {} coords",
            self.max_rel_error,
            self.norm_rel_error,
            self.max_abs_error,
            self.checked
        );
    }
}

/// Checks every coordinate of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    check_gradients_with(inputs, f, DEFAULT_EPS, None, 0)
}

/// Checks at most `max_per_input` randomly chosen coordinates per input
/// (all of them when `None`), with step `eps`.
pub fn check_gradients_with<F>(
    inputs: &[Tensor<f64>],
    f: F,
    eps: f64,
    max_per_input: Option<usize>,
    seed: u64,
) -> Result<GradCheck>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    for x in inputs {
        x.zero_grad();
    }
    f(inputs)?.backward()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for x in inputs {
        let grad = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        let coords: Vec<usize> = match max_per_input {
            Some(k) if k < x.numel() => {
                let mut v = sample(&mut rng, x.numel(), k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..x.numel()).collect(),
        };
        for i in coords {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + eps;
            let plus = no_grad(|| f(inputs))?.item();
            x.data_mut()[i] = orig - eps;
            let minus = no_grad(|| f(inputs))?.item();
            x.data_mut()[i] = orig;
            analytic.push(grad[i]);
            numeric.push((plus - minus) / (2.0 * eps));
        }
    }
    Ok(summarize(analytic, numeric))
}

fn summarize(analytic: Vec<f64>, numeric: Vec<f64>) -> GradCheck {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for (&a, &n) in analytic.iter().zip(&numeric) {
        let d = (a - n).abs();
        max_abs = max_abs.max(d);
        max_rel = max_rel.max(d / a.abs().max(n.abs()).max(REL_FLOOR));
        diff2 += d * d;
        a2 += a * a;
        n2 += n * n;
    }
    let denom = a2.sqrt().max(n2.sqrt());
    GradCheck {
        max_rel_error: if max_rel.is_nan() { f64::INFINITY } else { max_rel },
        norm_rel_error: if denom > 0.0 { diff2.sqrt() / denom } else { 0.0 },
        max_abs_error: max_abs,
        checked: analytic.len(),
        analytic,
        numeric,
    }
}
