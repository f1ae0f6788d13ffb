//! Elementwise arithmetic and activations.
//!
//! Binary operations accept an exact shape match, or a right-hand side of the
//! same rank whose extents are each either equal to the left-hand side or 1
//! (per-channel scalars `N×C×1×1`, single-channel maps `N×1×H×W`, scalars).

use super::{invalid, Real, Result, Tensor, TensorError};

/// Index of the rhs element feeding each output element, or `None` when shapes match.
fn broadcast_index(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Option<Vec<usize>>> {
    if lhs == rhs {
        return Ok(None);
    }
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    };
    if rhs.iter().product::<usize>() == 1 {
        return Ok(Some(vec![0; lhs.iter().product()]));
    }
    if lhs.len() != rhs.len() {
        return Err(mismatch());
    }
    if lhs.iter().zip(rhs).any(|(&l, &r)| r != l && r != 1) {
        return Err(mismatch());
    }
    let rank = lhs.len();
    let mut rstride = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        rstride[d] = if rhs[d] == 1 { 0 } else { acc };
        acc *= rhs[d];
    }
    let total: usize = lhs.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    for _ in 0..total {
        idx.push(counter.iter().zip(&rstride).map(|(c, s)| c * s).sum());
        for d in (0..rank).rev() {
            counter[d] += 1;
            if counter[d] < lhs[d] {
                break;
            }
            counter[d] = 0;
        }
    }
    Ok(Some(idx))
}

fn reduce_to_rhs<T: Real>(g: Vec<T>, map: &Option<Vec<usize>>, rhs_len: usize) -> Vec<T> {
    match map {
        None => g,
        Some(idx) => {
            let mut out = vec![T::zero(); rhs_len];
            for (v, &j) in g.iter().zip(idx) {
                out[j] += *v;
            }
            out
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

impl<T: Real> Tensor<T> {
    fn binary(&self, rhs: &Tensor<T>, kind: Binary, op: &'static str) -> Result<Tensor<T>> {
        let map = broadcast_index(op, self.shape(), rhs.shape())?;
        let a = self.to_vec();
        let b = rhs.to_vec();
        let rb = |i: usize| match &map {
            None => b[i],
            Some(m) => b[m[i]],
        };
        let data: Vec<T> = a
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = rb(i);
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                    Binary::Max => {
                        if x >= y {
                            x
                        } else {
                            y
                        }
                    }
                }
            })
            .collect();
        let rhs_len = b.len();
        Ok(Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _out, needs| {
                let rb = |i: usize| match &map {
                    None => b[i],
                    Some(m) => b[m[i]],
                };
                let ga = needs[0].then(|| match kind {
                    Binary::Add | Binary::Sub => g.to_vec(),
                    Binary::Mul => g.iter().enumerate().map(|(i, &v)| v * rb(i)).collect(),
                    Binary::Div => g.iter().enumerate().map(|(i, &v)| v / rb(i)).collect(),
                    Binary::Max => g
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| if a[i] >= rb(i) { v } else { T::zero() })
                        .collect(),
                });
                let gb = needs[1].then(|| {
                    let full: Vec<T> = match kind {
                        Binary::Add => g.to_vec(),
                        Binary::Sub => g.iter().map(|&v| -v).collect(),
                        Binary::Mul => g.iter().zip(&a).map(|(&v, &x)| v * x).collect(),
                        Binary::Div => g
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| {
                                let y = rb(i);
                                -v * a[i] / (y * y)
                            })
                            .collect(),
                        Binary::Max => g
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| if a[i] >= rb(i) { T::zero() } else { v })
                            .collect(),
                    };
                    reduce_to_rhs(full, &map, rhs_len)
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, Binary::Add, "add")
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, Binary::Sub, "sub")
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, Binary::Mul, "mul")
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, Binary::Div, "div")
    }

    /// Elementwise maximum; ties take the left operand and its gradient.
    pub fn maximum(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(rhs, Binary::Max, "maximum")
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let x = self.to_vec();
        let data = x.iter().map(|&v| f(v)).collect();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, out, _| {
                vec![Some(
                    g.iter()
                        .zip(x.iter().zip(out))
                        .map(|(&gv, (&xv, &yv))| gv * df(xv, yv))
                        .collect(),
                )]
            }),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    /// Multiplication by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    /// Absolute value; subgradient 0 at 0.
    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor<T> {
        self.unary(
            "softplus",
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| sigmoid(x),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary("ln", |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary("sqrt", |x| x.sqrt(), |_, y| T::lit(0.5) / y)
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary("square", |x| x * x, |x, _| T::lit(2.0) * x)
    }

    /// Clamp into `[lo, hi]`; gradient passes only where `lo < x < hi`.
    pub fn clip(&self, lo: T, hi: T) -> Result<Tensor<T>> {
        if lo > hi {
            return Err(invalid("clip", format!("lo {lo} > hi {hi}")));
        }
        Ok(self.unary(
            "clip",
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x > lo && x < hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        ))
    }

    /// `max(x, lo)` with gradient where `x > lo`.
    pub fn clamp_min(&self, lo: T) -> Tensor<T> {
        self.unary(
            "clamp_min",
            move |x| x.max(lo),
            move |x, _| if x > lo { T::one() } else { T::zero() },
        )
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
