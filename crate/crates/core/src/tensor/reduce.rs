//! Reductions, pooling to vectors, and row-wise normalizations.

use super::{invalid, Real, Result, Tensor, TensorError};

impl<T: Real> Tensor<T> {
    pub fn sum(&self) -> Tensor<T> {
        let n = self.numel();
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(
            "sum",
            vec![],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        if n == 0 {
            return Err(TensorError::Empty("mean"));
        }
        let inv = T::one() / T::from_usize(n).unwrap();
        let s: T = self.data().iter().copied().sum();
        Ok(Tensor::from_op(
            "mean",
            vec![],
            vec![s * inv],
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0] * inv; n])]),
        ))
    }

    /// Population covariance `(1/N) Σ (a − ā)(b − b̄)`.
    pub fn covariance(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "covariance",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let n = self.numel();
        if n == 0 {
            return Err(TensorError::Empty("covariance"));
        }
        let nf = T::from_usize(n).unwrap();
        let center = |v: &[T]| {
            let m = v.iter().copied().sum::<T>() / nf;
            v.iter().map(|&x| x - m).collect::<Vec<T>>()
        };
        let ca = center(&self.data());
        let cb = center(&other.data());
        let cov = ca.iter().zip(&cb).map(|(&x, &y)| x * y).sum::<T>() / nf;
        Ok(Tensor::from_op(
            "covariance",
            vec![],
            vec![cov],
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, needs| {
                let s = g[0] / nf;
                // d/da_i of the centered product sum: the mean-shift terms cancel.
                vec![
                    needs[0].then(|| cb.iter().map(|&y| y * s).collect()),
                    needs[1].then(|| ca.iter().map(|&x| x * s).collect()),
                ]
            }),
        ))
    }

    /// Population variance (divides by N).
    pub fn variance(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        if n == 0 {
            return Err(TensorError::Empty("variance"));
        }
        let nf = T::from_usize(n).unwrap();
        let d = self.data();
        let m = d.iter().copied().sum::<T>() / nf;
        let c: Vec<T> = d.iter().map(|&x| x - m).collect();
        drop(d);
        let var = c.iter().map(|&x| x * x).sum::<T>() / nf;
        Ok(Tensor::from_op(
            "variance",
            vec![],
            vec![var],
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let s = T::lit(2.0) * g[0] / nf;
                vec![Some(c.iter().map(|&x| x * s).collect())]
            }),
        ))
    }

    /// `N×C×H×W → N×C` spatial mean.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let &[n, c, h, w] = self.shape() else {
            return Err(invalid("global_avg_pool", format!("expected NCHW, got {:?}", self.shape())));
        };
        let hw = h * w;
        if hw == 0 {
            return Err(TensorError::Empty("global_avg_pool"));
        }
        let inv = T::one() / T::from_usize(hw).unwrap();
        let data: Vec<T> = self
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(Tensor::from_op(
            "global_avg_pool",
            vec![n, c],
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(g.len() * hw);
                for &v in g {
                    out.extend(std::iter::repeat(v * inv).take(hw));
                }
                vec![Some(out)]
            }),
        ))
    }

    /// Softmax over axis 1 of an `N×K×H×W` tensor, per `(n, h, w)`.
    pub fn softmax_channel(&self) -> Result<Tensor<T>> {
        let &[n, k, h, w] = self.shape() else {
            return Err(invalid("softmax_channel", format!("expected NKHW, got {:?}", self.shape())));
        };
        if k < 2 {
            return Err(invalid("softmax_channel", "needs at least two channels"));
        }
        let hw = h * w;
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            let base = b * k * hw;
            for p in 0..hw {
                let mut mx = T::neg_infinity();
                for c in 0..k {
                    mx = mx.max(x[base + c * hw + p]);
                }
                let mut z = T::zero();
                for c in 0..k {
                    let e = (x[base + c * hw + p] - mx).exp();
                    out[base + c * hw + p] = e;
                    z += e;
                }
                for c in 0..k {
                    out[base + c * hw + p] = out[base + c * hw + p] / z;
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            "softmax_channel",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = vec![T::zero(); g.len()];
                for b in 0..n {
                    let base = b * k * hw;
                    for p in 0..hw {
                        let dot: T = (0..k)
                            .map(|c| g[base + c * hw + p] * y[base + c * hw + p])
                            .sum();
                        for c in 0..k {
                            let i = base + c * hw + p;
                            gx[i] = y[i] * (g[i] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Divides each row of an `N×D` matrix by its L2 norm.
    pub fn l2_normalize_rows(&self) -> Result<Tensor<T>> {
        let &[n, d] = self.shape() else {
            return Err(invalid("l2_normalize_rows", format!("expected N×D, got {:?}", self.shape())));
        };
        let eps = T::lit(1e-12);
        let x = self.to_vec();
        let norms: Vec<T> = x
            .chunks(d)
            .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps))
            .collect();
        let data: Vec<T> = x
            .chunks(d)
            .zip(&norms)
            .flat_map(|(r, &nm)| r.iter().map(move |&v| v / nm))
            .collect();
        Ok(Tensor::from_op(
            "l2_normalize_rows",
            vec![n, d],
            data,
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = vec![T::zero(); g.len()];
                for r in 0..n {
                    let s = r * d..(r + 1) * d;
                    let dot: T = g[s.clone()].iter().zip(&y[s.clone()]).map(|(&a, &b)| a * b).sum();
                    for i in s {
                        gx[i] = (g[i] - y[i] * dot) / norms[r];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Mean over rows of `−log softmax(row)[row index]` for a square `N×N`
    /// logit matrix: cross-entropy with the diagonal as the target class.
    pub fn cross_entropy_diagonal(&self) -> Result<Tensor<T>> {
        let &[n, m] = self.shape() else {
            return Err(invalid("cross_entropy_diagonal", "expected a matrix"));
        };
        if n != m || n == 0 {
            return Err(invalid("cross_entropy_diagonal", format!("expected square, got {n}×{m}")));
        }
        let x = self.to_vec();
        let mut probs = vec![T::zero(); n * n];
        let mut loss = T::zero();
        for i in 0..n {
            let row = &x[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            loss += lse - row[i];
            for j in 0..n {
                probs[i * n + j] = (row[j] - lse).exp();
            }
        }
        let nf = T::from_usize(n).unwrap();
        Ok(Tensor::from_op(
            "cross_entropy_diagonal",
            vec![],
            vec![loss / nf],
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let s = g[0] / nf;
                let mut gx: Vec<T> = probs.iter().map(|&p| p * s).collect();
                for i in 0..n {
                    gx[i * n + i] -= s;
                }
                vec![Some(gx)]
            }),
        ))
    }
}
