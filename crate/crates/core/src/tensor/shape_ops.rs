//! Reshape, slicing and concatenation.

use super::{invalid, numel, Real, Result, Tensor, TensorError};

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "narrow",
                format!("axis {axis} range {start}..{} out of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        drop(x);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let total = self.numel();
        Ok(Tensor::from_op(
            "narrow",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![T::zero(); total];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    let src = o * len * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or(TensorError::Empty("concat"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(invalid("concat", format!("axis {axis} for rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (g, &w) in guards.iter().zip(&widths) {
                data.extend_from_slice(&g[o * w..(o + 1) * w]);
            }
        }
        drop(guards);
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(
            "concat",
            shape,
            data,
            parts.iter().map(|&p| p.clone()).collect(),
            Box::new(move |g, _, needs| {
                let mut offset = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&w, &need)| {
                        let start = offset;
                        offset += w;
                        need.then(|| {
                            let mut gx = Vec::with_capacity(outer * w);
                            for o in 0..outer {
                                let b = o * row + start;
                                gx.extend_from_slice(&g[b..b + w]);
                            }
                            gx
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Repeats a `N×1×H×W` map `c` times along the channel axis.
    pub fn repeat_channels(&self, c: usize) -> Result<Tensor<T>> {
        let parts: Vec<&Tensor<T>> = std::iter::repeat(self).take(c).collect();
        Tensor::concat(&parts, 1)
    }
}
