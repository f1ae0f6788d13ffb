//! Spatial operators on the last two axes: Sobel gradients, orthonormal Haar
//! wavelets, 2×2 pooling and nearest-neighbour upsampling.

use super::{invalid, Real, Result, Tensor, TensorError};

/// Sub-bands of a one-level 2-D Haar transform, each half the parent extent.
#[derive(Clone, Debug)]
pub struct WaveletBands<T: Real = f32> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

/// Sign of block element `(a, b, c, d)` in each band, LL, LH, HL, HH order.
/// For the block `[a b; c d]`, band = ½ Σ sign · element; the table is its own
/// inverse up to the ½ factor.
const HAAR_SIGNS: [[i8; 4]; 4] = [[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]];

const SOBEL_H: [[i8; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
const SOBEL_V: [[i8; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];

/// Splits a shape into `(planes, h, w)`.
fn planes(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(invalid(op, format!("need at least 2 axes, got {shape:?}")));
    }
    let r = shape.len();
    Ok((shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1]))
}

/// Mirror index without repeating the edge sample (`-1 → 1`, `n → n − 2`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> Tensor<T> {
    /// Per-plane `|∇ₕx| + |∇ᵥx|` with 3×3 Sobel kernels and reflect padding.
    /// Planes must be at least 2×2 so the mirror stays in range.
    pub fn sobel_magnitude(&self) -> Result<Tensor<T>> {
        let (np, h, w) = planes("sobel_magnitude", self.shape())?;
        if h < 2 || w < 2 {
            return Err(invalid("sobel_magnitude", format!("spatial extent {h}×{w} below 2×2")));
        }
        let x = self.data();
        let hw = h * w;
        let mut gh = vec![T::zero(); x.len()];
        let mut gv = vec![T::zero(); x.len()];
        for p in 0..np {
            let plane = &x[p * hw..(p + 1) * hw];
            for i in 0..h {
                for j in 0..w {
                    let (u, d) = (reflect(i as isize - 1, h), reflect(i as isize + 1, h));
                    let (l, r) = (reflect(j as isize - 1, w), reflect(j as isize + 1, w));
                    let at = |y: usize, x: usize| plane[y * w + x];
                    let two = T::lit(2.0);
                    // Differences first so a flat field gives exactly zero.
                    let sh = (at(u, r) - at(u, l)) + two * (at(i, r) - at(i, l)) + (at(d, r) - at(d, l));
                    let sv = (at(d, l) - at(u, l)) + two * (at(d, j) - at(u, j)) + (at(d, r) - at(u, r));
                    gh[p * hw + i * w + j] = sh;
                    gv[p * hw + i * w + j] = sv;
                }
            }
        }
        drop(x);
        let out = gh.iter().zip(&gv).map(|(a, b)| a.abs() + b.abs()).collect();
        Ok(Tensor::from_op(
            "sobel_magnitude",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut dx = vec![T::zero(); g.len()];
                for p in 0..np {
                    for i in 0..h {
                        for j in 0..w {
                            let idx = p * hw + i * w + j;
                            let sh = sign(gh[idx]) * g[idx];
                            let sv = sign(gv[idx]) * g[idx];
                            if sh == T::zero() && sv == T::zero() {
                                continue;
                            }
                            for a in 0..3 {
                                let r = reflect(i as isize + a as isize - 1, h);
                                for b in 0..3 {
                                    let c = reflect(j as isize + b as isize - 1, w);
                                    dx[p * hw + r * w + c] += T::lit(SOBEL_H[a][b] as f64) * sh
                                        + T::lit(SOBEL_V[a][b] as f64) * sv;
                                }
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    fn haar_band(&self, band: usize) -> Result<Tensor<T>> {
        let (np, h, w) = planes("haar_dwt", self.shape())?;
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(invalid("haar_dwt", format!("extents {h}×{w} must be even and non-zero")));
        }
        let (h2, w2) = (h / 2, w / 2);
        let half = T::lit(0.5);
        let s = HAAR_SIGNS[band].map(|v| T::lit(v as f64));
        let x = self.data();
        let mut out = Vec::with_capacity(np * h2 * w2);
        for p in 0..np {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    let a = plane[2 * i * w + 2 * j];
                    let b = plane[2 * i * w + 2 * j + 1];
                    let c = plane[(2 * i + 1) * w + 2 * j];
                    let d = plane[(2 * i + 1) * w + 2 * j + 1];
                    out.push(half * (s[0] * a + s[1] * b + s[2] * c + s[3] * d));
                }
            }
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = h2;
        shape[r - 1] = w2;
        Ok(Tensor::from_op(
            "haar_band",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut dx = vec![T::zero(); np * h * w];
                for p in 0..np {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            let v = half * g[(p * h2 + i) * w2 + j];
                            let base = p * h * w;
                            dx[base + 2 * i * w + 2 * j] = s[0] * v;
                            dx[base + 2 * i * w + 2 * j + 1] = s[1] * v;
                            dx[base + (2 * i + 1) * w + 2 * j] = s[2] * v;
                            dx[base + (2 * i + 1) * w + 2 * j + 1] = s[3] * v;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// One-level orthonormal 2-D Haar transform over the last two axes.
    /// For each block `[a b; c d]`: LL = (a+b+c+d)/2, LH = (a−b+c−d)/2,
    /// HL = (a+b−c−d)/2, HH = (a−b−c+d)/2.
    pub fn haar_dwt(&self) -> Result<WaveletBands<T>> {
        Ok(WaveletBands {
            ll: self.haar_band(0)?,
            lh: self.haar_band(1)?,
            hl: self.haar_band(2)?,
            hh: self.haar_band(3)?,
        })
    }

    /// Elementwise pick of whichever operand has the larger magnitude; ties
    /// pick `self`. Gradient flows only to the selected operand.
    pub fn select_max_abs(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "select_max_abs",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let a = self.data();
        let b = other.data();
        let pick: Vec<bool> = a.iter().zip(b.iter()).map(|(x, y)| x.abs() >= y.abs()).collect();
        let out = pick
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(&first, (&x, &y))| if first { x } else { y })
            .collect();
        drop((a, b));
        Ok(Tensor::from_op(
            "select_max_abs",
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, needs| {
                let route = |want: bool| -> Vec<T> {
                    g.iter()
                        .zip(&pick)
                        .map(|(&v, &p)| if p == want { v } else { T::zero() })
                        .collect()
                };
                vec![needs[0].then(|| route(true)), needs[1].then(|| route(false))]
            }),
        ))
    }

    /// Mean over non-overlapping 2×2 blocks of the last two axes.
    pub fn avg_pool2x2(&self) -> Result<Tensor<T>> {
        let (np, h, w) = planes("avg_pool2x2", self.shape())?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid("avg_pool2x2", format!("extents {h}×{w} must be even")));
        }
        let (h2, w2) = (h / 2, w / 2);
        let q = T::lit(0.25);
        let x = self.data();
        let mut out = Vec::with_capacity(np * h2 * w2);
        for p in 0..np {
            let pl = &x[p * h * w..(p + 1) * h * w];
            for i in 0..h2 {
                for j in 0..w2 {
                    out.push(
                        q * (pl[2 * i * w + 2 * j]
                            + pl[2 * i * w + 2 * j + 1]
                            + pl[(2 * i + 1) * w + 2 * j]
                            + pl[(2 * i + 1) * w + 2 * j + 1]),
                    );
                }
            }
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = h2;
        shape[r - 1] = w2;
        Ok(Tensor::from_op(
            "avg_pool2x2",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut dx = vec![T::zero(); np * h * w];
                for p in 0..np {
                    for i in 0..h {
                        for j in 0..w {
                            dx[p * h * w + i * w + j] = q * g[(p * h2 + i / 2) * w2 + j / 2];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Nearest-neighbour ×2 upsampling of the last two axes.
    pub fn upsample_nearest2x(&self) -> Result<Tensor<T>> {
        let (np, h, w) = planes("upsample_nearest2x", self.shape())?;
        let (h2, w2) = (2 * h, 2 * w);
        let x = self.data();
        let mut out = Vec::with_capacity(np * h2 * w2);
        for p in 0..np {
            for i in 0..h2 {
                for j in 0..w2 {
                    out.push(x[(p * h + i / 2) * w + j / 2]);
                }
            }
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = h2;
        shape[r - 1] = w2;
        Ok(Tensor::from_op(
            "upsample_nearest2x",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut dx = vec![T::zero(); np * h * w];
                for p in 0..np {
                    for i in 0..h2 {
                        for j in 0..w2 {
                            dx[(p * h + i / 2) * w + j / 2] += g[(p * h2 + i) * w2 + j];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }
}

impl<T: Real> WaveletBands<T> {
    /// Inverse of [`Tensor::haar_dwt`].
    pub fn inverse(&self) -> Result<Tensor<T>> {
        let bands = [&self.ll, &self.lh, &self.hl, &self.hh];
        for b in &bands[1..] {
            if b.shape() != self.ll.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "haar_idwt",
                    lhs: self.ll.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let (np, h2, w2) = planes("haar_idwt", self.ll.shape())?;
        let (h, w) = (2 * h2, 2 * w2);
        let half = T::lit(0.5);
        let sg: [[T; 4]; 4] = HAAR_SIGNS.map(|r| r.map(|v| T::lit(v as f64)));
        let data: Vec<_> = bands.iter().map(|b| b.data()).collect();
        let mut out = vec![T::zero(); np * h * w];
        for p in 0..np {
            for i in 0..h2 {
                for j in 0..w2 {
                    let k = (p * h2 + i) * w2 + j;
                    let v = [data[0][k], data[1][k], data[2][k], data[3][k]];
                    let pos = [
                        2 * i * w + 2 * j,
                        2 * i * w + 2 * j + 1,
                        (2 * i + 1) * w + 2 * j,
                        (2 * i + 1) * w + 2 * j + 1,
                    ];
                    for (e, &off) in pos.iter().enumerate() {
                        out[p * h * w + off] =
                            half * (sg[0][e] * v[0] + sg[1][e] * v[1] + sg[2][e] * v[2] + sg[3][e] * v[3]);
                    }
                }
            }
        }
        drop(data);
        let mut shape = self.ll.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = h;
        shape[r - 1] = w;
        Ok(Tensor::from_op(
            "haar_idwt",
            shape,
            out,
            bands.iter().map(|&b| b.clone()).collect(),
            Box::new(move |g, _, needs| {
                (0..4)
                    .map(|band| {
                        needs[band].then(|| {
                            let mut gb = vec![T::zero(); np * h2 * w2];
                            for p in 0..np {
                                for i in 0..h2 {
                                    for j in 0..w2 {
                                        let pos = [
                                            2 * i * w + 2 * j,
                                            2 * i * w + 2 * j + 1,
                                            (2 * i + 1) * w + 2 * j,
                                            (2 * i + 1) * w + 2 * j + 1,
                                        ];
                                        let mut acc = T::zero();
                                        for (e, &off) in pos.iter().enumerate() {
                                            acc += sg[band][e] * g[p * h * w + off];
                                        }
                                        gb[(p * h2 + i) * w2 + j] = half * acc;
                                    }
                                }
                            }
                            gb
                        })
                    })
                    .collect()
            }),
        ))
    }

    pub fn shape(&self) -> &[usize] {
        self.ll.shape()
    }
}
