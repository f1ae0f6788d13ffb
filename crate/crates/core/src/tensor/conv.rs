//! Convolutions and dense layers on top of a GEMM kernel.

use super::{invalid, Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Half-open range of output positions whose tap `t` lands inside `0..size`,
    /// with the source index of the first one.
    #[inline]
    fn span(&self, t: usize, size: usize, out: usize) -> (usize, usize, usize) {
        let off = (t * self.dilation) as isize - self.padding as isize;
        let s = self.stride as isize;
        let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
        let last = size as isize - 1 - off;
        let hi = if last < 0 { 0 } else { ((last / s) as usize + 1).min(out) };
        let lo = lo.min(hi);
        (lo, hi, (lo as isize * s + off).max(0) as usize)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let l = self.cols();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                let (hlo, hhi, ih0) = self.span(ki, self.h, self.ho);
                for kj in 0..self.k {
                    let (wlo, whi, iw0) = self.span(kj, self.w, self.wo);
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * l..(row + 1) * l];
                    dst[..hlo * self.wo].fill(T::zero());
                    dst[hhi * self.wo..].fill(T::zero());
                    for oh in hlo..hhi {
                        let ih = ih0 + (oh - hlo) * self.stride;
                        let src_row = &plane[ih * self.w..(ih + 1) * self.w];
                        let out_row = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        out_row[..wlo].fill(T::zero());
                        out_row[whi..].fill(T::zero());
                        if self.stride == 1 {
                            out_row[wlo..whi].copy_from_slice(&src_row[iw0..iw0 + whi - wlo]);
                        } else {
                            for (j, v) in out_row[wlo..whi].iter_mut().enumerate() {
                                *v = src_row[iw0 + j * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let l = self.cols();
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                let (hlo, hhi, ih0) = self.span(ki, self.h, self.ho);
                for kj in 0..self.k {
                    let (wlo, whi, iw0) = self.span(kj, self.w, self.wo);
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * l..(row + 1) * l];
                    for oh in hlo..hhi {
                        let ih = ih0 + (oh - hlo) * self.stride;
                        let dst_row = &mut plane[ih * self.w..(ih + 1) * self.w];
                        let src_row = &src[oh * self.wo + wlo..oh * self.wo + whi];
                        if self.stride == 1 {
                            for (d, &v) in dst_row[iw0..iw0 + whi - wlo].iter_mut().zip(src_row) {
                                *d += v;
                            }
                        } else {
                            for (j, &v) in src_row.iter().enumerate() {
                                dst_row[iw0 + j * self.stride] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tensor<T> {
    /// 2-D cross-correlation with zero padding: `x: N×C×H×W`, `weight: O×C×k×k`,
    /// `bias: O`. Output extent is `⌊(H + 2p − d(k−1) − 1)/s⌋ + 1`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        let &[n, c, h, w] = self.shape() else {
            return Err(invalid("conv2d", format!("input must be NCHW, got {:?}", self.shape())));
        };
        let &[o, wc, k, k2] = weight.shape() else {
            return Err(invalid("conv2d", format!("weight must be OIkk, got {:?}", weight.shape())));
        };
        if wc != c || k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![o],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        if stride == 0 || dilation == 0 || k == 0 {
            return Err(invalid("conv2d", "stride, dilation and kernel must be ≥ 1"));
        }
        let span = dilation * (k - 1) + 1;
        if h + 2 * padding < span || w + 2 * padding < span {
            return Err(invalid(
                "conv2d",
                format!("kernel span {span} exceeds padded input {h}×{w} (padding {padding})"),
            ));
        }
        let geom = ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            dilation,
            padding,
            ho: (h + 2 * padding - span) / stride + 1,
            wo: (w + 2 * padding - span) / stride + 1,
        };
        let (rows, l) = (geom.rows(), geom.cols());
        let x = self.to_vec();
        let wt = weight.to_vec();
        let bv = bias.map(|b| b.to_vec());

        let mut out = vec![T::zero(); n * o * l];
        let mut cols = vec![T::zero(); rows * l];
        for b in 0..n {
            geom.im2col(&x[b * c * h * w..(b + 1) * c * h * w], &mut cols);
            let dst = &mut out[b * o * l..(b + 1) * o * l];
            T::gemm(o, rows, l, &wt, false, &cols, false, dst, false);
            if let Some(bv) = &bv {
                for (oc, chunk) in dst.chunks_mut(l).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bv[oc]);
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            "conv2d",
            vec![n, o, geom.ho, geom.wo],
            out,
            parents,
            Box::new(move |g, _, needs| {
                let mut cols = vec![T::zero(); rows * l];
                let mut dcols = vec![T::zero(); rows * l];
                let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
                let mut dw = needs[1].then(|| vec![T::zero(); wt.len()]);
                for b in 0..n {
                    let gb = &g[b * o * l..(b + 1) * o * l];
                    if let Some(dw) = dw.as_mut() {
                        geom.im2col(&x[b * c * h * w..(b + 1) * c * h * w], &mut cols);
                        T::gemm(o, l, rows, gb, false, &cols, true, dw, true);
                    }
                    if let Some(dx) = dx.as_mut() {
                        T::gemm(rows, o, l, &wt, true, gb, false, &mut dcols, false);
                        geom.col2im(&dcols, &mut dx[b * c * h * w..(b + 1) * c * h * w]);
                    }
                }
                let mut grads = vec![dx, dw];
                if needs.len() > 2 {
                    grads.push(needs[2].then(|| {
                        let mut db = vec![T::zero(); o];
                        for b in 0..n {
                            for (oc, chunk) in g[b * o * l..(b + 1) * o * l].chunks(l).enumerate() {
                                db[oc] += chunk.iter().copied().sum::<T>();
                            }
                        }
                        db
                    }));
                }
                grads
            }),
        ))
    }

    /// Dense layer `x · weightᵀ + bias` with `x: N×In`, `weight: Out×In`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (&[n, fin], &[fout, win]) = (self.shape(), weight.shape()) else {
            return Err(invalid(
                "linear",
                format!("expected N×In and Out×In, got {:?} and {:?}", self.shape(), weight.shape()),
            ));
        };
        if fin != win {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [fout] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear bias",
                    lhs: vec![fout],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let x = self.to_vec();
        let wt = weight.to_vec();
        let mut out = vec![T::zero(); n * fout];
        T::gemm(n, fin, fout, &x, false, &wt, true, &mut out, false);
        if let Some(b) = bias {
            let bv = b.data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bv.iter()).for_each(|(v, &bb)| *v += bb);
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            "linear",
            vec![n, fout],
            out,
            parents,
            Box::new(move |g, _, needs| {
                let dx = needs[0].then(|| {
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(n, fout, fin, g, false, &wt, false, &mut dx, false);
                    dx
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(fout, n, fin, g, true, &x, false, &mut dw, false);
                    dw
                });
                let mut grads = vec![dx, dw];
                if needs.len() > 2 {
                    grads.push(needs[2].then(|| {
                        let mut db = vec![T::zero(); fout];
                        for row in g.chunks(fout) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                        db
                    }));
                }
                grads
            }),
        ))
    }

    /// `self · otherᵀ` for `N×D` and `M×D` matrices.
    pub fn matmul_transposed(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.linear(other, None)
    }

    /// 1-D convolution across the channel axis of an `N×C` tensor with an odd
    /// kernel of length `k`, zero padded to preserve `C`, no bias.
    pub fn conv1d_channels(&self, weight: &Tensor<T>) -> Result<Tensor<T>> {
        let &[n, c] = self.shape() else {
            return Err(invalid("conv1d_channels", format!("expected N×C, got {:?}", self.shape())));
        };
        let &[k] = weight.shape() else {
            return Err(invalid("conv1d_channels", "kernel must be 1-D"));
        };
        if k % 2 == 0 {
            return Err(invalid("conv1d_channels", format!("kernel size {k} must be odd")));
        }
        let pad = (k / 2) as isize;
        let x = self.to_vec();
        let wt = weight.to_vec();
        let tap = move |ci: usize, j: usize| -> Option<usize> {
            let s = ci as isize + j as isize - pad;
            (s >= 0 && (s as usize) < c).then_some(s as usize)
        };
        let mut out = vec![T::zero(); n * c];
        for b in 0..n {
            for ci in 0..c {
                out[b * c + ci] = (0..k)
                    .filter_map(|j| tap(ci, j).map(|s| wt[j] * x[b * c + s]))
                    .sum();
            }
        }
        Ok(Tensor::from_op(
            "conv1d_channels",
            vec![n, c],
            out,
            vec![self.clone(), weight.clone()],
            Box::new(move |g, _, needs| {
                let mut dx = vec![T::zero(); n * c];
                let mut dw = vec![T::zero(); k];
                for b in 0..n {
                    for ci in 0..c {
                        let gv = g[b * c + ci];
                        for j in 0..k {
                            if let Some(s) = tap(ci, j) {
                                dx[b * c + s] += wt[j] * gv;
                                dw[j] += x[b * c + s] * gv;
                            }
                        }
                    }
                }
                vec![needs[0].then_some(dx), needs[1].then_some(dw)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, check_gradients_with};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::param(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(
        x: &[f64],
        (n, c, h, w): (usize, usize, usize, usize),
        wt: &[f64],
        (o, k): (usize, usize),
        b: &[f64],
        s: usize,
        d: usize,
        p: usize,
    ) -> Vec<f64> {
        let ho = (h + 2 * p - d * (k - 1) - 1) / s + 1;
        let wo = (w + 2 * p - d * (k - 1) - 1) / s + 1;
        let mut out = vec![0.0; n * o * ho * wo];
        for bi in 0..n {
            for oc in 0..o {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = b[oc];
                        for ic in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let y = (i * s + ki * d) as isize - p as isize;
                                    let xx = (j * s + kj * d) as isize - p as isize;
                                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                        acc += wt[((oc * c + ic) * k + ki) * k + kj]
                                            * x[((bi * c + ic) * h + y as usize) * w + xx as usize];
                                    }
                                }
                            }
                        }
                        out[((bi * o + oc) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_center_is_nine() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&w, None, 1, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_vec()[4], 9.0);
        assert_eq!(y.to_vec()[0], 4.0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let data: Vec<f32> = (0..32).map(|i| i as f32 * 0.25 - 3.0).collect();
        let x = Tensor::<f32>::from_vec(&[2, 1, 4, 4], data.clone()).unwrap();
        let w = Tensor::<f32>::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::<f32>::zeros(&[1]);
        assert_eq!(x.conv2d(&w, Some(&b), 1, 1, 0).unwrap().to_vec(), data);
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(s, d, p) in &[(1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 2, 0), (1, 1, 0), (1, 3, 4), (3, 1, 2)] {
            let x = random(&[2, 3, 7, 8], &mut rng);
            let w = random(&[4, 3, 3, 3], &mut rng);
            let b = random(&[4], &mut rng);
            let y = x.conv2d(&w, Some(&b), s, d, p).unwrap();
            let want = naive_conv(&x.to_vec(), (2, 3, 7, 8), &w.to_vec(), (4, 3), &b.to_vec(), s, d, p);
            assert_eq!(y.numel(), want.len());
            for (a, e) in y.to_vec().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_size_formula() {
        let x = Tensor::<f32>::zeros(&[1, 2, 9, 10]);
        let w = Tensor::<f32>::zeros(&[3, 2, 3, 3]);
        let y = x.conv2d(&w, None, 2, 2, 1).unwrap();
        // floor((9 + 2 - 4 - 1)/2) + 1 = 4, floor((10 + 2 - 4 - 1)/2) + 1 = 4
        assert_eq!(y.shape(), &[1, 3, 4, 4]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let w = Tensor::<f32>::zeros(&[3, 4, 3, 3]);
        assert!(matches!(
            x.conv2d(&w, None, 1, 1, 1),
            Err(TensorError::ShapeMismatch { op: "conv2d", .. })
        ));
        let big = Tensor::<f32>::zeros(&[3, 2, 7, 7]);
        assert!(x.conv2d(&big, None, 1, 1, 0).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[2, 3, 8, 8], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let probe = Tensor::from_vec(&[2, 4, 8, 8], (0..512).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect()).unwrap();
        let report = check_gradients_with(
            &[x, w, b],
            |xs| Ok(xs[0].conv2d(&xs[1], Some(&xs[2]), 1, 1, 1)?.mul(&probe)?.sum()),
            1e-3,
            None,
            0,
        )
        .unwrap();
        report.assert_below(1e-3);

        let x = random(&[1, 2, 9, 9], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        check_gradients(&[x, w], |xs| Ok(xs[0].conv2d(&xs[1], None, 2, 2, 2)?.square().sum()))
            .unwrap()
            .assert_below(1e-3);

        for &(s, d, p) in &[(2, 1, 1), (1, 2, 2), (2, 2, 0), (1, 3, 4), (3, 1, 2)] {
            let x = random(&[1, 2, 7, 8], &mut rng);
            let w = random(&[2, 2, 3, 3], &mut rng);
            check_gradients(&[x, w], |xs| Ok(xs[0].conv2d(&xs[1], None, s, d, p)?.square().sum()))
                .unwrap()
                .assert_below(1e-3);
        }
    }

    #[test]
    fn dense_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[3, 5], &mut rng);
        let w = random(&[4, 5], &mut rng);
        let b = random(&[4], &mut rng);
        check_gradients(&[x.clone(), w, b], |xs| Ok(xs[0].linear(&xs[1], Some(&xs[2]))?.square().sum()))
            .unwrap()
            .assert_below(1e-3);
        let k = random(&[3], &mut rng);
        check_gradients(&[x, k], |xs| Ok(xs[0].conv1d_channels(&xs[1])?.tanh().sum()))
            .unwrap()
            .assert_below(1e-3);
    }
}
