//! Tensor operations: elementwise math, matrix products, convolutions,
//! normalization, attention plumbing, and the loss. Each op records a
//! backward closure; gradients flow by accumulation so shared nodes (e.g.
//! residual branches) combine correctly.
//!
//! Reductions that cross batch items always run their accumulation loops in
//! a fixed order (parallelism is only over disjoint output regions), so
//! results are bit-reproducible run to run.

use std::rc::Rc;

use rayon::prelude::*;

use super::{Scalar, Tensor, TensorError};

impl<T: Scalar> Tensor<T> {
    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let data = {
            let a = self.data_ref();
            let a = a.as_slice();
            let b = other.data_ref();
            let b = b.as_slice();
            a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                pa.accumulate_grad(g);
                pb.accumulate_grad(g);
            },
        )
    }

    /// Elementwise product; shapes must match.
    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "mul shape mismatch");
        let data = {
            let a = self.data_ref();
            let a = a.as_slice();
            let b = other.data_ref();
            let b = b.as_slice();
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                let da: Vec<T> = {
                    let b = pb.data_ref();
                    let b = b.as_slice();
                    g.iter().zip(b.iter()).map(|(&gi, &y)| gi * y).collect()
                };
                let db: Vec<T> = {
                    let a = pa.data_ref();
                    let a = a.as_slice();
                    g.iter().zip(a.iter()).map(|(&gi, &x)| gi * x).collect()
                };
                pa.accumulate_grad(&da);
                pb.accumulate_grad(&db);
            },
        )
    }

    /// Multiply by a constant.
    pub fn scale(&self, c: f64) -> Tensor<T> {
        let cc = T::from_f64c(c);
        let data = self.data_ref().iter().map(|&x| x * cc).collect();
        let pa = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |g| {
                let da: Vec<T> = g.iter().map(|&gi| gi * cc).collect();
                pa.accumulate_grad(&da);
            },
        )
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let total = self
            .data_ref()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        let n = self.numel();
        let pa = self.clone();
        Tensor::from_op(vec![1], vec![total], vec![self.clone()], move |g| {
            pa.accumulate_grad(&vec![g[0]; n]);
        })
    }

    /// Copy into a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(),
            "reshape changes element count"
        );
        let data = self.values();
        let pa = self.clone();
        Tensor::from_op(shape.to_vec(), data, vec![self.clone()], move |g| {
            pa.accumulate_grad(g);
        })
    }

    /// `[.., K] x [K, M] -> [.., M]`; leading dimensions are treated as
    /// rows.
    pub fn matmul(&self, w: &Tensor<T>) -> Tensor<T> {
        let k = *self.shape().last().expect("matmul needs an inner axis");
        let n = self.numel() / k;
        let (k2, m) = (w.shape()[0], w.shape()[1]);
        assert_eq!(k, k2, "matmul inner dim mismatch");
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().unwrap() = m;

        let mut out = vec![T::zero(); n * m];
        {
            let a = self.data_ref();
            let a = a.as_slice();
            let b = w.data_ref();
            let b = b.as_slice();
            out.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
                for kk in 0..k {
                    let aik = a[i * k + kk];
                    let brow = &b[kk * m..kk * m + m];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o = *o + aik * bv;
                    }
                }
            });
        }

        let (pa, pw) = (self.clone(), w.clone());
        Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), w.clone()],
            move |g| {
                // dA = G * W^T
                let mut da = vec![T::zero(); n * k];
                {
                    let b = pw.data_ref();
                    let b = b.as_slice();
                    da.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
                        for mm in 0..m {
                            let gim = g[i * m + mm];
                            for (kk, o) in row.iter_mut().enumerate() {
                                *o = *o + gim * b[kk * m + mm];
                            }
                        }
                    });
                }
                // dW = A^T * G (one thread per dW row -> fixed inner order)
                let mut dw = vec![T::zero(); k * m];
                {
                    let a = pa.data_ref();
                    let a = a.as_slice();
                    dw.par_chunks_mut(m).enumerate().for_each(|(kk, row)| {
                        for i in 0..n {
                            let aik = a[i * k + kk];
                            let grow = &g[i * m..i * m + m];
                            for (o, &gv) in row.iter_mut().zip(grow) {
                                *o = *o + aik * gv;
                            }
                        }
                    });
                }
                pa.accumulate_grad(&da);
                pw.accumulate_grad(&dw);
            },
        )
    }

    /// Add a `[M]` bias to every trailing-axis row of `[.., M]`.
    pub fn add_row_bias(&self, bias: &Tensor<T>) -> Tensor<T> {
        let m = *self.shape().last().expect("bias needs an axis");
        let n = self.numel() / m;
        assert_eq!(bias.shape(), [m], "bias length mismatch");
        let out_shape = self.shape().to_vec();
        let data = {
            let a = self.data_ref();
            let a = a.as_slice();
            let b = bias.data_ref();
            let b = b.as_slice();
            let mut out = Vec::with_capacity(n * m);
            for i in 0..n {
                for j in 0..m {
                    out.push(a[i * m + j] + b[j]);
                }
            }
            out
        };
        let (pa, pb) = (self.clone(), bias.clone());
        Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), bias.clone()],
            move |g| {
                pa.accumulate_grad(g);
                let mut db = vec![T::zero(); m];
                for i in 0..n {
                    for (j, dbj) in db.iter_mut().enumerate() {
                        *dbj = *dbj + g[i * m + j];
                    }
                }
                pb.accumulate_grad(&db);
            },
        )
    }

    /// Batched `[G, M, K] x [G, K, N] -> [G, M, N]`.
    pub fn bmm_nn(&self, other: &Tensor<T>) -> Tensor<T> {
        let (ga, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (gb, k2, n) = (other.shape()[0], other.shape()[1], other.shape()[2]);
        assert_eq!((ga, k), (gb, k2), "bmm_nn shape mismatch");

        let mut out = vec![T::zero(); ga * m * n];
        {
            let a = self.data_ref();
            let a = a.as_slice();
            let b = other.data_ref();
            let b = b.as_slice();
            out.par_chunks_mut(m * n).enumerate().for_each(|(g0, og)| {
                let ag = &a[g0 * m * k..(g0 + 1) * m * k];
                let bg = &b[g0 * k * n..(g0 + 1) * k * n];
                for i in 0..m {
                    for kk in 0..k {
                        let aik = ag[i * k + kk];
                        for j in 0..n {
                            og[i * n + j] = og[i * n + j] + aik * bg[kk * n + j];
                        }
                    }
                }
            });
        }

        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            vec![ga, m, n],
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                let mut da = vec![T::zero(); ga * m * k];
                let mut db = vec![T::zero(); ga * k * n];
                {
                    let a = pa.data_ref();
                    let a = a.as_slice();
                    let b = pb.data_ref();
                    let b = b.as_slice();
                    da.par_chunks_mut(m * k)
                        .zip(db.par_chunks_mut(k * n))
                        .enumerate()
                        .for_each(|(g0, (dag, dbg))| {
                            let gg = &g[g0 * m * n..(g0 + 1) * m * n];
                            let ag = &a[g0 * m * k..(g0 + 1) * m * k];
                            let bg = &b[g0 * k * n..(g0 + 1) * k * n];
                            // dA = G * B^T
                            for i in 0..m {
                                for kk in 0..k {
                                    let mut acc = T::zero();
                                    for j in 0..n {
                                        acc = acc + gg[i * n + j] * bg[kk * n + j];
                                    }
                                    dag[i * k + kk] = acc;
                                }
                            }
                            // dB = A^T * G
                            for kk in 0..k {
                                for j in 0..n {
                                    let mut acc = T::zero();
                                    for i in 0..m {
                                        acc = acc + ag[i * k + kk] * gg[i * n + j];
                                    }
                                    dbg[kk * n + j] = acc;
                                }
                            }
                        });
                }
                pa.accumulate_grad(&da);
                pb.accumulate_grad(&db);
            },
        )
    }

    /// Batched `[G, M, K] x [G, N, K]^T -> [G, M, N]` (attention scores).
    pub fn bmm_nt(&self, other: &Tensor<T>) -> Tensor<T> {
        let (ga, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (gb, n, k2) = (other.shape()[0], other.shape()[1], other.shape()[2]);
        assert_eq!((ga, k), (gb, k2), "bmm_nt shape mismatch");

        let mut out = vec![T::zero(); ga * m * n];
        {
            let a = self.data_ref();
            let a = a.as_slice();
            let b = other.data_ref();
            let b = b.as_slice();
            out.par_chunks_mut(m * n).enumerate().for_each(|(g0, og)| {
                let ag = &a[g0 * m * k..(g0 + 1) * m * k];
                let bg = &b[g0 * n * k..(g0 + 1) * n * k];
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = T::zero();
                        for kk in 0..k {
                            acc = acc + ag[i * k + kk] * bg[j * k + kk];
                        }
                        og[i * n + j] = acc;
                    }
                }
            });
        }

        let (pa, pb) = (self.clone(), other.clone());
        Tensor::from_op(
            vec![ga, m, n],
            out,
            vec![self.clone(), other.clone()],
            move |g| {
                let mut da = vec![T::zero(); ga * m * k];
                let mut db = vec![T::zero(); ga * n * k];
                {
                    let a = pa.data_ref();
                    let a = a.as_slice();
                    let b = pb.data_ref();
                    let b = b.as_slice();
                    da.par_chunks_mut(m * k)
                        .zip(db.par_chunks_mut(n * k))
                        .enumerate()
                        .for_each(|(g0, (dag, dbg))| {
                            let gg = &g[g0 * m * n..(g0 + 1) * m * n];
                            let ag = &a[g0 * m * k..(g0 + 1) * m * k];
                            let bg = &b[g0 * n * k..(g0 + 1) * n * k];
                            // dA = G * B
                            for i in 0..m {
                                for j in 0..n {
                                    let gij = gg[i * n + j];
                                    for kk in 0..k {
                                        dag[i * k + kk] = dag[i * k + kk] + gij * bg[j * k + kk];
                                    }
                                }
                            }
                            // dB = G^T * A
                            for j in 0..n {
                                for i in 0..m {
                                    let gij = gg[i * n + j];
                                    for kk in 0..k {
                                        dbg[j * k + kk] = dbg[j * k + kk] + gij * ag[i * k + kk];
                                    }
                                }
                            }
                        });
                }
                pa.accumulate_grad(&da);
                pb.accumulate_grad(&db);
            },
        )
    }

    /// `[B, L, C] -> [B*heads, L, C/heads]`.
    pub fn split_heads(&self, heads: usize) -> Tensor<T> {
        let (b, l, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        assert_eq!(c % heads, 0, "channels not divisible by heads");
        let d = c / heads;
        let mut out = vec![T::zero(); b * l * c];
        {
            let a = self.data_ref();
            let a = a.as_slice();
            for bi in 0..b {
                for h in 0..heads {
                    for li in 0..l {
                        for j in 0..d {
                            out[((bi * heads + h) * l + li) * d + j] =
                                a[(bi * l + li) * c + h * d + j];
                        }
                    }
                }
            }
        }
        let pa = self.clone();
        Tensor::from_op(
            vec![b * heads, l, d],
            out,
            vec![self.clone()],
            move |g| {
                let mut da = vec![T::zero(); b * l * c];
                for bi in 0..b {
                    for h in 0..heads {
                        for li in 0..l {
                            for j in 0..d {
                                da[(bi * l + li) * c + h * d + j] =
                                    g[((bi * heads + h) * l + li) * d + j];
                            }
                        }
                    }
                }
                pa.accumulate_grad(&da);
            },
        )
    }

    /// `[B*heads, L, d] -> [B, L, heads*d]`; inverse of [`Tensor::split_heads`].
    pub fn merge_heads(&self, heads: usize) -> Tensor<T> {
        let (bh, l, d) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        assert_eq!(bh % heads, 0);
        let b = bh / heads;
        let c = heads * d;
        let mut out = vec![T::zero(); b * l * c];
        {
            let a = self.data_ref();
            let a = a.as_slice();
            for bi in 0..b {
                for h in 0..heads {
                    for li in 0..l {
                        for j in 0..d {
                            out[(bi * l + li) * c + h * d + j] =
                                a[((bi * heads + h) * l + li) * d + j];
                        }
                    }
                }
            }
        }
        let pa = self.clone();
        Tensor::from_op(vec![b, l, c], out, vec![self.clone()], move |g| {
            let mut da = vec![T::zero(); b * l * c];
            for bi in 0..b {
                for h in 0..heads {
                    for li in 0..l {
                        for j in 0..d {
                            da[((bi * heads + h) * l + li) * d + j] =
                                g[(bi * l + li) * c + h * d + j];
                        }
                    }
                }
            }
            pa.accumulate_grad(&da);
        })
    }

    /// `[B, C, H, W] -> [B, H*W, C]`.
    pub fn chw_to_seq(&self) -> Tensor<T> {
        let (b, c, h, w) = shape4(self.shape());
        let hw = h * w;
        let mut out = vec![T::zero(); b * hw * c];
        {
            let a = self.data_ref();
            let a = a.as_slice();
            for bi in 0..b {
                for ci in 0..c {
                    for p in 0..hw {
                        out[(bi * hw + p) * c + ci] = a[(bi * c + ci) * hw + p];
                    }
                }
            }
        }
        let pa = self.clone();
        Tensor::from_op(vec![b, hw, c], out, vec![self.clone()], move |g| {
            let mut da = vec![T::zero(); b * c * hw];
            for bi in 0..b {
                for ci in 0..c {
                    for p in 0..hw {
                        da[(bi * c + ci) * hw + p] = g[(bi * hw + p) * c + ci];
                    }
                }
            }
            pa.accumulate_grad(&da);
        })
    }

    /// `[B, H*W, C] -> [B, C, H, W]`; inverse of [`Tensor::chw_to_seq`].
    pub fn seq_to_chw(&self, h: usize, w: usize) -> Tensor<T> {
        let (b, hw, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        assert_eq!(hw, h * w);
        let mut out = vec![T::zero(); b * c * hw];
        {
            let a = self.data_ref();
            let a = a.as_slice();
            for bi in 0..b {
                for ci in 0..c {
                    for p in 0..hw {
                        out[(bi * c + ci) * hw + p] = a[(bi * hw + p) * c + ci];
                    }
                }
            }
        }
        let pa = self.clone();
        Tensor::from_op(vec![b, c, h, w], out, vec![self.clone()], move |g| {
            let mut da = vec![T::zero(); b * hw * c];
            for bi in 0..b {
                for ci in 0..c {
                    for p in 0..hw {
                        da[(bi * hw + p) * c + ci] = g[(bi * c + ci) * hw + p];
                    }
                }
            }
            pa.accumulate_grad(&da);
        })
    }

    /// Softmax over the last axis, numerically stabilized by max
    /// subtraction.
    pub fn softmax_last(&self) -> Tensor<T> {
        let shape = self.shape().to_vec();
        let l = *shape.last().expect("softmax needs an axis");
        let rows = self.numel() / l;
        let mut out = vec![T::zero(); self.numel()];
        {
            let a = self.data_ref();
            let a = a.as_slice();
            for r in 0..rows {
                let row = &a[r * l..(r + 1) * l];
                let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
                let mut denom = T::zero();
                for (j, &x) in row.iter().enumerate() {
                    let e = (x - m).exp();
                    out[r * l + j] = e;
                    denom = denom + e;
                }
                for j in 0..l {
                    out[r * l + j] = out[r * l + j] / denom;
                }
            }
        }
        let saved = out.clone();
        let pa = self.clone();
        Tensor::from_op(shape, out, vec![self.clone()], move |g| {
            let mut da = vec![T::zero(); saved.len()];
            for r in 0..rows {
                let y = &saved[r * l..(r + 1) * l];
                let gr = &g[r * l..(r + 1) * l];
                let dot = y
                    .iter()
                    .zip(gr)
                    .fold(T::zero(), |acc, (&yi, &gi)| acc + yi * gi);
                for j in 0..l {
                    da[r * l + j] = y[j] * (gr[j] - dot);
                }
            }
            pa.accumulate_grad(&da);
        })
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&self) -> Tensor<T> {
        let a = T::from_f64c(0.797_884_560_802_865_4); // sqrt(2/pi)
        let b = T::from_f64c(0.044_715);
        let half = T::from_f64c(0.5);
        let three = T::from_f64c(3.0);
        let data: Vec<T> = self
            .data_ref()
            .iter()
            .map(|&x| {
                let t = (a * (x + b * x * x * x)).tanh();
                half * x * (T::one() + t)
            })
            .collect();
        let pa = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |g| {
                let da: Vec<T> = {
                    let xs = pa.data_ref();
                    let xs = xs.as_slice();
                    xs.iter()
                        .zip(g)
                        .map(|(&x, &gi)| {
                            let u = a * (x + b * x * x * x);
                            let t = u.tanh();
                            let du = a * (T::one() + three * b * x * x);
                            let dy = half * (T::one() + t)
                                + half * x * (T::one() - t * t) * du;
                            gi * dy
                        })
                        .collect()
                };
                pa.accumulate_grad(&da);
            },
        )
    }

    /// Layer normalization over the last axis of `[.., C]`, with learned
    /// per-column scale and offset.
    pub fn layer_norm_rows(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Tensor<T> {
        let c = *self.shape().last().expect("layer norm needs an axis");
        let n = self.numel() / c;
        assert_eq!(gamma.shape(), [c]);
        assert_eq!(beta.shape(), [c]);
        let out_shape = self.shape().to_vec();
        let epst = T::from_f64c(eps);
        let cn = T::from_f64c(c as f64);

        let mut out = vec![T::zero(); n * c];
        let mut xhat = vec![T::zero(); n * c];
        let mut rstd = vec![T::zero(); n];
        {
            let x = self.data_ref();
            let x = x.as_slice();
            let gm = gamma.data_ref();
            let gm = gm.as_slice();
            let bt = beta.data_ref();
            let bt = bt.as_slice();
            for i in 0..n {
                let row = &x[i * c..(i + 1) * c];
                let mean = row.iter().fold(T::zero(), |s, &v| s + v) / cn;
                let var = row
                    .iter()
                    .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
                    / cn;
                let r = T::one() / (var + epst).sqrt();
                rstd[i] = r;
                for j in 0..c {
                    let xh = (row[j] - mean) * r;
                    xhat[i * c + j] = xh;
                    out[i * c + j] = gm[j] * xh + bt[j];
                }
            }
        }

        let (pa, pg, pb) = (self.clone(), gamma.clone(), beta.clone());
        let xhat = Rc::new(xhat);
        let rstd = Rc::new(rstd);
        Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g| {
                let mut da = vec![T::zero(); n * c];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                {
                    let gm = pg.data_ref();
                    let gm = gm.as_slice();
                    for i in 0..n {
                        let xh = &xhat[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let mut mean_dxhat = T::zero();
                        let mut mean_dxhat_xhat = T::zero();
                        for j in 0..c {
                            let dxh = gr[j] * gm[j];
                            mean_dxhat = mean_dxhat + dxh;
                            mean_dxhat_xhat = mean_dxhat_xhat + dxh * xh[j];
                            dgamma[j] = dgamma[j] + gr[j] * xh[j];
                            dbeta[j] = dbeta[j] + gr[j];
                        }
                        mean_dxhat = mean_dxhat / cn;
                        mean_dxhat_xhat = mean_dxhat_xhat / cn;
                        for j in 0..c {
                            let dxh = gr[j] * gm[j];
                            da[i * c + j] =
                                rstd[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                        }
                    }
                }
                pa.accumulate_grad(&da);
                pg.accumulate_grad(&dgamma);
                pb.accumulate_grad(&dbeta);
            },
        )
    }

    /// Full 2D convolution: `[B, Cin, H, W] * [Cout, Cin, kh, kw]`, with
    /// zero padding.
    pub fn conv2d(&self, w: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
        let (b, cin, h, wd) = shape4(self.shape());
        let (cout, cin2, kh, kw) = shape4(w.shape());
        assert_eq!(cin, cin2, "conv2d channel mismatch");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;

        let mut out = vec![T::zero(); b * cout * ho * wo];
        {
            let x = self.data_ref();
            let x = x.as_slice();
            let wv = w.data_ref();
            let wv = wv.as_slice();
            out.par_chunks_mut(cout * ho * wo)
                .enumerate()
                .for_each(|(bi, ob)| {
                    conv2d_forward_one(
                        &x[bi * cin * h * wd..(bi + 1) * cin * h * wd],
                        &wv,
                        ob,
                        (cin, h, wd),
                        (cout, kh, kw),
                        stride,
                        pad,
                    );
                });
        }

        let (pa, pw) = (self.clone(), w.clone());
        Tensor::from_op(
            vec![b, cout, ho, wo],
            out,
            vec![self.clone(), w.clone()],
            move |g| {
                let mut dx = vec![T::zero(); b * cin * h * wd];
                {
                    let wv = pw.data_ref();
                    let wv = wv.as_slice();
                    dx.par_chunks_mut(cin * h * wd)
                        .enumerate()
                        .for_each(|(bi, dxb)| {
                            let gb = &g[bi * cout * ho * wo..(bi + 1) * cout * ho * wo];
                            for co in 0..cout {
                                for oy in 0..ho {
                                    for ox in 0..wo {
                                        let gv = gb[(co * ho + oy) * wo + ox];
                                        for ci in 0..cin {
                                            for ky in 0..kh {
                                                let iy = oy * stride + ky;
                                                if iy < pad || iy - pad >= h {
                                                    continue;
                                                }
                                                for kx in 0..kw {
                                                    let ix = ox * stride + kx;
                                                    if ix < pad || ix - pad >= wd {
                                                        continue;
                                                    }
                                                    dxb[(ci * h + iy - pad) * wd + ix - pad] =
                                                        dxb[(ci * h + iy - pad) * wd + ix - pad]
                                                            + gv * wv
                                                                [((co * cin + ci) * kh + ky) * kw
                                                                    + kx];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        });
                }
                let mut dw = vec![T::zero(); cout * cin * kh * kw];
                {
                    let x = pa.data_ref();
                    let x = x.as_slice();
                    dw.par_chunks_mut(cin * kh * kw)
                        .enumerate()
                        .for_each(|(co, dwc)| {
                            for bi in 0..b {
                                let xb = &x[bi * cin * h * wd..(bi + 1) * cin * h * wd];
                                let gb = &g[bi * cout * ho * wo..(bi + 1) * cout * ho * wo];
                                for oy in 0..ho {
                                    for ox in 0..wo {
                                        let gv = gb[(co * ho + oy) * wo + ox];
                                        for ci in 0..cin {
                                            for ky in 0..kh {
                                                let iy = oy * stride + ky;
                                                if iy < pad || iy - pad >= h {
                                                    continue;
                                                }
                                                for kx in 0..kw {
                                                    let ix = ox * stride + kx;
                                                    if ix < pad || ix - pad >= wd {
                                                        continue;
                                                    }
                                                    dwc[(ci * kh + ky) * kw + kx] = dwc
                                                        [(ci * kh + ky) * kw + kx]
                                                        + gv * xb
                                                            [(ci * h + iy - pad) * wd + ix - pad];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        });
                }
                pa.accumulate_grad(&dx);
                pw.accumulate_grad(&dw);
            },
        )
    }

    /// Depthwise 2D convolution: one `[kh, kw]` kernel per channel.
    pub fn depthwise_conv2d(&self, w: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
        let (b, c, h, wd) = shape4(self.shape());
        let (c2, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        assert_eq!(c, c2, "depthwise channel mismatch");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;

        let mut out = vec![T::zero(); b * c * ho * wo];
        {
            let x = self.data_ref();
            let x = x.as_slice();
            let wv = w.data_ref();
            let wv = wv.as_slice();
            out.par_chunks_mut(ho * wo).enumerate().for_each(|(bc, oc)| {
                let (bi, ci) = (bc / c, bc % c);
                let xc = &x[(bi * c + ci) * h * wd..(bi * c + ci + 1) * h * wd];
                let wc = &wv[ci * kh * kw..(ci + 1) * kh * kw];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = T::zero();
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= wd {
                                    continue;
                                }
                                acc = acc + xc[(iy - pad) * wd + ix - pad] * wc[ky * kw + kx];
                            }
                        }
                        oc[oy * wo + ox] = acc;
                    }
                }
            });
        }

        let (pa, pw) = (self.clone(), w.clone());
        Tensor::from_op(
            vec![b, c, ho, wo],
            out,
            vec![self.clone(), w.clone()],
            move |g| {
                let mut dx = vec![T::zero(); b * c * h * wd];
                {
                    let wv = pw.data_ref();
                    let wv = wv.as_slice();
                    dx.par_chunks_mut(h * wd).enumerate().for_each(|(bc, dxc)| {
                        let (bi, ci) = (bc / c, bc % c);
                        let gc = &g[(bi * c + ci) * ho * wo..(bi * c + ci + 1) * ho * wo];
                        let wc = &wv[ci * kh * kw..(ci + 1) * kh * kw];
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gv = gc[oy * wo + ox];
                                for ky in 0..kh {
                                    let iy = oy * stride + ky;
                                    if iy < pad || iy - pad >= h {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = ox * stride + kx;
                                        if ix < pad || ix - pad >= wd {
                                            continue;
                                        }
                                        dxc[(iy - pad) * wd + ix - pad] =
                                            dxc[(iy - pad) * wd + ix - pad] + gv * wc[ky * kw + kx];
                                    }
                                }
                            }
                        }
                    });
                }
                let mut dw = vec![T::zero(); c * kh * kw];
                {
                    let x = pa.data_ref();
                    let x = x.as_slice();
                    dw.par_chunks_mut(kh * kw).enumerate().for_each(|(ci, dwc)| {
                        for bi in 0..b {
                            let xc = &x[(bi * c + ci) * h * wd..(bi * c + ci + 1) * h * wd];
                            let gc = &g[(bi * c + ci) * ho * wo..(bi * c + ci + 1) * ho * wo];
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let gv = gc[oy * wo + ox];
                                    for ky in 0..kh {
                                        let iy = oy * stride + ky;
                                        if iy < pad || iy - pad >= h {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = ox * stride + kx;
                                            if ix < pad || ix - pad >= wd {
                                                continue;
                                            }
                                            dwc[ky * kw + kx] = dwc[ky * kw + kx]
                                                + gv * xc[(iy - pad) * wd + ix - pad];
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                pa.accumulate_grad(&dx);
                pw.accumulate_grad(&dw);
            },
        )
    }

    /// Pointwise channel mix: `[B, Cin, H, W] * [Cout, Cin]`.
    pub fn conv1x1(&self, w: &Tensor<T>) -> Tensor<T> {
        let (b, cin, h, wd) = shape4(self.shape());
        let (cout, cin2) = (w.shape()[0], w.shape()[1]);
        assert_eq!(cin, cin2, "conv1x1 channel mismatch");
        let hw = h * wd;

        let mut out = vec![T::zero(); b * cout * hw];
        {
            let x = self.data_ref();
            let x = x.as_slice();
            let wv = w.data_ref();
            let wv = wv.as_slice();
            out.par_chunks_mut(cout * hw).enumerate().for_each(|(bi, ob)| {
                let xb = &x[bi * cin * hw..(bi + 1) * cin * hw];
                for co in 0..cout {
                    let oc = &mut ob[co * hw..(co + 1) * hw];
                    for ci in 0..cin {
                        let wv_ = wv[co * cin + ci];
                        let xc = &xb[ci * hw..(ci + 1) * hw];
                        for (o, &xv) in oc.iter_mut().zip(xc) {
                            *o = *o + wv_ * xv;
                        }
                    }
                }
            });
        }

        let (pa, pw) = (self.clone(), w.clone());
        Tensor::from_op(
            vec![b, cout, h, wd],
            out,
            vec![self.clone(), w.clone()],
            move |g| {
                let mut dx = vec![T::zero(); b * cin * hw];
                {
                    let wv = pw.data_ref();
                    let wv = wv.as_slice();
                    dx.par_chunks_mut(cin * hw).enumerate().for_each(|(bi, dxb)| {
                        let gb = &g[bi * cout * hw..(bi + 1) * cout * hw];
                        for ci in 0..cin {
                            let dxc = &mut dxb[ci * hw..(ci + 1) * hw];
                            for co in 0..cout {
                                let wv_ = wv[co * cin + ci];
                                let gc = &gb[co * hw..(co + 1) * hw];
                                for (o, &gv) in dxc.iter_mut().zip(gc) {
                                    *o = *o + wv_ * gv;
                                }
                            }
                        }
                    });
                }
                let mut dw = vec![T::zero(); cout * cin];
                {
                    let x = pa.data_ref();
                    let x = x.as_slice();
                    dw.par_chunks_mut(cin).enumerate().for_each(|(co, dwr)| {
                        for bi in 0..b {
                            let xb = &x[bi * cin * hw..(bi + 1) * cin * hw];
                            let gc = &g[(bi * cout + co) * hw..(bi * cout + co + 1) * hw];
                            for (ci, o) in dwr.iter_mut().enumerate() {
                                let xc = &xb[ci * hw..(ci + 1) * hw];
                                let mut acc = T::zero();
                                for (&xv, &gv) in xc.iter().zip(gc) {
                                    acc = acc + xv * gv;
                                }
                                *o = *o + acc;
                            }
                        }
                    });
                }
                pa.accumulate_grad(&dx);
                pw.accumulate_grad(&dw);
            },
        )
    }

    /// 2x2 average pooling with stride 2; spatial dims must be even.
    pub fn avg_pool_2x2(&self) -> Tensor<T> {
        let (b, c, h, w) = shape4(self.shape());
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool_2x2 needs even dims");
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::from_f64c(0.25);

        let mut out = vec![T::zero(); b * c * ho * wo];
        {
            let x = self.data_ref();
            let x = x.as_slice();
            for bc in 0..b * c {
                let xc = &x[bc * h * w..(bc + 1) * h * w];
                let oc = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (iy, ix) = (oy * 2, ox * 2);
                        oc[oy * wo + ox] = (xc[iy * w + ix]
                            + xc[iy * w + ix + 1]
                            + xc[(iy + 1) * w + ix]
                            + xc[(iy + 1) * w + ix + 1])
                            * quarter;
                    }
                }
            }
        }
        let pa = self.clone();
        Tensor::from_op(
            vec![b, c, ho, wo],
            out,
            vec![self.clone()],
            move |g| {
                let mut dx = vec![T::zero(); b * c * h * w];
                for bc in 0..b * c {
                    let gc = &g[bc * ho * wo..(bc + 1) * ho * wo];
                    let dxc = &mut dx[bc * h * w..(bc + 1) * h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = gc[oy * wo + ox] * quarter;
                            let (iy, ix) = (oy * 2, ox * 2);
                            dxc[iy * w + ix] = dxc[iy * w + ix] + gv;
                            dxc[iy * w + ix + 1] = dxc[iy * w + ix + 1] + gv;
                            dxc[(iy + 1) * w + ix] = dxc[(iy + 1) * w + ix] + gv;
                            dxc[(iy + 1) * w + ix + 1] = dxc[(iy + 1) * w + ix + 1] + gv;
                        }
                    }
                }
                pa.accumulate_grad(&dx);
            },
        )
    }

    /// Global 2D average pool: `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&self) -> Tensor<T> {
        let (b, c, h, w) = shape4(self.shape());
        let hw = h * w;
        let inv = T::from_f64c(1.0 / hw as f64);
        let mut out = vec![T::zero(); b * c];
        {
            let x = self.data_ref();
            let x = x.as_slice();
            for (bc, o) in out.iter_mut().enumerate() {
                let xc = &x[bc * hw..(bc + 1) * hw];
                *o = xc.iter().fold(T::zero(), |s, &v| s + v) * inv;
            }
        }
        let pa = self.clone();
        Tensor::from_op(vec![b, c], out, vec![self.clone()], move |g| {
            let mut dx = vec![T::zero(); b * c * hw];
            for bc in 0..b * c {
                let gv = g[bc] * inv;
                for p in 0..hw {
                    dx[bc * hw + p] = gv;
                }
            }
            pa.accumulate_grad(&dx);
        })
    }

    /// Add a learned relative-position bias to attention scores
    /// `[B*heads, L, L]`. `index` maps each (query, key) pair to a slot in
    /// the per-head bias table `[heads, table_len]`.
    pub fn add_rel_bias(&self, table: &Tensor<T>, index: &Rc<RelBiasIndex>) -> Tensor<T> {
        let (g0, l, l2) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let heads = table.shape()[0];
        assert_eq!(l, l2);
        assert_eq!(index.len, l);
        assert_eq!(table.shape()[1], index.table_len);
        assert_eq!(g0 % heads, 0, "batch-head count not divisible by heads");

        let mut out = vec![T::zero(); g0 * l * l];
        {
            let x = self.data_ref();
            let x = x.as_slice();
            let tb = table.data_ref();
            let tb = tb.as_slice();
            for gi in 0..g0 {
                let head = gi % heads;
                let trow = &tb[head * index.table_len..(head + 1) * index.table_len];
                let xo = &x[gi * l * l..(gi + 1) * l * l];
                let oo = &mut out[gi * l * l..(gi + 1) * l * l];
                for (p, (&xv, o)) in xo.iter().zip(oo.iter_mut()).enumerate() {
                    *o = xv + trow[index.map[p]];
                }
            }
        }

        let (pa, pt) = (self.clone(), table.clone());
        let idx = Rc::clone(index);
        Tensor::from_op(
            vec![g0, l, l],
            out,
            vec![self.clone(), table.clone()],
            move |g| {
                pa.accumulate_grad(g);
                let mut dt = vec![T::zero(); heads * idx.table_len];
                for gi in 0..g0 {
                    let head = gi % heads;
                    let go = &g[gi * l * l..(gi + 1) * l * l];
                    for (p, &gv) in go.iter().enumerate() {
                        let slot = head * idx.table_len + idx.map[p];
                        dt[slot] = dt[slot] + gv;
                    }
                }
                pt.accumulate_grad(&dt);
            },
        )
    }

    /// Mean cross entropy between logit rows `[B, K]` and integer labels,
    /// computed with max subtraction.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>, TensorError> {
        let (bsz, k) = (self.shape()[0], self.shape()[1]);
        if labels.len() != bsz {
            return Err(TensorError::Shape(format!(
                "{} labels for batch of {bsz}",
                labels.len()
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(TensorError::Label {
                    sample: i,
                    label: l,
                    classes: k,
                });
            }
        }

        let mut softmax = vec![T::zero(); bsz * k];
        let mut total = T::zero();
        {
            let x = self.data_ref();
            let x = x.as_slice();
            for i in 0..bsz {
                let row = &x[i * k..(i + 1) * k];
                let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
                let mut denom = T::zero();
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - m).exp();
                    softmax[i * k + j] = e;
                    denom = denom + e;
                }
                for j in 0..k {
                    softmax[i * k + j] = softmax[i * k + j] / denom;
                }
                let lse = m + denom.ln();
                total = total + (lse - row[labels[i]]);
            }
        }
        let bn = T::from_f64c(bsz as f64);
        let loss = total / bn;

        let labels = labels.to_vec();
        let pa = self.clone();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone()],
            move |g| {
                let g0 = g[0];
                let mut dx = vec![T::zero(); bsz * k];
                for i in 0..bsz {
                    for j in 0..k {
                        let delta = if labels[i] == j { T::one() } else { T::zero() };
                        dx[i * k + j] = g0 * (softmax[i * k + j] - delta) / bn;
                    }
                }
                pa.accumulate_grad(&dx);
            },
        ))
    }
}

fn shape4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected a 4-D tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward_one<T: Scalar>(
    x: &[T],
    w: &[T],
    out: &mut [T],
    (cin, h, wd): (usize, usize, usize),
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = T::zero();
                for ci in 0..cin {
                    for ky in 0..kh {
                        let iy = oy * stride + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = ox * stride + kx;
                            if ix < pad || ix - pad >= wd {
                                continue;
                            }
                            acc = acc
                                + x[(ci * h + iy - pad) * wd + ix - pad]
                                    * w[((co * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = acc;
            }
        }
    }
}

/// Precomputed (query, key) -> bias-table slot mapping for one spatial grid.
/// Row/column offsets are clamped to `[-clamp, clamp]`.
#[derive(Debug)]
pub struct RelBiasIndex {
    pub len: usize,
    pub table_len: usize,
    pub map: Vec<usize>,
}

impl RelBiasIndex {
    pub fn for_grid(height: usize, width: usize, clamp: i64) -> Self {
        let side = (2 * clamp + 1) as usize;
        let l = height * width;
        let mut map = Vec::with_capacity(l * l);
        for qi in 0..l {
            let (qr, qc) = ((qi / width) as i64, (qi % width) as i64);
            for ki in 0..l {
                let (kr, kc) = ((ki / width) as i64, (ki % width) as i64);
                let dr = (qr - kr).clamp(-clamp, clamp) + clamp;
                let dc = (qc - kc).clamp(-clamp, clamp) + clamp;
                map.push((dr as usize) * side + dc as usize);
            }
        }
        RelBiasIndex {
            len: l,
            table_len: side * side,
            map,
        }
    }
}

#[cfg(test)]
pub(crate) fn assert_grads_match(
    param: &Tensor<f64>,
    build_loss: &dyn Fn() -> Tensor<f64>,
    coords: &[usize],
    tol: f64,
) {
    param.zero_grad();
    let loss = build_loss();
    loss.backward().unwrap();
    let analytic = param.grad().unwrap();
    for &c in coords {
        let numeric = super::numeric_grad(param, c, 1e-5, || {
            super::no_grad(|| build_loss().value_at(0))
        });
        let denom = numeric.abs().max(analytic[c].abs()).max(1e-6);
        let rel = (analytic[c] - numeric).abs() / denom;
        assert!(
            rel <= tol,
            "grad mismatch at coord {c}: analytic {} vs numeric {numeric} (rel {rel})",
            analytic[c]
        );
    }
}

#[cfg(test)]
mod tests {
    use super::super::{no_grad, Tensor};
    use super::*;
    use crate::util::rng_for;
    use rand::Rng;

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = rng_for(&[seed]);
        let n: usize = shape.iter().product();
        Tensor::param(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Reduce any tensor to a scalar with fixed pseudo-random weights so
    /// gradients reach every coordinate.
    fn weighted_sum(t: &Tensor<f64>, seed: u64) -> Tensor<f64> {
        let mut rng = rng_for(&[seed]);
        let w = Tensor::from_vec(
            t.shape(),
            (0..t.numel()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        t.mul(&w).sum_all()
    }

    #[test]
    fn matmul_known_values() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::<f64>::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(a.matmul(&b).values(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn conv2d_hand_example_ones() {
        // 3x3 ones input, 3x3 ones kernel, pad 1 stride 1:
        // corners see 4 taps, edges 6, center 9.
        let x = Tensor::<f64>::from_vec(&[1, 1, 3, 3], vec![1.0; 9]);
        let w = Tensor::<f64>::from_vec(&[1, 1, 3, 3], vec![1.0; 9]);
        let y = x.conv2d(&w, 1, 1);
        assert_eq!(
            y.values(),
            vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn depthwise_center_delta_is_identity() {
        let x = randn(&[2, 3, 4, 4], 1);
        let mut kernel = vec![0.0; 3 * 9];
        for c in 0..3 {
            kernel[c * 9 + 4] = 1.0; // center tap
        }
        let w = Tensor::from_vec(&[3, 3, 3], kernel);
        let y = x.depthwise_conv2d(&w, 1, 1);
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn conv1x1_identity_kernel_is_identity() {
        let x = randn(&[2, 3, 4, 4], 2);
        let mut eye = vec![0.0; 9];
        for c in 0..3 {
            eye[c * 3 + c] = 1.0;
        }
        let w = Tensor::from_vec(&[3, 3], eye);
        assert_eq!(x.conv1x1(&w).values(), x.values());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let x = randn(&[4, 7], 3);
        let y = x.softmax_last();
        for r in 0..4 {
            let s: f64 = y.values()[r * 7..(r + 1) * 7].iter().sum();
            assert!((s - 1.0).abs() <= 1e-6);
        }
        let shifted = x.scale(1.0).add(&Tensor::from_vec(&[4, 7], vec![3.25; 28]));
        let y2 = shifted.softmax_last();
        for (a, b) in y.values().iter().zip(y2.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn avg_pool_and_global_pool_values() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.avg_pool_2x2().values(), vec![2.5]);
        assert_eq!(x.global_avg_pool().values(), vec![2.5]);
    }

    #[test]
    fn head_split_round_trip() {
        let x = randn(&[2, 5, 8], 4);
        let back = x.split_heads(4).merge_heads(4);
        assert_eq!(back.values(), x.values());
        let y = randn(&[2, 3, 4, 4], 5);
        let back = y.chw_to_seq().seq_to_chw(4, 4);
        assert_eq!(back.values(), y.values());
    }

    #[test]
    fn rel_bias_index_clamps_offsets() {
        let idx = RelBiasIndex::for_grid(2, 2, 7);
        assert_eq!(idx.len, 4);
        assert_eq!(idx.table_len, 225);
        // query 0 vs key 3: offsets (-1, -1) -> (6, 6)
        assert_eq!(idx.map[3], 6 * 15 + 6);
        // diagonal offsets are (0,0) -> center slot
        for q in 0..4 {
            assert_eq!(idx.map[q * 4 + q], 7 * 15 + 7);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let x = Tensor::<f64>::from_vec(&[2, 36], vec![0.0; 72]);
        let loss = x.cross_entropy(&[0, 35]).unwrap();
        assert!((loss.value_at(0) - (36f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let x = Tensor::<f64>::from_vec(&[1, 4], vec![0.0; 4]);
        assert!(matches!(
            x.cross_entropy(&[4]),
            Err(TensorError::Label { .. })
        ));
    }

    #[test]
    fn cross_entropy_confident_correct_is_small() {
        let mut row = vec![0.0; 36];
        row[7] = 20.0;
        let x = Tensor::<f64>::from_vec(&[1, 36], row);
        assert!(x.cross_entropy(&[7]).unwrap().value_at(0) < 1e-3);
    }

    // gradient checks per op

    #[test]
    fn grads_elementwise_and_matmul() {
        let a = randn(&[3, 4], 10);
        let b = randn(&[4, 5], 11);
        assert_grads_match(&a, &|| weighted_sum(&a.matmul(&b), 12), &[0, 5, 11], 1e-6);
        assert_grads_match(&b, &|| weighted_sum(&a.matmul(&b), 12), &[0, 9, 19], 1e-6);
        let c = randn(&[6], 13);
        assert_grads_match(&c, &|| weighted_sum(&c.gelu(), 14), &[0, 3, 5], 1e-6);
        assert_grads_match(&c, &|| weighted_sum(&c.mul(&c), 15), &[1, 2], 1e-6);
    }

    #[test]
    fn grads_softmax_and_cross_entropy() {
        let x = randn(&[3, 6], 20);
        assert_grads_match(&x, &|| weighted_sum(&x.softmax_last(), 21), &[0, 7, 17], 1e-6);
        assert_grads_match(&x, &|| x.cross_entropy(&[1, 0, 5]).unwrap(), &[0, 6, 12, 17], 1e-6);
    }

    #[test]
    fn grads_convolutions() {
        let x = randn(&[2, 3, 6, 6], 30);
        let w = randn(&[4, 3, 3, 3], 31);
        assert_grads_match(&x, &|| weighted_sum(&x.conv2d(&w, 2, 1), 32), &[0, 50, 100], 1e-6);
        assert_grads_match(&w, &|| weighted_sum(&x.conv2d(&w, 2, 1), 32), &[0, 30, 80], 1e-6);

        let dwk = randn(&[3, 3, 3], 33);
        assert_grads_match(&x, &|| weighted_sum(&x.depthwise_conv2d(&dwk, 2, 1), 34), &[5, 77], 1e-6);
        assert_grads_match(&dwk, &|| weighted_sum(&x.depthwise_conv2d(&dwk, 2, 1), 34), &[0, 13, 26], 1e-6);

        let pw = randn(&[5, 3], 35);
        assert_grads_match(&x, &|| weighted_sum(&x.conv1x1(&pw), 36), &[0, 99], 1e-6);
        assert_grads_match(&pw, &|| weighted_sum(&x.conv1x1(&pw), 36), &[0, 7, 14], 1e-6);
    }

    #[test]
    fn grads_norm_pool_bias() {
        let x = randn(&[4, 6], 40);
        let gamma = randn(&[6], 41);
        let beta = randn(&[6], 42);
        let build = || weighted_sum(&x.layer_norm_rows(&gamma, &beta, 1e-5), 43);
        assert_grads_match(&x, &build, &[0, 10, 23], 1e-5);
        assert_grads_match(&gamma, &build, &[0, 3, 5], 1e-6);
        assert_grads_match(&beta, &build, &[1, 4], 1e-6);

        let y = randn(&[1, 2, 4, 4], 44);
        assert_grads_match(&y, &|| weighted_sum(&y.avg_pool_2x2(), 45), &[0, 15, 31], 1e-6);
        assert_grads_match(&y, &|| weighted_sum(&y.global_avg_pool(), 46), &[0, 16], 1e-6);

        let b = randn(&[6], 47);
        assert_grads_match(&b, &|| weighted_sum(&x.add_row_bias(&b), 48), &[0, 5], 1e-6);
    }

    #[test]
    fn grads_attention_plumbing() {
        let q = randn(&[4, 5, 3], 50); // [G, L, d]
        let k = randn(&[4, 5, 3], 51);
        let v = randn(&[4, 5, 3], 52);
        let build = || {
            let scores = q.bmm_nt(&k).scale(1.0 / (3f64).sqrt());
            weighted_sum(&scores.softmax_last().bmm_nn(&v), 53)
        };
        assert_grads_match(&q, &build, &[0, 30, 59], 1e-5);
        assert_grads_match(&k, &build, &[1, 29, 58], 1e-5);
        assert_grads_match(&v, &build, &[2, 31, 57], 1e-5);

        let table = randn(&[2, 225], 54);
        let idx = Rc::new(RelBiasIndex::for_grid(2, 2, 7));
        let scores = randn(&[4, 4, 4], 55); // batch 2 * heads 2
        let build2 = || weighted_sum(&scores.add_rel_bias(&table, &idx).softmax_last(), 56);
        assert_grads_match(&table, &build2, &[6 * 15 + 6, 7 * 15 + 7, 100], 1e-5);
        assert_grads_match(&scores, &build2, &[0, 33, 63], 1e-5);
    }

    #[test]
    fn eval_mode_is_deterministic_and_tape_free() {
        let x = randn(&[2, 3, 4, 4], 60);
        let w = randn(&[2, 3, 3, 3], 61);
        let a = no_grad(|| x.conv2d(&w, 1, 1)).values();
        let b = no_grad(|| x.conv2d(&w, 1, 1)).values();
        assert_eq!(a, b);
    }
}
