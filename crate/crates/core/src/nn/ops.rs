//! Forward kernels and their adjoints.
//!
//! Spatial ops take either a single `[C, H, W]` image or a `[N, C, H, W]`
//! batch and return the same rank. `dense` takes `[n]` or `[N, n]`.

use super::real::{gemm, Real};
use super::tensor::Tensor;
use super::NnError;

fn mismatch(op: &'static str, expected: Vec<usize>, found: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        op,
        expected,
        found: found.to_vec(),
    }
}

/// Splits a rank-3 or rank-4 image shape into `(batch, c, h, w, batched)`.
pub(crate) fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize, bool), NnError> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w, false)),
        [n, c, h, w] => Ok((n, c, h, w, true)),
        _ => Err(NnError::RankMismatch {
            op,
            expected: "3 or 4",
            found: shape.to_vec(),
        }),
    }
}

fn image_shape(batched: bool, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![n, c, h, w]
    } else {
        vec![c, h, w]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub batched: bool,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernels: &[usize],
        bias: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self, NnError> {
        let (batch, c_in, h, w, batched) = image_dims("conv2d", input)?;
        let [c_out, kc, kh, kw] = *kernels else {
            return Err(NnError::RankMismatch {
                op: "conv2d",
                expected: "4 (kernels)",
                found: kernels.to_vec(),
            });
        };
        if kc != c_in {
            return Err(mismatch("conv2d", vec![c_out, c_in, kh, kw], kernels));
        }
        if kh != kw {
            return Err(NnError::InvalidArgument(format!(
                "conv2d: only square kernels are supported, got {kh}x{kw}"
            )));
        }
        if bias != [c_out] {
            return Err(mismatch("conv2d", vec![c_out], bias));
        }
        if stride == 0 {
            return Err(NnError::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(NnError::InvalidArgument(format!(
                "conv2d: kernel {kh} exceeds padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        Ok(Self {
            batch,
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            padding,
            h_out: (h + 2 * padding - kh) / stride + 1,
            w_out: (w + 2 * padding - kw) / stride + 1,
            batched,
        })
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }

    pub fn output_shape(&self) -> Vec<usize> {
        image_shape(self.batched, self.batch, self.c_out, self.h_out, self.w_out)
    }

    /// Input row/column read by output position `o` at kernel offset `r`,
    /// or `None` if it falls in the zero padding.
    #[inline]
    fn source(&self, o: usize, r: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + r) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// Half-open range of output columns whose kernel tap `kx` lands inside
    /// the unpadded input.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        // ix = ox·stride + kx − padding must lie in 0..w
        let lo = self.padding.saturating_sub(kx).div_ceil(self.stride);
        let hi = if self.w + self.padding > kx {
            ((self.w + self.padding - kx - 1) / self.stride + 1).min(self.w_out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image into a `[c_in·k·k, h_out·w_out]` patch matrix.
fn im2col<T: Real>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = g.valid_cols(kx);
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let out_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        out_row.fill(T::zero());
                        continue;
                    };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if lo < hi {
                        let first = lo * g.stride + kx - g.padding;
                        if g.stride == 1 {
                            out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (j, v) in out_row[lo..hi].iter_mut().enumerate() {
                                *v = src[first + j * g.stride];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<T: Real>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let cols = g.col_cols();
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = g.valid_cols(kx);
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let Some(iy) = g.source(oy, ky, g.h) else { continue };
                    if lo >= hi {
                        continue;
                    }
                    let first = lo * g.stride + kx - g.padding;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let s = &src[oy * g.w_out + lo..oy * g.w_out + hi];
                    if g.stride == 1 {
                        dst[first..first + hi - lo].iter_mut().zip(s).for_each(|(d, &v)| *d += v);
                    } else {
                        for (j, &v) in s.iter().enumerate() {
                            dst[first + j * g.stride] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-D cross-correlation plus per-channel bias.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NnError> {
    let g = ConvGeometry::new(input.shape(), kernels.shape(), bias.shape(), stride, padding)?;
    Ok(Tensor::new(
        &g.output_shape(),
        conv2d_forward(input.values(), kernels.values(), bias.values(), &g),
    )
    .expect("conv output shape"))
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], k: &[T], b: &[T], g: &ConvGeometry) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * cols;
    let mut out = vec![T::zero(); g.batch * out_sz];
    let mut col = vec![T::zero(); rows * cols];
    for n in 0..g.batch {
        im2col(&x[n * in_sz..(n + 1) * in_sz], g, &mut col);
        let y = &mut out[n * out_sz..(n + 1) * out_sz];
        for (co, chunk) in y.chunks_mut(cols).enumerate() {
            chunk.fill(b[co]);
        }
        gemm(g.c_out, rows, cols, T::one(), (k, rows, 1), (&col, cols, 1), T::one(), y, cols, 1);
    }
    out
}

/// Gradients of conv2d w.r.t. `(input, kernels, bias)`; the input gradient
/// is only formed when `need_input` is set.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    k: &[T],
    dy: &[T],
    g: &ConvGeometry,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * cols;
    let mut dk = vec![T::zero(); g.c_out * rows];
    let mut db = vec![T::zero(); g.c_out];
    let mut dx = need_input.then(|| vec![T::zero(); g.batch * in_sz]);
    let mut col = vec![T::zero(); rows * cols];
    let mut dcol = if need_input { vec![T::zero(); rows * cols] } else { Vec::new() };
    for n in 0..g.batch {
        let dyn_ = &dy[n * out_sz..(n + 1) * out_sz];
        for (co, chunk) in dyn_.chunks(cols).enumerate() {
            db[co] += chunk.iter().copied().sum::<T>();
        }
        im2col(&x[n * in_sz..(n + 1) * in_sz], g, &mut col);
        // dk += dy_n · colᵀ
        gemm(g.c_out, cols, rows, T::one(), (dyn_, cols, 1), (&col, 1, cols), T::one(), &mut dk, rows, 1);
        if let Some(dx) = dx.as_mut() {
            // dcol = kᵀ · dy_n
            gemm(rows, g.c_out, cols, T::one(), (k, 1, rows), (dyn_, cols, 1), T::zero(), &mut dcol, cols, 1);
            col2im(&dcol, g, &mut dx[n * in_sz..(n + 1) * in_sz]);
        }
    }
    (dx, dk, db)
}

/// Non-overlapping mean pooling with a square window.
pub fn avgpool2d<T: Real>(input: &Tensor<T>, window: usize) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w, batched) = image_dims("avgpool2d", input.shape())?;
    check_pool(window, h, w)?;
    let (ho, wo) = (h / window, w / window);
    let scale = T::one() / T::from_f64((window * window) as f64);
    let x = input.values();
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for iy in 0..h {
            for ix in 0..w {
                dst[(iy / window) * wo + ix / window] += src[iy * w + ix];
            }
        }
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(Tensor::new(&image_shape(batched, n, c, ho, wo), out).expect("pool output shape"))
}

pub(crate) fn check_pool(window: usize, h: usize, w: usize) -> Result<(), NnError> {
    if window == 0 || !h.is_multiple_of(window) || !w.is_multiple_of(window) {
        return Err(NnError::InvalidArgument(format!(
            "avgpool2d: window {window} does not divide {h}x{w}"
        )));
    }
    Ok(())
}

pub(crate) fn avgpool2d_backward<T: Real>(dy: &[T], in_shape: &[usize], window: usize) -> Vec<T> {
    let (n, c, h, w, _) = image_dims("avgpool2d", in_shape).expect("validated in forward");
    let (ho, wo) = (h / window, w / window);
    let scale = T::one() / T::from_f64((window * window) as f64);
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &dy[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for iy in 0..h {
            for ix in 0..w {
                dst[iy * w + ix] = src[(iy / window) * wo + ix / window] * scale;
            }
        }
    }
    dx
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample2d<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w, batched) = image_dims("upsample2d", input.shape())?;
    if factor == 0 {
        return Err(NnError::InvalidArgument("upsample2d: factor must be >= 1".into()));
    }
    let (ho, wo) = (h * factor, w * factor);
    let x = input.values();
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[oy * wo + ox] = src[(oy / factor) * w + ox / factor];
            }
        }
    }
    Ok(Tensor::new(&image_shape(batched, n, c, ho, wo), out).expect("upsample output shape"))
}

pub(crate) fn upsample2d_backward<T: Real>(dy: &[T], in_shape: &[usize], factor: usize) -> Vec<T> {
    let (n, c, h, w, _) = image_dims("upsample2d", in_shape).expect("validated in forward");
    let (ho, wo) = (h * factor, w * factor);
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &dy[plane * ho * wo..(plane + 1) * ho * wo];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                dst[(oy / factor) * w + ox / factor] += src[oy * wo + ox];
            }
        }
    }
    dx
}

/// Returns `(batch, inputs, outputs, batched)` for a dense layer.
pub(crate) fn dense_dims(
    input: &[usize],
    weights: &[usize],
    bias: &[usize],
) -> Result<(usize, usize, usize, bool), NnError> {
    let (batch, n, batched) = match *input {
        [n] => (1, n, false),
        [b, n] => (b, n, true),
        _ => {
            return Err(NnError::RankMismatch {
                op: "dense",
                expected: "1 or 2",
                found: input.to_vec(),
            })
        }
    };
    let [m, wn] = *weights else {
        return Err(NnError::RankMismatch {
            op: "dense",
            expected: "2 (weights)",
            found: weights.to_vec(),
        });
    };
    if wn != n {
        return Err(mismatch("dense", vec![m, n], weights));
    }
    if bias != [m] {
        return Err(mismatch("dense", vec![m], bias));
    }
    Ok((batch, n, m, batched))
}

/// Affine map `W·x + b`, applied row-wise to a batch.
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (batch, n, m, batched) = dense_dims(input.shape(), weights.shape(), bias.shape())?;
    let out = dense_forward(input.values(), weights.values(), bias.values(), batch, n, m);
    let shape = if batched { vec![batch, m] } else { vec![m] };
    Ok(Tensor::new(&shape, out).expect("dense output shape"))
}

pub(crate) fn dense_forward<T: Real>(x: &[T], w: &[T], b: &[T], batch: usize, n: usize, m: usize) -> Vec<T> {
    let mut out: Vec<T> = (0..batch).flat_map(|_| b.iter().copied()).collect();
    // out[batch×m] += x[batch×n] · wᵀ
    gemm(batch, n, m, T::one(), (x, n, 1), (w, 1, n), T::one(), &mut out, m, 1);
    out
}

pub(crate) fn dense_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    batch: usize,
    n: usize,
    m: usize,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); m * n];
    gemm(m, batch, n, T::one(), (dy, 1, m), (x, n, 1), T::zero(), &mut dw, n, 1);
    let mut db = vec![T::zero(); m];
    for row in dy.chunks(m) {
        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
    }
    let dx = need_input.then(|| {
        let mut dx = vec![T::zero(); batch * n];
        gemm(batch, m, n, T::one(), (dy, m, 1), (w, n, 1), T::zero(), &mut dx, n, 1);
        dx
    });
    (dx, dw, db)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn check_same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a.shape().to_vec(), b.shape()));
    }
    Ok(())
}

/// Mean of squared elementwise differences.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T, NnError> {
    check_same_shape("mse_loss", pred, target)?;
    let sum: T = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok(sum / T::from_f64(pred.len() as f64))
}

/// Mean of absolute elementwise differences.
pub fn mae_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T, NnError> {
    check_same_shape("mae_loss", pred, target)?;
    let sum: T = pred.values().iter().zip(target.values()).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(sum / T::from_f64(pred.len() as f64))
}

/// Per-sample mean squared error over all but the leading axis.
pub fn sample_mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<T>, NnError> {
    check_same_shape("sample_mse", pred, target)?;
    let per = pred.len() / pred.shape()[0];
    let inv = T::one() / T::from_f64(per as f64);
    Ok(pred
        .values()
        .chunks(per)
        .zip(target.values().chunks(per))
        .map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() * inv)
        .collect())
}

/// Per-sample mean absolute error over all but the leading axis.
pub fn sample_mae<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<T>, NnError> {
    check_same_shape("sample_mae", pred, target)?;
    let per = pred.len() / pred.shape()[0];
    let inv = T::one() / T::from_f64(per as f64);
    Ok(pred
        .values()
        .chunks(per)
        .zip(target.values().chunks(per))
        .map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| (a - b).abs()).sum::<T>() * inv)
        .collect())
}
