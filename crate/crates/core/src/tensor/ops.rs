use serde::{Deserialize, Serialize};

use super::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// Variance floor used by [`channel_norm`].
pub const NORM_EPS: f64 = 1e-5;
/// EMA momentum for running normalization statistics.
pub const NORM_MOMENTUM: f64 = 0.9;

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        m,
        k,
        n,
        a.data(),
        false,
        b.data(),
        false,
        T::zero(),
        out.data_mut(),
    );
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

/// Resolved sizes of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output extent and leading pad along one axis. `same` follows the
/// TensorFlow convention: `ceil(n / stride)` outputs, extra pad at the end.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::invalid("conv stride must be >= 1"));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {kernel} larger than input {input}"),
                ));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            if kernel > input + total {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {kernel} larger than padded input {}", input + total),
                ));
            }
            Ok((out, total / 2))
        }
    }
}

pub fn conv_geometry(
    input: &[usize],
    kernel: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    if input.len() != 4 || kernel.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("expected NCHW input and OCkk kernel, got {input:?} / {kernel:?}"),
        ));
    }
    if input[1] != kernel[1] {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {} channels, kernel expects {}",
                input[1], kernel[1]
            ),
        ));
    }
    let (out_h, pad_top) = conv_output_extent(input[2], kernel[2], stride, padding)?;
    let (out_w, pad_left) = conv_output_extent(input[3], kernel[3], stride, padding)?;
    Ok(ConvGeometry {
        batch: input[0],
        in_channels: input[1],
        in_h: input[2],
        in_w: input[3],
        out_channels: kernel[0],
        kh: kernel[2],
        kw: kernel[3],
        stride,
        pad_top,
        pad_left,
        out_h,
        out_w,
    })
}

/// Output columns `[lo, hi)` whose input column `ox·stride + kx - pad_left` is in range.
fn valid_cols(g: &ConvGeometry, kx: usize) -> (usize, usize) {
    let lo = g.pad_left.saturating_sub(kx).div_ceil(g.stride);
    let hi = (g.in_w + g.pad_left)
        .checked_sub(kx)
        .map_or(0, |e| e.div_ceil(g.stride))
        .min(g.out_w);
    (lo.min(hi), hi)
}

/// Columns laid out `[C·kh·kw, N·P]` so one GEMM covers the whole batch.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry) -> Vec<T> {
    let p = g.positions();
    let np = g.batch * p;
    let mut cols = vec![T::zero(); g.patch() * np];
    for c in 0..g.in_channels {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                if lo == hi {
                    continue;
                }
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst_row = &mut cols[row * np..(row + 1) * np];
                for n in 0..g.batch {
                    let src = &x[(n * g.in_channels + c) * g.in_h * g.in_w..];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.in_w..];
                        let dst = &mut dst_row[n * p + oy * g.out_w..][lo..hi];
                        let first = lo * g.stride + kx - g.pad_left;
                        if g.stride == 1 {
                            dst.copy_from_slice(&src_row[first..first + (hi - lo)]);
                        } else {
                            for (d, s) in dst
                                .iter_mut()
                                .zip(src_row[first..].iter().step_by(g.stride))
                            {
                                *d = *s;
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let p = g.positions();
    let np = g.batch * p;
    let mut x = vec![T::zero(); g.batch * g.in_channels * g.in_h * g.in_w];
    for c in 0..g.in_channels {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let (lo, hi) = valid_cols(g, kx);
                if lo == hi {
                    continue;
                }
                let row = (c * g.kh + ky) * g.kw + kx;
                let src_row = &cols[row * np..(row + 1) * np];
                for n in 0..g.batch {
                    let base = (n * g.in_channels + c) * g.in_h * g.in_w;
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let first = lo * g.stride + kx - g.pad_left;
                        let dst = &mut x[base + iy as usize * g.in_w + first..];
                        let src = &src_row[n * p + oy * g.out_w..][lo..hi];
                        for (d, s) in dst.iter_mut().step_by(g.stride).zip(src) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Direct cross-correlation, NCHW input with an `[O, C, kh, kw]` kernel, no bias.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input.shape(), kernel.shape(), stride, padding)?;
    let cols = im2col(input.data(), &g);
    let p = g.positions();
    let np = g.batch * p;
    let mut rows = vec![T::zero(); g.out_channels * np];
    gemm(
        g.out_channels,
        g.patch(),
        np,
        kernel.data(),
        false,
        &cols,
        false,
        T::zero(),
        &mut rows,
    );
    let mut out = Tensor::zeros(&[g.batch, g.out_channels, g.out_h, g.out_w]);
    let od = out.data_mut();
    for o in 0..g.out_channels {
        for n in 0..g.batch {
            let dst = (n * g.out_channels + o) * p;
            od[dst..dst + p].copy_from_slice(&rows[o * np + n * p..o * np + (n + 1) * p]);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = conv_geometry(input.shape(), kernel.shape(), stride, padding)?;
    let expected = [g.batch, g.out_channels, g.out_h, g.out_w];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad {:?}, expected {expected:?}", grad_out.shape()),
        ));
    }
    let p = g.positions();
    let np = g.batch * p;
    let mut rows = vec![T::zero(); g.out_channels * np];
    let gd = grad_out.data();
    for o in 0..g.out_channels {
        for n in 0..g.batch {
            let src = (n * g.out_channels + o) * p;
            rows[o * np + n * p..o * np + (n + 1) * p].copy_from_slice(&gd[src..src + p]);
        }
    }
    let cols = im2col(input.data(), &g);
    let mut grad_kernel = Tensor::zeros(kernel.shape());
    gemm(
        g.out_channels,
        np,
        g.patch(),
        &rows,
        false,
        &cols,
        true,
        T::zero(),
        grad_kernel.data_mut(),
    );
    let mut grad_cols = vec![T::zero(); g.patch() * np];
    gemm(
        g.patch(),
        g.out_channels,
        np,
        kernel.data(),
        true,
        &rows,
        false,
        T::zero(),
        &mut grad_cols,
    );
    let grad_in = Tensor::new(input.shape().to_vec(), col2im(&grad_cols, &g))?;
    Ok((grad_in, grad_kernel))
}

/// Affine map `input · weight + bias` for `[N, F]` inputs and `[F, G]` weights.
pub fn dense<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    if input.rank() != 2 || weight.rank() != 2 || input.shape()[1] != weight.shape()[0] {
        return Err(Error::shape(
            "dense",
            format!("input {:?}, weight {:?}", input.shape(), weight.shape()),
        ));
    }
    let (n, f, g) = (input.shape()[0], input.shape()[1], weight.shape()[1]);
    if bias.shape() != [g] {
        return Err(Error::shape(
            "dense",
            format!("bias {:?}, expected [{g}]", bias.shape()),
        ));
    }
    let mut out = Tensor::zeros(&[n, g]);
    for i in 0..n {
        out.row_mut(i).copy_from_slice(bias.data());
    }
    gemm(
        n,
        f,
        g,
        input.data(),
        false,
        weight.data(),
        false,
        T::one(),
        out.data_mut(),
    );
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, f, g) = (input.shape()[0], weight.shape()[0], weight.shape()[1]);
    if grad_out.shape() != [n, g] {
        return Err(Error::shape(
            "dense_backward",
            format!("grad {:?}, expected [{n}, {g}]", grad_out.shape()),
        ));
    }
    let mut gw = Tensor::zeros(&[f, g]);
    gemm(
        f,
        n,
        g,
        input.data(),
        true,
        grad_out.data(),
        false,
        T::zero(),
        gw.data_mut(),
    );
    let mut gx = Tensor::zeros(&[n, f]);
    gemm(
        n,
        g,
        f,
        grad_out.data(),
        false,
        weight.data(),
        true,
        T::zero(),
        gx.data_mut(),
    );
    let mut gb = Tensor::zeros(&[g]);
    for i in 0..n {
        for (b, &d) in gb.data_mut().iter_mut().zip(grad_out.row(i)) {
            *b += d;
        }
    }
    Ok((gx, gw, gb))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` where `x > 0`, zero elsewhere.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(upstream, |v, u| if v > T::zero() { u } else { T::zero() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running statistics receive an EMA update.
    Train,
    /// Running statistics only.
    Eval,
}

/// Per-channel running mean/variance of a normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    /// EMA update; the first update adopts the batch statistics outright.
    pub fn update(
        slot: &mut Option<RunningStats<T>>,
        batch_mean: &Tensor<T>,
        batch_var: &Tensor<T>,
    ) {
        let m = T::from_f64(NORM_MOMENTUM);
        match slot {
            None => {
                *slot = Some(RunningStats {
                    mean: batch_mean.clone(),
                    var: batch_var.clone(),
                })
            }
            Some(rs) => {
                for (r, &b) in rs.mean.data_mut().iter_mut().zip(batch_mean.data()) {
                    *r = m * *r + (T::one() - m) * b;
                }
                for (r, &b) in rs.var.data_mut().iter_mut().zip(batch_var.data()) {
                    *r = m * *r + (T::one() - m) * b;
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.cast(),
            var: self.var.cast(),
        }
    }
}

/// Saved state for [`channel_norm_backward`].
#[derive(Clone, Debug)]
pub struct NormCache<T = f32> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: NormMode,
    /// Batch statistics (train mode only) for the running-stat update.
    pub batch_mean: Option<Tensor<T>>,
    pub batch_var: Option<Tensor<T>>,
}

fn norm_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [n, c] => Ok((*n, *c, 1)),
        [n, c, h, w] => Ok((*n, *c, h * w)),
        _ => Err(Error::shape(
            "channel_norm",
            format!("unsupported shape {shape:?}"),
        )),
    }
}

/// Per-channel standardization followed by `gamma · x̂ + beta`.
///
/// Does not touch `running`; callers apply [`RunningStats::update`] with the
/// batch statistics stored in the returned cache.
pub fn channel_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: NormMode,
    running: Option<&RunningStats<T>>,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (n, c, hw) = norm_dims(x.shape())?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "channel_norm",
            format!(
                "{c} channels, gamma {:?}, beta {:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    let eps = T::from_f64(NORM_EPS);
    let count = T::from_f64((n * hw) as f64);
    let xd = x.data();
    let (mean, var, batch) = match mode {
        NormMode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for i in 0..n {
                    let base = (i * c + ch) * hw;
                    s += xd[base..base + hw].iter().copied().sum::<T>();
                }
                let mu = s / count;
                let mut v = T::zero();
                for i in 0..n {
                    let base = (i * c + ch) * hw;
                    for &val in &xd[base..base + hw] {
                        v += (val - mu) * (val - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = v / count;
            }
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        NormMode::Eval => {
            let rs = running.ok_or_else(|| {
                Error::invalid("channel_norm in eval mode requires running statistics")
            })?;
            (rs.mean.data().to_vec(), rs.var.data().to_vec(), None)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    {
        let (xh, yd) = (xhat.data_mut(), y.data_mut());
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                let (mu, is, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
                for j in base..base + hw {
                    let h = (xd[j] - mu) * is;
                    xh[j] = h;
                    yd[j] = g * h + b;
                }
            }
        }
    }
    let (batch_mean, batch_var) = match batch {
        Some((m, v)) => (
            Some(Tensor::new(vec![c], m)?),
            Some(Tensor::new(vec![c], v)?),
        ),
        None => (None, None),
    };
    Ok((
        y,
        NormCache {
            xhat,
            inv_std,
            mode,
            batch_mean,
            batch_var,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn channel_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    cache
        .xhat
        .expect_same_shape("channel_norm_backward", grad_out)?;
    let (n, c, hw) = norm_dims(grad_out.shape())?;
    let count = T::from_f64((n * hw) as f64);
    let (xh, dy) = (cache.xhat.data(), grad_out.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            for j in base..base + hw {
                dgamma[ch] += dy[j] * xh[j];
                dbeta[ch] += dy[j];
            }
        }
    }
    let mut dx = Tensor::zeros(grad_out.shape());
    let dxd = dx.data_mut();
    for ch in 0..c {
        let g = gamma.data()[ch];
        let is = cache.inv_std[ch];
        match cache.mode {
            NormMode::Eval => {
                for i in 0..n {
                    let base = (i * c + ch) * hw;
                    for j in base..base + hw {
                        dxd[j] = dy[j] * g * is;
                    }
                }
            }
            NormMode::Train => {
                // dgamma/dbeta double as the per-channel sums of dŷ·x̂ and dŷ (scaled by gamma).
                let sum_d = dbeta[ch] * g;
                let sum_dx = dgamma[ch] * g;
                for i in 0..n {
                    let base = (i * c + ch) * hw;
                    for j in base..base + hw {
                        let d = dy[j] * g;
                        dxd[j] = is / count * (count * d - sum_d - xh[j] * sum_dx);
                    }
                }
            }
        }
    }
    Ok((
        dx,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = *x.shape() else {
        return Err(Error::shape("global_avg_pool", format!("{:?}", x.shape())));
    };
    let hw = h * w;
    let inv = T::from_f64(1.0 / hw as f64);
    let data = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::shape(
            "global_avg_pool_backward",
            format!("{input_shape:?}"),
        ));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::shape(
            "global_avg_pool_backward",
            format!("grad {:?}", grad_out.shape()),
        ));
    }
    let hw = h * w;
    let inv = T::from_f64(1.0 / hw as f64);
    let mut out = Vec::with_capacity(n * c * hw);
    for &g in grad_out.data() {
        out.extend(std::iter::repeat_n(g * inv, hw));
    }
    Tensor::new(input_shape.to_vec(), out)
}

/// Parameter-free shortcut: spatial subsampling by `stride` and zero channel
/// padding up to `out_channels`.
pub fn pad_subsample<T: Scalar>(
    x: &Tensor<T>,
    out_channels: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = *x.shape() else {
        return Err(Error::shape("pad_subsample", format!("{:?}", x.shape())));
    };
    if out_channels < c || stride == 0 {
        return Err(Error::shape(
            "pad_subsample",
            format!("{c} -> {out_channels} channels, stride {stride}"),
        ));
    }
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut out = Tensor::zeros(&[n, out_channels, oh, ow]);
    let (xd, od) = (x.data(), out.data_mut());
    for i in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    od[((i * out_channels + ch) * oh + y) * ow + xx] =
                        xd[((i * c + ch) * h + y * stride) * w + xx * stride];
                }
            }
        }
    }
    Ok(out)
}

pub fn pad_subsample_backward<T: Scalar>(
    input_shape: &[usize],
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::shape(
            "pad_subsample_backward",
            format!("{input_shape:?}"),
        ));
    };
    let [gn, oc, oh, ow] = *grad_out.shape() else {
        return Err(Error::shape(
            "pad_subsample_backward",
            format!("{:?}", grad_out.shape()),
        ));
    };
    if gn != n || oh != h.div_ceil(stride) || ow != w.div_ceil(stride) || oc < c {
        return Err(Error::shape(
            "pad_subsample_backward",
            format!("input {input_shape:?}, grad {:?}", grad_out.shape()),
        ));
    }
    let mut gx = Tensor::zeros(input_shape);
    let (gd, gxd) = (grad_out.data(), gx.data_mut());
    for i in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    gxd[((i * c + ch) * h + y * stride) * w + xx * stride] =
                        gd[((i * oc + ch) * oh + y) * ow + xx];
                }
            }
        }
    }
    Ok(gx)
}

/// Row-wise softmax of `logits / temperature`.
pub fn softmax<T: Scalar>(logits: &Tensor<T>, temperature: T) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::shape("softmax", format!("{:?}", logits.shape())));
    }
    if !(temperature > T::zero()) {
        return Err(Error::invalid("softmax temperature must be > 0"));
    }
    let mut out = Tensor::zeros(logits.shape());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let dst = out.row_mut(i);
        let mut z = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = ((v - max) / temperature).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d = *d / z);
    }
    Ok(out)
}

/// Batch mean of `-Σ_k target · log softmax(logits / τ)`, with its gradient
/// with respect to `logits`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    target: &Tensor<T>,
    temperature: T,
) -> Result<(T, Tensor<T>)> {
    logits.expect_same_shape("softmax_cross_entropy", target)?;
    if logits.rank() != 2 {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{:?}", logits.shape()),
        ));
    }
    if !(temperature > T::zero()) {
        return Err(Error::invalid(format!(
            "temperature must be > 0, got {}",
            temperature.as_f64()
        )));
    }
    let n = logits.rows();
    let tol = 1e-4;
    for i in 0..n {
        let s: f64 = target.row(i).iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > tol || target.row(i).iter().any(|&v| v < T::zero()) {
            return Err(Error::invalid(format!(
                "target row {i} is not a distribution (sum {s})"
            )));
        }
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = T::zero();
    let inv_n = T::from_f64(1.0 / n as f64);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let scaled: Vec<T> = row.iter().map(|&v| (v - max) / temperature).collect();
        let lse = scaled.iter().map(|&s| s.exp()).sum::<T>().ln();
        let tgt = target.row(i);
        let g = grad.row_mut(i);
        for k in 0..row.len() {
            let log_p = scaled[k] - lse;
            if tgt[k] > T::zero() {
                loss = loss - tgt[k] * log_p;
            }
            g[k] = (log_p.exp() - tgt[k]) / temperature * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// One-hot rows for integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len().max(1), classes]);
    if labels.is_empty() {
        return Err(Error::invalid("one_hot of empty label list"));
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        t.row_mut(i)[l] = T::one();
    }
    Ok(t)
}

/// Mean over every element of the squared difference.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    a.expect_same_shape("mse", b)?;
    let s: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(s / T::from_f64(a.len() as f64))
}

/// Gradient of [`mse`] with respect to `a`.
pub fn mse_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let scale = T::from_f64(2.0 / a.len() as f64);
    a.zip_map(b, |x, y| (x - y) * scale)
}
