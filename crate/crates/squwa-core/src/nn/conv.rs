//! 1-D convolution, pooling, and ReLU with hand-written backward passes.
//!
//! Layout convention: activations are `(channels, time)` arrays in standard
//! row-major order, so each channel's series is one contiguous slice. Hot
//! loops are shifted axpy/dot kernels over those slices; stride-2
//! convolutions run on even/odd phase splits so every tap still touches a
//! contiguous slice.

use ndarray::{Array1, Array2, Array3};
use rand_chacha::ChaCha8Rng;

use super::{cast, randn_cube, Scalar};

/// `dst[t] += w * src[t]` over equal-length slices.
#[inline]
fn axpy<F: Scalar>(dst: &mut [F], src: &[F], w: F) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = *d + w * *s;
    }
}

/// `dst[t] += w * src[t + shift]` with out-of-range source treated as zero.
#[inline]
fn shifted_axpy<F: Scalar>(dst: &mut [F], src: &[F], shift: isize, w: F) {
    let lo = (-shift).max(0) as usize;
    let hi_signed = (dst.len() as isize).min(src.len() as isize - shift);
    if hi_signed <= lo as isize {
        return;
    }
    let hi = hi_signed as usize;
    let s_lo = (lo as isize + shift) as usize;
    let s_hi = (hi as isize + shift) as usize;
    axpy(&mut dst[lo..hi], &src[s_lo..s_hi], w);
}

/// `sum_t a[t] * b[t + shift]` with out-of-range `b` treated as zero.
/// Eight accumulators keep the reduction vectorizable.
#[inline]
pub(crate) fn shifted_dot<F: Scalar>(a: &[F], b: &[F], shift: isize) -> F {
    let lo = (-shift).max(0) as usize;
    let hi_signed = (a.len() as isize).min(b.len() as isize - shift);
    if hi_signed <= lo as isize {
        return F::zero();
    }
    let hi = hi_signed as usize;
    let a = &a[lo..hi];
    let b = &b[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
    let n = a.len();
    let mut acc = [F::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let off = c * 8;
        for lane in 0..8 {
            acc[lane] = acc[lane] + a[off + lane] * b[off + lane];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for t in chunks * 8..n {
        s = s + a[t] * b[t];
    }
    s
}

/// Valid output range for `dst[u] (+)= src[u * stride + q]`.
#[inline]
fn strided_range<F>(dst: &[F], src: &[F], stride: usize, q: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if q >= 0 { 0 } else { (-q + s - 1) / s };
    let hi = ((src.len() as isize - q + s - 1) / s).min(dst.len() as isize);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// `dst[u] += w * src[u * stride + q]` over the valid range (general stride).
#[inline]
fn strided_axpy<F: Scalar>(dst: &mut [F], src: &[F], stride: usize, q: isize, w: F) {
    let (lo, hi) = strided_range(dst, src, stride, q);
    for u in lo..hi {
        let t = (u as isize * stride as isize + q) as usize;
        dst[u] = dst[u] + w * src[t];
    }
}

/// `sum_u a[u] * b[u * stride + q]` over the valid range (general stride).
#[inline]
fn strided_dot<F: Scalar>(a: &[F], b: &[F], stride: usize, q: isize) -> F {
    let (lo, hi) = strided_range(a, b, stride, q);
    let mut s = F::zero();
    for u in lo..hi {
        let t = (u as isize * stride as isize + q) as usize;
        s = s + a[u] * b[t];
    }
    s
}

/// Scatter form: `dst[u * stride + q] += w * src[u]` over the valid range.
#[inline]
fn strided_scatter<F: Scalar>(dst: &mut [F], src: &[F], stride: usize, q: isize, w: F) {
    let (lo, hi) = strided_range(src, dst, stride, q);
    for u in lo..hi {
        let t = (u as isize * stride as isize + q) as usize;
        dst[t] = dst[t] + w * src[u];
    }
}

/// Split a series into even-index and odd-index phases.
fn phase_split<F: Scalar>(x: &[F]) -> (Vec<F>, Vec<F>) {
    let even: Vec<F> = x.iter().step_by(2).cloned().collect();
    let odd: Vec<F> = x.iter().skip(1).step_by(2).cloned().collect();
    (even, odd)
}

/// Output length of a same-padded convolution: `floor((t-1)/stride) + 1`.
pub fn conv_out_len(t: usize, stride: usize) -> usize {
    (t - 1) / stride + 1
}

/// Same-padded 1-D convolution with odd kernel length and stride 1 or 2.
#[derive(Debug, Clone)]
pub struct Conv1d<F> {
    /// `(c_out, c_in, k)`
    pub weight: Array3<F>,
    pub bias: Array1<F>,
    pub stride: usize,
}

impl<F: Scalar> Conv1d<F> {
    /// He-initialized convolution.
    pub fn he_init(
        rng: &mut ChaCha8Rng,
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        assert!(k % 2 == 1, "kernel length must be odd for same padding");
        let std = (2.0 / (c_in * k) as f64).sqrt();
        Self {
            weight: randn_cube(rng, c_out, c_in, k, std),
            bias: Array1::zeros(c_out),
            stride,
        }
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize) -> Self {
        Self {
            weight: Array3::zeros((c_out, c_in, k)),
            bias: Array1::zeros(c_out),
            stride,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (c_out, c_in, k) = self.weight.dim();
        Self::zeros(c_out, c_in, k, self.stride)
    }

    pub fn kernel_len(&self) -> usize {
        self.weight.dim().2
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let (c_out, c_in, k) = self.weight.dim();
        let (xc, t) = x.dim();
        assert_eq!(xc, c_in, "input channel mismatch");
        let pad = (k as isize - 1) / 2;
        let t_out = conv_out_len(t, self.stride);
        let mut out = Array2::zeros((c_out, t_out));

        match self.stride {
            1 => {
                for o in 0..c_out {
                    let mut row = out.row_mut(o);
                    let row = row.as_slice_mut().unwrap();
                    row.fill(self.bias[o]);
                    for i in 0..c_in {
                        let xr = x.row(i);
                        let xr = xr.as_slice().unwrap();
                        for j in 0..k {
                            let w = self.weight[[o, i, j]];
                            shifted_axpy(row, xr, j as isize - pad, w);
                        }
                    }
                }
            }
            2 => {
                let phases: Vec<(Vec<F>, Vec<F>)> = (0..c_in)
                    .map(|i| phase_split(x.row(i).as_slice().unwrap()))
                    .collect();
                for o in 0..c_out {
                    let mut row = out.row_mut(o);
                    let row = row.as_slice_mut().unwrap();
                    row.fill(self.bias[o]);
                    for i in 0..c_in {
                        let (even, odd) = &phases[i];
                        for j in 0..k {
                            let q = j as isize - pad;
                            let w = self.weight[[o, i, j]];
                            let e = q.div_euclid(2);
                            if q.rem_euclid(2) == 0 {
                                shifted_axpy(row, even, e, w);
                            } else {
                                shifted_axpy(row, odd, e, w);
                            }
                        }
                    }
                }
            }
            s => {
                // General stride: plain strided gather, used only by small
                // subnet layers where throughput is irrelevant.
                for o in 0..c_out {
                    let mut row = out.row_mut(o);
                    let row = row.as_slice_mut().unwrap();
                    row.fill(self.bias[o]);
                    for i in 0..c_in {
                        let xr = x.row(i);
                        let xr = xr.as_slice().unwrap();
                        for j in 0..k {
                            let w = self.weight[[o, i, j]];
                            strided_axpy(row, xr, s, j as isize - pad, w);
                        }
                    }
                }
            }
        }
        out
    }

    /// Backward pass. Returns the input gradient (unless `need_dx` is false,
    /// e.g. for the first layer) and the parameter gradients.
    pub fn backward(
        &self,
        x: &Array2<F>,
        dout: &Array2<F>,
        need_dx: bool,
    ) -> (Option<Array2<F>>, Conv1d<F>) {
        let (c_out, c_in, k) = self.weight.dim();
        let (_, t) = x.dim();
        let pad = (k as isize - 1) / 2;
        let mut grads = self.zeros_like();
        let mut dx = if need_dx {
            Some(Array2::<F>::zeros((c_in, t)))
        } else {
            None
        };

        match self.stride {
            1 => {
                for o in 0..c_out {
                    let dr = dout.row(o);
                    let dr = dr.as_slice().unwrap();
                    grads.bias[o] = dr.iter().cloned().sum();
                    for i in 0..c_in {
                        let xr = x.row(i);
                        let xr = xr.as_slice().unwrap();
                        for j in 0..k {
                            let shift = j as isize - pad;
                            grads.weight[[o, i, j]] = shifted_dot(dr, xr, shift);
                            if let Some(dx) = dx.as_mut() {
                                let mut dxr = dx.row_mut(i);
                                let dxr = dxr.as_slice_mut().unwrap();
                                // dx[t] += w * dout[t - shift]
                                shifted_axpy(dxr, dr, -shift, self.weight[[o, i, j]]);
                            }
                        }
                    }
                }
            }
            2 => {
                let phases: Vec<(Vec<F>, Vec<F>)> = (0..c_in)
                    .map(|i| phase_split(x.row(i).as_slice().unwrap()))
                    .collect();
                let even_len = t - t / 2;
                let odd_len = t / 2;
                let mut dphases: Vec<(Vec<F>, Vec<F>)> = if need_dx {
                    (0..c_in)
                        .map(|_| (vec![F::zero(); even_len], vec![F::zero(); odd_len]))
                        .collect()
                } else {
                    Vec::new()
                };
                for o in 0..c_out {
                    let dr = dout.row(o);
                    let dr = dr.as_slice().unwrap();
                    grads.bias[o] = dr.iter().cloned().sum();
                    for i in 0..c_in {
                        let (even, odd) = &phases[i];
                        for j in 0..k {
                            let q = j as isize - pad;
                            let e = q.div_euclid(2);
                            let w = self.weight[[o, i, j]];
                            if q.rem_euclid(2) == 0 {
                                grads.weight[[o, i, j]] = shifted_dot(dr, even, e);
                                if need_dx {
                                    shifted_axpy(&mut dphases[i].0, dr, -e, w);
                                }
                            } else {
                                grads.weight[[o, i, j]] = shifted_dot(dr, odd, e);
                                if need_dx {
                                    shifted_axpy(&mut dphases[i].1, dr, -e, w);
                                }
                            }
                        }
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    for i in 0..c_in {
                        let mut row = dx.row_mut(i);
                        let row = row.as_slice_mut().unwrap();
                        let (de, do_) = &dphases[i];
                        for (m, &v) in de.iter().enumerate() {
                            row[2 * m] = v;
                        }
                        for (m, &v) in do_.iter().enumerate() {
                            row[2 * m + 1] = v;
                        }
                    }
                }
            }
            s => {
                for o in 0..c_out {
                    let dr = dout.row(o);
                    let dr = dr.as_slice().unwrap();
                    grads.bias[o] = dr.iter().cloned().sum();
                    for i in 0..c_in {
                        let xr = x.row(i);
                        let xr = xr.as_slice().unwrap();
                        for j in 0..k {
                            let q = j as isize - pad;
                            grads.weight[[o, i, j]] = strided_dot(dr, xr, s, q);
                            if let Some(dx) = dx.as_mut() {
                                let mut dxr = dx.row_mut(i);
                                let dxr = dxr.as_slice_mut().unwrap();
                                strided_scatter(dxr, dr, s, q, self.weight[[o, i, j]]);
                            }
                        }
                    }
                }
            }
        }
        (dx, grads)
    }
}

/// Non-overlapping max pool with window 2, stride 2.
#[derive(Debug, Clone)]
pub struct MaxPool2;

impl MaxPool2 {
    /// Returns pooled output and per-output argmax offsets (0 or 1).
    pub fn forward<F: Scalar>(x: &Array2<F>) -> (Array2<F>, Vec<u8>) {
        let (c, t) = x.dim();
        let t_out = t / 2;
        let mut out = Array2::zeros((c, t_out));
        let mut arg = vec![0u8; c * t_out];
        for i in 0..c {
            let xr = x.row(i);
            let xr = xr.as_slice().unwrap();
            for u in 0..t_out {
                let (a, b) = (xr[2 * u], xr[2 * u + 1]);
                if b > a {
                    out[[i, u]] = b;
                    arg[i * t_out + u] = 1;
                } else {
                    out[[i, u]] = a;
                }
            }
        }
        (out, arg)
    }

    pub fn backward<F: Scalar>(dout: &Array2<F>, arg: &[u8], t_in: usize) -> Array2<F> {
        let (c, t_out) = dout.dim();
        let mut dx = Array2::zeros((c, t_in));
        for i in 0..c {
            for u in 0..t_out {
                let off = arg[i * t_out + u] as usize;
                dx[[i, 2 * u + off]] = dout[[i, u]];
            }
        }
        dx
    }
}

/// Global average pooling over the time axis.
#[derive(Debug, Clone)]
pub struct GlobalAvgPool;

impl GlobalAvgPool {
    pub fn forward<F: Scalar>(x: &Array2<F>) -> Array1<F> {
        let t = x.dim().1;
        let inv = cast::<F>(1.0 / t as f64);
        x.rows().into_iter().map(|r| r.sum() * inv).collect()
    }

    pub fn backward<F: Scalar>(dout: &Array1<F>, t: usize) -> Array2<F> {
        let inv = cast::<F>(1.0 / t as f64);
        let mut dx = Array2::zeros((dout.len(), t));
        for (i, &g) in dout.iter().enumerate() {
            dx.row_mut(i).fill(g * inv);
        }
        dx
    }
}

/// In-place ReLU; backward masks by the stored output.
pub fn relu_inplace<F: Scalar>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| v.max(F::zero()));
}

/// `dx = dy .* (y > 0)` where `y` is the ReLU output.
pub fn relu_backward<F: Scalar>(y: &Array2<F>, dy: &mut Array2<F>) {
    for (d, &o) in dy.iter_mut().zip(y.iter()) {
        if o <= F::zero() {
            *d = F::zero();
        }
    }
}
