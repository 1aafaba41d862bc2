//! Per-sample layer kernels on `[channel][row][col]` buffers.

use crate::scalar::Real;

/// Spatial size of a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Rows `y` with `0 ≤ y + d < n`.
fn span(n: usize, d: isize) -> std::ops::Range<usize> {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    lo..hi.max(lo)
}

/// Same-padded `k × k` convolution, weights `[cout][cin][k][k]`.
pub fn conv_forward<T: Real>(input: &[T], d: Dims, weight: &[T], bias: &[T], cout: usize, k: usize, out: &mut [T]) {
    let (h, w, p) = (d.height, d.width, (k / 2) as isize);
    let plane = d.plane();
    for co in 0..cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias[co]);
        for ci in 0..d.channels {
            let x = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - p;
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let wv = weight[((co * d.channels + ci) * k + ky) * k + kx];
                    let cols = span(w, dx);
                    for y in span(h, dy) {
                        let src = ((y as isize + dy) as usize) * w;
                        let orow = &mut o[y * w + cols.start..y * w + cols.end];
                        let irow = &x[(src as isize + cols.start as isize + dx) as usize..(src as isize + cols.end as isize + dx) as usize];
                        for (a, b) in orow.iter_mut().zip(irow) {
                            *a += wv * *b;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv_forward`]; `grad_input` is overwritten, parameter
/// gradients are accumulated.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    input: &[T],
    d: Dims,
    weight: &[T],
    cout: usize,
    k: usize,
    grad_out: &[T],
    grad_input: &mut [T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) {
    let (h, w, p) = (d.height, d.width, (k / 2) as isize);
    let plane = d.plane();
    grad_input.fill(T::zero());
    for co in 0..cout {
        let g = &grad_out[co * plane..(co + 1) * plane];
        grad_bias[co] += g.iter().copied().sum::<T>();
        for ci in 0..d.channels {
            let x = &input[ci * plane..(ci + 1) * plane];
            let gi = &mut grad_input[ci * plane..(ci + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - p;
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let idx = ((co * d.channels + ci) * k + ky) * k + kx;
                    let wv = weight[idx];
                    let cols = span(w, dx);
                    let mut acc = T::zero();
                    for y in span(h, dy) {
                        let src = (((y as isize + dy) as usize) * w) as isize + dx;
                        let grow = &g[y * w + cols.start..y * w + cols.end];
                        let lo = (src + cols.start as isize) as usize;
                        let hi = (src + cols.end as isize) as usize;
                        for (a, b) in grow.iter().zip(&x[lo..hi]) {
                            acc += *a * *b;
                        }
                        for (a, b) in gi[lo..hi].iter_mut().zip(grow) {
                            *a += wv * *b;
                        }
                    }
                    grad_weight[idx] += acc;
                }
            }
        }
    }
}

pub fn relu_inplace<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Masks `grad` where the post-activation output is not positive.
pub fn relu_backward<T: Real>(output: &[T], grad: &mut [T]) {
    for (g, o) in grad.iter_mut().zip(output) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Offset of the maximum of each `2 × 2` window; ties go to the first in
/// row-major order.
fn window_argmax<T: Real>(x: &[T], w: usize, y: usize, xx: usize) -> usize {
    let base = 2 * y * w + 2 * xx;
    let mut best = base;
    for off in [base + 1, base + w, base + w + 1] {
        if x[off] > x[best] {
            best = off;
        }
    }
    best
}

/// `2 × 2` max pooling with stride 2.
pub fn pool_forward<T: Real>(input: &[T], d: Dims, out: &mut [T]) {
    let (oh, ow) = (d.height / 2, d.width / 2);
    for c in 0..d.channels {
        let x = &input[c * d.plane()..(c + 1) * d.plane()];
        for y in 0..oh {
            for xx in 0..ow {
                out[c * oh * ow + y * ow + xx] = x[window_argmax(x, d.width, y, xx)];
            }
        }
    }
}

pub fn pool_backward<T: Real>(input: &[T], d: Dims, grad_out: &[T], grad_input: &mut [T]) {
    let (oh, ow) = (d.height / 2, d.width / 2);
    grad_input.fill(T::zero());
    for c in 0..d.channels {
        let x = &input[c * d.plane()..(c + 1) * d.plane()];
        let gi = &mut grad_input[c * d.plane()..(c + 1) * d.plane()];
        for y in 0..oh {
            for xx in 0..ow {
                gi[window_argmax(x, d.width, y, xx)] += grad_out[c * oh * ow + y * ow + xx];
            }
        }
    }
}

/// Transposed `2 × 2` convolution with stride 2, weights `[cin][cout][2][2]`.
pub fn upconv_forward<T: Real>(input: &[T], d: Dims, weight: &[T], bias: &[T], cout: usize, out: &mut [T]) {
    let (h, w) = (d.height, d.width);
    let ow = 2 * w;
    let oplane = 4 * d.plane();
    for co in 0..cout {
        out[co * oplane..(co + 1) * oplane].fill(bias[co]);
    }
    for ci in 0..d.channels {
        let x = &input[ci * d.plane()..(ci + 1) * d.plane()];
        for co in 0..cout {
            let wk = &weight[(ci * cout + co) * 4..(ci * cout + co) * 4 + 4];
            let o = &mut out[co * oplane..(co + 1) * oplane];
            for y in 0..h {
                for xx in 0..w {
                    let v = x[y * w + xx];
                    let top = 2 * y * ow + 2 * xx;
                    o[top] += wk[0] * v;
                    o[top + 1] += wk[1] * v;
                    o[top + ow] += wk[2] * v;
                    o[top + ow + 1] += wk[3] * v;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn upconv_backward<T: Real>(
    input: &[T],
    d: Dims,
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    grad_input: &mut [T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) {
    let (h, w) = (d.height, d.width);
    let ow = 2 * w;
    let oplane = 4 * d.plane();
    for co in 0..cout {
        grad_bias[co] += grad_out[co * oplane..(co + 1) * oplane].iter().copied().sum::<T>();
    }
    grad_input.fill(T::zero());
    for ci in 0..d.channels {
        let x = &input[ci * d.plane()..(ci + 1) * d.plane()];
        let gi = &mut grad_input[ci * d.plane()..(ci + 1) * d.plane()];
        for co in 0..cout {
            let base = (ci * cout + co) * 4;
            let wk = [weight[base], weight[base + 1], weight[base + 2], weight[base + 3]];
            let g = &grad_out[co * oplane..(co + 1) * oplane];
            let mut acc = [T::zero(); 4];
            for y in 0..h {
                for xx in 0..w {
                    let top = 2 * y * ow + 2 * xx;
                    let gs = [g[top], g[top + 1], g[top + ow], g[top + ow + 1]];
                    let v = x[y * w + xx];
                    let mut s = T::zero();
                    for q in 0..4 {
                        acc[q] += v * gs[q];
                        s += wk[q] * gs[q];
                    }
                    gi[y * w + xx] += s;
                }
            }
            for q in 0..4 {
                grad_weight[base + q] += acc[q];
            }
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub const BCE_CLAMP: f64 = 1e-7;

/// `−[ŷ ln y + (1 − ŷ) ln(1 − y)]` with `y` clamped to `[ε, 1 − ε]`.
pub fn bce<T: Real>(pred: T, label: T) -> f64 {
    let y = pred.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let t = label.as_f64();
    -(t * y.ln() + (1.0 - t) * (1.0 - y).ln())
}
