//! Numeric kernels behind the graph operators. All buffers are row-major;
//! image tensors are `[batch, channels, height, width]`.
//!
//! Backward kernels accumulate (`+=`) into their output buffers.

use super::Scalar;

/// Storage order of a matrix operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Stored as given: an `r x c` operand is an `r x c` row-major buffer.
    Normal,
    /// Stored transposed: an `r x c` operand is a `c x r` row-major buffer.
    Transposed,
}

fn strides(layout: Layout, cols: usize, rows: usize) -> (isize, isize) {
    match layout {
        Layout::Normal => (cols as isize, 1),
        Layout::Transposed => (1, rows as isize),
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, with `op(a)` of size `m x k`,
/// `op(b)` of size `k x n` and `c` an `m x n` row-major buffer.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = strides(la, k, m);
    let (rsb, csb) = strides(lb, n, k);
    // SAFETY: lengths checked above; the strides address exactly the
    // m*k, k*n and m*n row-major views of the three buffers.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Geometry of a 2-D convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one image into `[patch_len, out_h * out_w]`.
pub fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..oh {
                    let ii = (oi * g.stride) as isize + ki as isize - pad;
                    let line = &mut dst[oi * ow..(oi + 1) * ow];
                    if ii < 0 || ii >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * g.width..(ii as usize + 1) * g.width];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride) as isize + kj as isize - pad;
                        *v = if jj < 0 || jj >= g.width as isize {
                            T::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the image.
pub fn col2im_add<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..oh {
                    let ii = (oi * g.stride) as isize + ki as isize - pad;
                    if ii < 0 || ii >= g.height as isize {
                        continue;
                    }
                    let base = ii as usize * g.width;
                    for oj in 0..ow {
                        let jj = (oj * g.stride) as isize + kj as isize - pad;
                        if jj >= 0 && jj < g.width as isize {
                            plane[base + jj as usize] += src[oi * ow + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of a batch. `out` is overwritten.
pub fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    batch: usize,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let p = g.out_height() * g.out_width();
    let kl = g.patch_len();
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kl * p] };
    for n in 0..batch {
        let xi = &x[n * g.in_len()..(n + 1) * g.in_len()];
        let yi = &mut out[n * g.out_len()..(n + 1) * g.out_len()];
        let patches: &[T] = if g.is_pointwise() {
            xi
        } else {
            im2col(g, xi, &mut cols);
            &cols
        };
        gemm(g.out_channels, kl, p, T::one(), w, Layout::Normal, patches, Layout::Normal, T::zero(), yi);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                yi[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

/// Accumulates the input gradient of a convolution (the transposed
/// convolution of `dy`).
pub fn conv2d_backward_input<T: Scalar>(g: &ConvGeom, batch: usize, w: &[T], dy: &[T], dx: &mut [T]) {
    let p = g.out_height() * g.out_width();
    let kl = g.patch_len();
    let mut dcols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kl * p] };
    for n in 0..batch {
        let dyi = &dy[n * g.out_len()..(n + 1) * g.out_len()];
        let dxi = &mut dx[n * g.in_len()..(n + 1) * g.in_len()];
        if g.is_pointwise() {
            gemm(kl, g.out_channels, p, T::one(), w, Layout::Transposed, dyi, Layout::Normal, T::one(), dxi);
        } else {
            gemm(kl, g.out_channels, p, T::one(), w, Layout::Transposed, dyi, Layout::Normal, T::zero(), &mut dcols);
            col2im_add(g, &dcols, dxi);
        }
    }
}

/// Accumulates the weight gradient of a convolution.
pub fn conv2d_backward_weight<T: Scalar>(g: &ConvGeom, batch: usize, x: &[T], dy: &[T], dw: &mut [T]) {
    let p = g.out_height() * g.out_width();
    let kl = g.patch_len();
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kl * p] };
    for n in 0..batch {
        let xi = &x[n * g.in_len()..(n + 1) * g.in_len()];
        let dyi = &dy[n * g.out_len()..(n + 1) * g.out_len()];
        let patches: &[T] = if g.is_pointwise() {
            xi
        } else {
            im2col(g, xi, &mut cols);
            &cols
        };
        gemm(g.out_channels, p, kl, T::one(), dyi, Layout::Normal, patches, Layout::Transposed, T::one(), dw);
    }
}

pub fn conv2d_backward_bias<T: Scalar>(g: &ConvGeom, batch: usize, dy: &[T], db: &mut [T]) {
    let p = g.out_height() * g.out_width();
    for n in 0..batch {
        let dyi = &dy[n * g.out_len()..(n + 1) * g.out_len()];
        for (co, acc) in db.iter_mut().enumerate() {
            *acc += dyi[co * p..(co + 1) * p].iter().copied().sum::<T>();
        }
    }
}

/// Nearest-neighbour upsampling of `[planes, h, w]` by an integer factor.
pub fn upsample_nearest<T: Scalar>(planes: usize, h: usize, w: usize, factor: usize, x: &[T], out: &mut [T]) {
    let (oh, ow) = (h * factor, w * factor);
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for i in 0..oh {
            let row = &src[(i / factor) * w..(i / factor + 1) * w];
            for j in 0..ow {
                dst[i * ow + j] = row[j / factor];
            }
        }
    }
}

pub fn upsample_nearest_backward<T: Scalar>(
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
    dy: &[T],
    dx: &mut [T],
) {
    let (oh, ow) = (h * factor, w * factor);
    for pl in 0..planes {
        let src = &dy[pl * oh * ow..(pl + 1) * oh * ow];
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                dst[(i / factor) * w + j / factor] += src[i * ow + j];
            }
        }
    }
}

/// Softmax over axis 1 of a `[outer, channels, inner]` buffer.
pub fn softmax_axis1<T: Scalar>(outer: usize, channels: usize, inner: usize, x: &[T], y: &mut [T]) {
    for o in 0..outer {
        let base = o * channels * inner;
        for s in 0..inner {
            let mut max = T::neg_infinity();
            for c in 0..channels {
                max = max.max(x[base + c * inner + s]);
            }
            let mut total = T::zero();
            for c in 0..channels {
                let e = (x[base + c * inner + s] - max).exp();
                y[base + c * inner + s] = e;
                total += e;
            }
            for c in 0..channels {
                y[base + c * inner + s] = y[base + c * inner + s] / total;
            }
        }
    }
}

pub fn softmax_axis1_backward<T: Scalar>(outer: usize, channels: usize, inner: usize, y: &[T], dy: &[T], dx: &mut [T]) {
    for o in 0..outer {
        let base = o * channels * inner;
        for s in 0..inner {
            let mut dot = T::zero();
            for c in 0..channels {
                let i = base + c * inner + s;
                dot += y[i] * dy[i];
            }
            for c in 0..channels {
                let i = base + c * inner + s;
                dx[i] += y[i] * (dy[i] - dot);
            }
        }
    }
}

/// Bilinear resampling of `[planes, h, w]` to `[planes, oh, ow]` with
/// half-pixel centres. Constant planes stay exactly constant.
pub fn resize_bilinear<T: Scalar>(planes: usize, h: usize, w: usize, oh: usize, ow: usize, x: &[T], out: &mut [T]) {
    let coord = |o: usize, out_len: usize, in_len: usize| -> (usize, usize, T) {
        let src = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        (i0, i1, T::of(src - i0 as f64))
    };
    let rows: Vec<_> = (0..oh).map(|i| coord(i, oh, h)).collect();
    let cols: Vec<_> = (0..ow).map(|j| coord(j, ow, w)).collect();
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                let top = src[r0 * w + c0] + (src[r0 * w + c1] - src[r0 * w + c0]) * fc;
                let bot = src[r1 * w + c0] + (src[r1 * w + c1] - src[r1 * w + c0]) * fc;
                dst[i * ow + j] = top + (bot - top) * fr;
            }
        }
    }
}
