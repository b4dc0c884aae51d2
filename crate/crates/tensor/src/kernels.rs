//! Raw slice kernels. Layouts are row-major NCHW for images and
//! `[out, in, kh, kw]` for convolution weights.

use crate::parallel::{self, ELEMENTWISE_GRAIN};
use crate::Real;

/// Geometry of a 2-D convolution with symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn input_len(&self) -> usize {
        self.in_ch * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.out_ch * self.col_cols()
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.col_rows()
    }
}

/// Output columns `ox` whose input column `ox * stride + k - pad` lies in
/// `[0, width)`.
fn valid_cols(g: &ConvGeom, k: usize, ow: usize) -> (usize, usize) {
    let (s, pad, w) = (g.stride, g.pad, g.width);
    let lo = if pad > k { (pad - k).div_ceil(s) } else { 0 };
    let hi = if w + pad > k { (w + pad - k).div_ceil(s) } else { 0 };
    (lo.min(ow), hi.min(ow).max(lo.min(ow)))
}

fn im2col<T: Real>(g: &ConvGeom, img: &[T], col: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let h = g.height as isize;
    let pad = g.pad as isize;
    let s = g.stride;
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_cols(g, kj, ow);
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for (oy, line) in dst.chunks_mut(ow).enumerate() {
                    let iy = (oy * s + ki) as isize - pad;
                    if iy < 0 || iy >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if hi > lo {
                        let first = lo * s + kj - g.pad;
                        if s == 1 {
                            line[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                        } else {
                            for (v, &x) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(s)) {
                                *v = x;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], img: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let h = g.height as isize;
    let pad = g.pad as isize;
    let s = g.stride;
    img.iter_mut().for_each(|v| *v = T::zero());
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let (lo, hi) = valid_cols(g, kj, ow);
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for (oy, line) in src.chunks(ow).enumerate() {
                    let iy = (oy * s + ki) as isize - pad;
                    if iy < 0 || iy >= h || hi <= lo {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let first = lo * s + kj - g.pad;
                    for (d, &v) in dst[first..].iter_mut().step_by(s).zip(&line[lo..hi]) {
                        *d += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// `y = conv(x, w)`; `x` is `[batch, in, h, w]`, result `[batch, out, oh, ow]`.
pub fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T]) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut out = vec![T::zero(); g.batch * g.output_len()];
    parallel::chunks_mut(&mut out, g.output_len(), |b, dst| {
        let img = &x[b * g.input_len()..(b + 1) * g.input_len()];
        let mut col = vec![T::zero(); rows * cols];
        im2col(g, img, &mut col);
        unsafe {
            T::gemm(
                g.out_ch,
                rows,
                cols,
                T::one(),
                w.as_ptr(),
                rows as isize,
                1,
                col.as_ptr(),
                cols as isize,
                1,
                T::zero(),
                dst.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
    });
    out
}

/// Adjoint of `conv2d_forward` in `x`: maps an output-shaped gradient back
/// to input shape.
pub fn conv2d_input_grad<T: Real>(g: &ConvGeom, gy: &[T], w: &[T]) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut out = vec![T::zero(); g.batch * g.input_len()];
    parallel::chunks_mut(&mut out, g.input_len(), |b, dst| {
        let gimg = &gy[b * g.output_len()..(b + 1) * g.output_len()];
        let mut col = vec![T::zero(); rows * cols];
        unsafe {
            // col = W^T gy
            T::gemm(
                rows,
                g.out_ch,
                cols,
                T::one(),
                w.as_ptr(),
                1,
                rows as isize,
                gimg.as_ptr(),
                cols as isize,
                1,
                T::zero(),
                col.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
        col2im(g, &col, dst);
    });
    out
}

/// Images per partial sum in the weight-gradient reduction. Fixed so that the
/// summation order does not depend on the thread count.
const WEIGHT_GRAD_CHUNK: usize = 4;

/// Adjoint of `conv2d_forward` in `w`: `sum_b gy_b col(x_b)^T`.
pub fn conv2d_weight_grad<T: Real>(g: &ConvGeom, x: &[T], gy: &[T]) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let chunks = g.batch.div_ceil(WEIGHT_GRAD_CHUNK);
    let partials = parallel::map_range(chunks, |ci| {
        let mut acc = vec![T::zero(); g.weight_len()];
        let mut col = vec![T::zero(); rows * cols];
        let end = ((ci + 1) * WEIGHT_GRAD_CHUNK).min(g.batch);
        for b in ci * WEIGHT_GRAD_CHUNK..end {
            let img = &x[b * g.input_len()..(b + 1) * g.input_len()];
            let gimg = &gy[b * g.output_len()..(b + 1) * g.output_len()];
            im2col(g, img, &mut col);
            unsafe {
                T::gemm(
                    g.out_ch,
                    cols,
                    rows,
                    T::one(),
                    gimg.as_ptr(),
                    cols as isize,
                    1,
                    col.as_ptr(),
                    1,
                    cols as isize,
                    T::one(),
                    acc.as_mut_ptr(),
                    rows as isize,
                    1,
                );
            }
        }
        acc
    });
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(|| vec![T::zero(); g.weight_len()]);
    for p in iter {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    total
}

/// `C = A B` for row-major `A: [m, k]`, `B: [k, n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if m == 0 || n == 0 {
        return c;
    }
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            T::zero(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

pub fn transpose2d<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
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

/// Reflection padding of every `[h, w]` plane by `pad` pixels.
pub fn reflect_pad2d<T: Real>(x: &[T], planes: usize, h: usize, w: usize, pad: usize) -> Vec<T> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); planes * ph * pw];
    parallel::chunks_mut(&mut out, ph * pw, |p, dst| {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..ph {
            let sy = reflect(y as isize - pad as isize, h);
            for xx in 0..pw {
                let sx = reflect(xx as isize - pad as isize, w);
                dst[y * pw + xx] = src[sy * w + sx];
            }
        }
    });
    out
}

/// Adjoint of `reflect_pad2d`: folds the padded border back onto its source.
pub fn reflect_pad2d_adjoint<T: Real>(
    g: &[T],
    planes: usize,
    h: usize,
    w: usize,
    pad: usize,
) -> Vec<T> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); planes * h * w];
    parallel::chunks_mut(&mut out, h * w, |p, dst| {
        let src = &g[p * ph * pw..(p + 1) * ph * pw];
        for y in 0..ph {
            let sy = reflect(y as isize - pad as isize, h);
            for xx in 0..pw {
                let sx = reflect(xx as isize - pad as isize, w);
                dst[sy * w + sx] += src[y * pw + xx];
            }
        }
    });
    out
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Real>(x: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![T::zero(); planes * oh * ow];
    parallel::chunks_mut(&mut out, oh * ow, |p, dst| {
        let src = &x[p * h * w..(p + 1) * h * w];
        for (y, line) in dst.chunks_mut(ow).enumerate() {
            let row = &src[(y / f) * w..(y / f + 1) * w];
            for (pix, &v) in line.chunks_mut(f).zip(row) {
                pix.fill(v);
            }
        }
    });
    out
}

/// Sum over non-overlapping `f x f` windows (adjoint of `upsample_nearest`).
pub fn sum_pool<T: Real>(x: &[T], planes: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h / f, w / f);
    let mut out = vec![T::zero(); planes * oh * ow];
    parallel::chunks_mut(&mut out, oh * ow, |p, dst| {
        let src = &x[p * h * w..(p + 1) * h * w];
        for (y, line) in src.chunks(w).enumerate() {
            let row = &mut dst[(y / f) * ow..(y / f + 1) * ow];
            for (d, pix) in row.iter_mut().zip(line.chunks(f)) {
                *d += pix.iter().fold(T::zero(), |a, &v| a + v);
            }
        }
    });
    out
}

pub fn map<T: Real, F: Fn(T) -> T + Sync + Send>(x: &[T], f: F) -> Vec<T> {
    let mut out = x.to_vec();
    parallel::chunks_mut(&mut out, ELEMENTWISE_GRAIN, |_, c| {
        c.iter_mut().for_each(|v| *v = f(*v));
    });
    out
}

pub fn zip_map<T: Real, F: Fn(T, T) -> T + Sync + Send>(a: &[T], b: &[T], f: F) -> Vec<T> {
    debug_assert_eq!(a.len(), b.len());
    let mut out = a.to_vec();
    parallel::chunks_mut(&mut out, ELEMENTWISE_GRAIN, |i, c| {
        let off = i * ELEMENTWISE_GRAIN;
        let len = c.len();
        c.iter_mut()
            .zip(&b[off..off + len])
            .for_each(|(x, y)| *x = f(*x, *y));
    });
    out
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn sum_axis<T: Real>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    if inner == 1 {
        return x.chunks(len.max(1)).take(outer).map(|r| r.iter().fold(T::zero(), |a, &v| a + v)).collect();
    }
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for l in 0..len {
            let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s);
        }
    }
    out
}

pub fn broadcast_axis<T: Real>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(outer * len * inner);
    if inner == 1 {
        for &v in &x[..outer] {
            out.resize(out.len() + len, v);
        }
        return out;
    }
    for o in 0..outer {
        let src = &x[o * inner..(o + 1) * inner];
        for _ in 0..len {
            out.extend_from_slice(src);
        }
    }
    out
}
