//! Raw numeric kernels on contiguous NCHW buffers. No autodiff here.

use crate::scalar::{gemm, lit, Mat, Scalar};

/// Sliding-window geometry over a single `(c, h, w)` image.
///
/// `oh × ow` is the grid of window positions; for a transposed convolution
/// the "image" is the output and the grid is the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geom {
    pub fn conv(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(Self { c, h, w, k, stride, pad, oh, ow })
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Window positions along one axis whose tap `kk` lands inside `[0, len)`.
    #[inline]
    fn valid(&self, kk: usize, len: usize, out_len: usize) -> (usize, usize) {
        let lo = if self.pad > kk { (self.pad - kk).div_ceil(self.stride) } else { 0 };
        let hi = if len + self.pad > kk { ((len - 1 + self.pad - kk) / self.stride + 1).min(out_len) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfold `x` (`c×h×w`) into `cols` (`c·k·k × oh·ow`).
pub fn im2col<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    let npos = g.positions();
    let (s, p) = (g.stride, g.pad);
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = g.valid(ki, g.h, g.oh);
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                let (ow_lo, ow_hi) = g.valid(kj, g.w, g.ow);
                for oh in 0..g.oh {
                    let line = &mut dst[oh * g.ow..(oh + 1) * g.ow];
                    if oh < oh_lo || oh >= oh_hi {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let ih = oh * s + ki - p;
                    let src = &plane[ih * g.w..(ih + 1) * g.w];
                    line[..ow_lo].iter_mut().for_each(|v| *v = T::zero());
                    line[ow_hi..].iter_mut().for_each(|v| *v = T::zero());
                    if s == 1 {
                        let start = ow_lo + kj - p;
                        line[ow_lo..ow_hi].copy_from_slice(&src[start..start + (ow_hi - ow_lo)]);
                    } else {
                        for ow in ow_lo..ow_hi {
                            line[ow] = src[ow * s + kj - p];
                        }
                    }
                }
            }
        }
    }
}

/// Fold `cols` back and accumulate into `x` (adjoint of [`im2col`]).
pub fn col2im<T: Scalar>(cols: &[T], g: &Geom, x: &mut [T]) {
    let npos = g.positions();
    let (s, p) = (g.stride, g.pad);
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = g.valid(ki, g.h, g.oh);
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * npos..(row + 1) * npos];
                let (ow_lo, ow_hi) = g.valid(kj, g.w, g.ow);
                for oh in oh_lo..oh_hi {
                    let ih = oh * s + ki - p;
                    let line = &src[oh * g.ow..(oh + 1) * g.ow];
                    let dst = &mut plane[ih * g.w..(ih + 1) * g.w];
                    if s == 1 {
                        let start = ow_lo + kj - p;
                        for (d, &v) in dst[start..start + (ow_hi - ow_lo)].iter_mut().zip(&line[ow_lo..ow_hi]) {
                            *d = *d + v;
                        }
                    } else {
                        for ow in ow_lo..ow_hi {
                            let d = &mut dst[ow * s + kj - p];
                            *d = *d + line[ow];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: &Geom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

/// Convolution forward over a batch. Returns `(out, cols)`; `cols` is empty
/// for pointwise kernels where the input itself serves as the unfolded matrix.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    n: usize,
    g: &Geom,
    weight: &[T],
    out_c: usize,
    bias: Option<&[T]>,
) -> (Vec<T>, Vec<T>) {
    let (rows, npos) = (g.rows(), g.positions());
    let in_per = g.c * g.h * g.w;
    let out_per = out_c * npos;
    let mut out = vec![T::zero(); n * out_per];
    let pointwise = is_pointwise(g);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); n * rows * npos] };
    for b in 0..n {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let colb: &[T] = if pointwise {
            xb
        } else {
            let cb = &mut cols[b * rows * npos..(b + 1) * rows * npos];
            im2col(xb, g, cb);
            cb
        };
        let ob = &mut out[b * out_per..(b + 1) * out_per];
        gemm(Mat::new(weight, out_c, rows), Mat::new(colb, rows, npos), ob, false);
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                ob[o * npos..(o + 1) * npos].iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    (out, cols)
}

/// Gradients of [`conv2d_forward`]: `(dx, dweight, dbias)`, each only when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    cols: &[T],
    n: usize,
    g: &Geom,
    weight: &[T],
    out_c: usize,
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, npos) = (g.rows(), g.positions());
    let in_per = g.c * g.h * g.w;
    let out_per = out_c * npos;
    let pointwise = is_pointwise(g);
    let mut dx = want_dx.then(|| vec![T::zero(); n * in_per]);
    let mut dw = want_dw.then(|| vec![T::zero(); out_c * rows]);
    let db = want_db.then(|| {
        let mut db = vec![T::zero(); out_c];
        for b in 0..n {
            for (o, d) in db.iter_mut().enumerate() {
                let s: T = dy[b * out_per + o * npos..b * out_per + (o + 1) * npos].iter().copied().sum();
                *d = *d + s;
            }
        }
        db
    });
    let mut dcols = if want_dx && !pointwise { vec![T::zero(); rows * npos] } else { Vec::new() };
    for b in 0..n {
        let dyb = &dy[b * out_per..(b + 1) * out_per];
        let colb = if pointwise { &x[b * in_per..(b + 1) * in_per] } else { &cols[b * rows * npos..(b + 1) * rows * npos] };
        if let Some(dw) = dw.as_mut() {
            gemm(Mat::new(dyb, out_c, npos), Mat::new(colb, rows, npos).t(), dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_per..(b + 1) * in_per];
            if pointwise {
                gemm(Mat::new(weight, out_c, rows).t(), Mat::new(dyb, out_c, npos), dxb, false);
            } else {
                gemm(Mat::new(weight, out_c, rows).t(), Mat::new(dyb, out_c, npos), &mut dcols, false);
                col2im(&dcols, g, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// Transposed convolution forward. `g` describes the *output* image with the
/// input as the window grid; weight is `(in_c, out_c, k, k)`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    n: usize,
    in_c: usize,
    g: &Geom,
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (rows, npos) = (g.rows(), g.positions());
    let in_per = in_c * npos;
    let out_plane = g.h * g.w;
    let out_per = g.c * out_plane;
    let mut out = vec![T::zero(); n * out_per];
    let mut cols = vec![T::zero(); rows * npos];
    for b in 0..n {
        let xb = &x[b * in_per..(b + 1) * in_per];
        gemm(Mat::new(weight, in_c, rows).t(), Mat::new(xb, in_c, npos), &mut cols, false);
        let ob = &mut out[b * out_per..(b + 1) * out_per];
        col2im(&cols, g, ob);
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                ob[o * out_plane..(o + 1) * out_plane].iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    n: usize,
    in_c: usize,
    g: &Geom,
    weight: &[T],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, npos) = (g.rows(), g.positions());
    let in_per = in_c * npos;
    let out_plane = g.h * g.w;
    let out_per = g.c * out_plane;
    let mut dx = want_dx.then(|| vec![T::zero(); n * in_per]);
    let mut dw = want_dw.then(|| vec![T::zero(); in_c * rows]);
    let db = want_db.then(|| {
        let mut db = vec![T::zero(); g.c];
        for b in 0..n {
            for (o, d) in db.iter_mut().enumerate() {
                let s: T = dy[b * out_per + o * out_plane..b * out_per + (o + 1) * out_plane].iter().copied().sum();
                *d = *d + s;
            }
        }
        db
    });
    if want_dx || want_dw {
        let mut dcols = vec![T::zero(); rows * npos];
        for b in 0..n {
            im2col(&dy[b * out_per..(b + 1) * out_per], g, &mut dcols);
            if let Some(dx) = dx.as_mut() {
                gemm(Mat::new(weight, in_c, rows), Mat::new(&dcols, rows, npos), &mut dx[b * in_per..(b + 1) * in_per], false);
            }
            if let Some(dw) = dw.as_mut() {
                gemm(Mat::new(&x[b * in_per..(b + 1) * in_per], in_c, npos), Mat::new(&dcols, rows, npos).t(), dw, true);
            }
        }
    }
    (dx, dw, db)
}

/// Per-(sample, channel) normalization over the spatial plane.
/// Returns `(normalized, inv_std)`.
pub fn instance_norm_forward<T: Scalar>(x: &[T], planes: usize, plane: usize, eps: f64) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); planes];
    let count = lit::<T>(plane as f64);
    for p in 0..planes {
        let src = &x[p * plane..(p + 1) * plane];
        let mean = src.iter().copied().sum::<T>() / count;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let is = T::one() / (var + lit(eps)).sqrt();
        inv[p] = is;
        for (d, &v) in y[p * plane..(p + 1) * plane].iter_mut().zip(src) {
            *d = (v - mean) * is;
        }
    }
    (y, inv)
}

pub fn instance_norm_backward<T: Scalar>(dy: &[T], xhat: &[T], inv: &[T], plane: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    let count = lit::<T>(plane as f64);
    for (p, &is) in inv.iter().enumerate() {
        let r = p * plane..(p + 1) * plane;
        let (g, xh) = (&dy[r.clone()], &xhat[r.clone()]);
        let mean_g = g.iter().copied().sum::<T>() / count;
        let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / count;
        for ((d, &gv), &xv) in dx[r].iter_mut().zip(g).zip(xh) {
            *d = is * (gv - mean_g - xv * mean_gx);
        }
    }
    dx
}

#[inline]
fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    let r = if i < 0 { -i } else if i >= len { 2 * (len - 1) - i } else { i };
    r as usize
}

/// Reflection padding by `pad` on all four sides of each plane.
pub fn reflect_pad_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, pad: usize) -> Vec<T> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); planes * ph * pw];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ph * pw..(p + 1) * ph * pw];
        for i in 0..ph {
            let si = reflect(i as isize - pad as isize, h);
            for j in 0..pw {
                let sj = reflect(j as isize - pad as isize, w);
                dst[i * pw + j] = src[si * w + sj];
            }
        }
    }
    out
}

pub fn reflect_pad_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize, pad: usize) -> Vec<T> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * ph * pw..(p + 1) * ph * pw];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..ph {
            let si = reflect(i as isize - pad as isize, h);
            for j in 0..pw {
                let sj = reflect(j as isize - pad as isize, w);
                dst[si * w + sj] = dst[si * w + sj] + src[i * pw + j];
            }
        }
    }
    dx
}

/// Non-overlapping 2×2 mean pooling (odd trailing rows/cols dropped).
pub fn avg_pool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = lit::<T>(0.25);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let s = src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] + src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1];
                out[(p * oh + i) * ow + j] = s * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = lit::<T>(0.25);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let g = dy[(p * oh + i) * ow + j] * quarter;
                dst[2 * i * w + 2 * j] = g;
                dst[2 * i * w + 2 * j + 1] = g;
                dst[(2 * i + 1) * w + 2 * j] = g;
                dst[(2 * i + 1) * w + 2 * j + 1] = g;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], g: &Geom, w: &[f64], out_c: usize) -> Vec<f64> {
        let mut out = vec![0.0; out_c * g.oh * g.ow];
        for o in 0..out_c {
            for i in 0..g.oh {
                for j in 0..g.ow {
                    let mut acc = 0.0;
                    for c in 0..g.c {
                        for ki in 0..g.k {
                            for kj in 0..g.k {
                                let ih = (i * g.stride + ki) as isize - g.pad as isize;
                                let iw = (j * g.stride + kj) as isize - g.pad as isize;
                                if ih >= 0 && iw >= 0 && (ih as usize) < g.h && (iw as usize) < g.w {
                                    acc += x[(c * g.h + ih as usize) * g.w + iw as usize] * w[((o * g.c + c) * g.k + ki) * g.k + kj];
                                }
                            }
                        }
                    }
                    out[(o * g.oh + i) * g.ow + j] = acc;
                }
            }
        }
        out
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 97) as f64 * scale - 0.4).collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        for &(h, w, k, s, p) in &[(7, 6, 3, 1, 1), (8, 8, 4, 2, 1), (5, 9, 5, 2, 2), (6, 6, 1, 1, 0), (9, 9, 7, 1, 3)] {
            let g = Geom::conv(3, h, w, k, s, p).unwrap();
            let x = seq(3 * h * w, 0.01);
            let wt = seq(4 * 3 * k * k, 0.013);
            let (out, _) = conv2d_forward(&x, 1, &g, &wt, 4, None);
            let want = naive_conv(&x, &g, &wt, 4);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{h}x{w} k{k} s{s} p{p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Geom::conv(2, 7, 5, 3, 2, 1).unwrap();
        let x = seq(g.c * g.h * g.w, 0.02);
        let y = seq(g.rows() * g.positions(), 0.03);
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn reflect_pad_layout() {
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let out = reflect_pad_forward(&x, 1, 3, 3, 1);
        assert_eq!(&out[0..5], &[4.0, 3.0, 4.0, 5.0, 4.0]);
        assert_eq!(&out[5..10], &[1.0, 0.0, 1.0, 2.0, 1.0]);
    }
}
