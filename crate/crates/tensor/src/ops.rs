//! Differentiable operations on [`Var`].

use crate::error::{Result, TensorError};
use crate::kernels::{self, Geom};
use crate::scalar::{gemm, lit, Mat, Scalar};
use crate::tensor::Tensor;
use crate::var::Var;

fn same_shape<T: Scalar>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape { op, expected: a.shape().to_vec(), got: b.shape().to_vec() });
    }
    Ok(())
}

fn rank4<T: Scalar>(op: &'static str, x: &Var<T>) -> Result<(usize, usize, usize, usize)> {
    if x.value().rank() != 4 {
        return Err(TensorError::Invalid(format!("{op}: expected NCHW input, got {:?}", x.shape())));
    }
    Ok(x.value().nchw())
}

fn unary<T: Scalar>(x: &Var<T>, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<T> {
    // df(input, output) is the local derivative.
    let out = x.value().map(f);
    let xs = x.clone();
    let saved = out.clone();
    Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let data = xs
                .value()
                .data()
                .iter()
                .zip(saved.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect();
            vec![Some(Tensor::from_vec(g.shape().to_vec(), data).unwrap())]
        }),
    )
}

pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("add", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x + y);
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], Box::new(|g| vec![Some(g.clone()), Some(g.clone())])))
}

pub fn sub<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("sub", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x - y);
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], Box::new(|g| vec![Some(g.clone()), Some(g.map(|v| -v))])))
}

pub fn mul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("mul", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x * y);
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = ac.requires_grad().then(|| g.zip_map(bc.value(), |gv, bv| gv * bv));
            let gb = bc.requires_grad().then(|| g.zip_map(ac.value(), |gv, av| gv * av));
            vec![ga, gb]
        }),
    ))
}

/// Sum of several same-shaped values.
pub fn add_all<T: Scalar>(terms: &[Var<T>]) -> Result<Var<T>> {
    let first = terms.first().ok_or(TensorError::Empty("add_all"))?;
    let mut acc = first.value().clone();
    for t in &terms[1..] {
        same_shape("add_all", first, t)?;
        acc.add_assign(t.value());
    }
    let n = terms.len();
    Ok(Var::from_op(acc, terms.to_vec(), Box::new(move |g| vec![Some(g.clone()); n])))
}

pub fn scale<T: Scalar>(x: &Var<T>, s: f64) -> Var<T> {
    let sv = lit::<T>(s);
    let out = x.value().map(|v| v * sv);
    Var::from_op(out, vec![x.clone()], Box::new(move |g| vec![Some(g.map(|v| v * sv))]))
}

pub fn add_scalar<T: Scalar>(x: &Var<T>, s: f64) -> Var<T> {
    let sv = lit::<T>(s);
    Var::from_op(x.value().map(|v| v + sv), vec![x.clone()], Box::new(|g| vec![Some(g.clone())]))
}

/// `k·a + (1−k)·b`.
pub fn lerp<T: Scalar>(a: &Var<T>, b: &Var<T>, k: f64) -> Result<Var<T>> {
    same_shape("lerp", a, b)?;
    let (kv, kc) = (lit::<T>(k), lit::<T>(1.0 - k));
    let out = a.value().zip_map(b.value(), |x, y| kv * x + kc * y);
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| vec![Some(g.map(|v| v * kv)), Some(g.map(|v| v * kc))]),
    ))
}

pub fn relu<T: Scalar>(x: &Var<T>) -> Var<T> {
    unary(x, |v| v.max(T::zero()), |xv, _| if xv > T::zero() { T::one() } else { T::zero() })
}

pub fn leaky_relu<T: Scalar>(x: &Var<T>, slope: f64) -> Var<T> {
    let s = lit::<T>(slope);
    unary(x, move |v| if v > T::zero() { v } else { v * s }, move |xv, _| if xv > T::zero() { T::one() } else { s })
}

pub fn tanh<T: Scalar>(x: &Var<T>) -> Var<T> {
    unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
}

pub fn sigmoid<T: Scalar>(x: &Var<T>) -> Var<T> {
    unary(x, sigmoid_scalar, |_, y| y * (T::one() - y))
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn reshape<T: Scalar>(x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
    let out = x.value().reshape(shape.to_vec())?;
    let orig = x.shape().to_vec();
    Ok(Var::from_op(out, vec![x.clone()], Box::new(move |g| vec![Some(g.reshape(orig.clone()).unwrap())])))
}

/// Concatenate along the batch axis.
pub fn cat_batch<T: Scalar>(parts: &[Var<T>]) -> Result<Var<T>> {
    let vals: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
    let out = Tensor::cat_first(&vals)?;
    let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[0]).collect();
    Ok(Var::from_op(
        out,
        parts.to_vec(),
        Box::new(move |g| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&n| {
                    let part = g.narrow_first(start, n);
                    start += n;
                    Some(part)
                })
                .collect()
        }),
    ))
}

/// Rows `start..start+len` along the batch axis.
pub fn narrow_batch<T: Scalar>(x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
    let n = x.shape()[0];
    if start + len > n {
        return Err(TensorError::Invalid(format!("narrow_batch {start}+{len} > {n}")));
    }
    let out = x.value().narrow_first(start, len);
    let shape = x.shape().to_vec();
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut full = Tensor::zeros(shape.clone());
            let per = g.numel() / len.max(1);
            full.data_mut()[start * per..(start + len) * per].copy_from_slice(g.data());
            vec![Some(full)]
        }),
    ))
}

/// 2-D convolution with zero padding. `w` is `(out_c, in_c, k, k)`.
pub fn conv2d<T: Scalar>(x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, stride: usize, pad: usize) -> Result<Var<T>> {
    let (n, c, h, wd) = rank4("conv2d", x)?;
    let ws = w.shape().to_vec();
    if ws.len() != 4 || ws[1] != c || ws[2] != ws[3] {
        return Err(TensorError::Shape { op: "conv2d weight", expected: vec![ws.first().copied().unwrap_or(0), c, ws.get(2).copied().unwrap_or(0), ws.get(2).copied().unwrap_or(0)], got: ws });
    }
    let (out_c, k) = (ws[0], ws[2]);
    let g = Geom::conv(c, h, wd, k, stride, pad)
        .ok_or_else(|| TensorError::Invalid(format!("conv2d: kernel {k} too large for {h}x{wd} with pad {pad}")))?;
    let (out, cols) = kernels::conv2d_forward(x.value().data(), n, &g, w.value().data(), out_c, b.map(|b| b.value().data()));
    let out = Tensor::from_vec(vec![n, out_c, g.oh, g.ow], out)?;
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    let (xc, wc, bc) = (x.clone(), w.clone(), b.cloned());
    Ok(Var::from_op(
        out,
        parents,
        Box::new(move |gy| {
            let (dx, dw, db) = kernels::conv2d_backward(
                gy.data(),
                xc.value().data(),
                &cols,
                n,
                &g,
                wc.value().data(),
                out_c,
                xc.requires_grad(),
                wc.requires_grad(),
                bc.as_ref().is_some_and(|b| b.requires_grad()),
            );
            let mut res = vec![
                dx.map(|d| Tensor::from_vec(xc.shape().to_vec(), d).unwrap()),
                dw.map(|d| Tensor::from_vec(wc.shape().to_vec(), d).unwrap()),
            ];
            if bc.is_some() {
                res.push(db.map(|d| Tensor::from_vec(vec![out_c], d).unwrap()));
            }
            res
        }),
    ))
}

/// Transposed 2-D convolution. `w` is `(in_c, out_c, k, k)`; output side is
/// `(h−1)·stride − 2·pad + k + out_pad`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Var<T>,
    w: &Var<T>,
    b: Option<&Var<T>>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<Var<T>> {
    let (n, c, h, wd) = rank4("conv_transpose2d", x)?;
    let ws = w.shape().to_vec();
    if ws.len() != 4 || ws[0] != c || ws[2] != ws[3] {
        return Err(TensorError::Invalid(format!("conv_transpose2d: weight {ws:?} incompatible with {c} input channels")));
    }
    let (out_c, k) = (ws[1], ws[2]);
    if out_pad >= stride.max(1) && out_pad > 0 {
        return Err(TensorError::Invalid("conv_transpose2d: out_pad must be < stride".into()));
    }
    let oh = ((h - 1) * stride + k + out_pad).checked_sub(2 * pad);
    let ow = ((wd - 1) * stride + k + out_pad).checked_sub(2 * pad);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(TensorError::Invalid("conv_transpose2d: padding larger than output".into()));
    };
    let g = Geom { c: out_c, h: oh, w: ow, k, stride, pad, oh: h, ow: wd };
    let out = kernels::conv_transpose2d_forward(x.value().data(), n, c, &g, w.value().data(), b.map(|b| b.value().data()));
    let out = Tensor::from_vec(vec![n, out_c, oh, ow], out)?;
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    let (xc, wc, bc) = (x.clone(), w.clone(), b.cloned());
    Ok(Var::from_op(
        out,
        parents,
        Box::new(move |gy| {
            let (dx, dw, db) = kernels::conv_transpose2d_backward(
                gy.data(),
                xc.value().data(),
                n,
                c,
                &g,
                wc.value().data(),
                xc.requires_grad(),
                wc.requires_grad(),
                bc.as_ref().is_some_and(|b| b.requires_grad()),
            );
            let mut res = vec![
                dx.map(|d| Tensor::from_vec(xc.shape().to_vec(), d).unwrap()),
                dw.map(|d| Tensor::from_vec(wc.shape().to_vec(), d).unwrap()),
            ];
            if bc.is_some() {
                res.push(db.map(|d| Tensor::from_vec(vec![out_c], d).unwrap()));
            }
            res
        }),
    ))
}

pub fn reflect_pad<T: Scalar>(x: &Var<T>, pad: usize) -> Result<Var<T>> {
    let (n, c, h, w) = rank4("reflect_pad", x)?;
    if pad >= h || pad >= w {
        return Err(TensorError::Invalid(format!("reflect_pad: pad {pad} needs spatial size > pad, got {h}x{w}")));
    }
    if pad == 0 {
        return Ok(x.clone());
    }
    let out = kernels::reflect_pad_forward(x.value().data(), n * c, h, w, pad);
    let out = Tensor::from_vec(vec![n, c, h + 2 * pad, w + 2 * pad], out)?;
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let d = kernels::reflect_pad_backward(g.data(), n * c, h, w, pad);
            vec![Some(Tensor::from_vec(vec![n, c, h, w], d).unwrap())]
        }),
    ))
}

/// Instance normalization without affine parameters.
pub fn instance_norm<T: Scalar>(x: &Var<T>, eps: f64) -> Result<Var<T>> {
    let (n, c, h, w) = rank4("instance_norm", x)?;
    let (y, inv) = kernels::instance_norm_forward(x.value().data(), n * c, h * w, eps);
    let out = Tensor::from_vec(vec![n, c, h, w], y)?;
    let xhat = out.clone();
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let d = kernels::instance_norm_backward(g.data(), xhat.data(), &inv, h * w);
            vec![Some(Tensor::from_vec(vec![n, c, h, w], d).unwrap())]
        }),
    ))
}

/// Per-(sample, channel) affine modulation: `x·gamma + beta`, gamma/beta `(n, c)`.
pub fn modulate<T: Scalar>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
    let (n, c, h, w) = rank4("modulate", x)?;
    for (name, t) in [("modulate gamma", gamma), ("modulate beta", beta)] {
        if t.shape() != [n, c] {
            return Err(TensorError::Shape { op: name, expected: vec![n, c], got: t.shape().to_vec() });
        }
    }
    let plane = h * w;
    let xd = x.value().data();
    let (gd, bd) = (gamma.value().data(), beta.value().data());
    let mut out = vec![T::zero(); xd.len()];
    for p in 0..n * c {
        let (gv, bv) = (gd[p], bd[p]);
        for (o, &v) in out[p * plane..(p + 1) * plane].iter_mut().zip(&xd[p * plane..(p + 1) * plane]) {
            *o = v * gv + bv;
        }
    }
    let out = Tensor::from_vec(vec![n, c, h, w], out)?;
    let (xc, gc) = (x.clone(), gamma.clone());
    Ok(Var::from_op(
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g| {
            let gdat = g.data();
            let xd = xc.value().data();
            let gam = gc.value().data();
            let mut dx = vec![T::zero(); gdat.len()];
            let mut dg = vec![T::zero(); n * c];
            let mut db = vec![T::zero(); n * c];
            for p in 0..n * c {
                let r = p * plane..(p + 1) * plane;
                let mut sg = T::zero();
                let mut sb = T::zero();
                for ((d, &gv), &xv) in dx[r.clone()].iter_mut().zip(&gdat[r.clone()]).zip(&xd[r]) {
                    *d = gv * gam[p];
                    sg = sg + gv * xv;
                    sb = sb + gv;
                }
                dg[p] = sg;
                db[p] = sb;
            }
            vec![
                Some(Tensor::from_vec(vec![n, c, h, w], dx).unwrap()),
                Some(Tensor::from_vec(vec![n, c], dg).unwrap()),
                Some(Tensor::from_vec(vec![n, c], db).unwrap()),
            ]
        }),
    ))
}

/// 2×2 mean pooling, stride 2.
pub fn avg_pool2<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let (n, c, h, w) = rank4("avg_pool2", x)?;
    if h < 2 || w < 2 {
        return Err(TensorError::Invalid(format!("avg_pool2: input {h}x{w} too small")));
    }
    let out = Tensor::from_vec(vec![n, c, h / 2, w / 2], kernels::avg_pool2_forward(x.value().data(), n * c, h, w))?;
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g| vec![Some(Tensor::from_vec(vec![n, c, h, w], kernels::avg_pool2_backward(g.data(), n * c, h, w)).unwrap())]),
    ))
}

/// Mean over the spatial plane: `(n, c, h, w) → (n, c, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    let (n, c, h, w) = rank4("global_avg_pool", x)?;
    let plane = h * w;
    let denom = lit::<T>(plane as f64);
    let out: Vec<T> = x.value().data().chunks(plane).map(|p| p.iter().copied().sum::<T>() / denom).collect();
    let out = Tensor::from_vec(vec![n, c, 1, 1], out)?;
    Ok(Var::from_op(
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut d = Vec::with_capacity(n * c * plane);
            for &gv in g.data() {
                d.extend(std::iter::repeat_n(gv / denom, plane));
            }
            vec![Some(Tensor::from_vec(vec![n, c, h, w], d).unwrap())]
        }),
    ))
}

/// `x·wᵀ + b` with `x (n, in)`, `w (out, in)`, `b (out)`.
pub fn linear<T: Scalar>(x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
    let (xs, ws) = (x.shape().to_vec(), w.shape().to_vec());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(TensorError::Invalid(format!("linear: input {xs:?} incompatible with weight {ws:?}")));
    }
    let (n, inp, out_f) = (xs[0], xs[1], ws[0]);
    let mut out = vec![T::zero(); n * out_f];
    gemm(Mat::new(x.value().data(), n, inp), Mat::new(w.value().data(), out_f, inp).t(), &mut out, false);
    if let Some(b) = b {
        for row in out.chunks_mut(out_f) {
            for (o, &bv) in row.iter_mut().zip(b.value().data()) {
                *o = *o + bv;
            }
        }
    }
    let out = Tensor::from_vec(vec![n, out_f], out)?;
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        parents.push(b.clone());
    }
    let (xc, wc, has_b) = (x.clone(), w.clone(), b.is_some());
    Ok(Var::from_op(
        out,
        parents,
        Box::new(move |g| {
            let gd = g.data();
            let dx = xc.requires_grad().then(|| {
                let mut d = vec![T::zero(); n * inp];
                gemm(Mat::new(gd, n, out_f), Mat::new(wc.value().data(), out_f, inp), &mut d, false);
                Tensor::from_vec(vec![n, inp], d).unwrap()
            });
            let dw = wc.requires_grad().then(|| {
                let mut d = vec![T::zero(); out_f * inp];
                gemm(Mat::new(gd, n, out_f).t(), Mat::new(xc.value().data(), n, inp), &mut d, false);
                Tensor::from_vec(vec![out_f, inp], d).unwrap()
            });
            let mut res = vec![dx, dw];
            if has_b {
                let mut db = vec![T::zero(); out_f];
                for row in gd.chunks(out_f) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
                res.push(Some(Tensor::from_vec(vec![out_f], db).unwrap()));
            }
            res
        }),
    ))
}

/// Tile `(n, s)` codes over an `h×w` plane: `(n, s, h, w)`.
pub fn broadcast_spatial<T: Scalar>(s: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
    let ss = s.shape().to_vec();
    if ss.len() != 2 {
        return Err(TensorError::Invalid(format!("broadcast_spatial: expected (n, s), got {ss:?}")));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(s.value().numel() * plane);
    for &v in s.value().data() {
        out.extend(std::iter::repeat_n(v, plane));
    }
    let out = Tensor::from_vec(vec![ss[0], ss[1], h, w], out)?;
    Ok(Var::from_op(
        out,
        vec![s.clone()],
        Box::new(move |g| {
            let d: Vec<T> = g.data().chunks(plane).map(|c| c.iter().copied().sum()).collect();
            vec![Some(Tensor::from_vec(ss.clone(), d).unwrap())]
        }),
    ))
}

/// Concatenate two NCHW tensors along channels.
pub fn cat_channels<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    let (n, ca, h, w) = rank4("cat_channels", a)?;
    let (nb, cb, hb, wb) = rank4("cat_channels", b)?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(TensorError::Shape { op: "cat_channels", expected: a.shape().to_vec(), got: b.shape().to_vec() });
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * (ca + cb) * plane);
    for i in 0..n {
        out.extend_from_slice(&a.value().data()[i * ca * plane..(i + 1) * ca * plane]);
        out.extend_from_slice(&b.value().data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    let out = Tensor::from_vec(vec![n, ca + cb, h, w], out)?;
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let gd = g.data();
            let mut da = Vec::with_capacity(n * ca * plane);
            let mut db = Vec::with_capacity(n * cb * plane);
            for i in 0..n {
                let base = i * (ca + cb) * plane;
                da.extend_from_slice(&gd[base..base + ca * plane]);
                db.extend_from_slice(&gd[base + ca * plane..base + (ca + cb) * plane]);
            }
            vec![
                Some(Tensor::from_vec(vec![n, ca, h, w], da).unwrap()),
                Some(Tensor::from_vec(vec![n, cb, h, w], db).unwrap()),
            ]
        }),
    ))
}

pub fn sum<T: Scalar>(x: &Var<T>) -> Var<T> {
    let shape = x.shape().to_vec();
    Var::from_op(
        Tensor::scalar(x.value().sum()),
        vec![x.clone()],
        Box::new(move |g| vec![Some(Tensor::full(shape.clone(), g.item()))]),
    )
}

pub fn mean<T: Scalar>(x: &Var<T>) -> Var<T> {
    let n = x.value().numel().max(1);
    scale(&sum(x), 1.0 / n as f64)
}

/// Mean absolute difference `mean |a − b|`; subgradient 0 at equality.
pub fn l1_mean<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("l1_mean", a, b)?;
    let n = a.value().numel().max(1);
    let inv = lit::<T>(1.0 / n as f64);
    let diff: Vec<T> = a.value().data().iter().zip(b.value().data()).map(|(&x, &y)| x - y).collect();
    let total = diff.iter().map(|d| d.abs()).sum::<T>() * inv;
    let shape = a.shape().to_vec();
    Ok(Var::from_op(
        Tensor::scalar(total),
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let gv = g.item() * inv;
            let sign: Vec<T> = diff
                .iter()
                .map(|&d| if d > T::zero() { gv } else if d < T::zero() { -gv } else { T::zero() })
                .collect();
            let ga = Tensor::from_vec(shape.clone(), sign).unwrap();
            let gb = ga.map(|v| -v);
            vec![Some(ga), Some(gb)]
        }),
    ))
}

/// Binary cross-entropy on logits against a constant target in `[0, 1]`,
/// averaged over elements, with probabilities clamped to `[floor, 1 − floor]`
/// inside the logarithms (no gradient where the clamp is active).
pub fn bce_with_floor<T: Scalar>(logits: &Var<T>, target: f64, floor: f64) -> Var<T> {
    let n = logits.value().numel().max(1);
    let inv = 1.0 / n as f64;
    let (lo, hi) = (floor, 1.0 - floor);
    let mut total = 0.0;
    let mut local = Vec::with_capacity(n);
    for &z in logits.value().data() {
        let p = sigmoid_scalar(z.to_f64_lossy());
        let pc = p.clamp(lo, hi);
        total += -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln());
        // d/dz of the clamped loss; dp/dz = p(1−p).
        let d = if p > lo && p < hi { (-(target / pc) + (1.0 - target) / (1.0 - pc)) * p * (1.0 - p) } else { 0.0 };
        local.push(d);
    }
    let shape = logits.shape().to_vec();
    Var::from_op(
        Tensor::scalar(lit(total * inv)),
        vec![logits.clone()],
        Box::new(move |g| {
            let gv = g.item().to_f64_lossy() * inv;
            let d = local.iter().map(|&l| lit::<T>(l * gv)).collect();
            vec![Some(Tensor::from_vec(shape.clone(), d).unwrap())]
        }),
    )
}

/// `mean (x − target)²`.
pub fn mse_to<T: Scalar>(x: &Var<T>, target: f64) -> Var<T> {
    let n = x.value().numel().max(1);
    let t = lit::<T>(target);
    let inv = lit::<T>(1.0 / n as f64);
    let total = x.value().data().iter().map(|&v| (v - t) * (v - t)).sum::<T>() * inv;
    let xc = x.clone();
    Var::from_op(
        Tensor::scalar(total),
        vec![x.clone()],
        Box::new(move |g| {
            let two = lit::<T>(2.0) * g.item() * inv;
            vec![Some(xc.value().map(|v| two * (v - t)))]
        }),
    )
}

/// Mean softmax cross-entropy of `(n, classes)` logits against class labels.
pub fn cross_entropy<T: Scalar>(logits: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
    let s = logits.shape().to_vec();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(TensorError::Invalid(format!("cross_entropy: logits {s:?} vs {} labels", labels.len())));
    }
    let (n, k) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::Invalid(format!("cross_entropy: label {bad} >= {k} classes")));
    }
    let mut probs = vec![T::zero(); n * k];
    let mut total = T::zero();
    for (i, row) in logits.value().data().chunks(k).enumerate() {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        for (j, &v) in row.iter().enumerate() {
            probs[i * k + j] = (v - m).exp() / z;
        }
        total = total - (row[labels[i]] - m - z.ln());
    }
    let inv = lit::<T>(1.0 / n as f64);
    let labels = labels.to_vec();
    Ok(Var::from_op(
        Tensor::scalar(total * inv),
        vec![logits.clone()],
        Box::new(move |g| {
            let gv = g.item() * inv;
            let mut d = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                d[i * k + l] = d[i * k + l] - T::one();
            }
            d.iter_mut().for_each(|v| *v = *v * gv);
            vec![Some(Tensor::from_vec(vec![n, k], d).unwrap())]
        }),
    ))
}
