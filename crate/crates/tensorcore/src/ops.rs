//! Primitive kernels. Each primitive has a forward that may stash auxiliary
//! data, and an adjoint that maps the output cotangent to input cotangents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::{numel, split_axis, strides, Array};
use crate::error::{mismatch, Result, TensorError};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    MatMul,
    Conv2d { dilation: usize },
    Concat { axis: usize },
    Add,
    Sub,
    Mul,
    Div,
    Maximum,
    SmoothL1,
    Sqrt,
    Ln,
    Exp,
    Abs,
    Powf(f64),
    Relu,
    Gelu,
    Sigmoid,
    Scale(f64),
    Offset(f64),
    Softmax { axis: usize },
    SumAll,
    MeanAll,
    SumAxes { axes: Vec<usize> },
    MeanAxes { axes: Vec<usize> },
    MaxAxes { axes: Vec<usize> },
    MinAxes { axes: Vec<usize> },
    GroupNorm { groups: usize, eps: f64 },
    LayerNorm { eps: f64 },
    Dropout { rate: f64, seed: u64 },
    AvgPool { k: usize },
    Upsample { k: usize },
    Reshape { shape: Vec<usize> },
    Permute { perm: Vec<usize> },
    Slice { axis: usize, start: usize, end: usize },
    BroadcastTo { shape: Vec<usize> },
    Gather { indices: Vec<usize> },
    Histogram { bins: usize },
    Sort { axis: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Concat { .. } => "concat",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Maximum => "maximum",
            Op::SmoothL1 => "smooth_l1",
            Op::Sqrt => "sqrt",
            Op::Ln => "ln",
            Op::Exp => "exp",
            Op::Abs => "abs",
            Op::Powf(_) => "powf",
            Op::Relu => "relu",
            Op::Gelu => "gelu",
            Op::Sigmoid => "sigmoid",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Softmax { .. } => "softmax",
            Op::SumAll => "sum",
            Op::MeanAll => "mean",
            Op::SumAxes { .. } => "sum_axes",
            Op::MeanAxes { .. } => "mean_axes",
            Op::MaxAxes { .. } => "max_axes",
            Op::MinAxes { .. } => "min_axes",
            Op::GroupNorm { .. } => "group_norm",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::AvgPool { .. } => "avg_pool",
            Op::Upsample { .. } => "upsample",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Slice { .. } => "slice",
            Op::BroadcastTo { .. } => "broadcast_to",
            Op::Gather { .. } => "gather",
            Op::Histogram { .. } => "histogram",
            Op::Sort { .. } => "sort",
        }
    }
}

/// Forward-pass side data needed by some adjoints.
#[derive(Clone, Debug, Default)]
pub enum Aux {
    #[default]
    None,
    Mask(Vec<f64>),
    InvStd(Vec<f64>),
    ArgIdx(Vec<usize>),
}

// ---------------------------------------------------------------------------
// gemm

/// `c = a·b + beta·c` for logical `a: m×k`, `b: k×n`. Transposed flags mean
/// the operand is stored as its transpose.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized for the logical dimensions checked above and
    // the strides index only inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
        );
    }
}

// ---------------------------------------------------------------------------
// broadcasting

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (right aligned, zero where broadcast).
fn view_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                st[i - off]
            }
        })
        .collect()
}

/// Walks every index of `shape`, reporting the flat output offset together
/// with the offsets into two strided views.
fn walk2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = numel(shape);
    let nd = shape.len();
    if nd == 0 {
        if n == 1 {
            f(0, 0, 0);
        }
        return;
    }
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    let last = nd - 1;
    let ext = shape[last];
    let (la, lb) = (sa[last], sb[last]);
    let mut o = 0;
    while o < n {
        for _ in 0..ext {
            f(o, ia, ib);
            o += 1;
            ia += la;
            ib += lb;
        }
        ia -= la * ext;
        ib -= lb * ext;
        let mut d = last;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            ia -= sa[d] * shape[d];
            ib -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

fn binary_forward(
    name: &'static str,
    a: &Array,
    b: &Array,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Array> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Array::new(a.shape().to_vec(), data);
    }
    let out = broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| mismatch(name, format!("{:?} vs {:?}", a.shape(), b.shape())))?;
    let sa = view_strides(a.shape(), &out);
    let sb = view_strides(b.shape(), &out);
    let mut data = vec![0.0; numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    walk2(&out, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
    Array::new(out, data)
}

/// Cotangents for a broadcasting binary op given the two partials.
fn binary_backward(
    a: &Array,
    b: &Array,
    g: &Array,
    need: &[bool],
    pa: impl Fn(f64, f64) -> f64,
    pb: impl Fn(f64, f64) -> f64,
) -> Vec<Option<Array>> {
    let out = g.shape();
    let mut ga = need[0].then(|| Array::zeros(a.shape()));
    let mut gb = need[1].then(|| Array::zeros(b.shape()));
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    if a.shape() == b.shape() {
        for o in 0..gd.len() {
            if let Some(ga) = ga.as_mut() {
                ga.data_mut()[o] += gd[o] * pa(ad[o], bd[o]);
            }
            if let Some(gb) = gb.as_mut() {
                gb.data_mut()[o] += gd[o] * pb(ad[o], bd[o]);
            }
        }
    } else {
        let sa = view_strides(a.shape(), out);
        let sb = view_strides(b.shape(), out);
        walk2(out, &sa, &sb, |o, i, j| {
            if let Some(ga) = ga.as_mut() {
                ga.data_mut()[i] += gd[o] * pa(ad[i], bd[j]);
            }
            if let Some(gb) = gb.as_mut() {
                gb.data_mut()[j] += gd[o] * pb(ad[i], bd[j]);
            }
        });
    }
    vec![ga, gb]
}

/// Sums `g` down to `shape` (inverse of broadcasting).
fn reduce_to(g: &Array, shape: &[usize]) -> Array {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Array::zeros(shape);
    let st = view_strides(shape, g.shape());
    let zero = vec![0; g.ndim()];
    let gd = g.data();
    let od = out.data_mut();
    walk2(g.shape(), &st, &zero, |o, i, _| od[i] += gd[o]);
    out
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect()
}

fn check_axes(name: &'static str, shape: &[usize], axes: &[usize]) -> Result<()> {
    if axes.iter().any(|&a| a >= shape.len()) {
        return Err(mismatch(name, format!("axes {:?} for shape {:?}", axes, shape)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// elementwise helpers

fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        sign(d)
    }
}

// ---------------------------------------------------------------------------
// shape checks for the structured primitives

fn expect_rank(name: &'static str, a: &Array, rank: usize) -> Result<()> {
    if a.ndim() != rank {
        return Err(mismatch(
            name,
            format!("expected rank {}, got {:?}", rank, a.shape()),
        ));
    }
    Ok(())
}

struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &Array, b: &Array) -> Result<MatMulDims> {
    if a.ndim() < 2 || b.ndim() < 2 {
        return Err(mismatch("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let (m, k) = (a.shape()[a.ndim() - 2], a.shape()[a.ndim() - 1]);
    let (k2, n) = (b.shape()[b.ndim() - 2], b.shape()[b.ndim() - 1]);
    if k != k2 {
        return Err(mismatch("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let batch_a = &a.shape()[..a.ndim() - 2];
    let batch: usize = batch_a.iter().product();
    let shared_rhs = b.ndim() == 2;
    if !shared_rhs && &b.shape()[..b.ndim() - 2] != batch_a {
        return Err(mismatch("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let mut out_shape = batch_a.to_vec();
    out_shape.extend([m, n]);
    Ok(MatMulDims {
        batch,
        m,
        k,
        n,
        shared_rhs,
        out_shape,
    })
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pad_h: usize,
    pad_w: usize,
}

fn conv_dims(x: &Array, w: &Array, dilation: usize) -> Result<ConvDims> {
    expect_rank("conv2d", x, 4)?;
    expect_rank("conv2d", w, 4)?;
    let [n, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [cout, cin2, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    if cin != cin2 || kh % 2 == 0 || kw % 2 == 0 || dilation == 0 {
        return Err(mismatch(
            "conv2d",
            format!("input {:?}, weight {:?}, dilation {}", x.shape(), w.shape(), dilation),
        ));
    }
    Ok(ConvDims {
        n,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        pad_h: dilation * (kh - 1) / 2,
        pad_w: dilation * (kw - 1) / 2,
    })
}

fn im2col(x: &[f64], d: &ConvDims, dil: usize, cols: &mut [f64]) {
    let hw = d.h * d.w;
    for c in 0..d.cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let oy = (ki * dil) as isize - d.pad_h as isize;
                let ox = (kj * dil) as isize - d.pad_w as isize;
                for y in 0..d.h {
                    let iy = y as isize + oy;
                    let drow = &mut dst[y * d.w..(y + 1) * d.w];
                    if iy < 0 || iy >= d.h as isize {
                        drow.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (xx, v) in drow.iter_mut().enumerate() {
                        let ix = xx as isize + ox;
                        *v = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &ConvDims, dil: usize, gx: &mut [f64]) {
    let hw = d.h * d.w;
    for c in 0..d.cin {
        let plane = &mut gx[c * hw..(c + 1) * hw];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let oy = (ki * dil) as isize - d.pad_h as isize;
                let ox = (kj * dil) as isize - d.pad_w as isize;
                for y in 0..d.h {
                    let iy = y as isize + oy;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for xx in 0..d.w {
                        let ix = xx as isize + ox;
                        if ix >= 0 && ix < d.w as isize {
                            plane[iy as usize * d.w + ix as usize] += src[y * d.w + xx];
                        }
                    }
                }
            }
        }
    }
}

fn pool_dims(name: &'static str, x: &Array, k: usize) -> Result<(usize, usize, usize, usize)> {
    expect_rank(name, x, 4)?;
    let s = x.shape();
    if k == 0 || s[2] % k != 0 || s[3] % k != 0 {
        return Err(mismatch(name, format!("factor {} for shape {:?}", k, s)));
    }
    Ok((s[0] * s[1], s[2], s[3], k))
}

// ---------------------------------------------------------------------------
// forward

pub(crate) fn forward(op: &Op, inputs: &[&Array]) -> Result<(Array, Aux)> {
    let plain = |a: Array| Ok((a, Aux::None));
    match op {
        Op::Leaf => Err(TensorError::InvalidArgument("leaf has no forward".into())),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let d = matmul_dims(a, b)?;
            let mut out = vec![0.0; numel(&d.out_shape)];
            if d.shared_rhs {
                gemm(d.batch * d.m, d.k, d.n, a.data(), false, b.data(), false, &mut out, 0.0);
            } else {
                let (sa, sb, so) = (d.m * d.k, d.k * d.n, d.m * d.n);
                for i in 0..d.batch {
                    gemm(
                        d.m,
                        d.k,
                        d.n,
                        &a.data()[i * sa..(i + 1) * sa],
                        false,
                        &b.data()[i * sb..(i + 1) * sb],
                        false,
                        &mut out[i * so..(i + 1) * so],
                        0.0,
                    );
                }
            }
            plain(Array::new(d.out_shape, out)?)
        }
        Op::Conv2d { dilation } => {
            let (x, w) = (inputs[0], inputs[1]);
            let d = conv_dims(x, w, *dilation)?;
            let hw = d.h * d.w;
            let r = d.cin * d.kh * d.kw;
            let mut out = vec![0.0; d.n * d.cout * hw];
            let one_by_one = d.kh == 1 && d.kw == 1;
            let mut cols = if one_by_one { Vec::new() } else { vec![0.0; r * hw] };
            for s in 0..d.n {
                let xs = &x.data()[s * d.cin * hw..(s + 1) * d.cin * hw];
                let src = if one_by_one {
                    xs
                } else {
                    im2col(xs, &d, *dilation, &mut cols);
                    &cols
                };
                gemm(
                    d.cout,
                    r,
                    hw,
                    w.data(),
                    false,
                    src,
                    false,
                    &mut out[s * d.cout * hw..(s + 1) * d.cout * hw],
                    0.0,
                );
            }
            plain(Array::new(vec![d.n, d.cout, d.h, d.w], out)?)
        }
        Op::Concat { axis } => {
            let first = inputs[0];
            if *axis >= first.ndim() {
                return Err(mismatch("concat", format!("axis {} for {:?}", axis, first.shape())));
            }
            let mut total = 0;
            for a in inputs {
                let ok = a.ndim() == first.ndim()
                    && a
                        .shape()
                        .iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(i, (x, y))| i == *axis || x == y);
                if !ok {
                    return Err(mismatch(
                        "concat",
                        format!("{:?} vs {:?} on axis {}", a.shape(), first.shape(), axis),
                    ));
                }
                total += a.shape()[*axis];
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = total;
            let (outer, _, inner) = split_axis(&shape, *axis);
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for a in inputs {
                    let blk = a.shape()[*axis] * inner;
                    out.extend_from_slice(&a.data()[o * blk..(o + 1) * blk]);
                }
            }
            plain(Array::new(shape, out)?)
        }
        Op::Add => plain(binary_forward("add", inputs[0], inputs[1], |a, b| a + b)?),
        Op::Sub => plain(binary_forward("sub", inputs[0], inputs[1], |a, b| a - b)?),
        Op::Mul => plain(binary_forward("mul", inputs[0], inputs[1], |a, b| a * b)?),
        Op::Div => plain(binary_forward("div", inputs[0], inputs[1], |a, b| a / b)?),
        Op::Maximum => plain(binary_forward("maximum", inputs[0], inputs[1], |a, b| {
            if a >= b {
                a
            } else {
                b
            }
        })?),
        Op::SmoothL1 => plain(binary_forward("smooth_l1", inputs[0], inputs[1], |a, b| {
            smooth_l1(a - b)
        })?),
        Op::Sqrt => plain(inputs[0].map(f64::sqrt)),
        Op::Ln => plain(inputs[0].map(f64::ln)),
        Op::Exp => plain(inputs[0].map(f64::exp)),
        Op::Abs => plain(inputs[0].map(f64::abs)),
        Op::Powf(p) => plain(inputs[0].map(|v| v.powf(*p))),
        Op::Relu => plain(inputs[0].map(|v| v.max(0.0))),
        Op::Gelu => plain(inputs[0].map(gelu)),
        Op::Sigmoid => plain(inputs[0].map(sigmoid)),
        Op::Scale(c) => plain(inputs[0].map(|v| v * c)),
        Op::Offset(c) => plain(inputs[0].map(|v| v + c)),
        Op::Softmax { axis } => {
            let x = inputs[0];
            if *axis >= x.ndim() {
                return Err(mismatch("softmax", format!("axis {} for {:?}", axis, x.shape())));
            }
            let (outer, ext, inner) = split_axis(x.shape(), *axis);
            let mut out = x.data().to_vec();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * ext * inner + i;
                    let mut mx = f64::NEG_INFINITY;
                    for e in 0..ext {
                        mx = mx.max(out[base + e * inner]);
                    }
                    let mut s = 0.0;
                    for e in 0..ext {
                        let v = (out[base + e * inner] - mx).exp();
                        out[base + e * inner] = v;
                        s += v;
                    }
                    for e in 0..ext {
                        out[base + e * inner] /= s;
                    }
                }
            }
            plain(Array::new(x.shape().to_vec(), out)?)
        }
        Op::SumAll => plain(Array::scalar(inputs[0].sum())),
        Op::MeanAll => {
            let x = inputs[0];
            if x.is_empty() {
                return Err(mismatch("mean", "empty input"));
            }
            plain(Array::scalar(x.sum() / x.len() as f64))
        }
        Op::SumAxes { axes } | Op::MeanAxes { axes } => {
            let x = inputs[0];
            check_axes(op.name(), x.shape(), axes)?;
            let oshape = reduced_shape(x.shape(), axes);
            let mut out = Array::zeros(&oshape);
            let so = view_strides(&oshape, x.shape());
            let si = strides(x.shape());
            let xd = x.data();
            let od = out.data_mut();
            walk2(x.shape(), &si, &so, |_, i, j| od[j] += xd[i]);
            if matches!(op, Op::MeanAxes { .. }) {
                let cnt = (x.len() / out.len().max(1)) as f64;
                out.scale_inplace(1.0 / cnt);
            }
            plain(out)
        }
        Op::MaxAxes { axes } | Op::MinAxes { axes } => {
            let x = inputs[0];
            check_axes(op.name(), x.shape(), axes)?;
            if x.is_empty() {
                return Err(mismatch(op.name(), "empty input"));
            }
            let is_max = matches!(op, Op::MaxAxes { .. });
            let oshape = reduced_shape(x.shape(), axes);
            let no = numel(&oshape);
            let mut best = vec![if is_max { f64::NEG_INFINITY } else { f64::INFINITY }; no];
            let mut arg = vec![usize::MAX; no];
            let so = view_strides(&oshape, x.shape());
            let si = strides(x.shape());
            let xd = x.data();
            walk2(x.shape(), &si, &so, |_, i, j| {
                let v = xd[i];
                let better = if is_max { v > best[j] } else { v < best[j] };
                if arg[j] == usize::MAX || better {
                    best[j] = v;
                    arg[j] = i;
                }
            });
            Ok((Array::new(oshape, best)?, Aux::ArgIdx(arg)))
        }
        Op::GroupNorm { groups, eps } => {
            let x = inputs[0];
            if x.ndim() < 2 || *groups == 0 || x.shape()[1] % groups != 0 {
                return Err(mismatch(
                    "group_norm",
                    format!("{} groups for shape {:?}", groups, x.shape()),
                ));
            }
            let blk = x.len() / (x.shape()[0] * groups);
            normalize_blocks(x, blk, *eps)
        }
        Op::LayerNorm { eps } => {
            let x = inputs[0];
            if x.ndim() == 0 {
                return Err(mismatch("layer_norm", "scalar input"));
            }
            let blk = x.shape()[x.ndim() - 1];
            normalize_blocks(x, blk, *eps)
        }
        Op::Dropout { rate, seed } => {
            let x = inputs[0];
            if !(0.0..1.0).contains(rate) {
                return Err(TensorError::InvalidArgument(format!("dropout rate {}", rate)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..x.len())
                .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                .collect();
            let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            Ok((Array::new(x.shape().to_vec(), data)?, Aux::Mask(mask)))
        }
        Op::AvgPool { k } => {
            let x = inputs[0];
            let (planes, h, w, k) = pool_dims("avg_pool", x, *k)?;
            let (oh, ow) = (h / k, w / k);
            let mut out = vec![0.0; planes * oh * ow];
            let norm = 1.0 / (k * k) as f64;
            let xd = x.data();
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        out[p * oh * ow + (y / k) * ow + xx / k] += xd[p * h * w + y * w + xx] * norm;
                    }
                }
            }
            let s = x.shape();
            plain(Array::new(vec![s[0], s[1], oh, ow], out)?)
        }
        Op::Upsample { k } => {
            let x = inputs[0];
            expect_rank("upsample", x, 4)?;
            let s = x.shape();
            let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
            let (oh, ow) = (h * k, w * k);
            let mut out = vec![0.0; planes * oh * ow];
            let xd = x.data();
            for p in 0..planes {
                for y in 0..oh {
                    for xx in 0..ow {
                        out[p * oh * ow + y * ow + xx] = xd[p * h * w + (y / k) * w + xx / k];
                    }
                }
            }
            plain(Array::new(vec![s[0], s[1], oh, ow], out)?)
        }
        Op::Reshape { shape } => plain(inputs[0].clone().reshape(shape)?),
        Op::Permute { perm } => {
            let x = inputs[0];
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if perm.len() != x.ndim() || sorted.iter().enumerate().any(|(i, &p)| i != p) {
                return Err(mismatch("permute", format!("{:?} for {:?}", perm, x.shape())));
            }
            plain(permute(x, perm))
        }
        Op::Slice { axis, start, end } => {
            let x = inputs[0];
            if *axis >= x.ndim() || start >= end || *end > x.shape()[*axis] {
                return Err(mismatch(
                    "slice",
                    format!("{}..{} on axis {} of {:?}", start, end, axis, x.shape()),
                ));
            }
            let (outer, ext, inner) = split_axis(x.shape(), *axis);
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                let base = o * ext * inner;
                out.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[*axis] = end - start;
            plain(Array::new(shape, out)?)
        }
        Op::BroadcastTo { shape } => {
            let x = inputs[0];
            match broadcast_shape(x.shape(), shape) {
                Some(s) if s == *shape => {}
                _ => {
                    return Err(mismatch(
                        "broadcast_to",
                        format!("{:?} -> {:?}", x.shape(), shape),
                    ))
                }
            }
            let sx = view_strides(x.shape(), shape);
            let zero = vec![0; shape.len()];
            let mut out = vec![0.0; numel(shape)];
            let xd = x.data();
            walk2(shape, &sx, &zero, |o, i, _| out[o] = xd[i]);
            plain(Array::new(shape.clone(), out)?)
        }
        Op::Gather { indices } => {
            let x = inputs[0];
            if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
                return Err(mismatch("gather", format!("index {} >= {}", bad, x.len())));
            }
            plain(Array::from_vec(indices.iter().map(|&i| x.data()[i]).collect()))
        }
        Op::Histogram { bins } => {
            let (v, lo, hi) = (inputs[0], inputs[1], inputs[2]);
            if *bins == 0 || v.ndim() != 1 || lo.len() != 1 || hi.len() != 1 {
                return Err(mismatch(
                    "histogram",
                    format!("{} bins, values {:?}", bins, v.shape()),
                ));
            }
            let (lo, hi) = (lo.data()[0], hi.data()[0]);
            let mut out = vec![0.0; *bins];
            for &x in v.data() {
                match hist_slot(x, lo, hi, *bins) {
                    HistSlot::Edge(j) => out[j] += 1.0,
                    HistSlot::Between(j, f) => {
                        out[j] += 1.0 - f;
                        out[j + 1] += f;
                    }
                }
            }
            plain(Array::from_vec(out))
        }
        Op::Sort { axis } => {
            let x = inputs[0];
            if *axis >= x.ndim() {
                return Err(mismatch("sort", format!("axis {} for {:?}", axis, x.shape())));
            }
            let (outer, ext, inner) = split_axis(x.shape(), *axis);
            let mut out = x.data().to_vec();
            let mut buf = vec![0.0; ext];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * ext * inner + i;
                    for (e, b) in buf.iter_mut().enumerate() {
                        *b = out[base + e * inner];
                    }
                    buf.sort_by(f64::total_cmp);
                    for (e, b) in buf.iter().enumerate() {
                        out[base + e * inner] = *b;
                    }
                }
            }
            plain(Array::new(x.shape().to_vec(), out)?)
        }
    }
}

fn normalize_blocks(x: &Array, blk: usize, eps: f64) -> Result<(Array, Aux)> {
    let nb = x.len() / blk;
    let mut out = vec![0.0; x.len()];
    let mut inv = vec![0.0; nb];
    for b in 0..nb {
        let s = &x.data()[b * blk..(b + 1) * blk];
        let mean = s.iter().sum::<f64>() / blk as f64;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / blk as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv[b] = is;
        for (o, v) in out[b * blk..(b + 1) * blk].iter_mut().zip(s) {
            *o = (v - mean) * is;
        }
    }
    Ok((Array::new(x.shape().to_vec(), out)?, Aux::InvStd(inv)))
}

fn permute(x: &Array, perm: &[usize]) -> Array {
    let shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let st = strides(x.shape());
    let src: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
    let zero = vec![0; shape.len()];
    let mut out = vec![0.0; x.len()];
    let xd = x.data();
    walk2(&shape, &src, &zero, |o, i, _| out[o] = xd[i]);
    Array::new(shape, out).expect("permute preserves size")
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

enum HistSlot {
    Edge(usize),
    Between(usize, f64),
}

/// Linear (triangular kernel) bin assignment; bin centres sit at
/// `lo + (j + 0.5)·width`.
fn hist_slot(x: f64, lo: f64, hi: f64, bins: usize) -> HistSlot {
    if hi <= lo || bins == 1 {
        return HistSlot::Edge(0);
    }
    let t = (x - lo) * bins as f64 / (hi - lo) - 0.5;
    if t <= 0.0 {
        HistSlot::Edge(0)
    } else if t >= (bins - 1) as f64 {
        HistSlot::Edge(bins - 1)
    } else {
        let j = t.floor() as usize;
        HistSlot::Between(j, t - j as f64)
    }
}

// ---------------------------------------------------------------------------
// adjoints

/// Returns one optional cotangent per input; `need[i] == false` skips work.
pub(crate) fn backward(
    op: &Op,
    inputs: &[&Array],
    out: &Array,
    aux: &Aux,
    g: &Array,
    need: &[bool],
) -> Result<Vec<Option<Array>>> {
    let unary = |f: &dyn Fn(f64, f64) -> f64| -> Result<Vec<Option<Array>>> {
        // f(x, y) -> dy/dx
        let x = inputs[0];
        let data = x
            .data()
            .iter()
            .zip(out.data())
            .zip(g.data())
            .map(|((&xv, &yv), &gv)| gv * f(xv, yv))
            .collect();
        Ok(vec![Some(Array::new(x.shape().to_vec(), data)?)])
    };
    match op {
        Op::Leaf => Ok(vec![]),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let d = matmul_dims(a, b)?;
            let mut ga = None;
            let mut gb = None;
            if d.shared_rhs {
                if need[0] {
                    let mut v = vec![0.0; a.len()];
                    gemm(d.batch * d.m, d.n, d.k, g.data(), false, b.data(), true, &mut v, 0.0);
                    ga = Some(Array::new(a.shape().to_vec(), v)?);
                }
                if need[1] {
                    let mut v = vec![0.0; b.len()];
                    gemm(d.k, d.batch * d.m, d.n, a.data(), true, g.data(), false, &mut v, 0.0);
                    gb = Some(Array::new(b.shape().to_vec(), v)?);
                }
            } else {
                let (sa, sb, so) = (d.m * d.k, d.k * d.n, d.m * d.n);
                if need[0] {
                    let mut v = vec![0.0; a.len()];
                    for i in 0..d.batch {
                        gemm(
                            d.m,
                            d.n,
                            d.k,
                            &g.data()[i * so..(i + 1) * so],
                            false,
                            &b.data()[i * sb..(i + 1) * sb],
                            true,
                            &mut v[i * sa..(i + 1) * sa],
                            0.0,
                        );
                    }
                    ga = Some(Array::new(a.shape().to_vec(), v)?);
                }
                if need[1] {
                    let mut v = vec![0.0; b.len()];
                    for i in 0..d.batch {
                        gemm(
                            d.k,
                            d.m,
                            d.n,
                            &a.data()[i * sa..(i + 1) * sa],
                            true,
                            &g.data()[i * so..(i + 1) * so],
                            false,
                            &mut v[i * sb..(i + 1) * sb],
                            0.0,
                        );
                    }
                    gb = Some(Array::new(b.shape().to_vec(), v)?);
                }
            }
            Ok(vec![ga, gb])
        }
        Op::Conv2d { dilation } => {
            let (x, w) = (inputs[0], inputs[1]);
            let d = conv_dims(x, w, *dilation)?;
            let hw = d.h * d.w;
            let r = d.cin * d.kh * d.kw;
            let one_by_one = d.kh == 1 && d.kw == 1;
            let mut gx = need[0].then(|| vec![0.0; x.len()]);
            let mut gw = need[1].then(|| vec![0.0; w.len()]);
            let mut cols = vec![0.0; r * hw];
            let mut gcols = vec![0.0; r * hw];
            for s in 0..d.n {
                let xs = &x.data()[s * d.cin * hw..(s + 1) * d.cin * hw];
                let gs = &g.data()[s * d.cout * hw..(s + 1) * d.cout * hw];
                if let Some(gw) = gw.as_mut() {
                    let src: &[f64] = if one_by_one {
                        xs
                    } else {
                        im2col(xs, &d, *dilation, &mut cols);
                        &cols
                    };
                    gemm(d.cout, hw, r, gs, false, src, true, gw, 1.0);
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx[s * d.cin * hw..(s + 1) * d.cin * hw];
                    if one_by_one {
                        gemm(r, d.cout, hw, w.data(), true, gs, false, dst, 0.0);
                    } else {
                        gemm(r, d.cout, hw, w.data(), true, gs, false, &mut gcols, 0.0);
                        col2im(&gcols, &d, *dilation, dst);
                    }
                }
            }
            Ok(vec![
                gx.map(|v| Array::new(x.shape().to_vec(), v)).transpose()?,
                gw.map(|v| Array::new(w.shape().to_vec(), v)).transpose()?,
            ])
        }
        Op::Concat { axis } => {
            let (outer, _, inner) = split_axis(g.shape(), *axis);
            let total = g.shape()[*axis];
            let mut res = Vec::with_capacity(inputs.len());
            let mut offset = 0;
            for (idx, a) in inputs.iter().enumerate() {
                let ext = a.shape()[*axis];
                if need[idx] {
                    let mut v = Vec::with_capacity(a.len());
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        v.extend_from_slice(&g.data()[base..base + ext * inner]);
                    }
                    res.push(Some(Array::new(a.shape().to_vec(), v)?));
                } else {
                    res.push(None);
                }
                offset += ext;
            }
            Ok(res)
        }
        Op::Add => Ok(binary_backward(inputs[0], inputs[1], g, need, |_, _| 1.0, |_, _| 1.0)),
        Op::Sub => Ok(binary_backward(inputs[0], inputs[1], g, need, |_, _| 1.0, |_, _| -1.0)),
        Op::Mul => Ok(binary_backward(inputs[0], inputs[1], g, need, |_, b| b, |a, _| a)),
        Op::Div => Ok(binary_backward(
            inputs[0],
            inputs[1],
            g,
            need,
            |_, b| 1.0 / b,
            |a, b| -a / (b * b),
        )),
        Op::Maximum => Ok(binary_backward(
            inputs[0],
            inputs[1],
            g,
            need,
            |a, b| if a >= b { 1.0 } else { 0.0 },
            |a, b| if a >= b { 0.0 } else { 1.0 },
        )),
        Op::SmoothL1 => Ok(binary_backward(
            inputs[0],
            inputs[1],
            g,
            need,
            |a, b| smooth_l1_grad(a - b),
            |a, b| -smooth_l1_grad(a - b),
        )),
        Op::Sqrt => unary(&|_, y| 0.5 / y),
        Op::Ln => unary(&|x, _| 1.0 / x),
        Op::Exp => unary(&|_, y| y),
        Op::Abs => unary(&|x, _| sign(x)),
        Op::Powf(p) => {
            let p = *p;
            unary(&move |x, _| p * x.powf(p - 1.0))
        }
        Op::Relu => unary(&|x, _| if x > 0.0 { 1.0 } else { 0.0 }),
        Op::Gelu => unary(&|x, _| gelu_grad(x)),
        Op::Sigmoid => unary(&|_, y| y * (1.0 - y)),
        Op::Scale(c) => {
            let c = *c;
            unary(&move |_, _| c)
        }
        Op::Offset(_) => Ok(vec![Some(g.clone())]),
        Op::Softmax { axis } => {
            let (outer, ext, inner) = split_axis(out.shape(), *axis);
            let y = out.data();
            let gd = g.data();
            let mut v = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * ext * inner + i;
                    let dot: f64 = (0..ext).map(|e| gd[base + e * inner] * y[base + e * inner]).sum();
                    for e in 0..ext {
                        let k = base + e * inner;
                        v[k] = y[k] * (gd[k] - dot);
                    }
                }
            }
            Ok(vec![Some(Array::new(out.shape().to_vec(), v)?)])
        }
        Op::SumAll => Ok(vec![Some(Array::full(inputs[0].shape(), g.data()[0]))]),
        Op::MeanAll => {
            let n = inputs[0].len() as f64;
            Ok(vec![Some(Array::full(inputs[0].shape(), g.data()[0] / n))])
        }
        Op::SumAxes { .. } | Op::MeanAxes { .. } | Op::BroadcastTo { .. } => {
            let x = inputs[0];
            let v = if matches!(op, Op::BroadcastTo { .. }) {
                reduce_to(g, x.shape())
            } else {
                let mut v = forward(&Op::BroadcastTo { shape: x.shape().to_vec() }, &[g])?.0;
                if matches!(op, Op::MeanAxes { .. }) {
                    v.scale_inplace(g.len() as f64 / x.len() as f64);
                }
                v
            };
            Ok(vec![Some(v)])
        }
        Op::MaxAxes { .. } | Op::MinAxes { .. } => {
            let Aux::ArgIdx(arg) = aux else {
                return Err(TensorError::InvalidArgument("missing argmax".into()));
            };
            let mut v = Array::zeros(inputs[0].shape());
            for (j, &i) in arg.iter().enumerate() {
                v.data_mut()[i] += g.data()[j];
            }
            Ok(vec![Some(v)])
        }
        Op::GroupNorm { groups, .. } => {
            let x = inputs[0];
            let blk = x.len() / (x.shape()[0] * groups);
            Ok(vec![Some(normalize_blocks_backward(out, aux, g, blk)?)])
        }
        Op::LayerNorm { .. } => {
            let blk = out.shape()[out.ndim() - 1];
            Ok(vec![Some(normalize_blocks_backward(out, aux, g, blk)?)])
        }
        Op::Dropout { .. } => {
            let Aux::Mask(mask) = aux else {
                return Err(TensorError::InvalidArgument("missing dropout mask".into()));
            };
            let data = g.data().iter().zip(mask).map(|(a, b)| a * b).collect();
            Ok(vec![Some(Array::new(g.shape().to_vec(), data)?)])
        }
        Op::AvgPool { k } => {
            let x = inputs[0];
            let (planes, h, w, k) = pool_dims("avg_pool", x, *k)?;
            let (oh, ow) = (h / k, w / k);
            let norm = 1.0 / (k * k) as f64;
            let mut v = vec![0.0; x.len()];
            let gd = g.data();
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        v[p * h * w + y * w + xx] = gd[p * oh * ow + (y / k) * ow + xx / k] * norm;
                    }
                }
            }
            Ok(vec![Some(Array::new(x.shape().to_vec(), v)?)])
        }
        Op::Upsample { k } => {
            let x = inputs[0];
            let s = x.shape();
            let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
            let (oh, ow) = (h * k, w * k);
            let mut v = vec![0.0; x.len()];
            let gd = g.data();
            for p in 0..planes {
                for y in 0..oh {
                    for xx in 0..ow {
                        v[p * h * w + (y / k) * w + xx / k] += gd[p * oh * ow + y * ow + xx];
                    }
                }
            }
            Ok(vec![Some(Array::new(x.shape().to_vec(), v)?)])
        }
        Op::Reshape { .. } => Ok(vec![Some(g.clone().reshape(inputs[0].shape())?)]),
        Op::Permute { perm } => Ok(vec![Some(permute(g, &inverse_perm(perm)))]),
        Op::Slice { axis, start, end } => {
            let x = inputs[0];
            let (outer, ext, inner) = split_axis(x.shape(), *axis);
            let mut v = vec![0.0; x.len()];
            let w = (end - start) * inner;
            for o in 0..outer {
                let base = o * ext * inner + start * inner;
                v[base..base + w].copy_from_slice(&g.data()[o * w..(o + 1) * w]);
            }
            Ok(vec![Some(Array::new(x.shape().to_vec(), v)?)])
        }
        Op::Gather { indices } => {
            let mut v = Array::zeros(inputs[0].shape());
            for (j, &i) in indices.iter().enumerate() {
                v.data_mut()[i] += g.data()[j];
            }
            Ok(vec![Some(v)])
        }
        Op::Histogram { bins } => {
            let (v, lo, hi) = (inputs[0], inputs[1].data()[0], inputs[2].data()[0]);
            let mut gv = vec![0.0; v.len()];
            let (mut glo, mut ghi) = (0.0, 0.0);
            let gd = g.data();
            if hi > lo {
                let span = hi - lo;
                let b = *bins as f64;
                for (i, &x) in v.data().iter().enumerate() {
                    if let HistSlot::Between(j, _) = hist_slot(x, lo, hi, *bins) {
                        let dt = gd[j + 1] - gd[j];
                        gv[i] = dt * b / span;
                        glo += dt * (-b / span + (x - lo) * b / (span * span));
                        ghi += dt * (-(x - lo) * b / (span * span));
                    }
                }
            }
            Ok(vec![
                Some(Array::new(v.shape().to_vec(), gv)?),
                Some(Array::new(inputs[1].shape().to_vec(), vec![glo])?),
                Some(Array::new(inputs[2].shape().to_vec(), vec![ghi])?),
            ])
        }
        Op::Sort { .. } => Err(TensorError::UnsupportedPrimitive("sort")),
    }
}

fn normalize_blocks_backward(y: &Array, aux: &Aux, g: &Array, blk: usize) -> Result<Array> {
    let Aux::InvStd(inv) = aux else {
        return Err(TensorError::InvalidArgument("missing normalization stats".into()));
    };
    let mut v = vec![0.0; y.len()];
    let (yd, gd) = (y.data(), g.data());
    for (b, &is) in inv.iter().enumerate() {
        let r = b * blk..(b + 1) * blk;
        let gm = gd[r.clone()].iter().sum::<f64>() / blk as f64;
        let gym = gd[r.clone()]
            .iter()
            .zip(&yd[r.clone()])
            .map(|(a, c)| a * c)
            .sum::<f64>()
            / blk as f64;
        for i in r {
            v[i] = is * (gd[i] - gm - yd[i] * gym);
        }
    }
    Array::new(y.shape().to_vec(), v)
}
