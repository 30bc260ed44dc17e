//! Forward kernels and their adjoints, shared by the tape and by tape-free inference.
//!
//! Layouts follow the usual deep-learning conventions: linear weights are
//! `[out, in]`, convolution kernels `[c_out, c_in, kh, kw]`, transposed
//! convolution kernels `[c_in, c_out, kh, kw]`, images `[batch, c, h, w]`.

use std::cmp::Ordering;

use crate::error::{shape_err, Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Inputs whose share of nonzero entries is below this use the sparse loops.
const SPARSE_DENSITY: f64 = 0.125;

fn is_sparse<T: Scalar>(data: &[T]) -> bool {
    let nnz = data.iter().filter(|v| !v.is_zero()).count();
    (nnz as f64) < SPARSE_DENSITY * data.len() as f64
}

fn dims2<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.dims() {
        [a, b] => Ok((*a, *b)),
        d => shape_err(format!("{what} must be 2-D, got {d:?}")),
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match t.dims() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        d => shape_err(format!("{what} must be 4-D, got {d:?}")),
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, n: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != n || b.ndim() != 1 => {
            shape_err(format!("bias dims {:?} do not match {n} outputs", b.dims()))
        }
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

/// `y[i, j] = Σ_k w[j, k]·x[i, k] + b[j]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (batch, fan_in) = dims2(x, "linear input")?;
    let (out, w_in) = dims2(w, "linear weight")?;
    if w_in != fan_in {
        return shape_err(format!("linear: input width {fan_in} vs weight {:?}", w.dims()));
    }
    check_bias(b, out)?;
    let mut y = vec![T::zero(); batch * out];
    if let Some(b) = b {
        for row in y.chunks_mut(out) {
            row.copy_from_slice(b.data());
        }
    }
    let xd = x.data();
    if is_sparse(xd) {
        let wd = w.data();
        for (xi, yi) in xd.chunks(fan_in).zip(y.chunks_mut(out)) {
            for (k, &v) in xi.iter().enumerate() {
                if v.is_zero() {
                    continue;
                }
                for (j, yj) in yi.iter_mut().enumerate() {
                    *yj = *yj + wd[j * fan_in + k] * v;
                }
            }
        }
    } else {
        gemm(false, true, batch, out, fan_in, T::one(), xd, w.data(), T::one(), &mut y);
    }
    Tensor::new(vec![batch, out], y)
}

pub(crate) struct LinearGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Vec<T>,
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
) -> LinearGrads<T> {
    let (batch, fan_in) = (x.dims()[0], x.dims()[1]);
    let out = w.dims()[0];
    let mut db = vec![T::zero(); out];
    for row in dy.chunks(out) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    let mut dx = need_dx.then(|| vec![T::zero(); batch * fan_in]);
    let mut dw = need_dw.then(|| vec![T::zero(); out * fan_in]);
    if is_sparse(dy) {
        let (xd, wd) = (x.data(), w.data());
        for i in 0..batch {
            let xi = &xd[i * fan_in..(i + 1) * fan_in];
            for (j, &g) in dy[i * out..(i + 1) * out].iter().enumerate() {
                if g.is_zero() {
                    continue;
                }
                let wj = &wd[j * fan_in..(j + 1) * fan_in];
                if let Some(dw) = dw.as_mut() {
                    for (acc, &v) in dw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(xi) {
                        *acc = *acc + g * v;
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    for (acc, &v) in dx[i * fan_in..(i + 1) * fan_in].iter_mut().zip(wj) {
                        *acc = *acc + g * v;
                    }
                }
            }
        }
    } else {
        if let Some(dx) = dx.as_mut() {
            gemm(false, false, batch, fan_in, out, T::one(), dy, w.data(), T::zero(), dx);
        }
        if let Some(dw) = dw.as_mut() {
            gemm(true, false, out, fan_in, batch, T::one(), dy, x.data(), T::zero(), dw);
        }
    }
    LinearGrads { dx, dw, db }
}

// ---------------------------------------------------------------------------
// TopK
// ---------------------------------------------------------------------------

/// Descending by value, ascending by index among equal values.
fn topk_order<T: Scalar>(row: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| match row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    }
}

/// Indices of the `k` largest entries of `row`, ascending.
pub fn topk_indices<T: Scalar>(row: &[T], k: usize, scratch: &mut Vec<usize>) -> Vec<usize> {
    scratch.clear();
    scratch.extend(0..row.len());
    if k < row.len() {
        scratch.select_nth_unstable_by(k - 1, topk_order(row));
    }
    let mut kept = scratch[..k].to_vec();
    kept.sort_unstable();
    kept
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("topk needs 1 <= K <= {n}, got K={k}")));
    }
    Ok(())
}

/// Per row, keeps the `k` largest values (by value, lowest index wins ties) and zeroes the rest.
/// Returns the masked tensor and the kept indices, `k` per row.
pub fn topk_with_indices<T: Scalar>(z: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (batch, n) = dims2(z, "topk input")?;
    check_k(n, k)?;
    let mut out = vec![T::zero(); batch * n];
    let mut kept_all = Vec::with_capacity(batch * k);
    let mut scratch = Vec::with_capacity(n);
    for (row, dst) in z.data().chunks(n).zip(out.chunks_mut(n)) {
        let kept = topk_indices(row, k, &mut scratch);
        for &i in &kept {
            dst[i] = row[i];
        }
        kept_all.extend(kept);
    }
    Ok((Tensor::new(vec![batch, n], out)?, kept_all))
}

pub fn topk<T: Scalar>(z: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    topk_with_indices(z, k).map(|(t, _)| t)
}

/// `linear(topk(pre, k), w, b)` evaluated through the kept columns only.
pub(crate) fn topk_linear_forward<T: Scalar>(
    pre: &Tensor<T>,
    k: usize,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (batch, n) = dims2(pre, "topk input")?;
    let (out, w_in) = dims2(w, "decoder weight")?;
    if w_in != n {
        return shape_err(format!("decoder expects {w_in} latents, got {n}"));
    }
    check_k(n, k)?;
    check_bias(b, out)?;
    let mut y = vec![T::zero(); batch * out];
    let mut kept_all = Vec::with_capacity(batch * k);
    let mut scratch = Vec::with_capacity(n);
    let wd = w.data();
    for (row, yi) in pre.data().chunks(n).zip(y.chunks_mut(out)) {
        if let Some(b) = b {
            yi.copy_from_slice(b.data());
        }
        let kept = topk_indices(row, k, &mut scratch);
        for &c in &kept {
            let v = row[c];
            for (j, yj) in yi.iter_mut().enumerate() {
                *yj = *yj + wd[j * n + c] * v;
            }
        }
        kept_all.extend(kept);
    }
    Ok((Tensor::new(vec![batch, out], y)?, kept_all))
}

pub(crate) fn topk_linear_backward<T: Scalar>(
    pre: &Tensor<T>,
    kept: &[usize],
    k: usize,
    w: &Tensor<T>,
    dy: &[T],
    need_dpre: bool,
    need_dw: bool,
) -> LinearGrads<T> {
    let (batch, n) = (pre.dims()[0], pre.dims()[1]);
    let out = w.dims()[0];
    let wd = w.data();
    let mut db = vec![T::zero(); out];
    let mut dpre = need_dpre.then(|| vec![T::zero(); batch * n]);
    let mut dw = need_dw.then(|| vec![T::zero(); out * n]);
    for i in 0..batch {
        let gi = &dy[i * out..(i + 1) * out];
        for (acc, &g) in db.iter_mut().zip(gi) {
            *acc = *acc + g;
        }
        let row = &pre.data()[i * n..(i + 1) * n];
        for &c in &kept[i * k..(i + 1) * k] {
            if let Some(dpre) = dpre.as_mut() {
                let mut s = T::zero();
                for (j, &g) in gi.iter().enumerate() {
                    s = s + g * wd[j * n + c];
                }
                dpre[i * n + c] = s;
            }
            if let Some(dw) = dw.as_mut() {
                let v = row[c];
                for (j, &g) in gi.iter().enumerate() {
                    dw[j * n + c] = dw[j * n + c] + g * v;
                }
            }
        }
    }
    LinearGrads { dx: dpre, dw, db }
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// `floor((h + 2·pad − k)/stride) + 1`, or a shape error when non-positive.
pub fn conv_out_extent(h: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Parameter("stride must be positive".into()));
    }
    if h + 2 * pad < k {
        return shape_err(format!("conv: kernel {k} exceeds padded extent {}", h + 2 * pad));
    }
    Ok((h + 2 * pad - k) / stride + 1)
}

/// `(h − 1)·stride − 2·pad + k + out_pad`, or a shape error when non-positive.
pub fn conv_transpose_out_extent(h: usize, k: usize, stride: usize, pad: usize, out_pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Parameter("stride must be positive".into()));
    }
    if out_pad >= stride {
        return Err(Error::Parameter(format!("out_pad {out_pad} must be smaller than stride {stride}")));
    }
    let full = (h - 1) * stride + k + out_pad;
    if full <= 2 * pad {
        return shape_err(format!("conv_transpose: non-positive output extent for input {h}"));
    }
    Ok(full - 2 * pad)
}

/// Geometry shared by im2col and col2im: an image of `c × h × w` and a window grid of `gh × gw`.
#[derive(Debug, Clone, Copy)]
struct Windows {
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    gh: usize,
    gw: usize,
}

impl Windows {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.batch * self.gh * self.gw
    }

    /// Source coordinate along one axis, or `None` in the zero padding.
    #[inline]
    fn src(&self, g: usize, kk: usize, extent: usize) -> Option<usize> {
        let v = (g * self.stride + kk) as isize - self.pad as isize;
        (v >= 0 && (v as usize) < extent).then_some(v as usize)
    }

    /// `cols[(c, ki, kj), (b, gy, gx)] = img[b, c, gy·s − p + ki, gx·s − p + kj]`.
    fn im2col<T: Scalar>(&self, img: &[T]) -> Vec<T> {
        let mut cols = vec![T::zero(); self.rows() * self.cols()];
        let ncols = self.cols();
        let plane = self.gh * self.gw;
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[r * ncols..(r + 1) * ncols];
                    for b in 0..self.batch {
                        let src_plane = &img[(b * self.c + c) * self.h * self.w..][..self.h * self.w];
                        for gy in 0..self.gh {
                            let Some(iy) = self.src(gy, ki, self.h) else { continue };
                            let base = b * plane + gy * self.gw;
                            for gx in 0..self.gw {
                                if let Some(ix) = self.src(gx, kj, self.w) {
                                    dst[base + gx] = src_plane[iy * self.w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Self::im2col`]: scatter-accumulates columns back onto the image.
    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let mut img = vec![T::zero(); self.batch * self.c * self.h * self.w];
        let ncols = self.cols();
        let plane = self.gh * self.gw;
        for c in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[r * ncols..(r + 1) * ncols];
                    for b in 0..self.batch {
                        let dst_plane = &mut img[(b * self.c + c) * self.h * self.w..][..self.h * self.w];
                        for gy in 0..self.gh {
                            let Some(iy) = self.src(gy, ki, self.h) else { continue };
                            let base = b * plane + gy * self.gw;
                            for gx in 0..self.gw {
                                if let Some(ix) = self.src(gx, kj, self.w) {
                                    let d = &mut dst_plane[iy * self.w + ix];
                                    *d = *d + src[base + gx];
                                }
                            }
                        }
                    }
                }
            }
        }
        img
    }
}

/// `[b, c, p]` → `[c, b·p]`.
fn to_channel_major<T: Scalar>(x: &[T], batch: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            out[ch * batch * p + b * p..][..p].copy_from_slice(&x[(b * c + ch) * p..][..p]);
        }
    }
    out
}

/// `[c, b·p]` → `[b, c, p]`.
fn from_channel_major<T: Scalar>(x: &[T], batch: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            out[(b * c + ch) * p..][..p].copy_from_slice(&x[ch * batch * p + b * p..][..p]);
        }
    }
    out
}

fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    let c = bias.len();
    for (i, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[i % c];
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn channel_sums<T: Scalar>(dy: &[T], c: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); c];
    for (i, chunk) in dy.chunks(plane).enumerate() {
        db[i % c] = db[i % c] + chunk.iter().copied().sum::<T>();
    }
    db
}

/// Stride / padding hyperparameters of a (transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl ConvParams {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad, out_pad: 0 }
    }

    pub fn with_out_pad(stride: usize, pad: usize, out_pad: usize) -> Self {
        Self { stride, pad, out_pad }
    }
}

fn conv_windows<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, p: ConvParams) -> Result<(Windows, usize)> {
    let [batch, c_in, h, w] = dims4(x, "conv2d input")?;
    let [c_out, k_in, kh, kw] = dims4(kernel, "conv2d kernel")?;
    if k_in != c_in {
        return shape_err(format!("conv2d: input has {c_in} channels, kernel expects {k_in}"));
    }
    let gh = conv_out_extent(h, kh, p.stride, p.pad)?;
    let gw = conv_out_extent(w, kw, p.stride, p.pad)?;
    Ok((Windows { batch, c: c_in, h, w, kh, kw, stride: p.stride, pad: p.pad, gh, gw }, c_out))
}

/// Cross-correlation with zero padding.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>, p: ConvParams) -> Result<Tensor<T>> {
    conv2d_with_cols(x, kernel, bias, p).map(|(y, _)| y)
}

pub(crate) fn conv2d_with_cols<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: ConvParams,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (win, c_out) = conv_windows(x, kernel, p)?;
    check_bias(bias, c_out)?;
    let cols = win.im2col(x.data());
    let mut ymat = vec![T::zero(); c_out * win.cols()];
    gemm(false, false, c_out, win.cols(), win.rows(), T::one(), kernel.data(), &cols, T::zero(), &mut ymat);
    let plane = win.gh * win.gw;
    let mut y = from_channel_major(&ymat, win.batch, c_out, plane);
    if let Some(b) = bias {
        add_channel_bias(&mut y, b.data(), plane);
    }
    Ok((Tensor::new(vec![win.batch, c_out, win.gh, win.gw], y)?, cols))
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dk: Option<Vec<T>>,
    pub db: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    cols: &[T],
    p: ConvParams,
    dy: &[T],
    need_dx: bool,
    need_dk: bool,
) -> ConvGrads<T> {
    let (win, c_out) = conv_windows(x, kernel, p).expect("validated in forward");
    let plane = win.gh * win.gw;
    let db = channel_sums(dy, c_out, plane);
    let dymat = to_channel_major(dy, win.batch, c_out, plane);
    let dk = need_dk.then(|| {
        let mut dk = vec![T::zero(); kernel.len()];
        gemm(false, true, c_out, win.rows(), win.cols(), T::one(), &dymat, cols, T::zero(), &mut dk);
        dk
    });
    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); win.rows() * win.cols()];
        gemm(true, false, win.rows(), win.cols(), c_out, T::one(), kernel.data(), &dymat, T::zero(), &mut dcols);
        win.col2im(&dcols)
    });
    ConvGrads { dx, dk, db }
}

fn conv_t_windows<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, p: ConvParams) -> Result<(Windows, usize)> {
    let [batch, c_in, h, w] = dims4(x, "conv_transpose2d input")?;
    let [k_in, c_out, kh, kw] = dims4(kernel, "conv_transpose2d kernel")?;
    if k_in != c_in {
        return shape_err(format!("conv_transpose2d: input has {c_in} channels, kernel expects {k_in}"));
    }
    let oh = conv_transpose_out_extent(h, kh, p.stride, p.pad, p.out_pad)?;
    let ow = conv_transpose_out_extent(w, kw, p.stride, p.pad, p.out_pad)?;
    // Windows live on the output image; the window grid is the input grid.
    Ok((Windows { batch, c: c_out, h: oh, w: ow, kh, kw, stride: p.stride, pad: p.pad, gh: h, gw: w }, c_in))
}

/// Transposed convolution (scatter-accumulate), the adjoint of [`conv2d`] in its input.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: ConvParams,
) -> Result<Tensor<T>> {
    let (win, c_in) = conv_t_windows(x, kernel, p)?;
    check_bias(bias, win.c)?;
    let xmat = to_channel_major(x.data(), win.batch, c_in, win.gh * win.gw);
    let mut cols = vec![T::zero(); win.rows() * win.cols()];
    gemm(true, false, win.rows(), win.cols(), c_in, T::one(), kernel.data(), &xmat, T::zero(), &mut cols);
    let mut y = win.col2im(&cols);
    if let Some(b) = bias {
        add_channel_bias(&mut y, b.data(), win.h * win.w);
    }
    Tensor::new(vec![win.batch, win.c, win.h, win.w], y)
}

pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    p: ConvParams,
    dy: &[T],
    need_dx: bool,
    need_dk: bool,
) -> ConvGrads<T> {
    let (win, c_in) = conv_t_windows(x, kernel, p).expect("validated in forward");
    let db = channel_sums(dy, win.c, win.h * win.w);
    let dcols = win.im2col(dy);
    let dk = need_dk.then(|| {
        let xmat = to_channel_major(x.data(), win.batch, c_in, win.gh * win.gw);
        let mut dk = vec![T::zero(); kernel.len()];
        gemm(false, true, c_in, win.rows(), win.cols(), T::one(), &xmat, &dcols, T::zero(), &mut dk);
        dk
    });
    let dx = need_dx.then(|| {
        let mut dxmat = vec![T::zero(); c_in * win.cols()];
        gemm(false, false, c_in, win.cols(), win.rows(), T::one(), kernel.data(), &dcols, T::zero(), &mut dxmat);
        from_channel_major(&dxmat, win.batch, c_in, win.gh * win.gw)
    });
    ConvGrads { dx, dk, db }
}

// ---------------------------------------------------------------------------
// Elementwise and reductions
// ---------------------------------------------------------------------------

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Mean of squared elementwise differences.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    if !a.same_dims(b) {
        return shape_err(format!("mse: {:?} vs {:?}", a.dims(), b.dims()));
    }
    let s: T = a.data().iter().zip(b.data()).map(|(&u, &v)| (u - v) * (u - v)).sum();
    Ok(s / T::from_f64(a.len() as f64))
}
