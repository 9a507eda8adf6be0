//! Standard, grouped, depth-wise and transposed 2-D convolution.
//!
//! Convolution is cross-correlation. Each (batch item, group) pair is lowered
//! to one GEMM over an im2col buffer; a 1×1 stride-1 unpadded kernel skips the
//! lowering entirely.

use crate::error::{Error, Result};
use crate::graph::{Graph, Op, TensorId};
use crate::tensor::{gemm, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride 1 with `(k - 1) / 2` zero padding: preserves H and W for odd `k`.
    pub fn same(k: usize) -> Self {
        Self {
            stride: 1,
            padding: (k - 1) / 2,
            groups: 1,
        }
    }

    pub fn grouped(k: usize, groups: usize) -> Self {
        Self {
            groups,
            ..Self::same(k)
        }
    }

    /// The k=2, s=2 transposed upsampling configuration.
    pub fn upsample(groups: usize) -> Self {
        Self {
            stride: 2,
            padding: 0,
            groups,
        }
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::same(1)
    }
}

/// Learnable scalars in a convolution: `out·(in/groups)·k² + out`.
pub fn conv_param_count(in_ch: usize, out_ch: usize, k: usize, groups: usize) -> usize {
    out_ch * (in_ch / groups) * k * k + out_ch
}

/// Weight, bias and geometry of one convolution.
///
/// For [`Graph::conv2d`] the weight is `[out, in/groups, k, k]`; for
/// [`Graph::conv_transpose2d`] it is `[in, out/groups, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub spec: ConvSpec,
}

impl<T: Element> ConvParams<T> {
    /// Zero-initialised forward convolution.
    pub fn new(in_ch: usize, out_ch: usize, k: usize, spec: ConvSpec) -> Result<Self> {
        check_groups(in_ch, out_ch, spec.groups)?;
        Ok(Self {
            weight: Tensor::zeros(&[out_ch, in_ch / spec.groups, k, k])?,
            bias: Tensor::zeros(&[out_ch])?,
            spec,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    /// Register the weights as differentiable leaves and apply `conv2d`.
    pub fn apply(&self, g: &mut Graph<T>, x: TensorId) -> Result<TensorId> {
        let w = g.param(self.weight.clone());
        let b = g.param(self.bias.clone());
        g.conv2d(x, w, Some(b), self.spec)
    }
}

fn check_groups(in_ch: usize, out_ch: usize, groups: usize) -> Result<()> {
    if groups == 0 || in_ch % groups != 0 || out_ch % groups != 0 {
        return Err(Error::Config(format!(
            "channels in={in_ch} out={out_ch} not divisible by groups={groups}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl Geometry {
    fn in_per_group(&self) -> usize {
        self.in_ch / self.groups
    }
    fn out_per_group(&self) -> usize {
        self.out_ch / self.groups
    }
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_geometry(x: &[usize], w: &[usize], bias: Option<&[usize]>, spec: ConvSpec) -> Result<Geometry> {
    let [n, in_ch, h, wd] = match *x {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::shape(x, "conv2d input must be rank 4")),
    };
    let [out_ch, icg, k, k2] = match *w {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::shape(w, "conv2d weight must be rank 4")),
    };
    if k != k2 {
        return Err(Error::shape(w, "kernel must be square"));
    }
    if spec.stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    check_groups(in_ch, out_ch, spec.groups)?;
    if icg * spec.groups != in_ch {
        return Err(Error::Config(format!(
            "input has {in_ch} channels but weight expects {} ({icg} per group × {} groups)",
            icg * spec.groups,
            spec.groups
        )));
    }
    if let Some(b) = bias {
        if b != [out_ch] {
            return Err(Error::mismatch("conv2d bias", b, &[out_ch]));
        }
    }
    if h + 2 * spec.padding < k || wd + 2 * spec.padding < k {
        return Err(Error::shape(x, format!("kernel {k} larger than padded input")));
    }
    Ok(Geometry {
        n,
        in_ch,
        h,
        w: wd,
        out_ch,
        oh: (h + 2 * spec.padding - k) / spec.stride + 1,
        ow: (wd + 2 * spec.padding - k) / spec.stride + 1,
        k,
        stride: spec.stride,
        pad: spec.padding,
        groups: spec.groups,
    })
}

/// Unfold `c` channel planes of size `h×w` into a `[c·k·k, oh·ow]` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let plane = oh * ow;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * plane;
                let dst = &mut cols[row..row + plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *o = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into channel planes.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let plane = oh * ow;
    for ci in 0..c {
        let dst = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * plane;
                let src = &cols[row..row + plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

fn bias_grad<T: Element>(gy: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            let s = (b * c + ch) * plane;
            *acc = *acc + gy[s..s + plane].iter().copied().sum::<T>();
        }
    }
    db
}

pub(crate) fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let geo = conv_geometry(x.shape(), w.shape(), b.map(|t| t.shape()), spec)?;
    let (icg, ocg) = (geo.in_per_group(), geo.out_per_group());
    let (in_plane, out_plane) = (geo.h * geo.w, geo.oh * geo.ow);
    let kk = icg * geo.k * geo.k;
    let mut out = vec![T::zero(); geo.n * geo.out_ch * out_plane];
    let mut cols = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * out_plane]
    };
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let xs = &x.data()[(n * geo.in_ch + g * icg) * in_plane..][..icg * in_plane];
            let rhs: &[T] = if geo.is_pointwise() {
                xs
            } else {
                im2col(xs, icg, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.oh, geo.ow, &mut cols);
                &cols
            };
            let wg = &w.data()[g * ocg * kk..(g + 1) * ocg * kk];
            let ys = &mut out[(n * geo.out_ch + g * ocg) * out_plane..][..ocg * out_plane];
            gemm(false, false, ocg, out_plane, kk, wg, rhs, T::zero(), ys);
        }
        if let Some(b) = b {
            for (ch, &bv) in b.data().iter().enumerate() {
                let s = (n * geo.out_ch + ch) * out_plane;
                out[s..s + out_plane].iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Tensor::from_vec(&[geo.n, geo.out_ch, geo.oh, geo.ow], out)
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: ConvSpec,
    gy: &[T],
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> ConvGrads<T> {
    let geo = conv_geometry(x.shape(), w.shape(), None, spec).expect("validated in forward");
    let (icg, ocg) = (geo.in_per_group(), geo.out_per_group());
    let (in_plane, out_plane) = (geo.h * geo.w, geo.oh * geo.ow);
    let kk = icg * geo.k * geo.k;
    let mut dx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.numel()]);
    let mut cols = vec![T::zero(); if geo.is_pointwise() { 0 } else { kk * out_plane }];
    let mut dcols = vec![T::zero(); if need_x && !geo.is_pointwise() { kk * out_plane } else { 0 }];
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let x_off = (n * geo.in_ch + g * icg) * in_plane;
            let gys = &gy[(n * geo.out_ch + g * ocg) * out_plane..][..ocg * out_plane];
            let wg = &w.data()[g * ocg * kk..(g + 1) * ocg * kk];
            if let Some(dw) = dw.as_mut() {
                let xs = &x.data()[x_off..x_off + icg * in_plane];
                let rhs: &[T] = if geo.is_pointwise() {
                    xs
                } else {
                    im2col(xs, icg, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.oh, geo.ow, &mut cols);
                    &cols
                };
                // dW_g += dY_g · colsᵀ
                let dwg = &mut dw[g * ocg * kk..(g + 1) * ocg * kk];
                gemm(false, true, ocg, kk, out_plane, gys, rhs, T::one(), dwg);
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[x_off..x_off + icg * in_plane];
                if geo.is_pointwise() {
                    gemm(true, false, icg, out_plane, ocg, wg, gys, T::one(), dxs);
                } else {
                    gemm(true, false, kk, out_plane, ocg, wg, gys, T::zero(), &mut dcols);
                    col2im(&dcols, icg, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.oh, geo.ow, dxs);
                }
            }
        }
    }
    ConvGrads {
        dx,
        dw,
        db: need_b.then(|| bias_grad(gy, geo.n, geo.out_ch, out_plane)),
    }
}

/// Geometry of the forward convolution whose data-gradient a transposed
/// convolution computes: its "input" is the transposed conv's output.
fn transpose_geometry(
    x: &[usize],
    w: &[usize],
    bias: Option<&[usize]>,
    spec: ConvSpec,
) -> Result<Geometry> {
    let [n, in_ch, h, wd] = match *x {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::shape(x, "conv_transpose2d input must be rank 4")),
    };
    let [w_in, ocg, k, k2] = match *w {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::shape(w, "conv_transpose2d weight must be rank 4")),
    };
    if k != k2 {
        return Err(Error::shape(w, "kernel must be square"));
    }
    if spec.stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let out_ch = ocg * spec.groups;
    check_groups(in_ch, out_ch, spec.groups)?;
    if w_in != in_ch {
        return Err(Error::Config(format!(
            "input has {in_ch} channels but transposed weight expects {w_in}"
        )));
    }
    if let Some(b) = bias {
        if b != [out_ch] {
            return Err(Error::mismatch("conv_transpose2d bias", b, &[out_ch]));
        }
    }
    let full_h = spec.stride * (h - 1) + k;
    let full_w = spec.stride * (wd - 1) + k;
    if full_h <= 2 * spec.padding || full_w <= 2 * spec.padding {
        return Err(Error::shape(x, "padding removes the whole output"));
    }
    // Roles swap: the conv "input" is our output, the conv "output" our input.
    Ok(Geometry {
        n,
        in_ch: out_ch,
        h: full_h - 2 * spec.padding,
        w: full_w - 2 * spec.padding,
        out_ch: in_ch,
        oh: h,
        ow: wd,
        k,
        stride: spec.stride,
        pad: spec.padding,
        groups: spec.groups,
    })
}

pub(crate) fn conv_transpose2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let geo = transpose_geometry(x.shape(), w.shape(), b.map(|t| t.shape()), spec)?;
    // geo.in_ch = our output channels, geo.out_ch = our input channels
    let (ocg, icg) = (geo.in_per_group(), geo.out_per_group());
    let (out_plane, in_plane) = (geo.h * geo.w, geo.oh * geo.ow);
    let kk = ocg * geo.k * geo.k;
    let mut out = vec![T::zero(); geo.n * geo.in_ch * out_plane];
    let mut cols = vec![T::zero(); kk * in_plane];
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let xs = &x.data()[(n * geo.out_ch + g * icg) * in_plane..][..icg * in_plane];
            let wg = &w.data()[g * icg * kk..(g + 1) * icg * kk];
            // cols = W_gᵀ · x_g, then fold
            gemm(true, false, kk, in_plane, icg, wg, xs, T::zero(), &mut cols);
            let ys = &mut out[(n * geo.in_ch + g * ocg) * out_plane..][..ocg * out_plane];
            col2im(&cols, ocg, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.oh, geo.ow, ys);
        }
        if let Some(b) = b {
            for (ch, &bv) in b.data().iter().enumerate() {
                let s = (n * geo.in_ch + ch) * out_plane;
                out[s..s + out_plane].iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Tensor::from_vec(&[geo.n, geo.in_ch, geo.h, geo.w], out)
}

pub(crate) fn conv_transpose2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: ConvSpec,
    gy: &[T],
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> ConvGrads<T> {
    let geo = transpose_geometry(x.shape(), w.shape(), None, spec).expect("validated in forward");
    let (ocg, icg) = (geo.in_per_group(), geo.out_per_group());
    let (out_plane, in_plane) = (geo.h * geo.w, geo.oh * geo.ow);
    let kk = ocg * geo.k * geo.k;
    let mut dx = need_x.then(|| vec![T::zero(); x.numel()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.numel()]);
    let mut cols = vec![T::zero(); kk * in_plane];
    for n in 0..geo.n {
        for g in 0..geo.groups {
            let gys = &gy[(n * geo.in_ch + g * ocg) * out_plane..][..ocg * out_plane];
            im2col(gys, ocg, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.oh, geo.ow, &mut cols);
            let x_off = (n * geo.out_ch + g * icg) * in_plane;
            let wg = &w.data()[g * icg * kk..(g + 1) * icg * kk];
            if let Some(dx) = dx.as_mut() {
                // the data gradient is an ordinary convolution of dY with W
                gemm(false, false, icg, in_plane, kk, wg, &cols, T::one(), &mut dx[x_off..x_off + icg * in_plane]);
            }
            if let Some(dw) = dw.as_mut() {
                let xs = &x.data()[x_off..x_off + icg * in_plane];
                let dwg = &mut dw[g * icg * kk..(g + 1) * icg * kk];
                gemm(false, true, icg, kk, in_plane, xs, &cols, T::one(), dwg);
            }
        }
    }
    ConvGrads {
        dx,
        dw,
        db: need_b.then(|| bias_grad(gy, geo.n, geo.in_ch, out_plane)),
    }
}

impl<T: Element> Graph<T> {
    /// 2-D cross-correlation; `groups > 1` gives grouped and `groups == C`
    /// depth-wise convolution.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: ConvSpec,
    ) -> Result<TensorId> {
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        Ok(self.record(Op::Conv2d { x, w, b, spec }, out))
    }

    /// Alias of [`Graph::conv2d`] for `groups > 1`.
    pub fn grouped_conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: ConvSpec,
    ) -> Result<TensorId> {
        self.conv2d(x, w, b, spec)
    }

    /// Transposed convolution; output extent is `stride·(H−1) + k − 2·pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: Option<TensorId>,
        spec: ConvSpec,
    ) -> Result<TensorId> {
        let out =
            conv_transpose2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        Ok(self.record(Op::ConvTranspose2d { x, w, b, spec }, out))
    }
}
