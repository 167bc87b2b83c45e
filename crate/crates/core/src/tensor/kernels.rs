//! Forward and backward kernels on plain tensors. The tape composes these;
//! they are also usable directly when no gradient is needed.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }
}

impl Conv2dParams {
    /// Stride-1 "same" padding for an odd `kh x kw` kernel.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self {
            padding: ((kh - 1) / 2, (kw - 1) / 2),
            ..Self::default()
        }
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolParams {
    /// Stride-1 pooling with "same" padding for an odd window.
    pub fn same(window: usize) -> Self {
        Self {
            window: (window, window),
            stride: (1, 1),
            padding: ((window - 1) / 2, (window - 1) / 2),
        }
    }
}

/// Quarter-turn direction in image coordinates (row index grows downward).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Ccw,
    Cw,
}

impl Direction {
    pub fn inverse(self) -> Self {
        match self {
            Direction::Ccw => Direction::Cw,
            Direction::Cw => Direction::Ccw,
        }
    }
}

fn out_extent(len: usize, pad: usize, k: usize, stride: usize, axis: &str) -> Result<usize> {
    if stride == 0 {
        return Err(shape_err!("zero stride on {axis} axis"));
    }
    let padded = len + 2 * pad;
    if padded < k {
        return Err(shape_err!(
            "zero-sized output on {axis} axis: extent {len} + 2*{pad} < kernel {k}"
        ));
    }
    Ok((padded - k) / stride + 1)
}

struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cout_g: usize,
}

fn conv_geom<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, p: &Conv2dParams) -> Result<ConvGeom> {
    let [n, cin, h, w] = input.dims4()?;
    let [cout, cin_g, kh, kw] = kernel.dims4()?;
    if p.groups == 0 || cin % p.groups != 0 || cout % p.groups != 0 {
        return Err(shape_err!(
            "groups {} must divide input channels {cin} and output channels {cout}",
            p.groups
        ));
    }
    if cin / p.groups != cin_g {
        return Err(shape_err!(
            "kernel expects {cin_g} input channels per group, input has {cin} over {} groups",
            p.groups
        ));
    }
    let oh = out_extent(h, p.padding.0, kh, p.stride.0, "height")?;
    let ow = out_extent(w, p.padding.1, kw, p.stride.1, "width")?;
    Ok(ConvGeom {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        kh,
        kw,
        oh,
        ow,
        cout_g: cout / p.groups,
    })
}

/// Range of output indices `o` for which `o * stride + k - pad` lands in `[0, len)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    // o*stride + k >= pad  and  o*stride + k - pad < len
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Grouped 2-D cross-correlation with zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: &Conv2dParams,
) -> Result<Tensor<T>> {
    let g = conv_geom(input, kernel, p)?;
    if let Some(b) = bias {
        if b.numel() != g.cout {
            return Err(shape_err!("bias has {} values for {} output channels", b.numel(), g.cout));
        }
    }
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); g.n * g.cout * g.oh * g.ow];
    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let obase = (n * g.cout + oc) * g.oh * g.ow;
            let plane = &mut out[obase..obase + g.oh * g.ow];
            if let Some(b) = bias {
                plane.fill(b.data()[oc]);
            }
            for icg in 0..g.cin_g {
                let ic = grp * g.cin_g + icg;
                let ibase = (n * g.cin + ic) * g.h * g.w;
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(ky, ph, sh, g.h, g.oh);
                    for kx in 0..g.kw {
                        let wv = k[((oc * g.cin_g + icg) * g.kh + ky) * g.kw + kx];
                        let (ox0, ox1) = valid_range(kx, pw, sw, g.w, g.ow);
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky - ph;
                            let irow = ibase + iy * g.w;
                            let orow = oy * g.ow;
                            for ox in ox0..ox1 {
                                let ix = ox * sw + kx - pw;
                                plane[orow + ox] += wv * x[irow + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    p: &Conv2dParams,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = conv_geom(input, kernel, p)?;
    if grad_out.dims() != [g.n, g.cout, g.oh, g.ow] {
        return Err(shape_err!("conv2d grad_out dims {:?} mismatch", grad_out.dims()));
    }
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); g.cout];
    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / g.cout_g;
            let obase = (n * g.cout + oc) * g.oh * g.ow;
            let gplane = &go[obase..obase + g.oh * g.ow];
            gb[oc] += gplane.iter().copied().sum();
            for icg in 0..g.cin_g {
                let ic = grp * g.cin_g + icg;
                let ibase = (n * g.cin + ic) * g.h * g.w;
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(ky, ph, sh, g.h, g.oh);
                    for kx in 0..g.kw {
                        let kidx = ((oc * g.cin_g + icg) * g.kh + ky) * g.kw + kx;
                        let wv = k[kidx];
                        let (ox0, ox1) = valid_range(kx, pw, sw, g.w, g.ow);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * sh + ky - ph;
                            let irow = ibase + iy * g.w;
                            let orow = oy * g.ow;
                            for ox in ox0..ox1 {
                                let ix = ox * sw + kx - pw;
                                let gv = gplane[orow + ox];
                                acc += x[irow + ix] * gv;
                                gx[irow + ix] += wv * gv;
                            }
                        }
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.dims().to_vec(), gx)?,
        Tensor::new(kernel.dims().to_vec(), gk)?,
        Tensor::new(vec![g.cout], gb)?,
    ))
}

/// Quarter-turn of every spatial plane. Counter-clockwise sends input cell
/// `(r, c)` to output cell `(W - 1 - c, r)`; clockwise is its inverse.
pub fn rot90<T: Scalar>(input: &Tensor<T>, dir: Direction) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4()?;
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    // output planes are w x h
    for plane in 0..n * c {
        let base = plane * h * w;
        for r in 0..h {
            for col in 0..w {
                let (orow, ocol) = match dir {
                    Direction::Ccw => (w - 1 - col, r),
                    Direction::Cw => (col, h - 1 - r),
                };
                out[base + orow * h + ocol] = x[base + r * w + col];
            }
        }
    }
    Tensor::new(vec![n, c, w, h], out)
}

fn pool_geom<T: Scalar>(input: &Tensor<T>, p: &PoolParams) -> Result<([usize; 4], usize, usize)> {
    let dims = input.dims4()?;
    if p.window.0 == 0 || p.window.1 == 0 {
        return Err(shape_err!("pool window must be at least 1x1"));
    }
    let oh = out_extent(dims[2], p.padding.0, p.window.0, p.stride.0, "height")?;
    let ow = out_extent(dims[3], p.padding.1, p.window.1, p.stride.1, "width")?;
    Ok((dims, oh, ow))
}

/// Average pooling; padded cells count as zeros in the divisor.
pub fn avg_pool<T: Scalar>(input: &Tensor<T>, p: &PoolParams) -> Result<Tensor<T>> {
    let ([n, c, h, w], oh, ow) = pool_geom(input, p)?;
    let (wh, ww) = p.window;
    let inv = T::one() / T::lit((wh * ww) as f64);
    let x = input.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let ib = plane * h * w;
        let ob = plane * oh * ow;
        for ky in 0..wh {
            let (oy0, oy1) = valid_range(ky, p.padding.0, p.stride.0, h, oh);
            for kx in 0..ww {
                let (ox0, ox1) = valid_range(kx, p.padding.1, p.stride.1, w, ow);
                for oy in oy0..oy1 {
                    let iy = oy * p.stride.0 + ky - p.padding.0;
                    for ox in ox0..ox1 {
                        let ix = ox * p.stride.1 + kx - p.padding.1;
                        out[ob + oy * ow + ox] += x[ib + iy * w + ix];
                    }
                }
            }
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avg_pool_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    p: &PoolParams,
) -> Result<Tensor<T>> {
    let ([n, c, h, w], oh, ow) = pool_geom(input, p)?;
    let (wh, ww) = p.window;
    let inv = T::one() / T::lit((wh * ww) as f64);
    let go = grad_out.data();
    let mut gx = vec![T::zero(); input.numel()];
    for plane in 0..n * c {
        let ib = plane * h * w;
        let ob = plane * oh * ow;
        for ky in 0..wh {
            let (oy0, oy1) = valid_range(ky, p.padding.0, p.stride.0, h, oh);
            for kx in 0..ww {
                let (ox0, ox1) = valid_range(kx, p.padding.1, p.stride.1, w, ow);
                for oy in oy0..oy1 {
                    let iy = oy * p.stride.0 + ky - p.padding.0;
                    for ox in ox0..ox1 {
                        let ix = ox * p.stride.1 + kx - p.padding.1;
                        gx[ib + iy * w + ix] += go[ob + oy * ow + ox] * inv;
                    }
                }
            }
        }
    }
    Tensor::new(input.dims().to_vec(), gx)
}

/// Logistic function, evaluated so that neither tail overflows. The result
/// is saturated to the open interval (0, 1): past |v| ~ 37 (f64) the exact
/// value rounds to 1, so the top is pinned to the largest float below 1.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let top = T::one() - T::epsilon() / T::lit(2.0);
    s.max(T::min_positive_value()).min(top)
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Smooth-L1 (Huber with transition at `beta`).
#[inline]
pub fn smooth_l1_scalar<T: Scalar>(v: T, beta: T) -> T {
    let a = v.abs();
    if a < beta {
        T::lit(0.5) * a * a / beta
    } else {
        a - T::lit(0.5) * beta
    }
}

#[inline]
pub fn smooth_l1_grad<T: Scalar>(v: T, beta: T) -> T {
    if v.abs() < beta {
        v / beta
    } else {
        v.signum()
    }
}

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err!("concat of zero tensors"))?;
    let [n, _, h, w] = first.dims4()?;
    let mut total_c = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err!(
                "concat parts disagree: {:?} vs {:?}",
                first.dims(),
                p.dims()
            ));
        }
        total_c += pc;
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total_c * hw);
    for b in 0..n {
        for p in parts {
            let pc = p.dims()[1];
            out.extend_from_slice(&p.data()[b * pc * hw..(b + 1) * pc * hw]);
        }
    }
    Tensor::new(vec![n, total_c, h, w], out)
}

pub fn slice_channels<T: Scalar>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4()?;
    if len == 0 || start + len > c {
        return Err(shape_err!("channel slice {start}..{} out of 0..{c}", start + len));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for b in 0..n {
        let base = (b * c + start) * hw;
        out.extend_from_slice(&input.data()[base..base + len * hw]);
    }
    Tensor::new(vec![n, len, h, w], out)
}

/// Scatters `grad` back into a zero tensor of `full_dims` at channel offset `start`.
pub fn unslice_channels<T: Scalar>(grad: &Tensor<T>, full_dims: &[usize], start: usize) -> Result<Tensor<T>> {
    let [n, len, h, w] = grad.dims4()?;
    let c = full_dims[1];
    let hw = h * w;
    let mut out = vec![T::zero(); full_dims.iter().product()];
    for b in 0..n {
        let base = (b * c + start) * hw;
        out[base..base + len * hw].copy_from_slice(&grad.data()[b * len * hw..(b + 1) * len * hw]);
    }
    Tensor::new(full_dims.to_vec(), out)
}

/// Right-aligned broadcast of `src` to `dims`; source extents must be 1 or equal.
pub fn broadcast_to<T: Scalar>(src: &Tensor<T>, dims: &[usize]) -> Result<Tensor<T>> {
    let sd = aligned_dims(src.dims(), dims)?;
    let sstrides = strides(&sd);
    Tensor::from_fn(dims, |flat| {
        let mut rem = flat;
        let mut sidx = 0;
        for axis in (0..dims.len()).rev() {
            let i = rem % dims[axis];
            rem /= dims[axis];
            if sd[axis] != 1 {
                sidx += i * sstrides[axis];
            }
        }
        src.data()[sidx]
    })
}

/// Sums `grad` (of broadcast shape) back down to `src_dims`.
pub fn reduce_to<T: Scalar>(grad: &Tensor<T>, src_dims: &[usize]) -> Result<Tensor<T>> {
    let dims = grad.dims();
    let sd = aligned_dims(src_dims, dims)?;
    let sstrides = strides(&sd);
    let mut out = vec![T::zero(); src_dims.iter().product()];
    for (flat, &g) in grad.data().iter().enumerate() {
        let mut rem = flat;
        let mut sidx = 0;
        for axis in (0..dims.len()).rev() {
            let i = rem % dims[axis];
            rem /= dims[axis];
            if sd[axis] != 1 {
                sidx += i * sstrides[axis];
            }
        }
        out[sidx] += g;
    }
    Tensor::new(src_dims.to_vec(), out)
}

fn aligned_dims(src: &[usize], dims: &[usize]) -> Result<Vec<usize>> {
    if src.len() > dims.len() {
        return Err(shape_err!("cannot broadcast {src:?} to {dims:?}"));
    }
    let mut sd = vec![1; dims.len() - src.len()];
    sd.extend_from_slice(src);
    for (a, b) in sd.iter().zip(dims) {
        if *a != 1 && a != b {
            return Err(shape_err!("cannot broadcast {src:?} to {dims:?}"));
        }
    }
    Ok(sd)
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}
