//! Layer kinds with forward and analytic backward passes.
//!
//! All layers operate on a single sample; spatial tensors are `[C, H, W]`.

use std::fmt;

use super::Tensor;
use crate::{Error, Result};

/// Pre-normalization norms below this are guarded.
pub const NORM_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Square kernel, "same" padding of `kernel / 2`.
    Conv2d {
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// 2×2 window, stride 2, floor mode.
    MaxPool2,
    GlobalAvgPool,
    /// Fully connected; flattens its input.
    Dense { out: usize },
    L2Normalize,
    Reshape(Vec<usize>),
    /// Nearest-neighbor ×2 in both spatial axes.
    Upsample2x,
    Sigmoid,
    /// Bilinear (align-corners) resize of the spatial axes.
    Resize { height: usize, width: usize },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                out_ch,
                kernel,
                stride,
            } => write!(f, "conv2d(k={kernel},s={stride},out={out_ch})"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool2 => f.write_str("maxpool2"),
            LayerSpec::GlobalAvgPool => f.write_str("global_avg_pool"),
            LayerSpec::Dense { out } => write!(f, "dense({out})"),
            LayerSpec::L2Normalize => f.write_str("l2_normalize"),
            LayerSpec::Reshape(d) => write!(f, "reshape({d:?})"),
            LayerSpec::Upsample2x => f.write_str("upsample2x"),
            LayerSpec::Sigmoid => f.write_str("sigmoid"),
            LayerSpec::Resize { height, width } => write!(f, "resize({height}x{width})"),
        }
    }
}

fn spatial(dims: &[usize], what: &LayerSpec) -> Result<(usize, usize, usize)> {
    match dims {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::invalid(format!("{what} needs a [C,H,W] input, got {dims:?}"))),
    }
}

impl LayerSpec {
    /// Output dims for `input` dims and the shapes of the layer's parameters.
    pub fn resolve(&self, input: &[usize]) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
        let flat: usize = input.iter().product();
        match self {
            LayerSpec::Conv2d {
                out_ch,
                kernel,
                stride,
            } => {
                let (c, h, w) = spatial(input, self)?;
                if *kernel == 0 || kernel % 2 == 0 || *stride == 0 || *out_ch == 0 {
                    return Err(Error::invalid(format!("{self}: kernel must be odd, stride and channels ≥1")));
                }
                let p = kernel / 2;
                let ho = (h + 2 * p - kernel) / stride + 1;
                let wo = (w + 2 * p - kernel) / stride + 1;
                Ok((
                    vec![*out_ch, ho, wo],
                    vec![vec![*out_ch, c, *kernel, *kernel], vec![*out_ch]],
                ))
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::L2Normalize => {
                Ok((input.to_vec(), vec![]))
            }
            LayerSpec::MaxPool2 => {
                let (c, h, w) = spatial(input, self)?;
                if h < 2 || w < 2 {
                    return Err(Error::invalid(format!("maxpool2 input too small: {input:?}")));
                }
                Ok((vec![c, h / 2, w / 2], vec![]))
            }
            LayerSpec::GlobalAvgPool => {
                let (c, _, _) = spatial(input, self)?;
                Ok((vec![c], vec![]))
            }
            LayerSpec::Dense { out } => {
                if *out == 0 {
                    return Err(Error::invalid("dense layer with zero outputs"));
                }
                Ok((vec![*out], vec![vec![*out, flat], vec![*out]]))
            }
            LayerSpec::Reshape(d) => {
                if d.iter().product::<usize>() != flat {
                    return Err(Error::ShapeMismatch {
                        expected: d.clone(),
                        found: input.to_vec(),
                    });
                }
                Ok((d.clone(), vec![]))
            }
            LayerSpec::Upsample2x => {
                let (c, h, w) = spatial(input, self)?;
                Ok((vec![c, 2 * h, 2 * w], vec![]))
            }
            LayerSpec::Resize { height, width } => {
                let (c, _, _) = spatial(input, self)?;
                if *height == 0 || *width == 0 {
                    return Err(Error::invalid("resize to an empty shape"));
                }
                Ok((vec![c, *height, *width], vec![]))
            }
        }
    }
}

/// Per-layer values kept from the forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Tensor,
    pub output: Tensor,
    /// Max-pool argmax positions (flat input indices).
    pub argmax: Vec<usize>,
    /// L2-normalize: the (guarded) pre-normalization norm.
    pub norm: f64,
    /// L2-normalize: the norm guard was applied.
    pub guarded: bool,
}

/// A layer bound to concrete input dims and parameter slots.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    /// Indices into the network parameter list (weight, bias).
    pub params: Vec<usize>,
}

struct Interp {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

fn interp_table(n_in: usize, n_out: usize) -> Interp {
    let mut t = Interp {
        lo: Vec::with_capacity(n_out),
        hi: Vec::with_capacity(n_out),
        frac: Vec::with_capacity(n_out),
    };
    let step = if n_out > 1 {
        (n_in - 1) as f64 / (n_out - 1) as f64
    } else {
        0.0
    };
    for o in 0..n_out {
        let x = o as f64 * step;
        let lo = (x.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        t.lo.push(lo);
        t.hi.push(hi);
        t.frac.push(x - lo as f64);
    }
    t
}

/// Valid output column range for kernel offset `kx`.
#[inline]
fn conv_range(kx: usize, pad: usize, stride: usize, w_in: usize, w_out: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // ix = ox*stride + kx - pad ≤ w_in - 1
    let hi = if w_in + pad > kx {
        ((w_in - 1 + pad - kx) / stride + 1).min(w_out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

impl Layer {
    pub fn forward(&self, params: &[super::Tensor], x: &Tensor) -> Result<LayerCache> {
        x.expect_dims(&self.in_dims)?;
        let mut argmax = Vec::new();
        let mut norm = 0.0;
        let mut guarded = false;
        let out = match &self.spec {
            LayerSpec::Conv2d { kernel, stride, .. } => {
                conv_forward(x, &params[self.params[0]], &params[self.params[1]], *kernel, *stride, &self.out_dims)
            }
            LayerSpec::Relu => map(x, |v| v.max(0.0)),
            LayerSpec::Sigmoid => map(x, |v| 1.0 / (1.0 + (-v).exp())),
            LayerSpec::MaxPool2 => {
                let (c, h, w) = (self.in_dims[0], self.in_dims[1], self.in_dims[2]);
                let (ho, wo) = (self.out_dims[1], self.out_dims[2]);
                let xs = x.data();
                let mut out = Vec::with_capacity(c * ho * wo);
                for ch in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut best = usize::MAX;
                            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                let i = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                                if best == usize::MAX || xs[i] > xs[best] {
                                    best = i;
                                }
                            }
                            argmax.push(best);
                            out.push(xs[best]);
                        }
                    }
                }
                Tensor::new(self.out_dims.clone(), out)?
            }
            LayerSpec::GlobalAvgPool => {
                let c = self.in_dims[0];
                let hw = self.in_dims[1] * self.in_dims[2];
                let xs = x.data();
                Tensor::new(
                    vec![c],
                    (0..c).map(|ch| xs[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64).collect(),
                )?
            }
            LayerSpec::Dense { out } => {
                let w = params[self.params[0]].data();
                let b = params[self.params[1]].data();
                let xs = x.data();
                let n = xs.len();
                Tensor::new(
                    vec![*out],
                    (0..*out)
                        .map(|o| b[o] + dot(&w[o * n..(o + 1) * n], xs))
                        .collect(),
                )?
            }
            LayerSpec::L2Normalize => {
                let mut n = x.norm();
                if n < NORM_GUARD {
                    n += NORM_GUARD;
                    guarded = true;
                }
                norm = n;
                map(x, |v| v / n)
            }
            LayerSpec::Reshape(d) => x.clone().reshape(d)?,
            LayerSpec::Upsample2x => {
                let (c, h, w) = (self.in_dims[0], self.in_dims[1], self.in_dims[2]);
                let xs = x.data();
                let mut out = Vec::with_capacity(4 * c * h * w);
                for ch in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            out.push(xs[(ch * h + y / 2) * w + xx / 2]);
                        }
                    }
                }
                Tensor::new(self.out_dims.clone(), out)?
            }
            LayerSpec::Resize { height, width } => {
                let (c, h, w) = (self.in_dims[0], self.in_dims[1], self.in_dims[2]);
                let ty = interp_table(h, *height);
                let tx = interp_table(w, *width);
                let xs = x.data();
                let mut out = Vec::with_capacity(c * height * width);
                for ch in 0..c {
                    let plane = &xs[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..*height {
                        let (r0, r1, fy) = (ty.lo[oy] * w, ty.hi[oy] * w, ty.frac[oy]);
                        for ox in 0..*width {
                            let (c0, c1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                            let top = plane[r0 + c0] * (1.0 - fx) + plane[r0 + c1] * fx;
                            let bot = plane[r1 + c0] * (1.0 - fx) + plane[r1 + c1] * fx;
                            out.push(top * (1.0 - fy) + bot * fy);
                        }
                    }
                }
                Tensor::new(self.out_dims.clone(), out)?
            }
        };
        Ok(LayerCache {
            input: x.clone(),
            output: out,
            argmax,
            norm,
            guarded,
        })
    }

    /// Distance from the cached input to the nearest non-differentiable point:
    /// a ReLU input at zero or a max-pool window whose two largest values tie.
    /// Smooth layers report infinity.
    pub fn kink_margin(&self, cache: &LayerCache) -> f64 {
        let xs = cache.input.data();
        match &self.spec {
            LayerSpec::Relu => xs.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())),
            LayerSpec::MaxPool2 => {
                let (c, h, w) = (self.in_dims[0], self.in_dims[1], self.in_dims[2]);
                let (ho, wo) = (self.out_dims[1], self.out_dims[2]);
                let mut margin = f64::INFINITY;
                for ch in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut v = [0.0; 4];
                            for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                                v[k] = xs[(ch * h + 2 * oy + dy) * w + 2 * ox + dx];
                            }
                            v.sort_by(|a, b| b.total_cmp(a));
                            margin = margin.min(v[0] - v[1]);
                        }
                    }
                }
                margin
            }
            _ => f64::INFINITY,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(
        &self,
        params: &[Tensor],
        cache: &LayerCache,
        g: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        g.expect_dims(&self.out_dims)?;
        let gs = g.data();
        let gin = match &self.spec {
            LayerSpec::Conv2d { kernel, stride, .. } => {
                let (wi, bi) = (self.params[0], self.params[1]);
                let mut gw = std::mem::replace(&mut grads[wi], Tensor::zeros(&[0]));
                let mut gb = std::mem::replace(&mut grads[bi], Tensor::zeros(&[0]));
                let gin = conv_backward(&cache.input, &params[wi], g, *kernel, *stride, &mut gw, &mut gb);
                grads[wi] = gw;
                grads[bi] = gb;
                gin
            }
            LayerSpec::Relu => Tensor::new(
                self.in_dims.clone(),
                cache.input.data().iter().zip(gs).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect(),
            )?,
            LayerSpec::Sigmoid => Tensor::new(
                self.in_dims.clone(),
                cache.output.data().iter().zip(gs).map(|(&y, &g)| g * y * (1.0 - y)).collect(),
            )?,
            LayerSpec::MaxPool2 => {
                let mut gin = Tensor::zeros(&self.in_dims);
                let d = gin.data_mut();
                for (&i, &gv) in cache.argmax.iter().zip(gs) {
                    d[i] += gv;
                }
                gin
            }
            LayerSpec::GlobalAvgPool => {
                let hw = self.in_dims[1] * self.in_dims[2];
                Tensor::from_fn(&self.in_dims, |i| gs[i / hw] / hw as f64)
            }
            LayerSpec::Dense { out } => {
                let (wi, bi) = (self.params[0], self.params[1]);
                let xs = cache.input.data();
                let n = xs.len();
                {
                    let gw = grads[wi].data_mut();
                    for o in 0..*out {
                        let go = gs[o];
                        if go != 0.0 {
                            for (a, &x) in gw[o * n..(o + 1) * n].iter_mut().zip(xs) {
                                *a += go * x;
                            }
                        }
                    }
                }
                {
                    let gb = grads[bi].data_mut();
                    for o in 0..*out {
                        gb[o] += gs[o];
                    }
                }
                let w = params[wi].data();
                let mut gin = vec![0.0; n];
                for o in 0..*out {
                    let go = gs[o];
                    if go != 0.0 {
                        for (a, &wv) in gin.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                            *a += go * wv;
                        }
                    }
                }
                Tensor::new(self.in_dims.clone(), gin)?
            }
            LayerSpec::L2Normalize => {
                // d(u/|u|)/du = (I - v vᵀ) / |u|
                let v = cache.output.data();
                let proj = dot(v, gs);
                let n = cache.norm;
                Tensor::new(
                    self.in_dims.clone(),
                    gs.iter().zip(v).map(|(&g, &vi)| (g - vi * proj) / n).collect(),
                )?
            }
            LayerSpec::Reshape(_) => g.clone().reshape(&self.in_dims)?,
            LayerSpec::Upsample2x => {
                let (c, h, w) = (self.in_dims[0], self.in_dims[1], self.in_dims[2]);
                let mut gin = Tensor::zeros(&self.in_dims);
                let d = gin.data_mut();
                for ch in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            d[(ch * h + y / 2) * w + xx / 2] += gs[(ch * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                gin
            }
            LayerSpec::Resize { height, width } => {
                let (c, h, w) = (self.in_dims[0], self.in_dims[1], self.in_dims[2]);
                let ty = interp_table(h, *height);
                let tx = interp_table(w, *width);
                let mut gin = Tensor::zeros(&self.in_dims);
                let d = gin.data_mut();
                for ch in 0..c {
                    let base = ch * h * w;
                    for oy in 0..*height {
                        let (r0, r1, fy) = (base + ty.lo[oy] * w, base + ty.hi[oy] * w, ty.frac[oy]);
                        for ox in 0..*width {
                            let gv = gs[(ch * height + oy) * width + ox];
                            let (c0, c1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                            d[r0 + c0] += gv * (1.0 - fy) * (1.0 - fx);
                            d[r0 + c1] += gv * (1.0 - fy) * fx;
                            d[r1 + c0] += gv * fy * (1.0 - fx);
                            d[r1 + c1] += gv * fy * fx;
                        }
                    }
                }
                gin
            }
        };
        Ok(gin)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_fn(x.dims(), |i| f(x.data()[i]))
}

/// Unfolds `x` into a `[ci·k·k, ho·wo]` patch matrix (zero padding `k/2`).
fn im2col(x: &Tensor, k: usize, s: usize, ho: usize, wo: usize) -> Vec<f64> {
    let (ci_n, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let p = k / 2;
    let xs = x.data();
    let plane = ho * wo;
    let mut col = vec![0.0; ci_n * k * k * plane];
    for ci in 0..ci_n {
        let xin = &xs[ci * h * wd..(ci + 1) * h * wd];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let dst = &mut col[r * plane..(r + 1) * plane];
                let (lo, hi) = conv_range(kx, p, s, wd, wo);
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row_in = &xin[iy as usize * wd..(iy as usize + 1) * wd];
                    let row_out = &mut dst[oy * wo..(oy + 1) * wo];
                    for ox in lo..hi {
                        row_out[ox] = row_in[ox * s + kx - p];
                    }
                }
            }
        }
    }
    col
}

/// `c ← a·b + beta·c` for row-major `a: m×k`, `b: k×n` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_rs: usize, a_cs: usize, b: &[f64], b_rs: usize, b_cs: usize, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides address at most m·k, k·n and m·n elements of the
    // respective slices, all checked above; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, k: usize, s: usize, out_dims: &[usize]) -> Tensor {
    let ci_n = x.dims()[0];
    let (co_n, ho, wo) = (out_dims[0], out_dims[1], out_dims[2]);
    let (r_n, plane) = (ci_n * k * k, ho * wo);
    let col = im2col(x, k, s, ho, wo);
    let mut out = vec![0.0; co_n * plane];
    for (co, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v = b.data()[co]);
    }
    gemm(co_n, r_n, plane, w.data(), r_n, 1, &col, plane, 1, 1.0, &mut out);
    Tensor::new(out_dims.to_vec(), out).expect("conv output dims")
}

fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    k: usize,
    s: usize,
    gw: &mut Tensor,
    gb: &mut Tensor,
) -> Tensor {
    let (ci_n, h, wd) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (co_n, ho, wo) = (g.dims()[0], g.dims()[1], g.dims()[2]);
    let (r_n, plane) = (ci_n * k * k, ho * wo);
    let p = k / 2;
    let gs = g.data();
    for (co, gplane) in gs.chunks(plane).enumerate() {
        gb.data_mut()[co] += gplane.iter().sum::<f64>();
    }
    let col = im2col(x, k, s, ho, wo);
    // dW += g · colᵀ
    gemm(co_n, plane, r_n, gs, plane, 1, &col, 1, plane, 1.0, gw.data_mut());
    // dcol = Wᵀ · g
    let mut gcol = vec![0.0; r_n * plane];
    gemm(r_n, co_n, plane, w.data(), 1, r_n, gs, plane, 1, 0.0, &mut gcol);

    let mut gin = vec![0.0; ci_n * h * wd];
    for ci in 0..ci_n {
        let gxin = &mut gin[ci * h * wd..(ci + 1) * h * wd];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let src = &gcol[r * plane..(r + 1) * plane];
                let (lo, hi) = conv_range(kx, p, s, wd, wo);
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &mut gxin[iy as usize * wd..(iy as usize + 1) * wd];
                    let gsrc = &src[oy * wo..(oy + 1) * wo];
                    for ox in lo..hi {
                        row[ox * s + kx - p] += gsrc[ox];
                    }
                }
            }
        }
    }
    Tensor::new(x.dims().to_vec(), gin).expect("conv input dims")
}
