use std::sync::Arc;

use crate::autodiff::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Var};
use crate::param::{ParamBuilder, ParamId};
use crate::{Error, Result, Scalar, Tensor};

/// Geometry of a zero-padded "same" convolution over `C×H×W` maps.
///
/// `groups` is either 1 (dense) or `in_channels` (depth-wise, one filter per
/// channel). Padding is `dilation·(kernel−1)/2`, so with stride 1 the output
/// has the input's spatial size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
    pub stride: usize,
}

impl Conv2dSpec {
    pub fn dense(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel,
            dilation: 1,
            groups: 1,
            stride: 1,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::dense(in_channels, out_channels, 1)
    }

    pub fn depthwise(channels: usize, kernel: usize, dilation: usize) -> Self {
        Conv2dSpec {
            in_channels: channels,
            out_channels: channels,
            kernel,
            dilation,
            groups: channels,
            stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups > 1
    }

    /// Horizontal/vertical extent of the filter footprint.
    pub fn extent(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.kernel, self.kernel]
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.padding();
        let ext = self.extent();
        ((h + 2 * p - ext) / self.stride + 1, (w + 2 * p - ext) / self.stride + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("conv2d", msg));
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.dilation == 0 || self.stride == 0 {
            return bad("dilation and stride must be at least 1".into());
        }
        if self.groups != 1 && self.groups != self.in_channels {
            return bad(format!("groups {} must be 1 or in_channels", self.groups));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return bad(format!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        if self.groups > 1 && self.out_channels != self.in_channels {
            return bad("depth-wise convolution must preserve the channel count".into());
        }
        Ok(())
    }
}

/// Output positions `o` in `[lo, hi)` for which `o·stride + off` lies in `[0, len)`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, off: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = (in_len as isize - 1 - off).div_euclid(s) + 1;
    let hi = (hi.max(0) as usize).min(out_len);
    ((lo.max(0) as usize).min(hi), hi)
}

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    d: usize,
    s: usize,
    pad: usize,
}

impl Geometry {
    fn taps(&self) -> impl Iterator<Item = (usize, usize, isize, isize)> + '_ {
        let (k, d, pad) = (self.k, self.d, self.pad as isize);
        (0..k).flat_map(move |ky| (0..k).map(move |kx| (ky, kx, (ky * d) as isize - pad, (kx * d) as isize - pad)))
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let n = g.ho * g.wo;
    let kk = g.k * g.k;
    let mut cols = vec![T::zero(); g.c_in * kk * n];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for (t, (_, _, oy_off, ox_off)) in g.taps().enumerate() {
            let row = &mut cols[(c * kk + t) * n..(c * kk + t + 1) * n];
            let (ylo, yhi) = valid_range(g.ho, g.h, g.s, oy_off);
            let (xlo, xhi) = valid_range(g.wo, g.w, g.s, ox_off);
            for oy in ylo..yhi {
                let iy = (oy * g.s) as isize + oy_off;
                let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                for ox in xlo..xhi {
                    dst[ox] = src[((ox * g.s) as isize + ox_off) as usize];
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry) -> Vec<T> {
    let n = g.ho * g.wo;
    let kk = g.k * g.k;
    let mut x = vec![T::zero(); g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for (t, (_, _, oy_off, ox_off)) in g.taps().enumerate() {
            let row = &cols[(c * kk + t) * n..(c * kk + t + 1) * n];
            let (ylo, yhi) = valid_range(g.ho, g.h, g.s, oy_off);
            let (xlo, xhi) = valid_range(g.wo, g.w, g.s, ox_off);
            for oy in ylo..yhi {
                let iy = ((oy * g.s) as isize + oy_off) as usize;
                let src = &row[oy * g.wo..(oy + 1) * g.wo];
                let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                for ox in xlo..xhi {
                    dst[((ox * g.s) as isize + ox_off) as usize] += src[ox];
                }
            }
        }
    }
    x
}

fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    let n = g.ho * g.wo;
    let kk = g.k * g.k;
    let mut out = vec![T::zero(); g.c_in * n];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        let dst = &mut out[c * n..(c + 1) * n];
        for (t, (_, _, oy_off, ox_off)) in g.taps().enumerate() {
            let wv = w[c * kk + t];
            let (ylo, yhi) = valid_range(g.ho, g.h, g.s, oy_off);
            let (xlo, xhi) = valid_range(g.wo, g.w, g.s, ox_off);
            if xlo == xhi {
                continue;
            }
            for oy in ylo..yhi {
                let iy = ((oy * g.s) as isize + oy_off) as usize;
                let src = &plane[iy * g.w..(iy + 1) * g.w];
                let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                if g.s == 1 {
                    let base = (xlo as isize + ox_off) as usize;
                    for (dv, &sv) in drow[xlo..xhi].iter_mut().zip(&src[base..base + (xhi - xlo)]) {
                        *dv += wv * sv;
                    }
                } else {
                    for ox in xlo..xhi {
                        drow[ox] += wv * src[((ox * g.s) as isize + ox_off) as usize];
                    }
                }
            }
        }
    }
    out
}

/// Returns (grad wrt input, grad wrt weights).
fn depthwise_backward<T: Scalar>(x: &[T], w: &[T], gout: &[T], g: &Geometry) -> (Vec<T>, Vec<T>) {
    let n = g.ho * g.wo;
    let kk = g.k * g.k;
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        let gplane = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
        let go = &gout[c * n..(c + 1) * n];
        for (t, (_, _, oy_off, ox_off)) in g.taps().enumerate() {
            let wv = w[c * kk + t];
            let mut acc = T::zero();
            let (ylo, yhi) = valid_range(g.ho, g.h, g.s, oy_off);
            let (xlo, xhi) = valid_range(g.wo, g.w, g.s, ox_off);
            for oy in ylo..yhi {
                let iy = ((oy * g.s) as isize + oy_off) as usize;
                let grow = &go[oy * g.wo..(oy + 1) * g.wo];
                for (ox, &gv) in grow.iter().enumerate().take(xhi).skip(xlo) {
                    let ix = ((ox * g.s) as isize + ox_off) as usize;
                    acc += gv * plane[iy * g.w + ix];
                    gplane[iy * g.w + ix] += wv * gv;
                }
            }
            gw[c * kk + t] = acc;
        }
    }
    (gx, gw)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Same-padded 2-D convolution of a `C×H×W` map.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, spec: &Conv2dSpec) -> Result<Var<'t, T>> {
        spec.validate()?;
        let x = self.value();
        let wv = weight.value();
        let xs = x.shape();
        if xs.len() != 3 || xs[0] != spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d input",
                lhs: xs.to_vec(),
                rhs: vec![spec.in_channels, 0, 0],
            });
        }
        if wv.shape() != spec.weight_shape() {
            return Err(Error::ShapeMismatch {
                op: "conv2d weight",
                lhs: wv.shape().to_vec(),
                rhs: spec.weight_shape().to_vec(),
            });
        }
        let (h, w) = (xs[1], xs[2]);
        if h + 2 * spec.padding() < spec.extent() || w + 2 * spec.padding() < spec.extent() {
            return Err(Error::invalid("conv2d", format!("input {h}×{w} smaller than filter")));
        }
        let (ho, wo) = spec.output_size(h, w);
        let geo = Arc::new(Geometry {
            c_in: spec.in_channels,
            h,
            w,
            ho,
            wo,
            k: spec.kernel,
            d: spec.dilation,
            s: spec.stride,
            pad: spec.padding(),
        });
        let c_out = spec.out_channels;
        let n = ho * wo;
        let bias_val = bias.map(|b| b.value());
        if let Some(b) = &bias_val {
            if b.numel() != c_out {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: b.shape().to_vec(),
                    rhs: vec![c_out],
                });
            }
        }

        let depthwise = spec.is_depthwise();
        let direct = spec.kernel == 1 && spec.stride == 1;
        let cols: Option<Arc<Vec<T>>> = if depthwise || direct {
            None
        } else {
            Some(Arc::new(im2col(x.data(), &geo)))
        };
        let mut out = if depthwise {
            depthwise_forward(x.data(), wv.data(), &geo)
        } else {
            let kdim = spec.in_channels * spec.kernel * spec.kernel;
            let mut out = vec![T::zero(); c_out * n];
            let b = cols.as_deref().map_or(x.data(), |c| c.as_slice());
            matmul_acc(wv.data(), b, &mut out, c_out, kdim, n);
            out
        };
        if let Some(b) = &bias_val {
            for (row, &bv) in out.chunks_mut(n).zip(b.data()) {
                for v in row {
                    *v += bv;
                }
            }
        }
        let value = Tensor::new(vec![c_out, ho, wo], out)?;

        let has_bias = bias.is_some();
        let mut parents = vec![self.id, weight.id];
        if let Some(b) = bias {
            parents.push(b.id);
        }
        let kdim = spec.in_channels / spec.groups * spec.kernel * spec.kernel;
        let backward = move |g: &[T]| -> Vec<Vec<T>> {
            let (gx, gw) = if depthwise {
                depthwise_backward(x.data(), wv.data(), g, &geo)
            } else {
                let b = cols.as_deref().map_or(x.data(), |c| c.as_slice());
                let mut gw = vec![T::zero(); c_out * kdim];
                matmul_nt_acc(g, b, &mut gw, c_out, n, kdim);
                let mut gcols = vec![T::zero(); kdim * n];
                matmul_tn_acc(wv.data(), g, &mut gcols, kdim, c_out, n);
                let gx = if direct { gcols } else { col2im(&gcols, &geo) };
                (gx, gw)
            };
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(g.chunks(n).map(|r| r.iter().copied().sum()).collect());
            }
            grads
        };
        Ok(self.tape.push(value, parents, Box::new(backward)))
    }
}

/// Convolution layer with its own weight (and optional bias) parameters.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: Conv2dSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    /// Kaiming-uniform weights over the per-group fan-in, zero bias.
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, spec: Conv2dSpec, bias: bool) -> Result<Self> {
        spec.validate()?;
        let mut pb = pb.scope(name);
        let fan_in = spec.in_channels / spec.groups * spec.kernel * spec.kernel;
        let weight = pb.kaiming("w", &spec.weight_shape(), fan_in)?;
        let bias = if bias {
            Some(pb.zeros("b", &[spec.out_channels])?)
        } else {
            None
        };
        Ok(Conv2d { spec, weight, bias })
    }

    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        x.conv2d(tape.param(self.weight), self.bias.map(|b| tape.param(b)), &self.spec)
    }
}
