use std::sync::Arc;

use crate::autodiff::Var;
use crate::param::{ParamBuilder, ParamId};
use crate::{Error, Result, Scalar, Tensor};

pub const LN_EPS: f64 = 1e-5;

impl<'t, T: Scalar> Var<'t, T> {
    /// Normalizes over the leading (channel) axis at every position, then
    /// applies a per-channel gain and bias.
    pub fn layer_norm(self, gain: Var<'t, T>, bias: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let x = self.value();
        let gv = gain.value();
        let bv = bias.value();
        let c = *x.shape().first().unwrap_or(&0);
        if c == 0 || gv.numel() != c || bv.numel() != c {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let n = x.numel() / c;
        let xd = x.data();
        let inv_c = T::one() / T::lit(c as f64);
        let mut xhat = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); n];
        for p in 0..n {
            let mut mean = T::zero();
            for ch in 0..c {
                mean += xd[ch * n + p];
            }
            mean *= inv_c;
            let mut var = T::zero();
            for ch in 0..c {
                let d = xd[ch * n + p] - mean;
                var += d * d;
            }
            var *= inv_c;
            let is = T::one() / (var + eps).sqrt();
            inv_std[p] = is;
            for ch in 0..c {
                xhat[ch * n + p] = (xd[ch * n + p] - mean) * is;
            }
        }
        let mut out = vec![T::zero(); xd.len()];
        for ch in 0..c {
            let (gc, bc) = (gv.data()[ch], bv.data()[ch]);
            for p in 0..n {
                out[ch * n + p] = gc * xhat[ch * n + p] + bc;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let xhat = Arc::new(xhat);
        Ok(self.tape.push(
            value,
            vec![self.id, gain.id, bias.id],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); g.len()];
                let mut ggain = vec![T::zero(); c];
                let mut gbias = vec![T::zero(); c];
                for ch in 0..c {
                    for p in 0..n {
                        ggain[ch] += g[ch * n + p] * xhat[ch * n + p];
                        gbias[ch] += g[ch * n + p];
                    }
                }
                for p in 0..n {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for ch in 0..c {
                        let gh = g[ch * n + p] * gv.data()[ch];
                        m1 += gh;
                        m2 += gh * xhat[ch * n + p];
                    }
                    m1 *= inv_c;
                    m2 *= inv_c;
                    for ch in 0..c {
                        let gh = g[ch * n + p] * gv.data()[ch];
                        gx[ch * n + p] = inv_std[p] * (gh - m1 - xhat[ch * n + p] * m2);
                    }
                }
                vec![gx, ggain, gbias]
            }),
        ))
    }
}

/// Channel layer norm with unit-initialized gain and zero bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub channels: usize,
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(LayerNorm {
            channels,
            gain: pb.ones("gain", &[channels])?,
            bias: pb.zeros("bias", &[channels])?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        x.layer_norm(tape.param(self.gain), tape.param(self.bias), T::lit(LN_EPS))
    }
}
