//! Gated large-kernel attention.
//!
//! The input is normalized and passed through three parallel large-kernel
//! attention branches (each on a third of the channels), normalized again and
//! refined by a point-wise FFN to give `F_m`. A point-wise MLP over
//! `concat(F_m, X)` produces a sigmoid gate `z` per position and channel, and
//! the output is the convex blend `z·X + (1−z)·F_m`.

use crate::autodiff::{Activation, Var};
use crate::nn::{Conv2d, Conv2dSpec, LayerNorm, Mlp};
use crate::param::ParamBuilder;
use crate::{Error, Result, Scalar};

/// One large-kernel attention group: an `a×a` depth-wise conv, a `b×b`
/// depth-wise conv at `dilation`, then a point-wise conv. `nominal` is the
/// `(K, d)` label the decomposition is named after.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LkaGroupConfig {
    pub nominal: (usize, usize),
    pub small: usize,
    pub large: usize,
    pub dilation: usize,
}

pub const LKA_GROUPS: [LkaGroupConfig; 3] = [
    LkaGroupConfig {
        nominal: (7, 2),
        small: 3,
        large: 5,
        dilation: 2,
    },
    LkaGroupConfig {
        nominal: (21, 3),
        small: 5,
        large: 7,
        dilation: 3,
    },
    LkaGroupConfig {
        nominal: (35, 4),
        small: 7,
        large: 9,
        dilation: 4,
    },
];

impl LkaGroupConfig {
    /// The spatial gate uses the same kernel as the first depth-wise conv.
    pub fn gate_kernel(&self) -> usize {
        self.small
    }

    /// Extent of the cascade's impulse response: `(a−1) + (b−1)·d + 1`.
    pub fn receptive_extent(&self) -> usize {
        (self.small - 1) + (self.large - 1) * self.dilation + 1
    }
}

#[derive(Clone, Debug)]
pub struct LkaBranch {
    pub group: LkaGroupConfig,
    pub channels: usize,
    pub dw_small: Conv2d,
    pub dw_dilated: Conv2d,
    pub pointwise: Conv2d,
    pub gate: Conv2d,
}

impl LkaBranch {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, group: LkaGroupConfig, channels: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(LkaBranch {
            group,
            channels,
            dw_small: Conv2d::new(&mut pb, "dw_small", Conv2dSpec::depthwise(channels, group.small, 1), true)?,
            dw_dilated: Conv2d::new(
                &mut pb,
                "dw_dilated",
                Conv2dSpec::depthwise(channels, group.large, group.dilation),
                true,
            )?,
            pointwise: Conv2d::new(&mut pb, "pw", Conv2dSpec::pointwise(channels, channels), true)?,
            gate: Conv2d::new(&mut pb, "gate", Conv2dSpec::depthwise(channels, group.gate_kernel(), 1), true)?,
        })
    }

    /// The ungated `a-b-1` cascade.
    pub fn attention<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.dw_small.forward(x)?;
        let y = self.dw_dilated.forward(y)?;
        self.pointwise.forward(y)
    }

    /// `G(x) ⊗ LKA(x)`
    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape().first() != Some(&self.channels) {
            return Err(Error::ShapeMismatch {
                op: "lka_branch",
                lhs: x.shape(),
                rhs: vec![self.channels],
            });
        }
        let gate = self.gate.forward(x)?;
        gate.mul(self.attention(x)?)
    }
}

/// Multi-scale LKA: entry point-wise conv, three-way channel split, one
/// [`LkaBranch`] per split, concat, exit point-wise conv.
#[derive(Clone, Debug)]
pub struct Mlka {
    pub channels: usize,
    /// Channel count after the entry conv; the smallest multiple of 3 ≥ `channels`.
    pub inner: usize,
    pub entry: Conv2d,
    pub branches: Vec<LkaBranch>,
    pub exit: Conv2d,
}

impl Mlka {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        let inner = 3 * channels.div_ceil(3);
        let per = inner / 3;
        let branches = LKA_GROUPS
            .iter()
            .enumerate()
            .map(|(i, g)| LkaBranch::new(&mut pb, &format!("lka{i}"), *g, per))
            .collect::<Result<_>>()?;
        Ok(Mlka {
            channels,
            inner,
            entry: Conv2d::new(&mut pb, "entry", Conv2dSpec::pointwise(channels, inner), true)?,
            branches,
            exit: Conv2d::new(&mut pb, "exit", Conv2dSpec::pointwise(inner, channels), true)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.entry.forward(x)?;
        let segments = y.split(3)?;
        self.forward_segments(&segments)
    }

    /// Branches, concat and exit conv applied to already-split segments.
    pub fn forward_segments<'t, T: Scalar>(&self, segments: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if segments.len() != self.branches.len() {
            return Err(Error::invalid("mlka", format!("expected 3 segments, got {}", segments.len())));
        }
        let outs = self
            .branches
            .iter()
            .zip(segments)
            .map(|(b, s)| b.forward(*s))
            .collect::<Result<Vec<_>>>()?;
        self.exit.forward(Var::concat(&outs)?)
    }
}

/// Point-wise expand ×4, activate, project.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub expand: Conv2d,
    pub project: Conv2d,
    pub activation: Activation,
}

impl Ffn {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(Ffn {
            expand: Conv2d::new(&mut pb, "expand", Conv2dSpec::pointwise(channels, 4 * channels), true)?,
            project: Conv2d::new(&mut pb, "project", Conv2dSpec::pointwise(4 * channels, channels), true)?,
            activation: Activation::Gelu,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.expand.forward(x)?.activation(self.activation);
        self.project.forward(h)
    }
}

#[derive(Clone, Debug)]
pub struct Glkam {
    pub channels: usize,
    pub pre_norm: LayerNorm,
    pub mlka: Mlka,
    pub post_norm: LayerNorm,
    pub ffn: Ffn,
    /// Point-wise `2C → C → C`, followed by a sigmoid.
    pub fusion: Mlp,
}

impl Glkam {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(Glkam {
            channels,
            pre_norm: LayerNorm::new(&mut pb, "pre_norm", channels)?,
            mlka: Mlka::new(&mut pb, "mlka", channels)?,
            post_norm: LayerNorm::new(&mut pb, "post_norm", channels)?,
            ffn: Ffn::new(&mut pb, "ffn", channels)?,
            fusion: Mlp::new(&mut pb, "fusion", &[2 * channels, channels, channels], Activation::Gelu)?,
        })
    }

    /// `F_m = FFN(LN(MLKA(LN(X))))`
    pub fn branch_feature<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.pre_norm.forward(x)?;
        let y = self.mlka.forward(y)?;
        let y = self.post_norm.forward(y)?;
        self.ffn.forward(y)
    }

    /// Per-position, per-channel gate `z = σ(MLP(concat(F_m, X)))`.
    pub fn gate<'t, T: Scalar>(&self, x: Var<'t, T>, f_m: Var<'t, T>) -> Result<Var<'t, T>> {
        let f = Var::concat(&[f_m, x])?;
        Ok(self.fusion.forward(f)?.sigmoid())
    }

    /// `z ⊗ X + (1 − z) ⊗ F_m`
    pub fn fuse<'t, T: Scalar>(&self, x: Var<'t, T>, f_m: Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape() != f_m.shape() {
            return Err(Error::ShapeMismatch {
                op: "glkam fuse",
                lhs: x.shape(),
                rhs: f_m.shape(),
            });
        }
        let z = self.gate(x, f_m)?;
        z.mul(x)?.add(z.one_minus().mul(f_m)?)
    }

    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape().first() != Some(&self.channels) {
            return Err(Error::ShapeMismatch {
                op: "glkam",
                lhs: x.shape(),
                rhs: vec![self.channels],
            });
        }
        let f_m = self.branch_feature(x)?;
        self.fuse(x, f_m)
    }
}
