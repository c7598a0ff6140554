use crate::autodiff::Var;
use crate::nn::{Conv2d, Conv2dSpec};
use crate::param::ParamBuilder;
use crate::{Error, Result, Scalar};

use super::FeaturePyramid;

/// `concat(d, skip)` → 1×1 conv to `4·c_out` → pixel shuffle → 3×3 conv → GELU.
#[derive(Clone, Debug)]
pub struct UpStage {
    pub reduce: Conv2d,
    pub refine: Conv2d,
}

impl UpStage {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(UpStage {
            reduce: Conv2d::new(&mut pb, "reduce", Conv2dSpec::pointwise(c_in, 4 * c_out), true)?,
            refine: Conv2d::new(&mut pb, "refine", Conv2dSpec::dense(c_out, c_out, 3), true)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, d: Var<'t, T>, skip: Var<'t, T>) -> Result<Var<'t, T>> {
        let (ds, ss) = (d.shape(), skip.shape());
        if ds[1..] != ss[1..] {
            return Err(Error::ShapeMismatch {
                op: "decoder skip",
                lhs: ds,
                rhs: ss,
            });
        }
        let y = self.reduce.forward(Var::concat(&[d, skip])?)?;
        let y = y.pixel_shuffle()?;
        Ok(self.refine.forward(y)?.gelu())
    }
}

/// Three upsampling stages from stride 32 to stride 4, pairing each decoder
/// feature with the encoder level at the same scale, then a final 1×1 fuse
/// with the stride-4 encoder level.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub base_channels: usize,
    pub stages: Vec<UpStage>,
    pub fuse: Conv2d,
}

impl Decoder {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, base_channels: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        let c = base_channels;
        let stages = [(16 * c, 4 * c), (8 * c, 2 * c), (4 * c, c)]
            .iter()
            .enumerate()
            .map(|(i, &(ci, co))| UpStage::new(&mut pb, &format!("up{}", i + 1), ci, co))
            .collect::<Result<_>>()?;
        Ok(Decoder {
            base_channels,
            stages,
            fuse: Conv2d::new(&mut pb, "fuse", Conv2dSpec::pointwise(2 * c, c), true)?,
        })
    }

    /// `context` is the stride-32 PPM output; returns `C×H/4×W/4`.
    pub fn forward<'t, T: Scalar>(&self, pyramid: &FeaturePyramid<'t, T>, context: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut d = context;
        for (stage, level) in self.stages.iter().zip([3, 2, 1]) {
            d = stage.forward(d, pyramid.levels[level])?;
        }
        let e1 = pyramid.levels[0];
        if d.shape() != e1.shape() {
            return Err(Error::ShapeMismatch {
                op: "decoder output",
                lhs: d.shape(),
                rhs: e1.shape(),
            });
        }
        Ok(self.fuse.forward(Var::concat(&[d, e1])?)?.gelu())
    }
}
