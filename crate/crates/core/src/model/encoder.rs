use crate::autodiff::Var;
use crate::glkam::Glkam;
use crate::nn::{Conv2d, Conv2dSpec};
use crate::param::ParamBuilder;
use crate::{Error, Result, Scalar};

/// Encoder outputs at strides 4, 8, 16, 32 with `C, 2C, 4C, 8C` channels.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid<'t, T: Scalar> {
    pub levels: [Var<'t, T>; 4],
}

impl<'t, T: Scalar> FeaturePyramid<'t, T> {
    pub fn check(&self) -> Result<()> {
        for pair in self.levels.windows(2) {
            let (a, b) = (pair[0].shape(), pair[1].shape());
            if b[0] != 2 * a[0] || 2 * b[1] != a[1] || 2 * b[2] != a[2] {
                return Err(Error::ShapeMismatch {
                    op: "feature pyramid",
                    lhs: a,
                    rhs: b,
                });
            }
        }
        Ok(())
    }
}

/// `x + conv(gelu(conv(x)))` with 3×3 convs.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(ResBlock {
            conv1: Conv2d::new(&mut pb, "conv1", Conv2dSpec::dense(channels, channels, 3), true)?,
            conv2: Conv2d::new(&mut pb, "conv2", Conv2dSpec::dense(channels, channels, 3), true)?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.conv1.forward(x)?.gelu();
        x.add(self.conv2.forward(h)?)
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    /// Stride-2 3×3 convs, each followed by GELU.
    pub downsample: Vec<Conv2d>,
    pub blocks: Vec<ResBlock>,
}

impl Stage {
    pub fn forward<'t, T: Scalar>(&self, mut x: Var<'t, T>) -> Result<Var<'t, T>> {
        for conv in &self.downsample {
            x = conv.forward(x)?.gelu();
        }
        for block in &self.blocks {
            x = block.forward(x)?;
        }
        Ok(x)
    }
}

/// Four-stage convolutional stand-in for a hierarchical backbone. Stage 1
/// downsamples ×4 with two strided convs, later stages ×2 each. With GLKAM
/// enabled, a module sits after each of the first three stages and its
/// output is both the pyramid level and the next stage's input.
#[derive(Clone, Debug)]
pub struct ToyPyramidEncoder {
    pub base_channels: usize,
    pub stages: Vec<Stage>,
    pub glkams: Vec<Glkam>,
}

pub const BLOCKS_PER_STAGE: usize = 2;

impl ToyPyramidEncoder {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, base_channels: usize, use_glkam: bool) -> Result<Self> {
        let mut pb = pb.scope(name);
        let mut stages = Vec::with_capacity(4);
        let mut glkams = Vec::new();
        let mut c_in = 3;
        for i in 0..4 {
            let c = base_channels << i;
            let mut sp = pb.scope(format!("stage{}", i + 1));
            let mut downsample = Vec::new();
            if i == 0 {
                downsample.push(Conv2d::new(&mut sp, "down0", Conv2dSpec::dense(c_in, c, 3).with_stride(2), true)?);
                downsample.push(Conv2d::new(&mut sp, "down1", Conv2dSpec::dense(c, c, 3).with_stride(2), true)?);
            } else {
                downsample.push(Conv2d::new(&mut sp, "down0", Conv2dSpec::dense(c_in, c, 3).with_stride(2), true)?);
            }
            let blocks = (0..BLOCKS_PER_STAGE)
                .map(|b| ResBlock::new(&mut sp, &format!("block{b}"), c))
                .collect::<Result<_>>()?;
            stages.push(Stage { downsample, blocks });
            if use_glkam && i < 3 {
                glkams.push(Glkam::new(&mut pb, &format!("glkam{}", i + 1), c)?);
            }
            c_in = c;
        }
        Ok(ToyPyramidEncoder {
            base_channels,
            stages,
            glkams,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, rgb: Var<'t, T>) -> Result<FeaturePyramid<'t, T>> {
        let mut x = rgb;
        let mut levels = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.forward(x)?;
            if let Some(g) = self.glkams.get(i) {
                x = g.forward(x)?;
            }
            levels.push(x);
        }
        let pyramid = FeaturePyramid {
            levels: [levels[0], levels[1], levels[2], levels[3]],
        };
        pyramid.check()?;
        Ok(pyramid)
    }
}
