use crate::autodiff::Var;
use crate::nn::{Conv2d, Conv2dSpec, PoolKind};
use crate::param::ParamBuilder;
use crate::{Error, Result, Scalar};

/// Pyramid pooling: per grid `g`, adaptive average pool to `g×g`, 1×1 conv
/// `8C → 2C`, bilinear resize back; concat with the input and fuse to `8C`.
#[derive(Clone, Debug)]
pub struct Ppm {
    pub channels: usize,
    pub grids: Vec<usize>,
    pub branches: Vec<Conv2d>,
    pub fuse: Conv2d,
}

impl Ppm {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize, grids: &[usize]) -> Result<Self> {
        let mut pb = pb.scope(name);
        let branch_c = channels / 4;
        let branches = grids
            .iter()
            .map(|g| Conv2d::new(&mut pb, &format!("grid{g}"), Conv2dSpec::pointwise(channels, branch_c), true))
            .collect::<Result<_>>()?;
        let fuse = Conv2d::new(
            &mut pb,
            "fuse",
            Conv2dSpec::pointwise(channels + grids.len() * branch_c, channels),
            true,
        )?;
        Ok(Ppm {
            channels,
            grids: grids.to_vec(),
            branches,
            fuse,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[0] != self.channels {
            return Err(Error::ShapeMismatch {
                op: "ppm",
                lhs: shape,
                rhs: vec![self.channels],
            });
        }
        let (h, w) = (shape[1], shape[2]);
        let mut parts = vec![x];
        for (&g, conv) in self.grids.iter().zip(&self.branches) {
            let pooled = x.pool2d(PoolKind::Avg, g)?;
            let y = conv.forward(pooled)?.gelu();
            parts.push(y.resize_bilinear(h, w)?);
        }
        Ok(self.fuse.forward(Var::concat(&parts)?)?.gelu())
    }
}
