use crate::autodiff::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Activation, Var};
use crate::param::{ParamBuilder, ParamId};
use crate::{Error, Result, Scalar, Tensor};

impl<'t, T: Scalar> Var<'t, T> {
    /// Affine map over the leading axis: `[in, ...] -> [out, ...]` with
    /// `weight: [out, in]` and `bias: [out]`. On a `C×H×W` map this is a
    /// point-wise convolution applied at every position.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let (d_out, d_in) = match w.shape() {
            &[o, i] => (o, i),
            s => return Err(Error::invalid("linear", format!("weight must be rank 2, got {s:?}"))),
        };
        if x.rank() == 0 || x.shape()[0] != d_in {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let n = x.numel() / d_in;
        let mut out = vec![T::zero(); d_out * n];
        matmul_acc(w.data(), x.data(), &mut out, d_out, d_in, n);
        if let Some(b) = bias {
            let bv = b.value();
            if bv.numel() != d_out {
                return Err(Error::ShapeMismatch {
                    op: "linear bias",
                    lhs: bv.shape().to_vec(),
                    rhs: vec![d_out],
                });
            }
            for (row, &b) in out.chunks_mut(n).zip(bv.data()) {
                for v in row {
                    *v += b;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[0] = d_out;
        let value = Tensor::new(shape, out)?;
        let mut parents = vec![self.id, weight.id];
        if let Some(b) = bias {
            parents.push(b.id);
        }
        let has_bias = bias.is_some();
        Ok(self.tape.push(
            value,
            parents,
            Box::new(move |g| {
                let mut gx = vec![T::zero(); d_in * n];
                matmul_tn_acc(w.data(), g, &mut gx, d_in, d_out, n);
                let mut gw = vec![T::zero(); d_out * d_in];
                matmul_nt_acc(g, x.data(), &mut gw, d_out, n, d_in);
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(g.chunks(n).map(|r| r.iter().copied().sum()).collect());
                }
                grads
            }),
        ))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, in_features: usize, out_features: usize) -> Result<Self> {
        let mut pb = pb.scope(name);
        Ok(Linear {
            in_features,
            out_features,
            weight: pb.kaiming("w", &[out_features, in_features], in_features)?,
            bias: pb.zeros("b", &[out_features])?,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        x.linear(tape.param(self.weight), Some(tape.param(self.bias)))
    }
}

/// Chain of [`Linear`] layers with an activation between them. The last
/// layer is left linear; callers apply their own sigmoid or softmax.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
}

impl Mlp {
    /// `widths = [in, hidden..., out]`
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, widths: &[usize], hidden: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("mlp", "needs at least input and output width"));
        }
        let mut pb = pb.scope(name);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut pb, &i.to_string(), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, hidden })
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("non-empty mlp")
    }

    pub fn forward<'t, T: Scalar>(&self, mut x: Var<'t, T>) -> Result<Var<'t, T>> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(x)?;
            if i + 1 < self.layers.len() {
                x = x.activation(self.hidden);
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use crate::autodiff::Tape;
    use crate::Tensor;

    #[test]
    fn affine_examples() {
        let tape = Tape::<f64>::empty();
        let x = tape.leaf(Tensor::from_f64(vec![1], &[3.0]).unwrap());
        let w = tape.leaf(Tensor::from_f64(vec![1, 1], &[2.0]).unwrap());
        let b = tape.leaf(Tensor::from_f64(vec![1], &[1.0]).unwrap());
        assert_eq!(x.linear(w, Some(b)).unwrap().value().data(), &[7.0]);

        let x = tape.leaf(Tensor::from_f64(vec![2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let eye = tape.leaf(Tensor::from_f64(vec![2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let zero = tape.leaf(Tensor::zeros(vec![2]));
        assert_eq!(x.linear(eye, Some(zero)).unwrap().value().data(), x.value().data());
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let tape = Tape::<f64>::empty();
        let x = tape.leaf(Tensor::zeros(vec![3]));
        let w = tape.leaf(Tensor::zeros(vec![2, 2]));
        assert!(x.linear(w, None).is_err());
    }
}
