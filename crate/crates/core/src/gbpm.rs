//! Global bin prediction.
//!
//! Average- and max-pooled descriptors of the context feature are each
//! projected point-wise, blended by a learned sigmoid gate, and mapped by an
//! MLP to one set of normalized bin widths for the whole image. Bin centers
//! sit at the midpoint of each width's cumulative interval in
//! `[d_min, d_max]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Var};
use crate::nn::{Linear, Mlp, PoolKind};
use crate::param::ParamBuilder;
use crate::{Error, Result, Scalar, Tensor};

/// Floor added to every softplus width before normalization.
pub const WIDTH_EPS: f64 = 1e-3;

/// How raw MLP logits become widths that are positive and sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WidthNorm {
    /// `(softplus(l) + eps) / Σ (softplus(l) + eps)`
    Softplus { eps: f64 },
    Softmax,
}

impl Default for WidthNorm {
    fn default() -> Self {
        WidthNorm::Softplus { eps: WIDTH_EPS }
    }
}

pub fn normalize_widths<'t, T: Scalar>(logits: Var<'t, T>, norm: WidthNorm) -> Result<Var<'t, T>> {
    match norm {
        WidthNorm::Softmax => logits.softmax(0),
        WidthNorm::Softplus { eps } => {
            let w = logits.softplus().affine(T::one(), T::lit(eps));
            w.mul(w.sum().recip())
        }
    }
}

fn check_range<T: Scalar>(d_min: T, d_max: T) -> Result<()> {
    if !(d_min < d_max) || !d_min.is_finite() || !d_max.is_finite() {
        return Err(Error::invalid("bin_centers", format!("invalid depth range ({d_min}, {d_max})")));
    }
    Ok(())
}

/// `c_i = d_min + (d_max − d_min)·(b_i/2 + Σ_{j<i} b_j)`
///
/// Widths must be positive and sum to 1 within `1e-5`.
pub fn bin_centers<T: Scalar>(widths: &[T], d_min: T, d_max: T) -> Result<Vec<T>> {
    check_range(d_min, d_max)?;
    if widths.is_empty() {
        return Err(Error::invalid("bin_centers", "no bins"));
    }
    if let Some(w) = widths.iter().find(|w| !(**w > T::zero())) {
        return Err(Error::invalid("bin_centers", format!("non-positive width {w}")));
    }
    let total: T = widths.iter().copied().sum();
    if (total - T::one()).abs() > T::lit(1e-5) {
        return Err(Error::invalid("bin_centers", format!("widths sum to {total}, not 1")));
    }
    let span = d_max - d_min;
    let half = T::lit(0.5);
    let mut before = T::zero();
    Ok(widths
        .iter()
        .map(|&b| {
            let c = d_min + span * (b * half + before);
            before += b;
            c
        })
        .collect())
}

/// Differentiable form of [`bin_centers`] over a `[n]` widths variable.
pub fn bin_centers_var<'t, T: Scalar>(widths: Var<'t, T>, d_min: T, d_max: T) -> Result<Var<'t, T>> {
    check_range(d_min, d_max)?;
    let cum = widths.cumsum()?;
    let mid = cum.sub(widths.scale(T::lit(0.5)))?;
    Ok(mid.affine(d_max - d_min, d_min))
}

/// Normalized bin widths and their centers over a depth range.
#[derive(Clone, Debug, PartialEq)]
pub struct BinSpec<T> {
    widths: Vec<T>,
    centers: Vec<T>,
    pub d_min: T,
    pub d_max: T,
}

impl<T: Scalar> BinSpec<T> {
    pub fn new(widths: Vec<T>, d_min: T, d_max: T) -> Result<Self> {
        let centers = bin_centers(&widths, d_min, d_max)?;
        Ok(BinSpec {
            widths,
            centers,
            d_min,
            d_max,
        })
    }

    /// Fixed widths `1/n`.
    pub fn uniform(n: usize, d_min: T, d_max: T) -> Result<Self> {
        Self::new(vec![T::one() / T::lit(n as f64); n], d_min, d_max)
    }

    pub fn widths(&self) -> &[T] {
        &self.widths
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    /// Cumulative boundaries `d_min + Δ·Σ_{j≤i} b_j`, `n + 1` values.
    pub fn edges(&self) -> Vec<T> {
        let span = self.d_max - self.d_min;
        let mut acc = T::zero();
        std::iter::once(self.d_min)
            .chain(self.widths.iter().map(|&b| {
                acc += b;
                self.d_min + span * acc
            }))
            .collect()
    }

    pub fn centers_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.centers.len()], self.centers.clone()).expect("1-D")
    }
}

#[derive(Clone, Debug)]
pub struct Gbpm {
    pub channels: usize,
    pub descriptor: usize,
    pub n_bins: usize,
    pub pw_avg: Linear,
    pub pw_max: Linear,
    /// `2C_g → C_g → C_g`, followed by a sigmoid.
    pub gate: Mlp,
    /// `C_g → C_g → n_bins` raw logits.
    pub width: Mlp,
    pub norm: WidthNorm,
}

impl Gbpm {
    /// Descriptor width equals the input channel count.
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize, n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::invalid("gbpm", "n_bins must be positive"));
        }
        let mut pb = pb.scope(name);
        let cg = channels;
        Ok(Gbpm {
            channels,
            descriptor: cg,
            n_bins,
            pw_avg: Linear::new(&mut pb, "pw_avg", channels, cg)?,
            pw_max: Linear::new(&mut pb, "pw_max", channels, cg)?,
            gate: Mlp::new(&mut pb, "gate", &[2 * cg, cg, cg], Activation::Gelu)?,
            width: Mlp::new(&mut pb, "width", &[cg, cg, n_bins], Activation::Gelu)?,
            norm: WidthNorm::default(),
        })
    }

    /// `(PWConv(GAP(f)), PWConv(GMP(f)))` as `[C_g]` vectors.
    pub fn global_descriptors<'t, T: Scalar>(&self, f: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let c = self.channels;
        if f.shape().first() != Some(&c) {
            return Err(Error::ShapeMismatch {
                op: "gbpm",
                lhs: f.shape(),
                rhs: vec![c],
            });
        }
        let avg = f.pool2d(PoolKind::Avg, 1)?.reshape(vec![c])?;
        let max = f.pool2d(PoolKind::Max, 1)?.reshape(vec![c])?;
        Ok((self.pw_avg.forward(avg)?, self.pw_max.forward(max)?))
    }

    /// `z = σ(MLP(concat(f_a, f_b)))`, output `f_a ⊗ z + f_b ⊗ (1 − z)`.
    pub fn gated_fuse<'t, T: Scalar>(&self, f_a: Var<'t, T>, f_b: Var<'t, T>) -> Result<Var<'t, T>> {
        if f_a.shape() != f_b.shape() {
            return Err(Error::ShapeMismatch {
                op: "gbpm fuse",
                lhs: f_a.shape(),
                rhs: f_b.shape(),
            });
        }
        let z = self.gate.forward(Var::concat(&[f_a, f_b])?)?.sigmoid();
        f_a.mul(z)?.add(f_b.mul(z.one_minus())?)
    }

    pub fn predict_bin_widths<'t, T: Scalar>(&self, f_out: Var<'t, T>) -> Result<Var<'t, T>> {
        normalize_widths(self.width.forward(f_out)?, self.norm)
    }

    /// Widths and centers for one context feature map.
    pub fn forward<'t, T: Scalar>(&self, f: Var<'t, T>, d_min: T, d_max: T) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let (f_a, f_b) = self.global_descriptors(f)?;
        let fused = self.gated_fuse(f_a, f_b)?;
        let widths = self.predict_bin_widths(fused)?;
        let centers = bin_centers_var(widths, d_min, d_max)?;
        Ok((widths, centers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn center_examples() {
        assert_eq!(bin_centers(&[0.5, 0.5], 0.0, 10.0).unwrap(), vec![2.5, 7.5]);
        let c = bin_centers::<f64>(&[0.1, 0.2, 0.3, 0.4], 0.0, 1.0).unwrap();
        for (a, b) in c.iter().zip([0.05, 0.20, 0.45, 0.80]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(bin_centers(&[1.0], 2.0, 6.0).unwrap(), vec![4.0]);
    }

    #[test]
    fn center_errors() {
        assert!(bin_centers(&[0.5, 0.5], 1.0, 1.0).is_err());
        assert!(bin_centers(&[0.5, 0.6], 0.0, 1.0).is_err());
        assert!(bin_centers(&[1.0, 0.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn width_normalization() {
        let tape = Tape::<f64>::empty();
        let zeros = tape.leaf(Tensor::zeros(vec![5]));
        for norm in [WidthNorm::default(), WidthNorm::Softmax] {
            let w = normalize_widths(zeros, norm).unwrap();
            assert!(w.value().data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
        }
        let logits = tape.leaf(Tensor::from_f64(vec![3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap());
        let w = normalize_widths(logits, WidthNorm::Softmax).unwrap();
        for (a, b) in w.value().data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let wild = tape.leaf(Tensor::from_f64(vec![4], &[-50.0, 0.0, 3.0, 80.0]).unwrap());
        let w = normalize_widths(wild, WidthNorm::default()).unwrap().to_tensor();
        let s: f64 = w.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(w.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn var_centers_match_plain_centers() {
        let widths = [0.1, 0.2, 0.3, 0.4];
        let tape = Tape::<f64>::empty();
        let w = tape.leaf(Tensor::from_f64(vec![4], &widths).unwrap());
        let c = bin_centers_var(w, 1.0, 3.0).unwrap().to_tensor();
        let want = bin_centers(&widths, 1.0, 3.0).unwrap();
        for (a, b) in c.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn edges_bracket_centers() {
        let spec = BinSpec::new(vec![0.25, 0.5, 0.25], 0.0, 4.0).unwrap();
        assert_eq!(spec.edges(), vec![0.0, 1.0, 3.0, 4.0]);
        assert_eq!(spec.centers(), &[0.5, 2.0, 3.5]);
    }
}
