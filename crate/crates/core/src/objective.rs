//! Training loss and evaluation metrics over masked depth maps.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::{Error, Result, Scalar, Tensor};

/// Per-pixel validity over an `H×W` depth map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    valid: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != height * width {
            return Err(Error::invalid("mask", format!("{} flags for {height}×{width}", valid.len())));
        }
        Ok(Mask { height, width, valid })
    }

    pub fn all(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            valid: vec![true; height * width],
        }
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.valid
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
            .collect()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            valid: self.valid.iter().zip(&other.valid).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn hflip(&self) -> Mask {
        let mut valid = self.valid.clone();
        for row in valid.chunks_mut(self.width.max(1)) {
            row.reverse();
        }
        Mask { valid, ..*self }
    }

    /// 0/1 map for storage.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(vec![1, self.height, self.width], |i| if self.valid[i] { T::one() } else { T::zero() })
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = spatial(t.shape())?;
        Mask::new(h, w, t.data().iter().map(|&v| v > T::lit(0.5)).collect())
    }
}

fn spatial(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [1, h, w] | [h, w] => Ok((h, w)),
        _ => Err(Error::invalid("depth map", format!("expected 1×H×W, got {shape:?}"))),
    }
}

/// Valid iff finite and `d_min < d ≤ d_max`.
pub fn build_validity_mask<T: Scalar>(depth: &Tensor<T>, d_min: T, d_max: T) -> Result<Mask> {
    let (h, w) = spatial(depth.shape())?;
    let valid = depth
        .data()
        .iter()
        .map(|&d| d.is_finite() && d > d_min && d <= d_max)
        .collect();
    Mask::new(h, w, valid)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilogParams {
    /// Weight of the squared mean log residual.
    pub lambda: f64,
    /// Outer scale.
    pub alpha: f64,
}

impl Default for SilogParams {
    fn default() -> Self {
        SilogParams {
            lambda: 0.85,
            alpha: 10.0,
        }
    }
}

/// Floor applied to the radicand before the square root.
pub const SILOG_RADICAND_EPS: f64 = 1e-12;

/// `alpha · sqrt(mean(g²) − lambda·mean(g)²)` with `g = ln(gt) − ln(pred)`
/// over the masked pixels.
pub fn silog_loss<'t, T: Scalar>(
    pred: Var<'t, T>,
    gt: &Tensor<T>,
    mask: &Mask,
    params: SilogParams,
) -> Result<Var<'t, T>> {
    if !(params.lambda > 0.0 && params.lambda <= 1.0 && params.alpha > 0.0) {
        return Err(Error::invalid("silog", format!("invalid parameters {params:?}")));
    }
    if pred.numel() != gt.numel() || gt.numel() != mask.flags().len() {
        return Err(Error::ShapeMismatch {
            op: "silog",
            lhs: pred.shape(),
            rhs: gt.shape().to_vec(),
        });
    }
    let idx = mask.indices();
    if idx.is_empty() {
        return Err(Error::EmptyMask);
    }
    let pv = pred.value();
    if idx.iter().any(|&i| !(pv.data()[i] > T::zero())) {
        return Err(Error::invalid("silog", "prediction must be positive on the mask"));
    }
    let log_gt = Tensor::new(vec![idx.len()], idx.iter().map(|&i| gt.data()[i].ln()).collect())?;
    let tape = pred.tape();
    let g = tape.leaf(log_gt).sub(pred.gather(Arc::new(idx))?.ln())?;
    let mean_sq = g.square().mean();
    let mean = g.mean();
    let radicand = mean_sq.sub(mean.square().scale(T::lit(params.lambda)))?;
    Ok(radicand
        .clamp_min(T::lit(SILOG_RADICAND_EPS))
        .sqrt()
        .scale(T::lit(params.alpha)))
}

/// Standard error and accuracy metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub rmse: f64,
    pub log10: f64,
    pub sq_rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
}

impl MetricReport {
    /// One `key=value` per line.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "n_valid={}", self.n_valid);
        s
    }

    pub fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
            ("abs_rel", self.abs_rel),
            ("rmse", self.rmse),
            ("log10", self.log10),
            ("sq_rel", self.sq_rel),
        ]
    }

    /// Pixel-weighted mean of per-image reports.
    pub fn average(reports: &[MetricReport]) -> Option<MetricReport> {
        let n: usize = reports.iter().map(|r| r.n_valid).sum();
        if n == 0 {
            return None;
        }
        let w = |f: fn(&MetricReport) -> f64| reports.iter().map(|r| f(r) * r.n_valid as f64).sum::<f64>() / n as f64;
        Some(MetricReport {
            abs_rel: w(|r| r.abs_rel),
            rmse: (reports.iter().map(|r| r.rmse * r.rmse * r.n_valid as f64).sum::<f64>() / n as f64).sqrt(),
            log10: w(|r| r.log10),
            sq_rel: w(|r| r.sq_rel),
            delta1: w(|r| r.delta1),
            delta2: w(|r| r.delta2),
            delta3: w(|r| r.delta3),
            n_valid: n,
        })
    }
}

/// Metrics over the masked pixels; both maps must be positive there.
pub fn compute_metrics<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, mask: &Mask) -> Result<MetricReport> {
    if pred.numel() != gt.numel() || gt.numel() != mask.flags().len() {
        return Err(Error::ShapeMismatch {
            op: "metrics",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        });
    }
    let mut n = 0usize;
    let (mut abs_rel, mut sq, mut sq_rel, mut log10) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for ((&p, &g), &ok) in pred.data().iter().zip(gt.data()).zip(mask.flags()) {
        if !ok {
            continue;
        }
        let (p, g) = (p.as_f64(), g.as_f64());
        if !(p > 0.0 && g > 0.0) {
            return Err(Error::invalid("metrics", format!("non-positive depth pred={p} gt={g}")));
        }
        n += 1;
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq += diff * diff;
        sq_rel += diff * diff / g;
        log10 += (p.log10() - g.log10()).abs();
        let ratio = (p / g).max(g / p);
        for (i, hit) in hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(i as i32 + 1) {
                *hit += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    Ok(MetricReport {
        abs_rel: abs_rel / nf,
        rmse: (sq / nf).sqrt(),
        log10: log10 / nf,
        sq_rel: sq_rel / nf,
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
        n_valid: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    fn map(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![1, 1, v.len()], v).unwrap()
    }

    fn silog(pred: &[f64], gt: &[f64], params: SilogParams) -> f64 {
        let tape = Tape::<f64>::empty();
        let p = tape.leaf(map(pred));
        let mask = Mask::all(1, pred.len());
        silog_loss(p, &map(gt), &mask, params).unwrap().value().item()
    }

    #[test]
    fn silog_examples() {
        let d = [1.0, 2.5, 7.0];
        assert!(silog(&d, &d, SilogParams::default()) < 1e-5);
        let e = std::f64::consts::E;
        let v = silog(&[1.0, 1.0], &[1.0, e], SilogParams::default());
        assert!((v - 10.0 * (0.5f64 - 0.85 * 0.25).sqrt()).abs() < 1e-9);
        assert!((v - 5.3619).abs() < 1e-3);
        let scaled: Vec<f64> = d.iter().map(|x| 3.0 * x).collect();
        let full = SilogParams {
            lambda: 1.0,
            alpha: 10.0,
        };
        assert!(silog(&scaled, &d, full) < 1e-5);
    }

    #[test]
    fn silog_empty_mask() {
        let tape = Tape::<f64>::empty();
        let p = tape.leaf(map(&[1.0, 2.0]));
        let mask = Mask::new(1, 2, vec![false, false]).unwrap();
        assert!(matches!(
            silog_loss(p, &map(&[1.0, 2.0]), &mask, SilogParams::default()),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn metric_hand_cases() {
        let m = Mask::all(1, 1);
        let r = compute_metrics(&map(&[2.0]), &map(&[1.0]), &m).unwrap();
        assert_eq!((r.abs_rel, r.rmse, r.sq_rel), (1.0, 1.0, 1.0));
        assert!((r.log10 - std::f64::consts::LOG10_2).abs() < 1e-12);
        assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 0.0, 0.0));

        let r = compute_metrics(&map(&[1.2]), &map(&[1.0]), &m).unwrap();
        assert!((r.abs_rel - 0.2).abs() < 1e-12);
        assert_eq!(r.delta1, 1.0);

        let d = map(&[0.5, 3.0, 9.0]);
        let r = compute_metrics(&d, &d, &Mask::all(1, 3)).unwrap();
        assert_eq!((r.abs_rel, r.rmse, r.log10, r.sq_rel), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn validity_mask() {
        let zeros = Tensor::<f64>::zeros(vec![1, 2, 2]);
        assert!(build_validity_mask(&zeros, 1e-3, 10.0).unwrap().is_empty());
        let m = build_validity_mask(&map(&[5.0, 200.0, f64::NAN, 80.0]), 1e-3, 80.0).unwrap();
        assert_eq!(m.flags(), &[true, false, false, true]);
    }

    #[test]
    fn key_value_block() {
        let d = map(&[1.0, 2.0]);
        let r = compute_metrics(&d, &d, &Mask::all(1, 2)).unwrap();
        let kv = r.to_key_value();
        assert!(kv.contains("delta1=1\n") && kv.contains("abs_rel=0\n") && kv.contains("n_valid=2\n"));
    }
}
