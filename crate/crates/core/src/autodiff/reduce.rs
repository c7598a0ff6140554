use std::sync::Arc;

use super::Var;
use crate::{Error, Result, Scalar, Tensor};

/// Splits `shape` around `axis` into (outer, extent, inner).
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let n = x.numel();
        let s = x.data().iter().copied().sum();
        self.unary_node(Tensor::scalar(s), move |g| vec![g[0]; n])
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.numel();
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    /// Reduces `axis`, keeping it with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "sum_axis",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, n, inner) = around(&shape, axis);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let value = Tensor::new(out_shape, out)?;
        Ok(self.unary_node(value, move |g| {
            let mut gx = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                for _ in 0..n {
                    gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            gx
        }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, n, inner) = around(&shape, axis);
        let xd = x.data();
        let mut y = vec![T::zero(); xd.len()];
        let idx = move |o: usize, k: usize, i: usize| (o * n + k) * inner + i;
        for o in 0..outer {
            for i in 0..inner {
                let mut m = T::neg_infinity();
                for k in 0..n {
                    m = m.max(xd[idx(o, k, i)]);
                }
                let mut s = T::zero();
                for k in 0..n {
                    let e = (xd[idx(o, k, i)] - m).exp();
                    y[idx(o, k, i)] = e;
                    s += e;
                }
                for k in 0..n {
                    y[idx(o, k, i)] /= s;
                }
            }
        }
        let y = Arc::new(Tensor::new(shape, y)?);
        let yk = Arc::clone(&y);
        Ok(self.unary_node((*y).clone(), move |g| {
            let yd = yk.data();
            let mut gx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let mut dotv = T::zero();
                    for k in 0..n {
                        dotv += g[idx(o, k, i)] * yd[idx(o, k, i)];
                    }
                    for k in 0..n {
                        let j = idx(o, k, i);
                        gx[j] = yd[j] * (g[j] - dotv);
                    }
                }
            }
            gx
        }))
    }

    /// Inclusive prefix sum of a 1-D tensor.
    pub fn cumsum(self) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 1 {
            return Err(Error::invalid("cumsum", format!("expected rank 1, got {:?}", x.shape())));
        }
        let mut acc = T::zero();
        let out: Vec<T> = x
            .data()
            .iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.unary_node(value, |g| {
            let mut acc = T::zero();
            let mut gx: Vec<T> = g
                .iter()
                .rev()
                .map(|&v| {
                    acc += v;
                    acc
                })
                .collect();
            gx.reverse();
            gx
        }))
    }

    /// Flat gather: output `[indices.len()]` with `out[i] = x[indices[i]]`.
    pub fn gather(self, indices: Arc<Vec<usize>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = x.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid("gather", format!("index {bad} out of range for {n} elements")));
        }
        let out: Vec<T> = indices.iter().map(|&i| x.data()[i]).collect();
        let value = Tensor::new(vec![indices.len()], out)?;
        Ok(self.unary_node(value, move |g| {
            let mut gx = vec![T::zero(); n];
            for (&i, &gv) in indices.iter().zip(g) {
                gx[i] += gv;
            }
            gx
        }))
    }
}
