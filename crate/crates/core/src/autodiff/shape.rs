use std::sync::Arc;

use super::Var;
use crate::{Error, Result, Scalar, Tensor};

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let value = self.to_tensor().reshape(shape)?;
        Ok(self.unary_node(value, |g| g.to_vec()))
    }

    /// Concatenates along the leading (channel) axis.
    pub fn concat(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let tape = first.tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let rest = values[0].shape()[1..].to_vec();
        let mut lead = 0;
        for v in &values {
            if v.rank() == 0 || v.shape()[1..] != rest[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: values[0].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            lead += v.shape()[0];
        }
        let mut data = Vec::with_capacity(values.iter().map(|v| v.numel()).sum());
        for v in &values {
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&rest);
        let sizes: Vec<usize> = values.iter().map(|v| v.numel()).collect();
        let parents = parts
            .iter()
            .map(|p| {
                p.same_tape(first);
                p.id
            })
            .collect();
        Ok(tape.push(
            Tensor::new(shape, data)?,
            parents,
            Box::new(move |g| {
                let mut off = 0;
                sizes
                    .iter()
                    .map(|&n| {
                        let s = g[off..off + n].to_vec();
                        off += n;
                        s
                    })
                    .collect()
            }),
        ))
    }

    /// Slice `[start, start+len)` of the leading axis.
    pub fn narrow(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let lead = *x.shape().first().unwrap_or(&0);
        if start + len > lead || len == 0 {
            return Err(Error::invalid(
                "narrow",
                format!("range {start}..{} outside leading extent {lead}", start + len),
            ));
        }
        let inner: usize = x.shape()[1..].iter().product();
        let total = x.numel();
        let mut shape = x.shape().to_vec();
        shape[0] = len;
        let value = Tensor::new(shape, x.data()[start * inner..(start + len) * inner].to_vec())?;
        Ok(self.unary_node(value, move |g| {
            let mut gx = vec![T::zero(); total];
            gx[start * inner..(start + len) * inner].copy_from_slice(g);
            gx
        }))
    }

    /// Splits the leading axis into `parts` contiguous equal ranges.
    pub fn split(self, parts: usize) -> Result<Vec<Var<'t, T>>> {
        let lead = *self.shape().first().unwrap_or(&0);
        if parts == 0 || !lead.is_multiple_of(parts) {
            return Err(Error::invalid(
                "channel_split",
                format!("{lead} channels not divisible into {parts} parts"),
            ));
        }
        let each = lead / parts;
        (0..parts).map(|i| self.narrow(i * each, each)).collect()
    }

    /// Output element `i` is input element `map[i]`; `map` is a permutation.
    pub(crate) fn permute_flat(self, shape: Vec<usize>, map: Arc<Vec<usize>>) -> Result<Var<'t, T>> {
        let x = self.value();
        debug_assert_eq!(map.len(), x.numel());
        let data = map.iter().map(|&i| x.data()[i]).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.unary_node(value, move |g| {
            let mut gx = vec![T::zero(); g.len()];
            for (&src, &gv) in map.iter().zip(g) {
                gx[src] = gv;
            }
            gx
        }))
    }

    /// Mirrors the last axis.
    pub fn hflip(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let w = *shape.last().unwrap_or(&1);
        let n: usize = shape.iter().product();
        let map = (0..n).map(|i| i - i % w + (w - 1 - i % w)).collect();
        self.permute_flat(shape, Arc::new(map))
    }
}
