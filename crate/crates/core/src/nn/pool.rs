use crate::autodiff::Var;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

/// Input range `[floor(i·n/g), ceil((i+1)·n/g))` covered by output cell `i`.
pub fn pool_bounds(i: usize, n: usize, g: usize) -> (usize, usize) {
    (i * n / g, ((i + 1) * n).div_ceil(g))
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Adaptive pooling of `C×H×W` onto a `g×g` grid. `g = 1` is global pooling.
    pub fn pool2d(self, kind: PoolKind, grid: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (c, h, w) = match x.shape() {
            &[c, h, w] => (c, h, w),
            s => return Err(Error::invalid("pool2d", format!("expected C×H×W, got {s:?}"))),
        };
        if grid == 0 || grid > h.min(w) {
            return Err(Error::invalid("pool2d", format!("grid {grid} exceeds spatial extent {h}×{w}")));
        }
        let cells = grid * grid;
        let mut out = vec![T::zero(); c * cells];
        // Flat input index feeding each max cell.
        let mut argmax = vec![0usize; if kind == PoolKind::Max { c * cells } else { 0 }];
        for ch in 0..c {
            let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
            for gy in 0..grid {
                let (y0, y1) = pool_bounds(gy, h, grid);
                for gx in 0..grid {
                    let (x0, x1) = pool_bounds(gx, w, grid);
                    let o = ch * cells + gy * grid + gx;
                    match kind {
                        PoolKind::Avg => {
                            let mut s = T::zero();
                            for yy in y0..y1 {
                                s += plane[yy * w + x0..yy * w + x1].iter().copied().sum();
                            }
                            out[o] = s / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                        }
                        PoolKind::Max => {
                            let mut best = (T::neg_infinity(), 0);
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    let v = plane[yy * w + xx];
                                    if v > best.0 {
                                        best = (v, ch * h * w + yy * w + xx);
                                    }
                                }
                            }
                            out[o] = best.0;
                            argmax[o] = best.1;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![c, grid, grid], out)?;
        let total = c * h * w;
        Ok(self.unary_node(value, move |g| {
            let mut gx = vec![T::zero(); total];
            match kind {
                PoolKind::Max => {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        gx[src] += gv;
                    }
                }
                PoolKind::Avg => {
                    for ch in 0..c {
                        for gy in 0..grid {
                            let (y0, y1) = pool_bounds(gy, h, grid);
                            for gxi in 0..grid {
                                let (x0, x1) = pool_bounds(gxi, w, grid);
                                let share = g[ch * cells + gy * grid + gxi] / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                                for yy in y0..y1 {
                                    for xx in x0..x1 {
                                        gx[ch * h * w + yy * w + xx] += share;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            gx
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn pool(x: Tensor<f64>, kind: PoolKind, g: usize) -> Tensor<f64> {
        let tape = Tape::empty();
        tape.leaf(x).pool2d(kind, g).unwrap().to_tensor()
    }

    #[test]
    fn global_cases() {
        let x = Tensor::from_f64(vec![1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pool(x.clone(), PoolKind::Avg, 1).data(), &[2.5]);
        assert_eq!(pool(x, PoolKind::Max, 1).data(), &[4.0]);
    }

    #[test]
    fn constant_map_stays_constant() {
        for kind in [PoolKind::Avg, PoolKind::Max] {
            for g in [1, 2, 3, 5] {
                let y = pool(Tensor::full(vec![2, 7, 5], 3.25), kind, g);
                assert!(y.data().iter().all(|&v| v == 3.25));
            }
        }
    }

    #[test]
    fn avg_matches_region_means() {
        let x = Tensor::uniform(vec![2, 8, 8], -1.0, 1.0, &mut rand::rng());
        for g in [1, 2, 3, 6] {
            let y = pool(x.clone(), PoolKind::Avg, g);
            for c in 0..2 {
                for gy in 0..g {
                    for gx in 0..g {
                        let (y0, y1) = pool_bounds(gy, 8, g);
                        let (x0, x1) = pool_bounds(gx, 8, g);
                        let mut s = 0.0;
                        let mut n = 0.0;
                        for r in y0..y1 {
                            for q in x0..x1 {
                                s += x.at(&[c, r, q]);
                                n += 1.0;
                            }
                        }
                        assert!((y.at(&[c, gy, gx]) - s / n).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn grid_larger_than_map_is_an_error() {
        let tape = Tape::<f64>::empty();
        assert!(tape.leaf(Tensor::zeros(vec![1, 2, 2])).pool2d(PoolKind::Avg, 3).is_err());
    }
}
