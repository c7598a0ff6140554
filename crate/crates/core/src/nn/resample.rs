use std::sync::Arc;

use crate::autodiff::Var;
use crate::{Error, Result, Scalar, Tensor};

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::invalid(op, format!("expected C×H×W, got {shape:?}"))),
    }
}

/// Source taps `(i0, i1, frac)` for half-pixel (align-corners-false) sampling.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

impl<'t, T: Scalar> Var<'t, T> {
    /// `4C×H×W -> C×2H×2W`; output `(c, 2h+i, 2w+j)` reads input channel `4c+2i+j`.
    pub fn pixel_shuffle(self) -> Result<Var<'t, T>> {
        let (c4, h, w) = chw("pixel_shuffle", &self.shape())?;
        if c4 % 4 != 0 {
            return Err(Error::invalid("pixel_shuffle", format!("{c4} channels not divisible by 4")));
        }
        let c = c4 / 4;
        let mut map = Vec::with_capacity(c4 * h * w);
        for ch in 0..c {
            for oy in 0..2 * h {
                for ox in 0..2 * w {
                    let src_c = 4 * ch + 2 * (oy % 2) + ox % 2;
                    map.push((src_c * h + oy / 2) * w + ox / 2);
                }
            }
        }
        self.permute_flat(vec![c, 2 * h, 2 * w], Arc::new(map))
    }

    /// Inverse of [`Var::pixel_shuffle`].
    pub fn pixel_unshuffle(self) -> Result<Var<'t, T>> {
        let (c, h2, w2) = chw("pixel_unshuffle", &self.shape())?;
        if h2 % 2 != 0 || w2 % 2 != 0 {
            return Err(Error::invalid("pixel_unshuffle", format!("odd spatial extent {h2}×{w2}")));
        }
        let (h, w) = (h2 / 2, w2 / 2);
        let mut map = Vec::with_capacity(c * h2 * w2);
        for src_c in 0..4 * c {
            let (ch, i, j) = (src_c / 4, (src_c % 4) / 2, src_c % 2);
            for y in 0..h {
                for x in 0..w {
                    map.push((ch * h2 + 2 * y + i) * w2 + 2 * x + j);
                }
            }
        }
        self.permute_flat(vec![4 * c, h, w], Arc::new(map))
    }

    /// Bilinear resize with the half-pixel convention.
    pub fn resize_bilinear(self, out_h: usize, out_w: usize) -> Result<Var<'t, T>> {
        let (c, h, w) = chw("resize_bilinear", &self.shape())?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("resize_bilinear", "target size must be positive"));
        }
        if (out_h, out_w) == (h, w) {
            return self.reshape(vec![c, h, w]);
        }
        let ty = Arc::new(taps(h, out_h));
        let tx = Arc::new(taps(w, out_w));
        let x = self.value();
        let xd = x.data();
        let mut out = vec![T::zero(); c * out_h * out_w];
        for ch in 0..c {
            let plane = &xd[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::lit(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::lit(fx);
                    // Lerp form keeps constant maps exact.
                    let (a, b) = (plane[y0 * w + x0], plane[y0 * w + x1]);
                    let top = a + (b - a) * fx;
                    let (a, b) = (plane[y1 * w + x0], plane[y1 * w + x1]);
                    let bot = a + (b - a) * fx;
                    out[(ch * out_h + oy) * out_w + ox] = top + (bot - top) * fy;
                }
            }
        }
        let value = Tensor::new(vec![c, out_h, out_w], out)?;
        Ok(self.unary_node(value, move |g| {
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::lit(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::lit(fx);
                        let gv = g[(ch * out_h + oy) * out_w + ox];
                        let gt = gv * (T::one() - fy);
                        let gb = gv * fy;
                        plane[y0 * w + x0] += gt * (T::one() - fx);
                        plane[y0 * w + x1] += gt * fx;
                        plane[y1 * w + x0] += gb * (T::one() - fx);
                        plane[y1 * w + x1] += gb * fx;
                    }
                }
            }
            gx
        }))
    }
}
