use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Var;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Gelu,
    Relu,
}

/// Number of `a` elements that share one `b` element, or `None` when `b`
/// is not `a`'s shape with trailing extents collapsed to 1.
fn broadcast_inner(a: &[usize], b: &[usize]) -> Option<usize> {
    if b.iter().product::<usize>() == 1 {
        return Some(a.iter().product());
    }
    if a.len() != b.len() {
        return None;
    }
    let lead = b.iter().rposition(|&e| e != 1).map_or(0, |p| p + 1);
    (a[..lead] == b[..lead]).then(|| a[lead..].iter().product())
}

fn sum_groups<T: Scalar>(g: &[T], inner: usize) -> Vec<T> {
    g.chunks(inner).map(|c| c.iter().copied().sum()).collect()
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    let t = inner.tanh();
    let dinner = T::lit(GELU_K) * (T::one() + T::lit(3.0 * GELU_C) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Elementwise `self ∘ rhs`. `rhs` may have trailing singleton extents
    /// (e.g. `[C,1,1]` against `[C,H,W]`) or hold a single element.
    pub fn binary(self, rhs: Var<'t, T>, kind: BinaryKind) -> Result<Var<'t, T>> {
        self.same_tape(&rhs);
        let a = self.value();
        let b = rhs.value();
        let inner = broadcast_inner(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
            op: "binary_elementwise",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })?;
        let f: fn(T, T) -> T = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
        };
        let mut out = Vec::with_capacity(a.numel());
        for (chunk, &bv) in a.data().chunks(inner).zip(b.data()) {
            out.extend(chunk.iter().map(|&av| f(av, bv)));
        }
        let value = Tensor::new(a.shape().to_vec(), out)?;
        let same = inner == 1;
        let backward = move |g: &[T]| -> Vec<Vec<T>> {
            match kind {
                BinaryKind::Add => {
                    let gb = if same { g.to_vec() } else { sum_groups(g, inner) };
                    vec![g.to_vec(), gb]
                }
                BinaryKind::Sub => {
                    let gb = if same { g.to_vec() } else { sum_groups(g, inner) };
                    vec![g.to_vec(), gb.into_iter().map(|v| -v).collect()]
                }
                BinaryKind::Mul => {
                    let mut ga = Vec::with_capacity(g.len());
                    let mut gb = Vec::with_capacity(b.numel());
                    for ((gc, ac), &bv) in g.chunks(inner).zip(a.data().chunks(inner)).zip(b.data()) {
                        ga.extend(gc.iter().map(|&gv| gv * bv));
                        gb.push(gc.iter().zip(ac).map(|(&gv, &av)| gv * av).sum());
                    }
                    vec![ga, gb]
                }
            }
        };
        Ok(self
            .tape
            .push(value, vec![self.id, rhs.id], Box::new(backward)))
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, BinaryKind::Add)
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, BinaryKind::Sub)
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, BinaryKind::Mul)
    }

    /// `alpha * self + beta`
    pub fn affine(self, alpha: T, beta: T) -> Var<'t, T> {
        let value = self.value().map(|v| alpha * v + beta);
        self.unary_node(value, move |g| g.iter().map(|&v| alpha * v).collect())
    }

    pub fn scale(self, alpha: T) -> Var<'t, T> {
        self.affine(alpha, T::zero())
    }

    /// `1 - self`
    pub fn one_minus(self) -> Var<'t, T> {
        self.affine(-T::one(), T::one())
    }

    /// Applies `f` elementwise with derivative `df(x, y)` where `y = f(x)`.
    fn map_with_grad(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'t, T> {
        let x = self.value();
        let y = Arc::new(x.map(f));
        let y_keep = Arc::clone(&y);
        let value = (*y).clone();
        self.unary_node(value, move |g| {
            g.iter()
                .zip(x.data().iter().zip(y_keep.data()))
                .map(|(&gv, (&xv, &yv))| gv * df(xv, yv))
                .collect()
        })
    }

    pub fn activation(self, kind: Activation) -> Var<'t, T> {
        match kind {
            Activation::Sigmoid => self.sigmoid(),
            Activation::Gelu => self.gelu(),
            Activation::Relu => self.relu(),
        }
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.map_with_grad(sigmoid, |_, y| y * (T::one() - y))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'t, T> {
        self.map_with_grad(gelu, |x, _| gelu_grad(x))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.map_with_grad(
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'t, T> {
        self.map_with_grad(|x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(), |x, _| sigmoid(x))
    }

    pub fn exp(self) -> Var<'t, T> {
        self.map_with_grad(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'t, T> {
        self.map_with_grad(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(self) -> Var<'t, T> {
        self.map_with_grad(|x| x.sqrt(), |_, y| T::lit(0.5) / y)
    }

    pub fn recip(self) -> Var<'t, T> {
        self.map_with_grad(|x| T::one() / x, |_, y| -y * y)
    }

    pub fn square(self) -> Var<'t, T> {
        self.map_with_grad(|x| x * x, |x, _| T::lit(2.0) * x)
    }

    /// `max(self, floor)`; gradient passes only where `self > floor`.
    pub fn clamp_min(self, floor: T) -> Var<'t, T> {
        self.map_with_grad(
            move |x| x.max(floor),
            move |x, _| if x > floor { T::one() } else { T::zero() },
        )
    }
}
