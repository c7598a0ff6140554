//! Central finite-difference checks of reverse-mode gradients, in f64.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::param::ParamStore;
use crate::{Result, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
/// Denominator floor for relative error; below it the error is effectively absolute.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per input or parameter tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: FD_STEP,
            max_coords: 24,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Location of the worst coordinate, e.g. `input0[3]` or `mlka.exit.weight[7]`.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err <= tol && self.max_rel_err.is_finite()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `d loss / d x` for every input and sampled parameter coordinates.
///
/// Non-scalar outputs are reduced with fixed random weights so that every
/// output element contributes.
pub fn check<F>(name: &str, store: &ParamStore<f64>, inputs: &[Tensor<f64>], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut weights: Option<Tensor<f64>> = None;

    let mut scalar_loss = |store: &ParamStore<f64>, inputs: &[Tensor<f64>], record: bool| -> Result<(f64, Option<(Vec<Vec<f64>>, Vec<Option<Vec<f64>>>)>)> {
        let tape = if record { Tape::new(store) } else { Tape::inference(store) };
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let loss = if out.shape().is_empty() {
            out
        } else {
            let w = weights.get_or_insert_with(|| {
                let mut r = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
                Tensor::uniform(out.shape(), -1.0, 1.0, &mut r)
            });
            out.mul(tape.leaf(w.clone()))?.sum()
        };
        let value = loss.value().item();
        if !record {
            return Ok((value, None));
        }
        let grads = tape.backward(loss)?;
        let gi = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        let gp = store.ids().map(|id| grads.param(id).map(<[f64]>::to_vec)).collect();
        Ok((value, Some((gi, gp))))
    };

    let (_, grads) = scalar_loss(store, inputs, true)?;
    let (grad_inputs, grad_params) = grads.expect("recorded");
    let h = opts.step;
    let mut report = GradCheckReport {
        name: name.to_owned(),
        max_rel_err: 0.0,
        checked: 0,
        worst: String::new(),
    };
    let record = |report: &mut GradCheckReport, label: String, a: f64, n: f64| {
        let e = relative_error(a, n);
        report.checked += 1;
        if !(e <= report.max_rel_err) {
            report.max_rel_err = e;
            report.worst = label;
        }
    };

    for (k, t) in inputs.iter().enumerate() {
        for i in coords(t.numel(), opts.max_coords, &mut rng) {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] += h;
            let (up, _) = scalar_loss(store, &shifted, false)?;
            shifted[k].data_mut()[i] -= 2.0 * h;
            let (down, _) = scalar_loss(store, &shifted, false)?;
            record(&mut report, format!("input{k}[{i}]"), grad_inputs[k][i], (up - down) / (2.0 * h));
        }
    }
    let ids: Vec<_> = store.ids().collect();
    for (k, &id) in ids.iter().enumerate() {
        let numel = store.value(id).numel();
        for i in coords(numel, opts.max_coords, &mut rng) {
            let mut s = store.clone();
            s.value_mut(id).data_mut()[i] += h;
            let (up, _) = scalar_loss(&s, inputs, false)?;
            s.value_mut(id).data_mut()[i] -= 2.0 * h;
            let (down, _) = scalar_loss(&s, inputs, false)?;
            let a = grad_params[k].as_ref().map_or(0.0, |g| g[i]);
            record(&mut report, format!("{}[{i}]", store.get(id).name), a, (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

fn coords(n: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, max).into_vec();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let x = Tensor::from_f64(vec![4], &[0.3, -1.2, 2.0, 0.7]).unwrap();
        let store = ParamStore::new();
        let ok = check("sq", &store, std::slice::from_ref(&x), |_, v| Ok(v[0].square().sum()), GradCheckOptions::default()).unwrap();
        assert!(ok.passed(GRAD_TOL), "{ok:?}");
        assert_eq!(ok.checked, 4);
        // stop-gradient via a fresh leaf breaks the chain: analytic grad is zero
        let broken = check(
            "detached",
            &store,
            &[x],
            |t, v| Ok(t.leaf(v[0].to_tensor()).square().sum()),
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!broken.passed(GRAD_TOL));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-9 / REL_FLOOR).abs() < 1e-15);
        assert!(relative_error(1e-9, 0.0) < GRAD_TOL);
        assert!(relative_error(1e-3, 0.0) > GRAD_TOL);
    }
}
