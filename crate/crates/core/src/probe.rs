//! Verification probes: finite-difference gradient suite, impulse-response
//! extents, bin layout checks, and the module ablation matrix.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::generate_scene;
use crate::gbpm::{bin_centers_var, normalize_widths, BinSpec, Gbpm, WidthNorm};
use crate::glkam::{Glkam, LkaBranch, Mlka, LKA_GROUPS};
use crate::gradcheck::{check, GradCheckOptions, GradCheckReport};
use crate::model::{predict_depth, DepthNet, ModelConfig, Ppm, UpStage};
use crate::nn::{Conv2d, Conv2dSpec, LayerNorm, PoolKind};
use crate::objective::{compute_metrics, silog_loss, Mask, MetricReport, SilogParams};
use crate::param::{ParamBuilder, ParamStore};
use crate::train::TrainConfig;
use crate::{Error, ParamGrads, Result, Scalar, Tape, Tensor, Var};

/// Bounding-box side of the nonzero region of a `1×H×W` response.
pub fn support_extent<T: Scalar>(response: &Tensor<T>) -> (usize, usize) {
    let (h, w) = (response.shape()[1], response.shape()[2]);
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..h {
        for x in 0..w {
            if response.data()[y * w + x] != T::zero() {
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    if y0 == usize::MAX {
        (0, 0)
    } else {
        (y1 - y0 + 1, x1 - x0 + 1)
    }
}

fn impulse(size: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(vec![1, size, size]);
    t.set(&[0, size / 2, size / 2], 1.0);
    t
}

/// Support of one depth-wise `k×k` filter at dilation `d` with all-positive weights.
pub fn depthwise_support(kernel: usize, dilation: usize) -> Result<(usize, usize)> {
    let spec = Conv2dSpec::depthwise(1, kernel, dilation);
    let size = spec.extent() + 4;
    let tape = Tape::<f64>::empty();
    let w = tape.leaf(Tensor::ones(spec.weight_shape().to_vec()));
    let y = tape.leaf(impulse(size)).conv2d(w, None, &spec)?;
    Ok(support_extent(&y.to_tensor()))
}

/// Impulse-response extent of each LKA cascade, gates excluded, with
/// all-positive weights so no tap can cancel.
pub fn erf_extents() -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for (i, group) in LKA_GROUPS.iter().enumerate() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let branch = LkaBranch::new(&mut ParamBuilder::new(&mut store, &mut rng), "lka", *group, 1)?;
        for id in store.ids().collect::<Vec<_>>() {
            let positive = store.value(id).map(|_| 1.0);
            let is_bias = store.get(id).name.ends_with(".b");
            store.set(id, if is_bias { positive.map(|_| 0.0) } else { positive })?;
        }
        let size = group.receptive_extent() + 8;
        let tape = Tape::inference(&store);
        let y = branch.attention(tape.leaf(impulse(size)))?;
        let (eh, ew) = support_extent(&y.to_tensor());
        if eh != ew {
            return Err(Error::invalid("erf", format!("group{i}: anisotropic support {eh}×{ew}")));
        }
        out[i] = eh;
    }
    Ok(out)
}

pub fn format_erf(extents: &[usize; 3]) -> String {
    extents
        .iter()
        .enumerate()
        .map(|(i, e)| format!("group{i}: {e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

/// Random values bounded away from `[−margin, margin]`, for ops with a kink at 0.
fn away_from_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    rand_tensor(shape, margin, 1.0, rng).map_with_sign(rng)
}

trait RandomSign {
    fn map_with_sign(self, rng: &mut ChaCha8Rng) -> Self;
}

impl RandomSign for Tensor<f64> {
    fn map_with_sign(mut self, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        for v in self.data_mut() {
            if rng.random_bool(0.5) {
                *v = -*v;
            }
        }
        self
    }
}

/// Dimensions used by [`gradient_suite`].
#[derive(Clone, Copy, Debug)]
pub struct SuiteDims {
    /// Channels for op and module checks.
    pub channels: usize,
    pub size: usize,
    pub n_bins: usize,
    /// Base channels of the assembled model (a multiple of 4).
    pub model_channels: usize,
    pub seed: u64,
}

impl Default for SuiteDims {
    fn default() -> Self {
        SuiteDims {
            channels: 6,
            size: 8,
            n_bins: 8,
            model_channels: 4,
            seed: 0,
        }
    }
}

fn module_store<M>(seed: u64, build: impl FnOnce(&mut ParamBuilder<'_, f64>) -> Result<M>) -> Result<(ParamStore<f64>, M)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = build(&mut ParamBuilder::new(&mut store, &mut rng))?;
    Ok((store, m))
}

/// Moves every parameter off exact zero so biases sit at generic points.
fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11);
    for id in store.ids().collect::<Vec<_>>() {
        let noise = Tensor::<f64>::uniform(store.value(id).shape().to_vec(), -0.1, 0.1, &mut rng);
        for (v, n) in store.value_mut(id).data_mut().iter_mut().zip(noise.data()) {
            *v += n;
        }
    }
}

/// Finite-difference checks of every differentiable op and module, in f64.
pub fn gradient_suite(dims: SuiteDims) -> Result<Vec<GradCheckReport>> {
    let SuiteDims {
        channels: c,
        size: s,
        n_bins: nb,
        seed,
        ..
    } = dims;
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let none = ParamStore::<f64>::new();
    let map = [c, s, s];
    let mut reports = Vec::new();
    let mut run = |name: &str,
                   store: &ParamStore<f64>,
                   inputs: Vec<Tensor<f64>>,
                   f: &dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>|
     -> Result<()> {
        reports.push(check(name, store, &inputs, f, opts)?);
        Ok(())
    };

    let x = rand_tensor(&map, -1.0, 1.0, &mut rng);
    let y = rand_tensor(&map, -1.0, 1.0, &mut rng);
    let pos = rand_tensor(&map, 0.2, 2.0, &mut rng);
    let col = rand_tensor(&[c, 1, 1], -1.0, 1.0, &mut rng);
    run("add", &none, vec![x.clone(), y.clone()], &|_, v| v[0].add(v[1]))?;
    run("sub", &none, vec![x.clone(), y.clone()], &|_, v| v[0].sub(v[1]))?;
    run("mul", &none, vec![x.clone(), y.clone()], &|_, v| v[0].mul(v[1]))?;
    run("mul_broadcast", &none, vec![x.clone(), col.clone()], &|_, v| v[0].mul(v[1]))?;
    run("affine", &none, vec![x.clone()], &|_, v| Ok(v[0].affine(-1.5, 0.25)))?;
    run("one_minus", &none, vec![x.clone()], &|_, v| Ok(v[0].one_minus()))?;
    run("sigmoid", &none, vec![x.clone()], &|_, v| Ok(v[0].sigmoid()))?;
    run("gelu", &none, vec![x.clone()], &|_, v| Ok(v[0].gelu()))?;
    run("relu", &none, vec![away_from_zero(&map, 0.05, &mut rng)], &|_, v| Ok(v[0].relu()))?;
    run("softplus", &none, vec![x.clone()], &|_, v| Ok(v[0].softplus()))?;
    run("exp", &none, vec![x.clone()], &|_, v| Ok(v[0].exp()))?;
    run("ln", &none, vec![pos.clone()], &|_, v| Ok(v[0].ln()))?;
    run("sqrt", &none, vec![pos.clone()], &|_, v| Ok(v[0].sqrt()))?;
    run("recip", &none, vec![pos.clone()], &|_, v| Ok(v[0].recip()))?;
    run("square", &none, vec![x.clone()], &|_, v| Ok(v[0].square()))?;
    run("clamp_min", &none, vec![away_from_zero(&map, 0.05, &mut rng)], &|_, v| Ok(v[0].clamp_min(0.0)))?;
    run("sum", &none, vec![x.clone()], &|_, v| Ok(v[0].square().sum()))?;
    run("mean", &none, vec![x.clone()], &|_, v| Ok(v[0].square().mean()))?;
    run("sum_axis", &none, vec![x.clone()], &|_, v| v[0].sum_axis(0))?;
    run("softmax", &none, vec![x.clone()], &|_, v| v[0].softmax(0))?;
    run("cumsum", &none, vec![rand_tensor(&[nb], -1.0, 1.0, &mut rng)], &|_, v| v[0].cumsum())?;
    let idx = Arc::new(vec![3, 0, 7, 7, 2]);
    run("gather", &none, vec![x.clone()], &move |_, v| v[0].gather(Arc::clone(&idx)))?;
    run("reshape", &none, vec![x.clone()], &|_, v| v[0].reshape(vec![c * s, s]))?;
    run("concat", &none, vec![x.clone(), col.clone().reshape(vec![c, 1, 1])?.map(|v| v * 2.0)], &|_, v| {
        Var::concat(&[v[0], v[0].mul(v[1])?])
    })?;
    run("narrow", &none, vec![x.clone()], &|_, v| v[0].narrow(1, c - 2))?;
    run("channel_split", &none, vec![x.clone()], &|_, v| {
        let parts = v[0].split(3)?;
        parts[0].mul(parts[1])?.add(parts[2])
    })?;
    run("hflip", &none, vec![x.clone()], &|_, v| v[0].hflip())?;

    let conv_cases = [
        ("conv_dense_3x3", Conv2dSpec::dense(c, 4, 3)),
        ("conv_stride2", Conv2dSpec::dense(c, 4, 3).with_stride(2)),
        ("conv_pointwise", Conv2dSpec::pointwise(c, 5)),
        ("conv_depthwise_5x5_d2", Conv2dSpec::depthwise(c, 5, 2)),
        ("conv_depthwise_9x9_d4", Conv2dSpec::depthwise(c, 9, 4)),
        (
            "conv_dilated_dense",
            Conv2dSpec {
                dilation: 2,
                ..Conv2dSpec::dense(c, 3, 3)
            },
        ),
    ];
    for (name, spec) in conv_cases {
        let w = rand_tensor(&spec.weight_shape(), -0.5, 0.5, &mut rng);
        let b = rand_tensor(&[spec.out_channels], -0.5, 0.5, &mut rng);
        run(name, &none, vec![x.clone(), w, b], &move |_, v| v[0].conv2d(v[1], Some(v[2]), &spec))?;
    }
    run("linear_vector", &none, vec![
        rand_tensor(&[c], -1.0, 1.0, &mut rng),
        rand_tensor(&[3, c], -1.0, 1.0, &mut rng),
        rand_tensor(&[3], -1.0, 1.0, &mut rng),
    ], &|_, v| v[0].linear(v[1], Some(v[2])))?;
    run("linear_pointwise", &none, vec![
        x.clone(),
        rand_tensor(&[3, c], -1.0, 1.0, &mut rng),
        rand_tensor(&[3], -1.0, 1.0, &mut rng),
    ], &|_, v| v[0].linear(v[1], Some(v[2])))?;
    run("layer_norm", &none, vec![
        x.clone(),
        rand_tensor(&[c], 0.5, 1.5, &mut rng),
        rand_tensor(&[c], -0.5, 0.5, &mut rng),
    ], &|_, v| v[0].layer_norm(v[1], v[2], 1e-5))?;
    run("pool_avg", &none, vec![x.clone()], &|_, v| v[0].pool2d(PoolKind::Avg, 3))?;
    run("pool_max", &none, vec![x.clone()], &|_, v| v[0].pool2d(PoolKind::Max, 2))?;
    let four = rand_tensor(&[8, 3, 3], -1.0, 1.0, &mut rng);
    run("pixel_shuffle", &none, vec![four], &|_, v| v[0].pixel_shuffle())?;
    run("pixel_unshuffle", &none, vec![x.clone()], &|_, v| v[0].pixel_unshuffle())?;
    run("resize_bilinear_up", &none, vec![x.clone()], &|_, v| v[0].resize_bilinear(2 * s + 3, 2 * s))?;
    run("resize_bilinear_down", &none, vec![x.clone()], &|_, v| v[0].resize_bilinear(s / 2, 3))?;

    let gt = Tensor::from_fn(vec![1, s, s], |i| 0.5 + (i % 7) as f64 * 0.3);
    let mask = Mask::new(s, s, (0..s * s).map(|i| i % 5 != 0).collect())?;
    run("silog", &none, vec![rand_tensor(&[1, s, s], 0.3, 3.0, &mut rng)], &move |_, v| {
        silog_loss(v[0], &gt, &mask, SilogParams::default())
    })?;
    run("normalize_widths_softplus", &none, vec![rand_tensor(&[nb], -2.0, 2.0, &mut rng)], &|_, v| {
        normalize_widths(v[0], WidthNorm::default())
    })?;
    run("normalize_widths_softmax", &none, vec![rand_tensor(&[nb], -2.0, 2.0, &mut rng)], &|_, v| {
        normalize_widths(v[0], WidthNorm::Softmax)
    })?;
    run("bin_centers", &none, vec![rand_tensor(&[nb], -2.0, 2.0, &mut rng)], &|_, v| {
        bin_centers_var(normalize_widths(v[0], WidthNorm::default())?, 1e-3, 10.0)
    })?;
    run("predict_depth", &none, vec![
        rand_tensor(&[nb, s / 2, s / 2], -1.0, 1.0, &mut rng),
        rand_tensor(&[nb], -1.0, 1.0, &mut rng),
    ], &|_, v| {
        let centers = bin_centers_var(normalize_widths(v[1], WidthNorm::default())?, 1e-3, 10.0)?;
        predict_depth(v[0].softmax(0)?, centers, (s, s))
    })?;

    // modules with their own parameters
    let (mut st, ln) = module_store(seed, |pb| LayerNorm::new(pb, "ln", c))?;
    jitter(&mut st, seed);
    run("layer_norm_module", &st, vec![x.clone()], &|_, v| ln.forward(v[0]))?;

    let per = 3 * c.div_ceil(3) / 3;
    let seg = rand_tensor(&[per, s, s], -1.0, 1.0, &mut rng);
    for (i, group) in LKA_GROUPS.iter().enumerate() {
        let (mut st, branch) = module_store(seed, |pb| LkaBranch::new(pb, "lka", *group, per))?;
        jitter(&mut st, seed);
        run(&format!("lka_branch{i}"), &st, vec![seg.clone()], &|_, v| branch.forward(v[0]))?;
    }
    let (mut st, mlka) = module_store(seed, |pb| Mlka::new(pb, "mlka", c))?;
    jitter(&mut st, seed);
    run("mlka", &st, vec![x.clone()], &|_, v| mlka.forward(v[0]))?;
    let (mut st, glkam) = module_store(seed, |pb| Glkam::new(pb, "glkam", c))?;
    jitter(&mut st, seed);
    run("mlka_branch_feature", &st, vec![x.clone()], &|_, v| glkam.branch_feature(v[0]))?;
    run("glkam", &st, vec![x.clone()], &|_, v| glkam.forward(v[0]))?;

    let (mut st, gbpm) = module_store(seed, |pb| Gbpm::new(pb, "gbpm", c, nb))?;
    jitter(&mut st, seed);
    run("gbpm_fuse", &st, vec![
        rand_tensor(&[c], -1.0, 1.0, &mut rng),
        rand_tensor(&[c], -1.0, 1.0, &mut rng),
    ], &|_, v| gbpm.gated_fuse(v[0], v[1]))?;
    run("gbpm", &st, vec![x.clone()], &|_, v| Ok(gbpm.forward(v[0], 1e-3, 10.0)?.1))?;

    let (mut st, ppm) = module_store(seed, |pb| Ppm::new(pb, "ppm", 8, &[1, 2, 3]))?;
    jitter(&mut st, seed);
    run("ppm", &st, vec![rand_tensor(&[8, 4, 4], -1.0, 1.0, &mut rng)], &|_, v| ppm.forward(v[0]))?;

    let (mut st, up) = module_store(seed, |pb| UpStage::new(pb, "up", 2 * c, c))?;
    jitter(&mut st, seed);
    run("decoder_stage", &st, vec![
        rand_tensor(&[c, s / 2, s / 2], -1.0, 1.0, &mut rng),
        rand_tensor(&[c, s / 2, s / 2], -1.0, 1.0, &mut rng),
    ], &|_, v| up.forward(v[0], v[1]))?;

    let (mut st, head) = module_store(seed, |pb| Conv2d::new(pb, "head", Conv2dSpec::pointwise(c, nb), true))?;
    jitter(&mut st, seed);
    run("depth_probabilities", &st, vec![x.clone()], &|_, v| crate::model::depth_probabilities(v[0], &head))?;

    for (glkam_on, gbpm_on) in [(true, true), (false, false)] {
        let model = tiny_model(dims, glkam_on, gbpm_on)?;
        let sample = generate_scene::<f64>(seed, 32, 32, model.config.d_min, model.config.d_max)?;
        let name = format!("full_model_glkam_{}_gbpm_{}", on_off(glkam_on), on_off(gbpm_on));
        run(&name, &model.params, vec![], &|t, _| model.forward_loss(t, &sample, SilogParams::default()))?;
    }
    Ok(reports)
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Smallest assembled model: 32×32 input, parameters jittered off zero.
fn tiny_model(dims: SuiteDims, use_glkam: bool, use_gbpm: bool) -> Result<DepthNet<f64>> {
    let cfg = ModelConfig {
        base_channels: dims.model_channels,
        n_bins: dims.n_bins,
        use_glkam,
        use_gbpm,
        seed: dims.seed,
        ..ModelConfig::default()
    }
    .fit_to_input(32, 32);
    let mut model = DepthNet::new(cfg)?;
    jitter(&mut model.params, dims.seed);
    Ok(model)
}

/// Bin layout of a model for one image, after checking its invariants.
pub fn bins_probe<T: Scalar>(model: &DepthNet<T>, rgb: &Tensor<T>) -> Result<BinSpec<T>> {
    let spec = model.bin_spec(rgb)?;
    let (lo, hi) = (T::lit(model.config.d_min), T::lit(model.config.d_max));
    let c = spec.centers();
    if c.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("probe bins", "centers not strictly increasing"));
    }
    if c.iter().any(|&v| !(v > lo && v < hi)) {
        return Err(Error::invalid("probe bins", "center outside (d_min, d_max)"));
    }
    Ok(spec)
}

/// Zeros the last layer of the bin-width MLP so that all logits vanish.
pub fn zero_width_head<T: Scalar>(model: &mut DepthNet<T>) -> Result<()> {
    let last = match &model.layers.gbpm {
        Some(g) => g.width.last().clone(),
        None => return Err(Error::invalid("probe bins", "model has no bin prediction module")),
    };
    for id in [last.weight, last.bias] {
        let zeros = Tensor::zeros(model.params.value(id).shape().to_vec());
        model.params.set(id, zeros)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub use_glkam: bool,
    pub use_gbpm: bool,
    pub loss: f64,
    pub grad_norm: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    pub metrics: MetricReport,
}

impl AblationResult {
    pub fn label(&self) -> String {
        match (self.use_glkam, self.use_gbpm) {
            (false, false) => "baseline".into(),
            (true, false) => "+glkam".into(),
            (false, true) => "+gbpm".into(),
            (true, true) => "glkam+gbpm".into(),
        }
    }

    /// Depth strictly inside the configured range and finite gradients.
    pub fn is_valid(&self, d_min: f64, d_max: f64) -> bool {
        self.depth_min > d_min && self.depth_max < d_max && self.grad_norm.is_finite() && self.loss.is_finite()
    }
}

/// Forward, backward, one update, and evaluation for all four toggles.
pub fn ablation_matrix<T: Scalar>(base: &ModelConfig, size: usize, seed: u64) -> Result<Vec<AblationResult>> {
    let sample = generate_scene::<T>(seed, size, size, base.d_min, base.d_max)?;
    let train = TrainConfig::default();
    let mut out = Vec::new();
    for (use_glkam, use_gbpm) in [(false, false), (true, false), (false, true), (true, true)] {
        let cfg = ModelConfig {
            use_glkam,
            use_gbpm,
            ..base.clone()
        }
        .fit_to_input(size, size);
        let mut model = DepthNet::<T>::new(cfg)?;
        let tape = Tape::new(&model.params);
        let loss = model.forward_loss(&tape, &sample, train.silog)?;
        let mut grads = ParamGrads::zeros_like(&model.params);
        grads.accumulate(&tape.backward(loss)?);
        let loss = loss.value().item().as_f64();
        drop(tape);
        let mut adam = crate::optim::Adam::new(&model.params, train.adam);
        adam.step(&mut model.params, &grads, train.lr_start)?;
        let pred = crate::model::DepthPredictor::predict(&model, &sample.rgb)?;
        let depth_min = pred.data().iter().map(|v| v.as_f64()).fold(f64::INFINITY, f64::min);
        let depth_max = pred.data().iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        out.push(AblationResult {
            use_glkam,
            use_gbpm,
            loss,
            grad_norm: grads.norm().as_f64(),
            depth_min,
            depth_max,
            metrics: compute_metrics(&pred, &sample.depth, &sample.mask)?,
        });
    }
    Ok(out)
}
