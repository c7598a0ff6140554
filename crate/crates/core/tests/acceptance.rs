//! Acceptance run: one PASS/FAIL line per criterion; exits nonzero if any fail.

use std::time::{Duration, Instant};

use depthnet::data::container::{decode, encode, Entry, TensorData};
use depthnet::data::generate_dataset;
use depthnet::gbpm::{bin_centers, bin_centers_var, BinSpec, Gbpm};
use depthnet::glkam::Glkam;
use depthnet::gradcheck::GRAD_TOL;
use depthnet::model::{predict_depth, DepthNet, ModelConfig};
use depthnet::objective::{compute_metrics, silog_loss, Mask, MetricReport, SilogParams};
use depthnet::param::{ParamBuilder, ParamStore};
use depthnet::probe::{ablation_matrix, erf_extents, format_erf, gradient_suite, SuiteDims};
use depthnet::train::{evaluate, TrainConfig, Trainer};
use depthnet::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn random_widths(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let reports = match gradient_suite(SuiteDims::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("suite error: {e}")),
    };
    let elapsed = t0.elapsed();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("non-empty suite");
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed(GRAD_TOL)).map(|r| r.name.as_str()).collect();
    outcome(
        failed.is_empty() && elapsed <= Duration::from_secs(120),
        format!(
            "{} checks, max rel. err {:.2e} ({}), {:.1}s, failed {:?}",
            reports.len(),
            worst.max_rel_err,
            worst.name,
            elapsed.as_secs_f64(),
            failed
        ),
    )
}

fn bin_center_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut max_err = 0.0f64;
    let mut ordered = true;
    let mut cases = 0;
    for &n in &[2usize, 32, 256] {
        for _ in 0..100 {
            let w = random_widths(n, &mut rng);
            let lo = rng.random_range(1e-3..1.0);
            let hi = lo + rng.random_range(1.0..80.0);
            let centers = bin_centers(&w, lo, hi).expect("valid widths");
            let tape = Tape::<f64>::empty();
            let via_tape = bin_centers_var(tape.leaf(Tensor::new(vec![n], w.clone()).unwrap()), lo, hi)
                .unwrap()
                .to_tensor();
            for i in 0..n {
                let before: f64 = (0..i).map(|j| w[j]).sum();
                let direct = lo + (hi - lo) * (w[i] / 2.0 + before);
                max_err = max_err.max((centers[i] - direct).abs()).max((via_tape.data()[i] - direct).abs());
            }
            ordered &= centers.windows(2).all(|p| p[0] < p[1]) && centers[0] > lo && centers[n - 1] < hi;
            cases += 1;
        }
    }
    outcome(
        max_err <= 1e-7 && ordered,
        format!("{cases} width vectors, max |err| {max_err:.2e}, increasing and inside range: {ordered}"),
    )
}

fn expectation_containment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut contained = true;
    let mut onehot_exact = true;
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let spec = BinSpec::new(random_widths(n, &mut rng), 1e-3, 10.0).unwrap();
        let c = spec.centers();
        let tape = Tape::<f64>::empty();
        let centers = tape.leaf(spec.centers_tensor());
        let logits = Tensor::uniform(vec![n, h, w], -6.0, 6.0, &mut rng);
        let p = tape.leaf(logits).softmax(0).unwrap();
        let d = predict_depth(p, centers, (4 * h, 4 * w)).unwrap().to_tensor();
        contained &= d.data().iter().all(|&v| v >= c[0] && v <= c[n - 1]);
        let k = rng.random_range(0..n);
        let mut onehot = Tensor::zeros(vec![n, h, w]);
        for px in 0..h * w {
            onehot.data_mut()[k * h * w + px] = 1.0;
        }
        let d = predict_depth(tape.leaf(onehot), centers, (4 * h, 4 * w)).unwrap().to_tensor();
        onehot_exact &= d.data().iter().all(|&v| v == c[k]);
    }
    outcome(
        contained && onehot_exact,
        format!("100 volumes: inside [c_1, c_n]: {contained}, one-hot reproduces center: {onehot_exact}"),
    )
}

fn convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::<f64>::new();
    let mut init = ChaCha8Rng::seed_from_u64(14);
    let mut pb = ParamBuilder::new(&mut store, &mut init);
    let glkam = Glkam::new(&mut pb, "glkam", 6).unwrap();
    let gbpm = Gbpm::new(&mut pb, "gbpm", 6, 8).unwrap();
    let (mut glkam_ok, mut gbpm_ok) = (true, true);
    for _ in 0..100 {
        let tape = Tape::inference(&store);
        let x = tape.leaf(Tensor::uniform(vec![6, 8, 8], -2.0, 2.0, &mut rng));
        let fm = glkam.branch_feature(x).unwrap();
        let out = glkam.fuse(x, fm).unwrap().to_tensor();
        let (xv, fv) = (x.value(), fm.value());
        glkam_ok &= out
            .data()
            .iter()
            .zip(xv.data().iter().zip(fv.data()))
            .all(|(&o, (&a, &b))| o >= a.min(b) && o <= a.max(b));
        let fa = Tensor::uniform(vec![6], -2.0, 2.0, &mut rng);
        let fb = Tensor::uniform(vec![6], -2.0, 2.0, &mut rng);
        let fused = gbpm.gated_fuse(tape.leaf(fa.clone()), tape.leaf(fb.clone())).unwrap().to_tensor();
        gbpm_ok &= fused
            .data()
            .iter()
            .zip(fa.data().iter().zip(fb.data()))
            .all(|(&o, (&a, &b))| o >= a.min(b) && o <= a.max(b));
    }
    outcome(glkam_ok && gbpm_ok, format!("100 inputs: GLKAM fuse {glkam_ok}, GBPM fuse {gbpm_ok}"))
}

fn receptive_fields() -> Outcome {
    match erf_extents() {
        Ok(e) => outcome(e == [11, 23, 39], format_erf(&e)),
        Err(err) => outcome(false, err.to_string()),
    }
}

fn silog_value(pred: &[f64], gt: &[f64]) -> f64 {
    let tape = Tape::<f64>::empty();
    let n = pred.len();
    let p = tape.leaf(Tensor::new(vec![1, 1, n], pred.to_vec()).unwrap());
    let g = Tensor::new(vec![1, 1, n], gt.to_vec()).unwrap();
    silog_loss(p, &g, &Mask::all(1, n), SilogParams::default()).unwrap().value().item()
}

fn silog_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let gt: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..10.0)).collect();
    let zero = silog_value(&gt, &gt);
    let mut scale_err = 0.0f64;
    for s in [0.5f64, 2.0] {
        let pred: Vec<f64> = gt.iter().map(|g| s * g).collect();
        let expect = 10.0 * s.ln().abs() * 0.15f64.sqrt();
        scale_err = scale_err.max((silog_value(&pred, &gt) - expect).abs());
    }
    let hand = silog_value(&[1.0, 1.0], &[1.0, std::f64::consts::E]);
    outcome(
        zero <= 1e-5 && scale_err <= 1e-4 && (hand - 5.3619).abs() <= 1e-3,
        format!("perfect {zero:.1e}, misscale max |err| {scale_err:.1e}, hand case {hand:.5}"),
    )
}

fn oracle_metrics(pred: &[f64], gt: &[f64], w: usize) -> [f64; 7] {
    let h = pred.len() / w;
    let mut acc = [0.0; 7];
    let mut n = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (p, g) = (pred[y * w + x], gt[y * w + x]);
            n += 1.0;
            acc[0] += (p - g).abs() / g;
            acc[1] += (p - g) * (p - g);
            acc[2] += (p.log10() - g.log10()).abs();
            acc[3] += (p - g) * (p - g) / g;
            let r = if p / g > g / p { p / g } else { g / p };
            acc[4] += (r < 1.25) as u8 as f64;
            acc[5] += (r < 1.25 * 1.25) as u8 as f64;
            acc[6] += (r < 1.25 * 1.25 * 1.25) as u8 as f64;
        }
    }
    [acc[0] / n, (acc[1] / n).sqrt(), acc[2] / n, acc[3] / n, acc[4] / n, acc[5] / n, acc[6] / n]
}

fn as_array(r: &MetricReport) -> [f64; 7] {
    [r.abs_rel, r.rmse, r.log10, r.sq_rel, r.delta1, r.delta2, r.delta3]
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut max_err = 0.0f64;
    for _ in 0..50 {
        let gt: Vec<f64> = (0..256).map(|_| rng.random_range(0.1..10.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g * rng.random_range(0.5..2.0)).collect();
        let r = compute_metrics(
            &Tensor::new(vec![1, 16, 16], pred.clone()).unwrap(),
            &Tensor::new(vec![1, 16, 16], gt.clone()).unwrap(),
            &Mask::all(16, 16),
        )
        .unwrap();
        for (a, b) in as_array(&r).iter().zip(oracle_metrics(&pred, &gt, 16)) {
            max_err = max_err.max((a - b).abs());
        }
    }
    let single = |p: f64| {
        compute_metrics(
            &Tensor::scalar(p).reshape(vec![1, 1, 1]).unwrap(),
            &Tensor::scalar(1.0).reshape(vec![1, 1, 1]).unwrap(),
            &Mask::all(1, 1),
        )
        .unwrap()
    };
    let a = single(2.0);
    let b = single(1.2);
    let hand_a = (a.abs_rel - 1.0).abs() < 1e-12
        && (a.rmse - 1.0).abs() < 1e-12
        && (a.sq_rel - 1.0).abs() < 1e-12
        && (a.log10 - std::f64::consts::LOG10_2).abs() < 1e-12
        && a.delta1 == 0.0
        && a.delta2 == 0.0
        && a.delta3 == 0.0;
    let hand_b = (b.abs_rel - 0.2).abs() < 1e-12 && b.delta1 == 1.0;
    outcome(
        max_err <= 1e-6 && hand_a && hand_b,
        format!("50 map pairs max |err| {max_err:.1e}; hand case (2,1) {hand_a}, (1.2,1) {hand_b}"),
    )
}

fn overfit() -> Outcome {
    let t0 = Instant::now();
    let base = ModelConfig::default().fit_to_input(64, 64);
    let scenes = match generate_dataset::<f32>(0, 8, 64, 64, base.d_min, base.d_max) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let train = TrainConfig {
        steps: 1000,
        augment: None,
        ..TrainConfig::default()
    };
    let run = |glkam: bool, gbpm: bool| -> depthnet::Result<MetricReport> {
        let cfg = ModelConfig {
            use_glkam: glkam,
            use_gbpm: gbpm,
            ..base.clone()
        };
        let mut trainer = Trainer::new(DepthNet::<f32>::new(cfg)?, train.clone());
        trainer.run(&scenes, |_| {})?;
        evaluate(&trainer.model, &scenes, false)
    };
    let on = run(true, true);
    let t_on = t0.elapsed();
    let off = run(false, false);
    let elapsed = t0.elapsed();
    match (on, off) {
        (Ok(on), Ok(off)) => outcome(
            on.delta1 >= 0.90 && on.abs_rel <= 0.10 && elapsed <= Duration::from_secs(900),
            format!(
                "both on: delta1 {:.4} abs_rel {:.4} rmse {:.4} ({:.0}s); both off: delta1 {:.4} abs_rel {:.4}; total {:.0}s",
                on.delta1,
                on.abs_rel,
                on.rmse,
                t_on.as_secs_f64(),
                off.delta1,
                off.abs_rel,
                elapsed.as_secs_f64()
            ),
        ),
        (a, b) => outcome(false, format!("run failed: {:?} / {:?}", a.err(), b.err())),
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let train_once = |path: &std::path::Path| -> depthnet::Result<Vec<u8>> {
        let cfg = ModelConfig {
            base_channels: 8,
            n_bins: 16,
            seed: 7,
            ..ModelConfig::default()
        }
        .fit_to_input(32, 32);
        let scenes = generate_dataset::<f32>(7, 3, 32, 32, cfg.d_min, cfg.d_max)?;
        let train = TrainConfig {
            steps: 4,
            seed: 7,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(DepthNet::<f32>::new(cfg)?, train);
        trainer.run(&scenes, |_| {})?;
        trainer.model.save(path)?;
        Ok(std::fs::read(path).expect("checkpoint written"))
    };
    let a = train_once(&dir.path().join("a.dten"));
    let b = train_once(&dir.path().join("b.dten"));
    let same_checkpoint = matches!((&a, &b), (Ok(x), Ok(y)) if x == y);

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let entries = vec![
        Entry::new("f32", TensorData::F32(Tensor::uniform(vec![3, 5, 7], -1e6, 1e6, &mut rng))),
        Entry::new("f64", TensorData::F64(Tensor::uniform(vec![11], -1e-300, 1e300, &mut rng))),
        Entry::new("nan", TensorData::F32(Tensor::new(vec![2], vec![f32::NAN, -0.0]).unwrap())),
    ];
    let bytes = encode(&entries).unwrap();
    let back = decode(&bytes).unwrap();
    let round_trip = back.len() == entries.len()
        && entries.iter().zip(&back).all(|(x, y)| x.name == y.name && x.data.bit_eq(&y.data))
        && encode(&back).unwrap() == bytes;
    outcome(
        same_checkpoint && round_trip,
        format!(
            "identical checkpoints: {same_checkpoint} ({} bytes), container round trip bit-exact: {round_trip}",
            a.as_ref().map_or(0, |v| v.len())
        ),
    )
}

fn ablation() -> Outcome {
    let base = ModelConfig::default();
    match ablation_matrix::<f32>(&base, 64, 0) {
        Ok(rows) => {
            let ok = rows.len() == 4 && rows.iter().all(|r| r.is_valid(base.d_min, base.d_max));
            let detail = rows
                .iter()
                .map(|r| format!("{} [{:.3}, {:.3}]", r.label(), r.depth_min, r.depth_max))
                .collect::<Vec<_>>()
                .join(", ");
            outcome(ok, detail)
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient suite", gradient_checks),
        ("bin center oracle", bin_center_oracle),
        ("expectation containment", expectation_containment),
        ("gated fusion convexity", convexity),
        ("effective receptive field", receptive_fields),
        ("silog properties", silog_properties),
        ("metric oracle", metric_oracle),
        ("synthetic overfit", overfit),
        ("determinism", determinism),
        ("ablation matrix", ablation),
    ];
    // Optional substring filters, e.g. `cargo test --test acceptance -- silog`.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let o = f();
        if !o.passed {
            failures += 1;
        }
        println!("{} {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {ran} criteria passed", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
