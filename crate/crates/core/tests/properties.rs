use std::sync::Arc;

use depthnet::data::container::{decode, encode, Entry, TensorData};
use depthnet::gbpm::{bin_centers, normalize_widths, BinSpec, Gbpm, WidthNorm};
use depthnet::glkam::Glkam;
use depthnet::model::predict_depth;
use depthnet::nn::{pool_bounds, PoolKind};
use depthnet::objective::{compute_metrics, silog_loss, Mask, SilogParams};
use depthnet::param::{ParamBuilder, ParamStore};
use depthnet::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn widths(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn positive_map(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..20.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-1e4f64..1e4, 2..40)) {
        let tape = Tape::<f64>::empty();
        let n = v.len();
        let p = tape.leaf(Tensor::new(vec![n, 1, 1], v).unwrap()).softmax(0).unwrap().to_tensor();
        let s: f64 = p.data().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-6);
        prop_assert!(p.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn normalized_widths_are_positive_and_sum_to_one(logits in prop::collection::vec(-30f64..30.0, 1..64)) {
        let tape = Tape::<f64>::empty();
        let n = logits.len();
        let w = normalize_widths(tape.leaf(Tensor::new(vec![n], logits).unwrap()), WidthNorm::default()).unwrap().to_tensor();
        prop_assert!((w.data().iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(w.data().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn centers_increase_inside_range_and_partition(w in widths(1..128), lo in 1e-3f64..5.0, span in 0.5f64..80.0) {
        let hi = lo + span;
        let spec = BinSpec::new(w.clone(), lo, hi).unwrap();
        let c = spec.centers();
        prop_assert!(c.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(c[0] > lo && c[c.len() - 1] < hi);
        // boundary between bins i and i+1 sits at d_min + span·Σ_{j≤i} w_j
        let edges = spec.edges();
        let mut acc = 0.0;
        for i in 0..w.len() - 1 {
            acc += w[i];
            let boundary = lo + span * acc;
            prop_assert!((edges[i + 1] - boundary).abs() <= 1e-9 * hi);
            let from_centers = c[i] + span * w[i] / 2.0;
            prop_assert!((from_centers - boundary).abs() <= 1e-9 * hi);
        }
    }

    #[test]
    fn predicted_depth_within_center_hull(seed in any::<u64>(), n in 2usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::<f64>::empty();
        let logits = Tensor::uniform(vec![n, 4, 4], -5.0, 5.0, &mut rng);
        let raw = Tensor::<f64>::uniform(vec![n], 0.1, 1.0, &mut rng);
        let s: f64 = raw.data().iter().sum();
        let w: Vec<f64> = raw.data().iter().map(|x| x / s).collect();
        let c = bin_centers(&w, 1e-3, 10.0).unwrap();
        let p = tape.leaf(logits).softmax(0).unwrap();
        let d = predict_depth(p, tape.leaf(Tensor::new(vec![n], c.clone()).unwrap()), (8, 8)).unwrap().to_tensor();
        prop_assert!(d.data().iter().all(|&x| x >= c[0] - 1e-12 && x <= c[n - 1] + 1e-12));
    }

    #[test]
    fn silog_is_nonnegative(pred in positive_map(16), gt in positive_map(16), lambda in 0.01f64..=1.0) {
        let tape = Tape::<f64>::empty();
        let p = tape.leaf(Tensor::new(vec![1, 4, 4], pred).unwrap());
        let g = Tensor::new(vec![1, 4, 4], gt).unwrap();
        let l = silog_loss(p, &g, &Mask::all(4, 4), SilogParams { lambda, alpha: 10.0 }).unwrap();
        prop_assert!(l.value().item() >= 0.0);
    }

    #[test]
    fn deltas_are_nested(pred in positive_map(64), gt in positive_map(64)) {
        let r = compute_metrics(
            &Tensor::new(vec![1, 8, 8], pred).unwrap(),
            &Tensor::new(vec![1, 8, 8], gt).unwrap(),
            &Mask::all(8, 8),
        ).unwrap();
        prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3);
        prop_assert!(r.abs_rel >= 0.0 && r.rmse >= 0.0 && r.sq_rel >= 0.0 && r.log10 >= 0.0);
    }

    #[test]
    fn metrics_invariant_under_mirroring(pred in positive_map(32), gt in positive_map(32)) {
        let p = Tensor::new(vec![1, 4, 8], pred).unwrap();
        let g = Tensor::new(vec![1, 4, 8], gt).unwrap();
        let mask = Mask::new(4, 8, (0..32).map(|i| i % 3 != 1).collect()).unwrap();
        let a = compute_metrics(&p, &g, &mask).unwrap();
        let b = compute_metrics(&p.hflip(), &g.hflip(), &mask.hflip()).unwrap();
        for ((_, x), (_, y)) in a.fields().iter().zip(b.fields().iter()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn container_round_trip_is_bit_exact(
        a in prop::collection::vec(any::<f32>(), 0..50),
        b in prop::collection::vec(any::<f64>(), 1..50),
        name in "[a-z.0-9]{1,12}",
    ) {
        let entries = vec![
            Entry::new(name.clone(), TensorData::F32(Tensor::new(vec![a.len()], a).unwrap())),
            Entry::new(format!("{name}_b"), TensorData::F64(Tensor::new(vec![1, b.len()], b).unwrap())),
        ];
        let back = decode(&encode(&entries).unwrap()).unwrap();
        prop_assert_eq!(back.len(), 2);
        for (x, y) in entries.iter().zip(&back) {
            prop_assert_eq!(&x.name, &y.name);
            prop_assert!(x.data.bit_eq(&y.data));
        }
    }

    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode(&bytes);
        let mut framed = b"DTEN\x01\x00".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = decode(&framed);
    }

    #[test]
    fn shuffle_round_trip_and_split_concat(seed in any::<u64>(), c in 1usize..4, h in 1usize..6, w in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(vec![12 * c, h, w], -1.0, 1.0, &mut rng);
        let tape = Tape::<f64>::empty();
        let v = tape.leaf(x.clone());
        prop_assert_eq!(v.pixel_shuffle().unwrap().pixel_unshuffle().unwrap().to_tensor(), x.clone());
        let parts = v.split(3).unwrap();
        prop_assert_eq!(depthnet::Var::concat(&parts).unwrap().to_tensor(), x);
    }

    #[test]
    fn avg_pool_matches_region_means(seed in any::<u64>(), g in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(vec![2, 8, 8], -2.0, 2.0, &mut rng);
        let tape = Tape::<f64>::empty();
        let y = tape.leaf(x.clone()).pool2d(PoolKind::Avg, g).unwrap().to_tensor();
        for c in 0..2 {
            for i in 0..g {
                for j in 0..g {
                    let (y0, y1) = pool_bounds(i, 8, g);
                    let (x0, x1) = pool_bounds(j, 8, g);
                    let mut s = 0.0;
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            s += x.at(&[c, yy, xx]);
                        }
                    }
                    let mean = s / ((y1 - y0) * (x1 - x0)) as f64;
                    prop_assert!((y.at(&[c, i, j]) - mean).abs() <= 1e-12);
                }
            }
        }
    }
}

fn glkam_and_store(seed: u64, c: usize) -> (ParamStore<f64>, Glkam) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Glkam::new(&mut ParamBuilder::new(&mut store, &mut rng), "glkam", c).unwrap();
    (store, g)
}

#[test]
fn glkam_output_is_between_input_and_branch() {
    let (store, glkam) = glkam_and_store(1, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let tape = Tape::inference(&store);
        let x = tape.leaf(Tensor::uniform(vec![6, 8, 8], -2.0, 2.0, &mut rng));
        let fm = glkam.branch_feature(x).unwrap();
        let out = glkam.fuse(x, fm).unwrap().to_tensor();
        let (xv, fv) = (x.value(), fm.value());
        for ((&o, &a), &b) in out.data().iter().zip(xv.data()).zip(fv.data()) {
            assert!(o >= a.min(b) - 1e-12 && o <= a.max(b) + 1e-12);
        }
    }
}

#[test]
fn glkam_fuse_of_equal_points_is_identity() {
    let (store, glkam) = glkam_and_store(3, 6);
    let tape = Tape::inference(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = tape.leaf(Tensor::uniform(vec![6, 4, 4], -1.0, 1.0, &mut rng));
    let out = glkam.fuse(x, x).unwrap().to_tensor();
    assert!(out.max_abs_diff(&x.to_tensor()) <= 1e-12);
}

#[test]
fn glkam_gate_saturation_returns_input() {
    let (mut store, glkam) = glkam_and_store(5, 6);
    let bias = glkam.fusion.last().bias;
    store.set(bias, Tensor::full(vec![6], 40.0)).unwrap();
    let tape = Tape::inference(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = tape.leaf(Tensor::uniform(vec![6, 8, 8], -1.0, 1.0, &mut rng));
    let out = glkam.forward(x).unwrap().to_tensor();
    assert!(out.max_abs_diff(&x.to_tensor()) <= 1e-6);
}

#[test]
fn glkam_zero_projection_zeroes_branch() {
    let (mut store, glkam) = glkam_and_store(7, 6);
    let p = &glkam.ffn.project;
    for id in std::iter::once(p.weight).chain(p.bias) {
        let z = Tensor::zeros(store.value(id).shape().to_vec());
        store.set(id, z).unwrap();
    }
    let tape = Tape::inference(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = tape.leaf(Tensor::uniform(vec![6, 8, 8], -1.0, 1.0, &mut rng));
    let fm = glkam.branch_feature(x).unwrap().to_tensor();
    assert!(fm.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gbpm_fuse_is_convex() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = Gbpm::new(&mut ParamBuilder::new(&mut store, &mut rng), "gbpm", 8, 16).unwrap();
    for _ in 0..100 {
        let tape = Tape::inference(&store);
        let a = Tensor::uniform(vec![8], -3.0, 3.0, &mut rng);
        let b = Tensor::uniform(vec![8], -3.0, 3.0, &mut rng);
        let out = g.gated_fuse(tape.leaf(a.clone()), tape.leaf(b.clone())).unwrap().to_tensor();
        for ((&o, &x), &y) in out.data().iter().zip(a.data()).zip(b.data()) {
            assert!(o >= x.min(y) - 1e-12 && o <= x.max(y) + 1e-12);
        }
    }
}

#[test]
fn gbpm_gate_saturation_selects_average_branch() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = Gbpm::new(&mut ParamBuilder::new(&mut store, &mut rng), "gbpm", 4, 8).unwrap();
    store.set(g.gate.last().bias, Tensor::full(vec![4], 40.0)).unwrap();
    let tape = Tape::inference(&store);
    let a = Tensor::from_f64(vec![4], &[1.0, -2.0, 0.5, 3.0]).unwrap();
    let b = Tensor::from_f64(vec![4], &[-1.0, 4.0, 0.0, 2.0]).unwrap();
    let out = g.gated_fuse(tape.leaf(a.clone()), tape.leaf(b)).unwrap().to_tensor();
    assert!(out.max_abs_diff(&a) <= 1e-12);
}

#[test]
fn gbpm_pooled_descriptors_with_identity_projection() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = Gbpm::new(&mut ParamBuilder::new(&mut store, &mut rng), "gbpm", 2, 4).unwrap();
    let eye = Tensor::from_f64(vec![2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
    store.set(g.pw_avg.weight, eye.clone()).unwrap();
    store.set(g.pw_max.weight, eye).unwrap();
    let tape = Tape::inference(&store);
    let mut f = Tensor::zeros(vec![2, 4, 5]);
    f.set(&[1, 2, 3], 9.0);
    let (fa, fb) = g.global_descriptors(tape.leaf(f)).unwrap();
    assert_eq!(fa.to_tensor().data(), &[0.0, 9.0 / 20.0]);
    assert_eq!(fb.to_tensor().data(), &[0.0, 9.0]);
}

#[test]
fn pure_softmax_widths_by_hand() {
    let tape = Tape::<f64>::empty();
    let logits = Tensor::from_f64(vec![3], &[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
    let w = normalize_widths(tape.leaf(logits), WidthNorm::Softmax).unwrap().to_tensor();
    for (a, b) in w.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((a - b).abs() < 1e-12);
    }
    let zeros = normalize_widths(tape.leaf(Tensor::zeros(vec![5])), WidthNorm::default()).unwrap().to_tensor();
    assert!(zeros.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn gather_indices_are_shared() {
    let tape = Tape::<f64>::empty();
    let x = tape.leaf(Tensor::from_f64(vec![4], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let idx = Arc::new(vec![3, 3, 0]);
    assert_eq!(x.gather(Arc::clone(&idx)).unwrap().to_tensor().data(), &[4.0, 4.0, 1.0]);
}
