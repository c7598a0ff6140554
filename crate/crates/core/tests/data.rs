use depthnet::data::augment::{hflip_sample, rotate_sample};
use depthnet::data::{augment, generate_scene, generate_scene_with_layout, AugmentConfig};
use depthnet::objective::{build_validity_mask, compute_metrics};
use depthnet::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn occluders_are_nearer_than_the_ramp() {
    let (s, layout) = generate_scene_with_layout::<f64>(0, 64, 64, 1e-3, 10.0).unwrap();
    let mut covered = 0;
    for o in &layout.objects {
        for y in 0..64 {
            for x in 0..64 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if o.depth_at(px, py).is_some() {
                    covered += 1;
                    assert!(s.depth.at(&[0, y, x]) < layout.ramp_depth(py));
                }
            }
        }
    }
    assert!(covered > 0);
}

#[test]
fn generated_samples_validate() {
    for seed in 0..5 {
        let s = generate_scene::<f32>(seed, 64, 96, 1e-3, 80.0).unwrap();
        s.validate().unwrap();
        assert_eq!(s.rgb.shape(), &[3, 64, 96]);
    }
}

#[test]
fn augmented_sample_against_itself_has_zero_error() {
    let s = generate_scene::<f64>(2, 64, 64, 1e-3, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..10 {
        let a = augment(&s, &mut rng, &AugmentConfig::default());
        let r = compute_metrics(&a.depth, &a.depth, &a.mask).unwrap();
        assert_eq!((r.abs_rel, r.rmse, r.delta1), (0.0, 0.0, 1.0));
        assert!(a.rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn forced_flip_twice_restores_sample() {
    let s = generate_scene::<f32>(3, 32, 64, 1e-3, 10.0).unwrap();
    let cfg = AugmentConfig {
        flip_prob: 1.0,
        max_rotation_deg: 0.0,
        brightness: (1.0, 1.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let twice = augment(&augment(&s, &mut rng, &cfg), &mut rng, &cfg);
    assert_eq!(twice, s);
    assert_eq!(hflip_sample(&s).depth, s.depth.hflip());
}

#[test]
fn rotation_keeps_correspondence_of_a_constant_scene() {
    let mut s = generate_scene::<f64>(4, 32, 32, 1e-3, 10.0).unwrap();
    s.rgb = Tensor::full(vec![3, 32, 32], 0.4);
    s.depth = Tensor::full(vec![1, 32, 32], 2.0);
    s.mask = build_validity_mask(&s.depth, 1e-3, 10.0).unwrap();
    let r = rotate_sample(&s, -2.5);
    assert!(r.rgb.data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
    assert!(r.depth.data().iter().all(|&v| v == 2.0));
    assert!(r.mask.count() > 32 * 32 * 9 / 10);
}
