//! Training-time augmentation: horizontal flip, small rotation, brightness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DepthSample;
use crate::objective::Mask;
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Rotation is uniform in `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    pub brightness: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            max_rotation_deg: 2.5,
            brightness: (0.9, 1.1),
        }
    }
}

/// Draws all random choices up front, then applies flip, rotation, brightness.
pub fn augment<T: Scalar>(sample: &DepthSample<T>, rng: &mut impl Rng, cfg: &AugmentConfig) -> DepthSample<T> {
    let flip = rng.random_bool(cfg.flip_prob.clamp(0.0, 1.0));
    let angle = if cfg.max_rotation_deg > 0.0 {
        rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
    } else {
        0.0
    };
    let (lo, hi) = cfg.brightness;
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut out = if flip { hflip_sample(sample) } else { sample.clone() };
    if angle != 0.0 {
        out = rotate_sample(&out, angle);
    }
    scale_brightness(&mut out, scale);
    out
}

pub fn hflip_sample<T: Scalar>(s: &DepthSample<T>) -> DepthSample<T> {
    DepthSample {
        rgb: s.rgb.hflip(),
        depth: s.depth.hflip(),
        mask: s.mask.hflip(),
        scene_seed: s.scene_seed,
    }
}

/// Multiplies rgb by `scale` and clamps to `[0, 1]`.
pub fn scale_brightness<T: Scalar>(s: &mut DepthSample<T>, scale: f64) {
    let k = T::lit(scale);
    for v in s.rgb.data_mut() {
        *v = (*v * k).max(T::zero()).min(T::one());
    }
}

/// Rotation about the image center: bilinear for rgb, nearest for depth.
/// Pixels whose source falls outside the image are masked out.
pub fn rotate_sample<T: Scalar>(s: &DepthSample<T>, degrees: f64) -> DepthSample<T> {
    let (h, w) = (s.mask.height, s.mask.width);
    let plane = h * w;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut rgb = vec![T::zero(); 3 * plane];
    let mut depth = vec![T::zero(); plane];
    let mut valid = vec![false; plane];
    let (src_rgb, src_depth, src_mask) = (s.rgb.data(), s.depth.data(), s.mask.flags());
    let clampi = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let inside = sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64;
            let i = y * w + x;
            let (nx, ny) = (clampi(sx.round(), w), clampi(sy.round(), h));
            depth[i] = src_depth[ny * w + nx];
            valid[i] = inside && src_mask[ny * w + nx];
            let (x0, y0) = (clampi(sx.floor(), w), clampi(sy.floor(), h));
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let fx = T::lit((sx - x0 as f64).clamp(0.0, 1.0));
            let fy = T::lit((sy - y0 as f64).clamp(0.0, 1.0));
            for c in 0..3 {
                let p = &src_rgb[c * plane..(c + 1) * plane];
                let top = p[y0 * w + x0] + (p[y0 * w + x1] - p[y0 * w + x0]) * fx;
                let bottom = p[y1 * w + x0] + (p[y1 * w + x1] - p[y1 * w + x0]) * fx;
                rgb[c * plane + i] = top + (bottom - top) * fy;
            }
        }
    }
    DepthSample {
        rgb: Tensor::new(vec![3, h, w], rgb).expect("3 planes"),
        depth: Tensor::new(vec![1, h, w], depth).expect("1 plane"),
        mask: Mask::new(h, w, valid).expect("h·w flags"),
        scene_seed: s.scene_seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> DepthSample<f64> {
        generate_scene(1, 32, 64, 1e-3, 10.0).unwrap()
    }

    #[test]
    fn double_flip_is_identity() {
        let s = scene();
        assert_eq!(hflip_sample(&hflip_sample(&s)), s);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let s = scene();
        let r = rotate_sample(&s, 0.0);
        assert!(r.rgb.max_abs_diff(&s.rgb) <= 1e-6);
        assert_eq!(r.depth, s.depth);
        assert_eq!(r.mask, s.mask);
    }

    #[test]
    fn rotation_masks_border() {
        let s = scene();
        let r = rotate_sample(&s, 2.5);
        assert!(r.mask.count() < s.mask.count());
        assert!(!r.mask.flags()[0]);
    }

    #[test]
    fn brightness_leaves_depth() {
        let s = scene();
        let mut b = s.clone();
        scale_brightness(&mut b, 1.1);
        assert_eq!(b.depth, s.depth);
        assert!(b.rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn augment_is_seeded() {
        let s = scene();
        let cfg = AugmentConfig::default();
        let a = augment(&s, &mut ChaCha8Rng::seed_from_u64(5), &cfg);
        let b = augment(&s, &mut ChaCha8Rng::seed_from_u64(5), &cfg);
        assert_eq!(a, b);
        assert!(a.depth.data().iter().all(|&d| d > 0.0));
    }
}
