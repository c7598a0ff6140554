//! Procedural desk-scale scenes: a receding ground ramp occluded by a few
//! spheres and boxes, shaded from the depth surface so that appearance
//! carries depth cues (Lambertian term plus distance fog).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::DepthSample;
use crate::model::MAX_STRIDE;
use crate::objective::build_validity_mask;
use crate::{Error, Result, Scalar, Tensor};

pub const NOISE_SIGMA: f64 = 0.01;
pub const MIN_OBJECTS: usize = 2;
pub const MAX_OBJECTS: usize = 5;
const LIGHT: [f64; 3] = [-0.3, -0.5, -1.0];
const FOG: [f64; 3] = [0.55, 0.6, 0.7];
const FOG_DENSITY: f64 = 1.2;
const AMBIENT: f64 = 0.25;
/// Object half-size as a fraction of the shorter image side.
pub const OBJECT_SCALE: (f64, f64) = (0.1, 0.25);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Center and radius in pixels; `bulge` is the depth of the cap in front of `depth`.
    Sphere { cx: f64, cy: f64, radius: f64, bulge: f64 },
    /// Axis-aligned pixel rectangle `[x0, x1) × [y0, y1)` with a vertical depth slope per row.
    Box { x0: f64, y0: f64, x1: f64, y1: f64, slope: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    /// Depth at the back of a sphere's cap or at the top edge of a box.
    pub depth: f64,
    pub albedo: [f64; 3],
}

impl SceneObject {
    /// Surface depth at pixel center `(x, y)` if the object covers it.
    pub fn depth_at(&self, x: f64, y: f64) -> Option<f64> {
        match self.shape {
            Shape::Sphere { cx, cy, radius, bulge } => {
                let r2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (radius * radius);
                (r2 < 1.0).then(|| self.depth - bulge * (1.0 - r2).sqrt())
            }
            Shape::Box { x0, y0, x1, y1, slope } => {
                (x >= x0 && x < x1 && y >= y0 && y < y1).then_some(self.depth + slope * (y - y0))
            }
        }
    }
}

/// Geometry behind one generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    /// Ramp depth at the bottom and top rows.
    pub ramp_near: f64,
    pub ramp_far: f64,
    pub ground_albedo: [f64; 3],
    pub objects: Vec<SceneObject>,
}

impl SceneLayout {
    pub fn ramp_depth(&self, y: f64) -> f64 {
        let t = y / (self.height.max(2) - 1) as f64;
        self.ramp_far + (self.ramp_near - self.ramp_far) * t
    }

    /// Nearest surface at `(x, y)` and its albedo.
    fn surface(&self, x: f64, y: f64) -> (f64, [f64; 3]) {
        let mut best = (self.ramp_depth(y), self.ground_albedo);
        for o in &self.objects {
            if let Some(d) = o.depth_at(x, y) {
                if d < best.0 {
                    best = (d, o.albedo);
                }
            }
        }
        best
    }
}

fn check_size(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || !height.is_multiple_of(MAX_STRIDE) || !width.is_multiple_of(MAX_STRIDE) {
        return Err(Error::invalid(
            "generate_scene",
            format!("size {height}×{width} must be positive multiples of {MAX_STRIDE}"),
        ));
    }
    Ok(())
}

fn albedo(rng: &mut impl Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(0.3..1.0))
}

pub fn sample_layout(seed: u64, height: usize, width: usize, d_min: f64, d_max: f64) -> Result<SceneLayout> {
    check_size(height, width)?;
    if !(d_min > 0.0 && d_max > d_min) {
        return Err(Error::invalid("generate_scene", format!("invalid range ({d_min}, {d_max}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = d_max - d_min;
    let ramp_far = d_min + span * rng.random_range(0.6..0.95);
    let ramp_near = d_min + span * rng.random_range(0.15..0.35);
    let mut layout = SceneLayout {
        height,
        width,
        ramp_near,
        ramp_far,
        ground_albedo: albedo(&mut rng),
        objects: Vec::new(),
    };
    let (h, w) = (height as f64, width as f64);
    let n = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS);
    for _ in 0..n {
        let size = rng.random_range(OBJECT_SCALE.0..OBJECT_SCALE.1) * h.min(w);
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.2 * h..h);
        // nearer than the ramp anywhere in the footprint: the ramp is farthest at the top
        let ramp_min = layout.ramp_depth((cy + size).min(h - 1.0));
        let depth = d_min + (ramp_min - d_min) * rng.random_range(0.3..0.85);
        let shape = if rng.random_bool(0.5) {
            Shape::Sphere {
                cx,
                cy,
                radius: size,
                bulge: (depth - d_min) * rng.random_range(0.1..0.3),
            }
        } else {
            Shape::Box {
                x0: cx - size,
                y0: cy - size,
                x1: cx + size,
                y1: cy + size,
                slope: -(depth - d_min) * 0.2 / (2.0 * size),
            }
        };
        layout.objects.push(SceneObject {
            shape,
            depth,
            albedo: albedo(&mut rng),
        });
    }
    Ok(layout)
}

/// Depth map and shaded image of a layout, before noise.
pub fn render(layout: &SceneLayout, d_min: f64, d_max: f64) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (layout.height, layout.width);
    let plane = h * w;
    let lo = d_min + 1e-6 * (d_max - d_min);
    let mut depth = vec![0.0; plane];
    let mut albedo = vec![[0.0; 3]; plane];
    for y in 0..h {
        for x in 0..w {
            let (d, a) = layout.surface(x as f64 + 0.5, y as f64 + 0.5);
            depth[y * w + x] = d.clamp(lo, d_max);
            albedo[y * w + x] = a;
        }
    }
    // back-project with focal length = width to get surface normals
    let f = w as f64;
    let point = |x: usize, y: usize| {
        let z = depth[y * w + x];
        [(x as f64 + 0.5 - 0.5 * w as f64) / f * z, (y as f64 + 0.5 - 0.5 * h as f64) / f * z, z]
    };
    let ln = {
        let n = (LIGHT[0] * LIGHT[0] + LIGHT[1] * LIGHT[1] + LIGHT[2] * LIGHT[2]).sqrt();
        LIGHT.map(|v| v / n)
    };
    let mut rgb = vec![0.0; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let (xa, xb) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (ya, yb) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let (pa, pb, pc, pd) = (point(xa, y), point(xb, y), point(x, ya), point(x, yb));
            let du = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
            let dv = [pd[0] - pc[0], pd[1] - pc[1], pd[2] - pc[2]];
            let mut n = [
                du[1] * dv[2] - du[2] * dv[1],
                du[2] * dv[0] - du[0] * dv[2],
                du[0] * dv[1] - du[1] * dv[0],
            ];
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-12);
            if n[2] > 0.0 {
                n = n.map(|v| -v);
            }
            let diffuse = ((n[0] * ln[0] + n[1] * ln[1] + n[2] * ln[2]) / norm).max(0.0);
            let i = y * w + x;
            let fog = (-FOG_DENSITY * depth[i] / d_max).exp();
            for c in 0..3 {
                let lit = albedo[i][c] * (AMBIENT + (1.0 - AMBIENT) * diffuse);
                rgb[c * plane + i] = lit * fog + FOG[c] * (1.0 - fog);
            }
        }
    }
    (depth, rgb)
}

/// Deterministic sample for `seed` with depth in `(d_min, d_max]`.
pub fn generate_scene<T: Scalar>(seed: u64, height: usize, width: usize, d_min: f64, d_max: f64) -> Result<DepthSample<T>> {
    Ok(generate_scene_with_layout(seed, height, width, d_min, d_max)?.0)
}

pub fn generate_scene_with_layout<T: Scalar>(
    seed: u64,
    height: usize,
    width: usize,
    d_min: f64,
    d_max: f64,
) -> Result<(DepthSample<T>, SceneLayout)> {
    let layout = sample_layout(seed, height, width, d_min, d_max)?;
    let (depth, mut rgb) = render(&layout, d_min, d_max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    for v in &mut rgb {
        *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }
    let depth = Tensor::from_f64(vec![1, height, width], &depth)?;
    let mask = build_validity_mask(&depth, T::lit(d_min), T::lit(d_max))?;
    let sample = DepthSample {
        rgb: Tensor::from_f64(vec![3, height, width], &rgb)?,
        depth,
        mask,
        scene_seed: seed,
    };
    Ok((sample, layout))
}

/// `count` scenes with seeds `base_seed, base_seed + 1, ...`.
pub fn generate_dataset<T: Scalar>(
    base_seed: u64,
    count: usize,
    height: usize,
    width: usize,
    d_min: f64,
    d_max: f64,
) -> Result<Vec<DepthSample<T>>> {
    (0..count as u64)
        .map(|i| generate_scene(base_seed.wrapping_add(i), height, width, d_min, d_max))
        .collect()
}
