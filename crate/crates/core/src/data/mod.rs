//! Samples, synthetic scenes, augmentation, and the `.dten` container.

pub mod augment;
pub mod container;
pub mod scene;

pub use augment::{augment, AugmentConfig};
pub use container::{read_container, write_container, ContainerError, Entry, TensorData};
pub use scene::{generate_dataset, generate_scene, generate_scene_with_layout, SceneLayout};

use crate::model::MAX_STRIDE;
use crate::objective::Mask;
use crate::{Error, Result, Scalar, Tensor};

/// One RGB image with metric ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSample<T> {
    /// `3×H×W` in `[0, 1]`.
    pub rgb: Tensor<T>,
    /// `1×H×W` meters.
    pub depth: Tensor<T>,
    pub mask: Mask,
    pub scene_seed: u64,
}

impl<T: Scalar> DepthSample<T> {
    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        if self.rgb.shape() != [3, h, w] || self.depth.shape() != [1, h, w] {
            return Err(Error::ShapeMismatch {
                op: "sample",
                lhs: self.rgb.shape().to_vec(),
                rhs: self.depth.shape().to_vec(),
            });
        }
        if h % MAX_STRIDE != 0 || w % MAX_STRIDE != 0 {
            return Err(Error::invalid("sample", format!("{h}×{w} not divisible by {MAX_STRIDE}")));
        }
        if self
            .mask
            .indices()
            .into_iter()
            .any(|i| !(self.depth.data()[i] > T::zero()))
        {
            return Err(Error::invalid("sample", "non-positive depth under the mask"));
        }
        Ok(())
    }

    /// Entries named `{prefix}rgb`, `{prefix}depth`, `{prefix}mask`, `{prefix}seed`.
    pub fn to_entries(&self, prefix: &str) -> Vec<Entry> {
        let seed = Tensor::new(vec![2], vec![(self.scene_seed >> 32) as f64, (self.scene_seed & 0xFFFF_FFFF) as f64])
            .expect("2 words");
        vec![
            Entry::new(format!("{prefix}rgb"), TensorData::from_tensor(&self.rgb)),
            Entry::new(format!("{prefix}depth"), TensorData::from_tensor(&self.depth)),
            Entry::new(format!("{prefix}mask"), TensorData::F32(self.mask.to_tensor())),
            Entry::new(format!("{prefix}seed"), TensorData::F64(seed)),
        ]
    }

    pub fn from_entries(entries: &[Entry], prefix: &str) -> Result<Self> {
        let find = |key: &str| {
            let name = format!("{prefix}{key}");
            entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::invalid("sample", format!("missing entry {name:?}")))
        };
        let seed = find("seed")?.data.to_tensor::<f64>();
        if seed.numel() != 2 {
            return Err(Error::invalid("sample", "seed entry must hold two words"));
        }
        let sample = DepthSample {
            rgb: find("rgb")?.data.to_tensor(),
            depth: find("depth")?.data.to_tensor(),
            mask: Mask::from_tensor(&find("mask")?.data.to_tensor::<f32>())?,
            scene_seed: ((seed.data()[0] as u64) << 32) | seed.data()[1] as u64,
        };
        sample.validate()?;
        Ok(sample)
    }
}

/// Writes samples as `sample{i}.` prefixed entries.
pub fn save_samples<T: Scalar>(path: impl AsRef<std::path::Path>, samples: &[DepthSample<T>]) -> Result<()> {
    let entries: Vec<Entry> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.to_entries(&format!("sample{i}.")))
        .collect();
    Ok(write_container(path, &entries)?)
}

pub fn load_samples<T: Scalar>(path: impl AsRef<std::path::Path>) -> Result<Vec<DepthSample<T>>> {
    let entries = read_container(path)?;
    let n = entries.iter().filter(|e| e.name.ends_with(".seed")).count();
    (0..n)
        .map(|i| DepthSample::from_entries(&entries, &format!("sample{i}.")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        let s = generate_scene::<f32>(u64::MAX - 3, 32, 32, 1e-3, 10.0).unwrap();
        let back = DepthSample::<f32>::from_entries(&s.to_entries("x."), "x.").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.dten");
        let set = generate_dataset::<f64>(10, 3, 32, 32, 1e-3, 10.0).unwrap();
        save_samples(&path, &set).unwrap();
        assert_eq!(load_samples::<f64>(&path).unwrap(), set);
    }
}
