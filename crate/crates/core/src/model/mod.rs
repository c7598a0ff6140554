//! End-to-end depth network: pyramid encoder (optionally with GLKAM between
//! stages), pyramid pooling, global bin prediction, skip-connected decoder
//! with pixel-shuffle upsampling, per-pixel bin probabilities, and the
//! expectation over bin centers.

mod config;
mod decoder;
mod encoder;
mod ppm;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{EncoderKind, ModelConfig, INDOOR_RANGE, MAX_STRIDE, OUTDOOR_RANGE};
pub use decoder::{Decoder, UpStage};
pub use encoder::{FeaturePyramid, ResBlock, Stage, ToyPyramidEncoder, BLOCKS_PER_STAGE};
pub use ppm::Ppm;

use crate::autodiff::Var;
use crate::data::container::{read_container, write_container, Entry, TensorData};
use crate::data::DepthSample;
use crate::gbpm::{bin_centers_var, BinSpec, Gbpm};
use crate::nn::{Conv2d, Conv2dSpec};
use crate::objective::{silog_loss, SilogParams};
use crate::param::{ParamBuilder, ParamStore};
use crate::{Error, Result, Scalar, Tape, Tensor};

/// Name of the configuration record inside a checkpoint.
pub const CONFIG_ENTRY: &str = "__config__";

/// Layer structure; parameter values live in [`DepthNet::params`].
#[derive(Clone, Debug)]
pub struct Layers {
    pub encoder: ToyPyramidEncoder,
    pub ppm: Ppm,
    pub gbpm: Option<Gbpm>,
    pub decoder: Decoder,
    pub head: Conv2d,
}

#[derive(Clone, Debug)]
pub struct DepthNet<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub layers: Layers,
}

/// Intermediate results of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Prediction<'t, T: Scalar> {
    /// `1×H×W` at input resolution.
    pub depth: Var<'t, T>,
    /// `n_bins×H/4×W/4`, summing to 1 over bins.
    pub probabilities: Var<'t, T>,
    pub widths: Var<'t, T>,
    pub centers: Var<'t, T>,
}

/// Softmax over the bin axis of a 1×1 conv head.
pub fn depth_probabilities<'t, T: Scalar>(d4: Var<'t, T>, head: &Conv2d) -> Result<Var<'t, T>> {
    head.forward(d4)?.softmax(0)
}

/// Per-pixel expectation `Σ_k c_k p_k` at probability resolution, then
/// bilinear upsampling to `full`.
pub fn predict_depth<'t, T: Scalar>(
    probabilities: Var<'t, T>,
    centers: Var<'t, T>,
    full: (usize, usize),
) -> Result<Var<'t, T>> {
    let p = probabilities.value();
    let shape = p.shape().to_vec();
    let n = centers.numel();
    if shape.len() != 3 || shape[0] != n {
        return Err(Error::ShapeMismatch {
            op: "predict_depth",
            lhs: shape,
            rhs: vec![n],
        });
    }
    let plane = shape[1] * shape[2];
    for px in 0..plane {
        let s: f64 = (0..n).map(|k| p.data()[k * plane + px].as_f64()).sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(Error::invalid("predict_depth", format!("probabilities at pixel {px} sum to {s}")));
        }
    }
    let weighted = probabilities.mul(centers.reshape(vec![n, 1, 1])?)?;
    weighted.sum_axis(0)?.resize_bilinear(full.0, full.1)
}

/// Anything that maps an RGB image to a `1×H×W` depth map.
pub trait DepthPredictor<T: Scalar> {
    fn predict(&self, rgb: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Mean of the prediction on `rgb` and the un-mirrored prediction on its
/// horizontal mirror.
pub fn infer_flip_averaged<T: Scalar>(model: &impl DepthPredictor<T>, rgb: &Tensor<T>) -> Result<Tensor<T>> {
    let direct = model.predict(rgb)?;
    let mirrored = model.predict(&rgb.hflip())?.hflip();
    let half = T::lit(0.5);
    Tensor::new(
        direct.shape().to_vec(),
        direct
            .data()
            .iter()
            .zip(mirrored.data())
            .map(|(&a, &b)| (a + b) * half)
            .collect(),
    )
}

impl<T: Scalar> DepthNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut pb = ParamBuilder::new(&mut params, &mut rng);
        let c = config.base_channels;
        let encoder = ToyPyramidEncoder::new(&mut pb, "encoder", c, config.use_glkam)?;
        let ppm = Ppm::new(&mut pb, "ppm", 8 * c, &config.ppm_grids)?;
        let gbpm = if config.use_gbpm {
            Some(Gbpm::new(&mut pb, "gbpm", 8 * c, config.n_bins)?)
        } else {
            None
        };
        let decoder = Decoder::new(&mut pb, "decoder", c)?;
        let head = Conv2d::new(&mut pb, "head", Conv2dSpec::pointwise(c, config.n_bins), true)?;
        Ok(DepthNet {
            config,
            params,
            layers: Layers {
                encoder,
                ppm,
                gbpm,
                decoder,
                head,
            },
        })
    }

    fn range(&self) -> (T, T) {
        (T::lit(self.config.d_min), T::lit(self.config.d_max))
    }

    /// Image-global bins: predicted from the PPM output, or uniform.
    pub fn bins<'t>(&self, context: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let (d_min, d_max) = self.range();
        match &self.layers.gbpm {
            Some(g) => g.forward(context, d_min, d_max),
            None => {
                let n = self.config.n_bins;
                let widths = context
                    .tape()
                    .leaf(Tensor::full(vec![n], T::one() / T::lit(n as f64)));
                Ok((widths, bin_centers_var(widths, d_min, d_max)?))
            }
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, rgb: &Tensor<T>) -> Result<Prediction<'t, T>> {
        let (h, w) = match *rgb.shape() {
            [3, h, w] => (h, w),
            ref s => return Err(Error::invalid("encode", format!("expected 3×H×W image, got {s:?}"))),
        };
        self.config.validate_input(h, w)?;
        let x = tape.leaf(rgb.clone());
        let pyramid = self.layers.encoder.forward(x)?;
        let context = self.layers.ppm.forward(pyramid.levels[3])?;
        let (widths, centers) = self.bins(context)?;
        let d4 = self.layers.decoder.forward(&pyramid, context)?;
        let probabilities = depth_probabilities(d4, &self.layers.head)?;
        let depth = predict_depth(probabilities, centers, (h, w))?;
        Ok(Prediction {
            depth,
            probabilities,
            widths,
            centers,
        })
    }

    /// SILog loss of the full pipeline on one sample.
    pub fn forward_loss<'t>(&self, tape: &'t Tape<T>, sample: &DepthSample<T>, silog: SilogParams) -> Result<Var<'t, T>> {
        if sample.mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let pred = self.forward(tape, &sample.rgb)?;
        silog_loss(pred.depth, &sample.depth, &sample.mask, silog)
    }

    /// Bin layout predicted for one image.
    pub fn bin_spec(&self, rgb: &Tensor<T>) -> Result<BinSpec<T>> {
        let tape = Tape::inference(&self.params);
        let pred = self.forward(&tape, rgb)?;
        let (d_min, d_max) = self.range();
        BinSpec::new(pred.widths.to_tensor().into_data(), d_min, d_max)
    }

    pub fn predict_flip_averaged(&self, rgb: &Tensor<T>) -> Result<Tensor<T>> {
        infer_flip_averaged(self, rgb)
    }

    pub fn to_entries(&self) -> Vec<Entry> {
        let mut entries = vec![Entry::new(
            CONFIG_ENTRY,
            TensorData::F64(Tensor::new(vec![self.config.to_record().len()], self.config.to_record()).expect("1-D")),
        )];
        entries.extend(
            self.params
                .iter()
                .map(|(_, p)| Entry::new(p.name.clone(), TensorData::from_tensor(p.value()))),
        );
        entries
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let record = entries
            .iter()
            .find(|e| e.name == CONFIG_ENTRY)
            .ok_or_else(|| Error::invalid("checkpoint", "missing configuration record"))?;
        let config = ModelConfig::from_record(record.data.to_tensor::<f64>().data())?;
        let mut model = Self::new(config)?;
        let mut seen = 0;
        for e in entries.iter().filter(|e| e.name != CONFIG_ENTRY) {
            let id = model
                .params
                .id(&e.name)
                .ok_or_else(|| Error::invalid("checkpoint", format!("unknown parameter {:?}", e.name)))?;
            model.params.set(id, e.data.to_tensor())?;
            seen += 1;
        }
        if seen != model.params.len() {
            return Err(Error::invalid(
                "checkpoint",
                format!("{seen} parameters stored, model has {}", model.params.len()),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_container(path, &self.to_entries())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_entries(&read_container(path)?)
    }

    /// Total number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }
}

impl<T: Scalar> DepthPredictor<T> for DepthNet<T> {
    fn predict(&self, rgb: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::inference(&self.params);
        Ok(self.forward(&tape, rgb)?.depth.to_tensor())
    }
}
