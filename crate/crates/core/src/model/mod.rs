//! The single-frame motion model: a convolutional backbone whose last fully
//! connected layer is read as an `M × N` grid of `C`-way distributions.
//!
//! Inputs are RGB images in `[0, 1]`, preprocessed by a short-side resize
//! and a centered crop ([`preprocess`]), then shifted by the per-channel
//! training-set mean stored alongside the weights.

mod config;
mod train;

use std::path::Path;

use crate::codebook::{soft_decode, FlowCodebook, PredictionGrid, QuantizedLabelGrid};
use crate::error::{Error, Result};
use crate::flow::{center_crop_pair, visualize_flow, FlowField, Image};
use crate::nn::gradcheck::{check_network, GradReport};
use crate::nn::{
    round_to_f32, xavier_init, Checkpoint, NamedTensor, NetworkParams, NetworkSpec, MODEL_MAGIC,
};
use crate::tensor::Tensor4;

pub use config::{ModelConfig, Preset};
pub use train::{
    load_examples, train, write_loss_log, LoadedExamples, LossRecord, TrainOptions, TrainingExample,
};

/// Name of the input-mean tensor inside a model checkpoint.
pub const MEAN_TENSOR: &str = "input.mean";

/// Floor applied to probabilities inside the log of the spatial loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    /// Per-channel mean subtracted from every input.
    pub mean: [f64; 3],
}

impl Model {
    /// Xavier-initialized backbone, zero classification head, zero biases
    /// and zero input mean. The first prediction is uniform in every cell.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::xavier(config, seed)?;
        model.zero_head();
        Ok(model)
    }

    /// Xavier initialization of every layer, head included.
    pub fn xavier(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = config.network();
        let params = xavier_init(&spec, seed)?;
        Ok(Self {
            config,
            spec,
            params,
            mean: [0.0; 3],
        })
    }

    pub fn from_params(config: ModelConfig, params: NetworkParams, mean: [f64; 3]) -> Result<Self> {
        config.validate()?;
        let spec = config.network();
        spec.check_params(&params)?;
        Ok(Self {
            config,
            spec,
            params,
            mean,
        })
    }

    /// Name of the final fully connected layer's weight tensor.
    fn head_names(&self) -> (String, String) {
        let fc = self
            .spec
            .layers
            .iter()
            .filter(|l| matches!(l, crate::nn::LayerSpec::FullyConnected { .. }))
            .count();
        (format!("fc{fc}.weight"), format!("fc{fc}.bias"))
    }

    /// Zeroes the classification head, giving uniform predictions.
    pub fn zero_head(&mut self) {
        let (w, b) = self.head_names();
        for name in [w, b] {
            if let Some(p) = self.params.get_mut(&name) {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Sets the input mean from preprocessed images, rounded like the weights.
    pub fn fit_mean(&mut self, images: &[&Image]) {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for img in images {
            for px in img.data().chunks_exact(3) {
                for c in 0..3 {
                    sum[c] += px[c];
                }
                n += 1;
            }
        }
        if n > 0 {
            self.mean = sum.map(|s| round_to_f32(s / n as f64));
        }
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let s = self.config.input_size;
        if image.width() != s || image.height() != s || image.channels() != 3 {
            return Err(Error::shape(
                "model input",
                format!(
                    "expected {s}x{s}x3, got {}x{}x{}",
                    image.width(),
                    image.height(),
                    image.channels()
                ),
            ));
        }
        Ok(())
    }

    /// Mean-subtracted planar batch tensor.
    pub fn input_tensor(&self, images: &[&Image]) -> Result<Tensor4> {
        let s = self.config.input_size;
        let plane = s * s;
        let mut data = Vec::with_capacity(images.len() * 3 * plane);
        for img in images {
            self.check_input(img)?;
            let planar = img.to_planar();
            for (c, chunk) in planar.chunks_exact(plane).enumerate() {
                data.extend(chunk.iter().map(|v| v - self.mean[c]));
            }
        }
        Tensor4::from_vec([images.len(), 3, s, s], data)
    }

    fn grids(&self, output: &Tensor4) -> Result<Vec<PredictionGrid>> {
        let c = &self.config;
        (0..output.batch())
            .map(|b| PredictionGrid::new(c.grid_m, c.grid_n, c.clusters, output.item(b).to_vec()))
            .collect()
    }

    pub fn forward_batch(&self, images: &[&Image]) -> Result<Vec<PredictionGrid>> {
        let input = self.input_tensor(images)?;
        let out = self.spec.forward(&self.params, &input)?;
        self.grids(out.output())
    }

    /// Per-cell class distributions for one preprocessed image.
    pub fn forward(&self, image: &Image) -> Result<PredictionGrid> {
        Ok(self.forward_batch(&[image])?.remove(0))
    }

    /// Activations entering the final fully connected layer.
    pub fn features(&self, image: &Image) -> Result<Vec<f64>> {
        let input = self.input_tensor(&[image])?;
        let trace = self.spec.forward(&self.params, &input)?;
        let head = self.config.backbone.len();
        trace
            .layer_input(head)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| Error::NoForward("final layer kept no input".into()))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = self.params.to_checkpoint_tensors();
        tensors.push(NamedTensor::from_f64(MEAN_TENSOR, &[3], &self.mean));
        Checkpoint::new(MODEL_MAGIC, self.params.iteration, tensors)
    }

    pub fn from_checkpoint(config: ModelConfig, ckpt: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let spec = config.network();
        let params = NetworkParams::from_checkpoint(&spec, ckpt)?;
        let mean = match ckpt.get(MEAN_TENSOR) {
            Some(t) if t.dims == [3] => {
                let v = t.to_f64();
                [v[0], v[1], v[2]]
            }
            Some(t) => {
                return Err(Error::shape(
                    "checkpoint tensor input.mean",
                    format!("expected dims [3], found {:?}", t.dims),
                ))
            }
            None => return Err(Error::shape("checkpoint", "missing tensor input.mean")),
        };
        Ok(Self {
            config,
            spec,
            params,
            mean,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path, config: ModelConfig) -> Result<Self> {
        Self::from_checkpoint(config, &Checkpoint::load(path, MODEL_MAGIC)?)
    }
}

/// Short-side resize with the crop margin, then a centered `size × size` crop.
pub fn preprocess(image: &Image, size: usize) -> Result<Image> {
    let rgb = if image.channels() == 3 {
        image.clone()
    } else {
        let mut data = Vec::with_capacity(image.data().len() * 3);
        for &g in image.data() {
            data.extend([g, g, g]);
        }
        Image::from_vec(image.width(), image.height(), 3, data)?
    };
    let dummy = FlowField::zeros(rgb.width(), rgb.height())?;
    Ok(center_crop_pair(&rgb, &dummy, size, size)?.0)
}

/// Spatial cross-entropy `−Σ_i ln F_{i,y_i}` and its gradient with respect
/// to the cell logits, `F_i − onehot(y_i)`, laid out like `pred.probs`.
pub fn spatial_loss(pred: &PredictionGrid, label: &QuantizedLabelGrid) -> Result<(f64, Vec<f64>)> {
    if pred.rows != label.rows || pred.cols != label.cols {
        return Err(Error::shape(
            "spatial loss",
            format!(
                "prediction {}x{} vs label {}x{}",
                pred.rows, pred.cols, label.rows, label.cols
            ),
        ));
    }
    let c = pred.classes;
    let mut grad = pred.probs.clone();
    let mut loss = 0.0;
    for (i, &y) in label.labels.iter().enumerate() {
        if y >= c {
            return Err(Error::InvalidArgument(format!(
                "label {y} at cell {i} exceeds {c} classes"
            )));
        }
        loss -= pred.probs[i * c + y].max(PROB_FLOOR).ln();
        grad[i * c + y] -= 1.0;
    }
    Ok((loss, grad))
}

/// Output of [`predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub grid: PredictionGrid,
    /// `N` wide, `M` tall.
    pub coarse: FlowField,
    pub visualization: Image,
}

/// Preprocesses, runs the network and soft-decodes each cell. The color
/// scale is the codebook's largest center so runs are comparable.
pub fn predict(model: &Model, codebook: &FlowCodebook, image: &Image) -> Result<Prediction> {
    if codebook.len() != model.config.clusters {
        return Err(Error::shape(
            "predict",
            format!(
                "codebook has {} clusters, model predicts {}",
                codebook.len(),
                model.config.clusters
            ),
        ));
    }
    let input = preprocess(image, model.config.input_size)?;
    let grid = model.forward(&input)?;
    let coarse = soft_decode(&grid, codebook)?;
    let visualization = visualize_flow(&coarse, Some(codebook.max_magnitude()));
    Ok(Prediction {
        grid,
        coarse,
        visualization,
    })
}

/// Finite-difference check of the whole network under the spatial loss,
/// on `samples` random parameter coordinates and one random input/label.
pub fn gradcheck_model(config: &ModelConfig, samples: usize, seed: u64) -> Result<GradReport> {
    use rand::{Rng, SeedableRng};
    let mut model = Model::xavier(config.clone(), seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for p in model.params.tensors.iter_mut() {
        if p.name.ends_with("bias") {
            p.data
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    let s = config.input_size;
    let input = Tensor4::from_vec(
        [1, 3, s, s],
        (0..3 * s * s).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let labels: Vec<usize> = (0..config.grid_m * config.grid_n)
        .map(|_| rng.gen_range(0..config.clusters))
        .collect();
    let label = QuantizedLabelGrid::new(config.grid_m, config.grid_n, labels, config.clusters)?;
    let (m, n, c) = (config.grid_m, config.grid_n, config.clusters);
    let loss = |out: &Tensor4| {
        let grid = PredictionGrid {
            rows: m,
            cols: n,
            classes: c,
            probs: out.data().to_vec(),
        };
        let (l, g) = spatial_loss(&grid, &label).expect("dims fixed above");
        (l, Tensor4::from_vec(out.dims(), g).expect("same length"))
    };
    let end = model.spec.layers.len() - 1;
    check_network(
        &model.spec,
        &model.params,
        &input,
        end,
        &loss,
        samples,
        seed,
        1e-5,
    )
}
