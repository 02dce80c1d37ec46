//! Future-motion sequences: `T` chained fully connected stages on top of the
//! frozen single-frame features, each classifying one coarse future flow
//! frame against a [`FrameCodebook`].
//!
//! Stage `t` sees the features and every earlier hidden state,
//! `h_t = relu(W_t [x ⊕ h_1 ⊕ … ⊕ h_{t-1}] + b_t)`, and predicts
//! `p_t = softmax(U_t h_t + c_t)`. No weights are shared between stages.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codebook::FrameCodebook;
use crate::error::{Error, Result};
use crate::flow::{
    cell_means, center_crop_pair, read_flo, read_image, read_manifest, visualize_flow, FlowField,
    Image,
};
use crate::model::{preprocess, LossRecord, Model, PROB_FLOOR};
use crate::nn::gradcheck::{relative_error, GradReport};
use crate::nn::layers::softmax_in_place;
use crate::nn::{
    gemm, learning_rate, xavier_layer, Checkpoint, LayerSpec, NamedTensor, NetworkParams, Op,
    Param, Sgd, SgdConfig, MULTIFRAME_MAGIC,
};

pub const DEFAULT_STEPS: usize = 6;
pub const DEFAULT_HIDDEN: usize = 2000;

const SPEC_TENSOR: &str = "multiframe.spec";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiFrameSpec {
    pub steps: usize,
    pub hidden: usize,
    pub clusters: usize,
    /// Width of the single-frame feature vector.
    pub features: usize,
}

impl MultiFrameSpec {
    pub fn new(steps: usize, hidden: usize, clusters: usize, features: usize) -> Result<Self> {
        let s = Self {
            steps,
            hidden,
            clusters,
            features,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.hidden == 0 || self.clusters == 0 || self.features == 0 {
            return Err(Error::InvalidArgument(format!(
                "multiframe spec needs T, H, K, D >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Input width of stage `t` (1-based): `D + (t − 1)·H`.
    pub fn input_width(&self, t: usize) -> usize {
        self.features + (t - 1) * self.hidden
    }

    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::with_capacity(4 * self.steps);
        for t in 1..=self.steps {
            out.push((
                format!("step{t}.hidden.weight"),
                vec![self.hidden, self.input_width(t)],
            ));
            out.push((format!("step{t}.hidden.bias"), vec![self.hidden]));
            out.push((
                format!("step{t}.classifier.weight"),
                vec![self.clusters, self.hidden],
            ));
            out.push((format!("step{t}.classifier.bias"), vec![self.clusters]));
        }
        out
    }
}

/// Stage parameters, four tensors per stage in stage order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFrameParams {
    pub spec: MultiFrameSpec,
    pub net: NetworkParams,
}

impl MultiFrameParams {
    /// Xavier hidden weights, zero classifiers and biases.
    pub fn init(spec: MultiFrameSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        for (name, dims) in spec.layout() {
            let n = dims.iter().product();
            let data = if name.ends_with("hidden.weight") {
                xavier_layer(&LayerSpec::fc(dims[0]), [dims[1], 1, 1], &mut rng)
                    .expect("fc has parameters")
                    .0
            } else {
                vec![0.0; n]
            };
            tensors.push(Param { name, dims, data });
        }
        Ok(Self {
            spec,
            net: NetworkParams {
                tensors,
                iteration: 0,
            },
        })
    }

    fn tensor(&self, t: usize, k: usize) -> &[f64] {
        &self.net.tensors[4 * (t - 1) + k].data
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let s = self.spec;
        let dims = [s.steps, s.hidden, s.clusters, s.features].map(|v| v as f64);
        let mut tensors = vec![NamedTensor::from_f64(SPEC_TENSOR, &[4], &dims)];
        tensors.extend(self.net.to_checkpoint_tensors());
        Checkpoint::new(MULTIFRAME_MAGIC, self.net.iteration, tensors)
    }

    /// Rebuilds the parameters, checking the input width law at every stage.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let raw = ckpt
            .get(SPEC_TENSOR)
            .ok_or_else(|| {
                Error::shape(
                    "multiframe checkpoint",
                    format!("missing tensor {SPEC_TENSOR}"),
                )
            })?
            .to_f64();
        if raw.len() != 4 {
            return Err(Error::shape(
                "multiframe checkpoint",
                "spec tensor must hold 4 values",
            ));
        }
        let spec = MultiFrameSpec::new(
            raw[0] as usize,
            raw[1] as usize,
            raw[2] as usize,
            raw[3] as usize,
        )?;
        let mut tensors = Vec::new();
        for (name, dims) in spec.layout() {
            let t = ckpt.get(&name).ok_or_else(|| {
                Error::shape("multiframe checkpoint", format!("missing tensor {name}"))
            })?;
            if t.dims != dims {
                return Err(Error::shape(
                    format!("multiframe checkpoint tensor {name}"),
                    format!("expected dims {dims:?}, found {:?}", t.dims),
                ));
            }
            tensors.push(Param {
                name,
                dims,
                data: t.to_f64(),
            });
        }
        Ok(Self {
            spec,
            net: NetworkParams {
                tensors,
                iteration: ckpt.iteration,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, MULTIFRAME_MAGIC)?)
    }
}

/// Activations of one batched pass.
#[derive(Debug, Clone)]
pub struct MultiTrace {
    batch: usize,
    /// Stage inputs `[B × in_t]`.
    inputs: Vec<Vec<f64>>,
    /// Post-ReLU hidden states `[B × H]`.
    hidden: Vec<Vec<f64>>,
    /// Per-stage probabilities `[B × K]`.
    pub probs: Vec<Vec<f64>>,
}

impl MultiTrace {
    /// Distribution of stage `t` (0-based) for batch item `b`.
    pub fn step(&self, b: usize, t: usize) -> &[f64] {
        let k = self.probs[t].len() / self.batch;
        &self.probs[t][b * k..(b + 1) * k]
    }
}

/// Runs every stage on a `[B × D]` feature batch.
pub fn multiframe_forward(
    features: &[f64],
    batch: usize,
    params: &MultiFrameParams,
) -> Result<MultiTrace> {
    let s = params.spec;
    if features.len() != batch * s.features {
        return Err(Error::shape(
            "multiframe input",
            format!(
                "{} values for a batch of {batch} with D = {}",
                features.len(),
                s.features
            ),
        ));
    }
    let mut inputs = Vec::with_capacity(s.steps);
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(s.steps);
    let mut probs = Vec::with_capacity(s.steps);
    for t in 1..=s.steps {
        let width = s.input_width(t);
        let mut x = Vec::with_capacity(batch * width);
        for b in 0..batch {
            x.extend_from_slice(&features[b * s.features..(b + 1) * s.features]);
            for h in &hidden {
                x.extend_from_slice(&h[b * s.hidden..(b + 1) * s.hidden]);
            }
        }
        let (w, bias) = (params.tensor(t, 0), params.tensor(t, 1));
        if w.len() != s.hidden * width {
            return Err(Error::shape(
                format!("multiframe step {t}"),
                format!(
                    "hidden weight has {} values, expected {}x{width}",
                    w.len(),
                    s.hidden
                ),
            ));
        }
        let mut h: Vec<f64> = (0..batch).flat_map(|_| bias.iter().copied()).collect();
        gemm(batch, width, s.hidden, &x, Op::N, w, Op::T, 1.0, &mut h);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let (u, c) = (params.tensor(t, 2), params.tensor(t, 3));
        let mut p: Vec<f64> = (0..batch).flat_map(|_| c.iter().copied()).collect();
        gemm(
            batch,
            s.hidden,
            s.clusters,
            &h,
            Op::N,
            u,
            Op::T,
            1.0,
            &mut p,
        );
        p.chunks_exact_mut(s.clusters).for_each(softmax_in_place);
        inputs.push(x);
        hidden.push(h);
        probs.push(p);
    }
    Ok(MultiTrace {
        batch,
        inputs,
        hidden,
        probs,
    })
}

/// Summed per-stage cross-entropy, averaged over the batch, and parameter
/// gradients. `labels` is `[B × T]`.
pub fn multiframe_loss_and_grad(
    trace: &MultiTrace,
    labels: &[usize],
    params: &MultiFrameParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let s = params.spec;
    let batch = trace.batch;
    if labels.len() != batch * s.steps {
        return Err(Error::shape(
            "multiframe labels",
            format!(
                "{} labels for {batch} sequences of {} steps",
                labels.len(),
                s.steps
            ),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s.clusters) {
        return Err(Error::InvalidArgument(format!(
            "frame label {bad} exceeds {} clusters",
            s.clusters
        )));
    }
    let scale = 1.0 / batch as f64;
    let mut grads: Vec<Vec<f64>> = params
        .net
        .tensors
        .iter()
        .map(|p| vec![0.0; p.data.len()])
        .collect();
    let mut dh: Vec<Vec<f64>> = (0..s.steps).map(|_| vec![0.0; batch * s.hidden]).collect();
    let mut loss = 0.0;
    for t in (1..=s.steps).rev() {
        let p = &trace.probs[t - 1];
        let mut dl = p.clone();
        for b in 0..batch {
            let y = labels[b * s.steps + t - 1];
            loss -= p[b * s.clusters + y].max(PROB_FLOOR).ln();
            dl[b * s.clusters + y] -= 1.0;
        }
        dl.iter_mut().for_each(|v| *v *= scale);
        let h = &trace.hidden[t - 1];
        let base = 4 * (t - 1);
        gemm(
            s.clusters,
            batch,
            s.hidden,
            &dl,
            Op::T,
            h,
            Op::N,
            0.0,
            &mut grads[base + 2],
        );
        for row in dl.chunks_exact(s.clusters) {
            grads[base + 3]
                .iter_mut()
                .zip(row)
                .for_each(|(g, v)| *g += v);
        }
        let mut dz = std::mem::take(&mut dh[t - 1]);
        gemm(
            batch,
            s.clusters,
            s.hidden,
            &dl,
            Op::N,
            params.tensor(t, 2),
            Op::N,
            1.0,
            &mut dz,
        );
        dz.iter_mut().zip(h).for_each(|(d, &hv)| {
            if hv <= 0.0 {
                *d = 0.0
            }
        });
        let width = s.input_width(t);
        gemm(
            s.hidden,
            batch,
            width,
            &dz,
            Op::T,
            &trace.inputs[t - 1],
            Op::N,
            0.0,
            &mut grads[base],
        );
        for row in dz.chunks_exact(s.hidden) {
            grads[base + 1]
                .iter_mut()
                .zip(row)
                .for_each(|(g, v)| *g += v);
        }
        if t > 1 {
            let mut dx = vec![0.0; batch * width];
            gemm(
                batch,
                s.hidden,
                width,
                &dz,
                Op::N,
                params.tensor(t, 0),
                Op::N,
                0.0,
                &mut dx,
            );
            for b in 0..batch {
                let row = &dx[b * width..(b + 1) * width];
                for (j, acc) in dh.iter_mut().enumerate().take(t - 1) {
                    let off = s.features + j * s.hidden;
                    acc[b * s.hidden..(b + 1) * s.hidden]
                        .iter_mut()
                        .zip(&row[off..off + s.hidden])
                        .for_each(|(a, v)| *a += v);
                }
            }
        }
    }
    Ok((loss * scale, grads))
}

/// Finite-difference check of the unrolled chain on random parameters.
pub fn gradcheck_multiframe(
    spec: MultiFrameSpec,
    batch: usize,
    samples: usize,
    seed: u64,
) -> Result<GradReport> {
    use rand::Rng;
    let mut params = MultiFrameParams::init(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
    for p in params.net.tensors.iter_mut() {
        p.data
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    let features: Vec<f64> = (0..batch * spec.features)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect();
    let labels: Vec<usize> = (0..batch * spec.steps)
        .map(|_| rng.gen_range(0..spec.clusters))
        .collect();
    let trace = multiframe_forward(&features, batch, &params)?;
    let (_, grads) = multiframe_loss_and_grad(&trace, &labels, &params)?;
    let total = params.net.num_values();
    let eps = 1e-6;
    let mut max_rel_error: f64 = 0.0;
    for _ in 0..samples {
        let mut k = rng.gen_range(0..total);
        let mut t = 0;
        while k >= params.net.tensors[t].data.len() {
            k -= params.net.tensors[t].data.len();
            t += 1;
        }
        let orig = params.net.tensors[t].data[k];
        let mut eval = |v: f64| -> Result<f64> {
            params.net.tensors[t].data[k] = v;
            let tr = multiframe_forward(&features, batch, &params)?;
            Ok(multiframe_loss_and_grad(&tr, &labels, &params)?.0)
        };
        let num = (eval(orig + eps)? - eval(orig - eps)?) / (2.0 * eps);
        params.net.tensors[t].data[k] = orig;
        max_rel_error = max_rel_error.max(relative_error(grads[t][k], num));
    }
    Ok(GradReport {
        max_rel_error,
        checked: samples,
    })
}

/// Feature vector and per-step frame labels of one training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceExample {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Coarse frame of a flow field aligned with the model's input crop.
pub fn coarse_frame(
    image: &Image,
    flow: &FlowField,
    input_size: usize,
    rows: usize,
    cols: usize,
) -> Result<FlowField> {
    let (_, cropped) = center_crop_pair(image, flow, input_size, input_size)?;
    cell_means(&cropped, rows, cols)
}

/// Sequences from a manifest whose records list exactly `steps` flows.
#[derive(Debug, Clone, Default)]
pub struct LoadedSequences {
    pub items: Vec<(String, Image, Vec<FlowField>)>,
    pub skipped: Vec<String>,
}

pub fn load_sequences(manifest: &Path, steps: usize) -> Result<LoadedSequences> {
    let mut out = LoadedSequences::default();
    for rec in read_manifest(manifest)? {
        let name = rec.image.display().to_string();
        if rec.flows.len() != steps {
            out.skipped.push(format!(
                "{name}: {} frames, expected {steps}",
                rec.flows.len()
            ));
            continue;
        }
        let loaded = read_image(&rec.image).and_then(|img| {
            Ok((
                img,
                rec.flows
                    .iter()
                    .map(|p| read_flo(p))
                    .collect::<Result<Vec<_>>>()?,
            ))
        });
        match loaded {
            Ok((img, flows)) => out.items.push((name, img, flows)),
            Err(e) => out.skipped.push(format!("{name}: {e}")),
        }
    }
    if out.items.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{}: all {} records skipped",
            manifest.display(),
            out.skipped.len()
        )));
    }
    Ok(out)
}

/// Penultimate activations of the frozen single-frame model.
pub fn extract_features(model: &Model, image: &Image, spec: &MultiFrameSpec) -> Result<Vec<f64>> {
    let f = model.features(&preprocess(image, model.config.input_size)?)?;
    if f.len() != spec.features {
        return Err(Error::shape(
            "multiframe features",
            format!(
                "model yields {} features, spec expects {}",
                f.len(),
                spec.features
            ),
        ));
    }
    Ok(f)
}

/// Features plus nearest-centroid labels for every loaded sequence.
pub fn sequence_examples(
    model: &Model,
    sequences: &LoadedSequences,
    codebook: &FrameCodebook,
    spec: &MultiFrameSpec,
) -> Result<Vec<SequenceExample>> {
    let s = model.config.input_size;
    sequences
        .items
        .iter()
        .map(|(_, image, flows)| {
            let features = extract_features(model, image, spec)?;
            let labels = flows
                .iter()
                .map(|f| {
                    codebook.nearest(&coarse_frame(image, f, s, codebook.rows, codebook.cols)?)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SequenceExample { features, labels })
        })
        .collect()
}

/// Minibatch SGD over reshuffled epochs until `sgd.max_iters`.
pub fn train_multiframe(
    params: &mut MultiFrameParams,
    examples: &[SequenceExample],
    sgd_config: SgdConfig,
    log_every: u64,
) -> Result<Vec<LossRecord>> {
    let s = params.spec;
    if examples.is_empty() {
        return Err(Error::EmptyDataset("no training sequences".into()));
    }
    for (i, e) in examples.iter().enumerate() {
        if e.features.len() != s.features || e.labels.len() != s.steps {
            return Err(Error::shape(
                format!("sequence example {i}"),
                format!(
                    "{} features / {} labels for D = {}, T = {}",
                    e.features.len(),
                    e.labels.len(),
                    s.features,
                    s.steps
                ),
            ));
        }
    }
    let mut sgd = Sgd::new(sgd_config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sgd_config.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut log = Vec::new();
    let log_every = log_every.max(1);
    while params.net.iteration < sgd_config.max_iters {
        let iter = params.net.iteration;
        let mut feats = Vec::with_capacity(sgd_config.batch * s.features);
        let mut labels = Vec::with_capacity(sgd_config.batch * s.steps);
        for _ in 0..sgd_config.batch {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let e = &examples[order[cursor]];
            cursor += 1;
            feats.extend_from_slice(&e.features);
            labels.extend_from_slice(&e.labels);
        }
        let trace = multiframe_forward(&feats, sgd_config.batch, params)?;
        let (loss, grads) = multiframe_loss_and_grad(&trace, &labels, params)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "multiframe loss at iteration {iter}"
            )));
        }
        if iter.is_multiple_of(log_every) || iter + 1 == sgd_config.max_iters {
            log.push(LossRecord {
                iter,
                loss,
                lr: learning_rate(&sgd_config, iter),
            });
        }
        sgd.step(&mut params.net, &grads)?;
    }
    Ok(log)
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of (sequence, step) pairs whose argmax is the label, per step.
pub fn per_step_accuracy(
    params: &MultiFrameParams,
    examples: &[SequenceExample],
) -> Result<Vec<f64>> {
    let s = params.spec;
    let feats: Vec<f64> = examples
        .iter()
        .flat_map(|e| e.features.iter().copied())
        .collect();
    let trace = multiframe_forward(&feats, examples.len(), params)?;
    Ok((0..s.steps)
        .map(|t| {
            let hits = examples
                .iter()
                .enumerate()
                .filter(|(b, e)| argmax(trace.step(*b, t)) == e.labels[t])
                .count();
            hits as f64 / examples.len().max(1) as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiFramePrediction {
    pub probs: Vec<Vec<f64>>,
    /// Most probable centroid per step, lowest index on ties.
    pub frames: Vec<usize>,
    pub flows: Vec<FlowField>,
    pub visualizations: Vec<Image>,
}

pub fn predict_multiframe(
    model: &Model,
    params: &MultiFrameParams,
    codebook: &FrameCodebook,
    image: &Image,
) -> Result<MultiFramePrediction> {
    if codebook.len() != params.spec.clusters {
        return Err(Error::shape(
            "predict-multi",
            format!(
                "frame codebook has {} centroids, model predicts {}",
                codebook.len(),
                params.spec.clusters
            ),
        ));
    }
    let features = extract_features(model, image, &params.spec)?;
    let trace = multiframe_forward(&features, 1, params)?;
    let probs: Vec<Vec<f64>> = (0..params.spec.steps)
        .map(|t| trace.step(0, t).to_vec())
        .collect();
    let frames: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let flows: Vec<FlowField> = frames.iter().map(|&k| codebook.frame(k)).collect();
    let scale = flows
        .iter()
        .map(FlowField::max_magnitude)
        .fold(0.0, f64::max);
    let visualizations = flows
        .iter()
        .map(|f| visualize_flow(f, Some(scale)))
        .collect();
    Ok(MultiFramePrediction {
        probs,
        frames,
        flows,
        visualizations,
    })
}
