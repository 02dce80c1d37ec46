use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{preprocess, spatial_loss, Model};
use crate::codebook::{quantize, FlowCodebook, PredictionGrid, QuantizedLabelGrid};
use crate::error::{Error, Result};
use crate::flow::{
    augment, average_flows, crop_source_side, read_flo, read_image, read_manifest,
    resize_short_side, AugmentParams, FlowField, Image,
};
use crate::nn::{learning_rate, Sgd};
use crate::tensor::Tensor4;

/// A network-sized image with its quantized label grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub image: Image,
    pub label: QuantizedLabelGrid,
}

/// Image/flow pairs read from a manifest, short-side resized to
/// [`crop_source_side`] of the model input. Records that could not be read are listed in `skipped`.
#[derive(Debug, Clone, Default)]
pub struct LoadedExamples {
    pub pairs: Vec<(PathBuf, Image, FlowField)>,
    pub skipped: Vec<String>,
}

fn to_rgb(image: Image) -> Result<Image> {
    if image.channels() == 3 {
        return Ok(image);
    }
    let data = image.data().iter().flat_map(|&g| [g, g, g]).collect();
    Image::from_vec(image.width(), image.height(), 3, data)
}

/// Reads every manifest record, averaging its flows into one label field.
/// Fails only when no record is usable.
pub fn load_examples(manifest: &Path, input_size: usize) -> Result<LoadedExamples> {
    let mut out = LoadedExamples::default();
    for rec in read_manifest(manifest)? {
        let loaded = (|| -> Result<(Image, FlowField)> {
            let image = to_rgb(read_image(&rec.image)?)?;
            let flows = rec
                .flows
                .iter()
                .map(|p| read_flo(p))
                .collect::<Result<Vec<_>>>()?;
            let flow = average_flows(&flows)?;
            if !flow.same_dims(&FlowField::zeros(image.width(), image.height())?) {
                return Err(Error::shape(
                    "manifest record",
                    format!(
                        "image is {}x{}, flow {}x{}",
                        image.width(),
                        image.height(),
                        flow.width(),
                        flow.height()
                    ),
                ));
            }
            resize_short_side(&image, &flow, crop_source_side(input_size))
        })();
        match loaded {
            Ok((image, flow)) => out.pairs.push((rec.image, image, flow)),
            Err(e) => out.skipped.push(format!("{}: {e}", rec.image.display())),
        }
    }
    if out.pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{}: all {} records skipped",
            manifest.display(),
            out.skipped.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iter: u64,
    /// Mean per-example spatial loss of the minibatch.
    pub loss: f64,
    pub lr: f64,
}

pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    let mut text = String::from("iter,loss,lr\n");
    for r in log {
        text.push_str(&format!("{},{},{}\n", r.iter, r.loss, r.lr));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    /// Record the loss every `log_every` iterations (and at the first and last).
    pub log_every: u64,
    /// Call the snapshot hook every this many iterations; 0 disables it.
    pub snapshot_every: u64,
    /// Worker threads per minibatch. 1 is the deterministic reference.
    pub jobs: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            log_every: 100,
            snapshot_every: 0,
            jobs: 1,
        }
    }
}

fn example_from(
    image: &Image,
    flow: &FlowField,
    params: AugmentParams,
    model: &Model,
    codebook: &FlowCodebook,
) -> Result<TrainingExample> {
    let (img, fl) = augment(image, flow, params)?;
    let c = &model.config;
    Ok(TrainingExample {
        label: quantize(&fl, codebook, c.grid_m, c.grid_n)?,
        image: img,
    })
}

fn centered(image: &Image, size: usize) -> AugmentParams {
    AugmentParams {
        flip: false,
        x: (image.width() - size) / 2,
        y: (image.height() - size) / 2,
        width: size,
        height: size,
    }
}

/// Loss sum and parameter gradients (already divided by `scale`) of a chunk.
fn chunk_gradients(
    model: &Model,
    batch: &[&TrainingExample],
    scale: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let images: Vec<&Image> = batch.iter().map(|e| &e.image).collect();
    let input = model.input_tensor(&images)?;
    let trace = model.spec.forward(&model.params, &input)?;
    let out = trace.output();
    let c = &model.config;
    let mut grad = Vec::with_capacity(out.len());
    let mut loss = 0.0;
    for (b, ex) in batch.iter().enumerate() {
        let grid = PredictionGrid {
            rows: c.grid_m,
            cols: c.grid_n,
            classes: c.clusters,
            probs: out.item(b).to_vec(),
        };
        let (l, g) = spatial_loss(&grid, &ex.label)?;
        loss += l;
        grad.extend(g.into_iter().map(|v| v / scale));
    }
    let upstream = Tensor4::from_vec(out.dims(), grad)?;
    let end = model.spec.layers.len() - 1;
    let grads = model
        .spec
        .backward_from(&model.params, &trace, end, &upstream)?;
    Ok((loss, grads.params))
}

fn batch_gradients(
    model: &Model,
    batch: &[&TrainingExample],
    jobs: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let scale = batch.len() as f64;
    if jobs <= 1 || batch.len() < 2 {
        return chunk_gradients(model, batch, scale);
    }
    let size = batch.len().div_ceil(jobs.min(batch.len()));
    let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(size)
            .map(|chunk| s.spawn(move || chunk_gradients(model, chunk, scale)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::NonFinite("worker panicked".into())))
            })
            .collect()
    });
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("at least one chunk")?;
    for r in iter {
        let (l, g) = r?;
        loss += l;
        for (acc, part) in grads.iter_mut().zip(g) {
            acc.iter_mut().zip(part).for_each(|(a, p)| *a += p);
        }
    }
    Ok((loss, grads))
}

/// Minibatch SGD on the spatial loss until the model reaches
/// `config.sgd.max_iters` iterations.
///
/// Pairs are first short-side resized to [`crop_source_side`] of the input.
/// Examples are visited in reshuffled epochs. With augmentation each
/// visit draws a random crop and, if `config.flip`, a fair-coin horizontal
/// flip; without it every example is center-cropped once up front. A fresh model
/// (iteration 0) first takes its input mean from the centered training
/// crops. `on_snapshot` runs every `opts.snapshot_every` iterations.
pub fn train(
    model: &mut Model,
    pairs: &[(Image, FlowField)],
    codebook: &FlowCodebook,
    opts: &TrainOptions,
    on_snapshot: &mut dyn FnMut(&Model) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no training examples".into()));
    }
    if codebook.len() != model.config.clusters {
        return Err(Error::shape(
            "train",
            format!(
                "codebook has {} clusters, model expects {}",
                codebook.len(),
                model.config.clusters
            ),
        ));
    }
    let size = model.config.input_size;
    let source = crop_source_side(size);
    let pairs = pairs
        .iter()
        .map(|(img, fl)| {
            if !fl.same_dims(&FlowField::zeros(img.width(), img.height())?) {
                return Err(Error::shape(
                    "training pair",
                    format!(
                        "{}x{} image with {}x{} flow",
                        img.width(),
                        img.height(),
                        fl.width(),
                        fl.height()
                    ),
                ));
            }
            resize_short_side(img, fl, source)
        })
        .collect::<Result<Vec<_>>>()?;
    if model.params.iteration == 0 {
        let crops = pairs
            .iter()
            .map(|(img, _)| preprocess(img, size))
            .collect::<Result<Vec<_>>>()?;
        model.fit_mean(&crops.iter().collect::<Vec<_>>());
    }
    let cfg = model.config.sgd;
    let mut sgd = Sgd::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fixed: Vec<TrainingExample> = if model.config.augment {
        Vec::new()
    } else {
        pairs
            .iter()
            .map(|(img, fl)| example_from(img, fl, centered(img, size), model, codebook))
            .collect::<Result<_>>()?
    };
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut log = Vec::new();
    let log_every = opts.log_every.max(1);
    while model.params.iteration < cfg.max_iters {
        let iter = model.params.iteration;
        let mut picked = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order = (0..pairs.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let drawn: Vec<TrainingExample> = if model.config.augment {
            picked
                .iter()
                .map(|&i| {
                    let (img, fl) = &pairs[i];
                    let mut p =
                        AugmentParams::random(&mut rng, img.width(), img.height(), size, size)?;
                    p.flip &= model.config.flip;
                    example_from(img, fl, p, model, codebook)
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let batch: Vec<&TrainingExample> = if model.config.augment {
            drawn.iter().collect()
        } else {
            picked.iter().map(|&i| &fixed[i]).collect()
        };
        let (loss_sum, grads) = batch_gradients(model, &batch, opts.jobs)?;
        let loss = loss_sum / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at iteration {iter}"
            )));
        }
        let lr = learning_rate(&cfg, iter);
        if iter.is_multiple_of(log_every) || iter + 1 == cfg.max_iters {
            log.push(LossRecord { iter, loss, lr });
        }
        sgd.step(&mut model.params, &grads)?;
        if opts.snapshot_every > 0 && model.params.iteration.is_multiple_of(opts.snapshot_every) {
            on_snapshot(model)?;
        }
    }
    Ok(log)
}
