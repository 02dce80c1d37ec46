use std::fmt::Write as _;
use std::path::PathBuf;

use super::canny::{canny_mask, CannyParams};
use super::{cell_cosine, cell_epe, masked_sum, nonzero_mask, EvalMask, MaskKind};
use crate::codebook::{
    quantize_coarse, soft_decode, FlowCodebook, PredictionGrid, QuantizedLabelGrid,
};
use crate::error::{Error, Result};
use crate::flow::{cell_means, center_crop_pair, FlowField, Image};
use crate::model::Model;

/// One evaluation image with its ground truth at grid resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub name: String,
    /// Network-sized crop.
    pub image: Image,
    /// Per-cell mean of the ground-truth flow.
    pub gt: FlowField,
    pub labels: QuantizedLabelGrid,
    /// One mask per [`MaskKind::ALL`] entry, same order.
    pub masks: Vec<EvalMask>,
}

/// Center-crops each pair to `input_size`, pools its flow to cell means,
/// quantizes them and derives the three masks.
pub fn prepare_items(
    pairs: &[(PathBuf, Image, FlowField)],
    codebook: &FlowCodebook,
    input_size: usize,
    rows: usize,
    cols: usize,
    canny: CannyParams,
) -> Result<Vec<EvalItem>> {
    pairs
        .iter()
        .map(|(path, image, flow)| {
            let (image, flow) = center_crop_pair(image, flow, input_size, input_size)?;
            let gt = cell_means(&flow, rows, cols)?;
            let labels = quantize_coarse(&gt, codebook);
            let masks = vec![
                EvalMask::all(rows, cols),
                canny_mask(&image, rows, cols, canny),
                nonzero_mask(&labels, codebook),
            ];
            Ok(EvalItem {
                name: path.display().to_string(),
                image,
                gt,
                labels,
                masks,
            })
        })
        .collect()
}

/// Per-cell ordering of candidate clusters.
#[derive(Debug, Clone, PartialEq)]
pub enum Ranking {
    /// Full class ranking per cell, best first.
    Classes(Vec<Vec<usize>>),
    /// Labels of retrieved frames, best match first: `frames[k][cell]`.
    /// The top-`n` candidates of a cell are the labels of the first `n`
    /// frames there.
    Frames {
        classes: usize,
        frames: Vec<Vec<usize>>,
    },
}

impl Ranking {
    pub fn from_grid(grid: &PredictionGrid) -> Self {
        Ranking::Classes((0..grid.cells()).map(|i| grid.ranking(i)).collect())
    }

    pub fn hit(&self, cell: usize, label: usize, n: usize) -> bool {
        match self {
            Ranking::Classes(lists) => lists[cell].iter().take(n).any(|&l| l == label),
            Ranking::Frames { frames, .. } => frames.iter().take(n).any(|f| f[cell] == label),
        }
    }

    /// 1-based position of `label` among the cell's distinct candidates;
    /// the class count when it never appears.
    pub fn rank(&self, cell: usize, label: usize) -> usize {
        match self {
            Ranking::Classes(lists) => lists[cell]
                .iter()
                .position(|&l| l == label)
                .map_or(lists[cell].len().max(label + 1), |p| p + 1),
            Ranking::Frames { classes, frames } => {
                let mut seen: Vec<usize> = Vec::new();
                for f in frames {
                    if !seen.contains(&f[cell]) {
                        seen.push(f[cell]);
                    }
                    if f[cell] == label {
                        return seen.len();
                    }
                }
                *classes
            }
        }
    }
}

/// What a predictor says about one image.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPrediction {
    /// Decoded flow at grid resolution.
    pub flow: FlowField,
    pub ranking: Ranking,
}

pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn predict(&self, item: &EvalItem) -> Result<CellPrediction>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    pub codebook: &'a FlowCodebook,
}

impl Predictor for ModelPredictor<'_> {
    fn name(&self) -> &str {
        "model"
    }

    fn predict(&self, item: &EvalItem) -> Result<CellPrediction> {
        let grid = self.model.forward(&item.image)?;
        Ok(CellPrediction {
            flow: soft_decode(&grid, self.codebook)?,
            ranking: Ranking::from_grid(&grid),
        })
    }
}

/// Returns the ground truth itself; the true label ranks first, the rest
/// follow in index order.
pub struct OraclePredictor {
    pub classes: usize,
}

impl Predictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, item: &EvalItem) -> Result<CellPrediction> {
        let lists = item
            .labels
            .labels
            .iter()
            .map(|&y| {
                std::iter::once(y)
                    .chain((0..self.classes).filter(|&c| c != y))
                    .collect()
            })
            .collect();
        Ok(CellPrediction {
            flow: item.gt.clone(),
            ranking: Ranking::Classes(lists),
        })
    }
}

/// Equal probability for every cluster at every cell.
pub struct UniformPredictor<'a> {
    pub codebook: &'a FlowCodebook,
}

impl Predictor for UniformPredictor<'_> {
    fn name(&self) -> &str {
        "uniform"
    }

    fn predict(&self, item: &EvalItem) -> Result<CellPrediction> {
        let grid = PredictionGrid::uniform(item.labels.rows, item.labels.cols, self.codebook.len());
        Ok(CellPrediction {
            flow: soft_decode(&grid, self.codebook)?,
            ranking: Ranking::from_grid(&grid),
        })
    }
}

/// Metric values of one image: `(metric, mask, sum, cells)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub name: String,
    pub values: Vec<(String, MaskKind, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub mask: MaskKind,
    /// Mean over images of the per-image mean; `None` when no image had
    /// a selected cell.
    pub value: Option<f64>,
    /// Selected cells summed over images.
    pub cells: usize,
    /// Images that contributed.
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub predictor: String,
    pub rows_cols: (usize, usize),
    pub rows: Vec<ReportRow>,
    pub per_image: Vec<ImageScores>,
    pub failures: Vec<String>,
}

fn metric_names(topn: &[usize]) -> Vec<String> {
    let mut names: Vec<String> = ["EPE", "Dir", "Orient"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(topn.iter().map(|n| format!("Top-{n}")));
    names.push("mean_rank".into());
    names
}

fn score(item: &EvalItem, pred: &CellPrediction, topn: &[usize]) -> Result<ImageScores> {
    if !pred.flow.same_dims(&item.gt) {
        return Err(Error::shape(
            format!("prediction for {}", item.name),
            format!(
                "flow is {}x{}, ground truth {}x{}",
                pred.flow.width(),
                pred.flow.height(),
                item.gt.width(),
                item.gt.height()
            ),
        ));
    }
    let mut values = Vec::new();
    for mask in &item.masks {
        let gt = &item.gt;
        let y = &item.labels.labels;
        let mut push = |name: String, (s, n): (f64, usize)| values.push((name, mask.kind, s, n));
        push(
            "EPE".into(),
            masked_sum(mask, |i| cell_epe(&pred.flow, gt, i)),
        );
        push(
            "Dir".into(),
            masked_sum(mask, |i| cell_cosine(&pred.flow, gt, i)),
        );
        push(
            "Orient".into(),
            masked_sum(mask, |i| cell_cosine(&pred.flow, gt, i).abs()),
        );
        for &n in topn {
            let hits = masked_sum(mask, |i| {
                if pred.ranking.hit(i, y[i], n) {
                    1.0
                } else {
                    0.0
                }
            });
            push(format!("Top-{n}"), hits);
        }
        push(
            "mean_rank".into(),
            masked_sum(mask, |i| pred.ranking.rank(i, y[i]) as f64),
        );
    }
    Ok(ImageScores {
        name: item.name.clone(),
        values,
    })
}

/// Runs `predictor` over every item and aggregates per-image means.
/// Items that fail are listed in `failures` and left out.
pub fn evaluate(
    predictor: &dyn Predictor,
    items: &[EvalItem],
    topn: &[usize],
    jobs: usize,
) -> Result<MetricReport> {
    if topn.contains(&0) {
        return Err(Error::InvalidArgument("top-n values must be >= 1".into()));
    }
    let Some(first) = items.first() else {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    };
    let run = |item: &EvalItem| predictor.predict(item).and_then(|p| score(item, &p, topn));
    let results: Vec<Result<ImageScores>> = if jobs <= 1 {
        items.iter().map(run).collect()
    } else {
        let size = items.len().div_ceil(jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(size)
                .map(|chunk| s.spawn(move || chunk.iter().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    let mut per_image = Vec::new();
    let mut failures = Vec::new();
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(s) => per_image.push(s),
            Err(e) => failures.push(format!("{}: {e}", item.name)),
        }
    }
    let mut rows = Vec::new();
    for metric in metric_names(topn) {
        for mask in MaskKind::ALL {
            let (mut total, mut images, mut cells) = (0.0, 0, 0);
            for img in &per_image {
                for (m, k, s, n) in &img.values {
                    if *m == metric && *k == mask && *n > 0 {
                        total += s / *n as f64;
                        images += 1;
                        cells += n;
                    }
                }
            }
            rows.push(ReportRow {
                metric: metric.clone(),
                mask,
                value: (images > 0).then(|| total / images as f64),
                cells,
                images,
            });
        }
    }
    Ok(MetricReport {
        predictor: predictor.name().to_string(),
        rows_cols: (first.labels.rows, first.labels.cols),
        rows,
        per_image,
        failures,
    })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| format!("{x}"))
}

impl MetricReport {
    pub fn value(&self, metric: &str, mask: MaskKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.mask == mask)
            .and_then(|r| r.value)
    }

    /// `metric,mask,value,cells`; undefined values are written as `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mask,value,cells\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.metric,
                r.mask.label(),
                fmt_value(r.value),
                r.cells
            );
        }
        out
    }

    /// Every image's per-mask mean, for external significance tests.
    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("image,metric,mask,value,cells\n");
        for img in &self.per_image {
            for (m, k, s, n) in &img.values {
                let v = (*n > 0).then(|| s / *n as f64);
                let _ = writeln!(out, "{},{m},{},{},{n}", img.name, k.label(), fmt_value(v));
            }
        }
        out
    }

    /// Aligned table: one row per metric, one column per mask.
    pub fn to_table(&self) -> String {
        let (m, n) = self.rows_cols;
        let mut out = String::new();
        let _ = writeln!(out, "# predictor: {}", self.predictor);
        let _ = writeln!(
            out,
            "# evaluated at grid resolution ({m}x{n} cells) against per-cell mean ground-truth flow"
        );
        let _ = writeln!(
            out,
            "# per-image mean over masked cells, then unweighted mean over {} images ({} failed)",
            self.per_image.len(),
            self.failures.len()
        );
        let _ = writeln!(
            out,
            "{:<10}{:>12}{:>12}{:>12}",
            "metric", "All", "Canny", "NZ"
        );
        let mut metrics: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
        }
        for metric in metrics {
            let _ = write!(out, "{metric:<10}");
            for mask in MaskKind::ALL {
                let cell = self
                    .value(metric, mask)
                    .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                let _ = write!(out, "{cell:>12}");
            }
            out.push('\n');
        }
        out
    }
}
