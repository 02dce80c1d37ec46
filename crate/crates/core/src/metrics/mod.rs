//! Evaluation of predicted coarse flow against cell-mean ground truth.
//!
//! Every metric is a mean over the cells selected by an [`EvalMask`]. A
//! mask that selects nothing yields `None` ("undefined"), which callers
//! exclude from any further averaging.

mod baseline;
mod canny;
mod report;

use crate::codebook::{FlowCodebook, PredictionGrid, QuantizedLabelGrid};
use crate::error::{Error, Result};
use crate::flow::FlowField;

pub use baseline::{nn_cell_rankings, nn_rank, raw_features, NnPredictor, RAW_FEATURE_SIDE};
pub use canny::{canny_edges, canny_mask, CannyParams};
pub use report::{
    evaluate, prepare_items, CellPrediction, EvalItem, ImageScores, MetricReport, ModelPredictor,
    OraclePredictor, Predictor, Ranking, ReportRow, UniformPredictor,
};

/// Norm below which a vector counts as zero for the angular metrics.
pub const ZERO_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    All,
    Canny,
    NonZero,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::All, MaskKind::Canny, MaskKind::NonZero];

    pub fn label(self) -> &'static str {
        match self {
            MaskKind::All => "All",
            MaskKind::Canny => "Canny",
            MaskKind::NonZero => "NZ",
        }
    }
}

/// Cells of an `M × N` grid selected for evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalMask {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
    pub kind: MaskKind,
}

impl EvalMask {
    pub fn all(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![true; rows * cols],
            kind: MaskKind::All,
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    fn check(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if (self.rows, self.cols) != (rows, cols) || self.cells.len() != rows * cols {
            return Err(Error::shape(
                what.to_string(),
                format!("mask is {}x{}, grid {rows}x{cols}", self.rows, self.cols),
            ));
        }
        Ok(())
    }
}

/// Cells whose ground-truth label is not the codebook's zero cluster.
pub fn nonzero_mask(gt: &QuantizedLabelGrid, codebook: &FlowCodebook) -> EvalMask {
    let zero = codebook.zero_index();
    EvalMask {
        rows: gt.rows,
        cols: gt.cols,
        cells: gt.labels.iter().map(|&l| l != zero).collect(),
        kind: MaskKind::NonZero,
    }
}

/// Sum and count of `f` over the masked cells.
pub(crate) fn masked_sum(mask: &EvalMask, mut f: impl FnMut(usize) -> f64) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, _) in mask.cells.iter().enumerate().filter(|(_, &m)| m) {
        sum += f(i);
        n += 1;
    }
    (sum, n)
}

fn mean(pair: (f64, usize)) -> Option<f64> {
    (pair.1 > 0).then(|| pair.0 / pair.1 as f64)
}

fn check_fields(pred: &FlowField, gt: &FlowField, mask: &EvalMask, what: &str) -> Result<()> {
    if !pred.same_dims(gt) {
        return Err(Error::shape(
            what.to_string(),
            format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            ),
        ));
    }
    mask.check(gt.height(), gt.width(), what)
}

fn vec_at(f: &FlowField, i: usize) -> (f64, f64) {
    (f.data()[2 * i], f.data()[2 * i + 1])
}

pub(crate) fn cell_epe(pred: &FlowField, gt: &FlowField, i: usize) -> f64 {
    let (a, b) = (vec_at(pred, i), vec_at(gt, i));
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Cosine between the two vectors, 0 when either is (near) zero.
pub(crate) fn cell_cosine(pred: &FlowField, gt: &FlowField, i: usize) -> f64 {
    let (a, b) = (vec_at(pred, i), vec_at(gt, i));
    let (na, nb) = (a.0.hypot(a.1), b.0.hypot(b.1));
    if na > ZERO_NORM && nb > ZERO_NORM {
        ((a.0 * b.0 + a.1 * b.1) / (na * nb)).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Mean end-point error over masked cells.
pub fn epe(pred: &FlowField, gt: &FlowField, mask: &EvalMask) -> Result<Option<f64>> {
    check_fields(pred, gt, mask, "epe")?;
    Ok(mean(masked_sum(mask, |i| cell_epe(pred, gt, i))))
}

/// Mean cosine similarity over masked cells.
pub fn direction_similarity(
    pred: &FlowField,
    gt: &FlowField,
    mask: &EvalMask,
) -> Result<Option<f64>> {
    check_fields(pred, gt, mask, "direction similarity")?;
    Ok(mean(masked_sum(mask, |i| cell_cosine(pred, gt, i))))
}

/// Mean absolute cosine similarity over masked cells.
pub fn orientation_similarity(
    pred: &FlowField,
    gt: &FlowField,
    mask: &EvalMask,
) -> Result<Option<f64>> {
    check_fields(pred, gt, mask, "orientation similarity")?;
    Ok(mean(masked_sum(mask, |i| cell_cosine(pred, gt, i).abs())))
}

/// Fraction of masked cells whose true cluster is among the `n` most
/// probable. `n` above the class count is clamped.
pub fn top_n_accuracy(
    pred: &PredictionGrid,
    gt: &QuantizedLabelGrid,
    n: usize,
    mask: &EvalMask,
) -> Result<Option<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("top-n needs n >= 1".into()));
    }
    if (pred.rows, pred.cols) != (gt.rows, gt.cols) {
        return Err(Error::shape(
            "top-n accuracy",
            format!(
                "prediction {}x{} vs labels {}x{}",
                pred.rows, pred.cols, gt.rows, gt.cols
            ),
        ));
    }
    mask.check(gt.rows, gt.cols, "top-n accuracy")?;
    let n = n.min(pred.classes);
    Ok(mean(masked_sum(mask, |i| {
        let hit = pred.ranking(i)[..n].contains(&gt.labels[i]);
        if hit {
            1.0
        } else {
            0.0
        }
    })))
}
