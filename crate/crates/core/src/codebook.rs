//! Regression as classification: a k-means codebook over flow vectors,
//! coarse-grid quantization of dense flow into class labels, and decoding
//! of per-cell class distributions back into flow.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{cell_means, FlowField};

/// Default number of flow clusters.
pub const DEFAULT_CLUSTERS: usize = 40;
/// Default number of whole-frame clusters for sequence prediction.
pub const DEFAULT_FRAME_CLUSTERS: usize = 1000;
/// Cap on the number of vectors fed to k-means.
pub const MAX_CODEBOOK_SAMPLES: usize = 1_000_000;

/// Result of a k-means run over `dim`-dimensional points.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub dim: usize,
    /// `k` centers, flattened.
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub sse_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center, lowest index on ties.
pub fn nearest_center(centers: &[f64], dim: usize, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, point);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn count_distinct(points: &[f64], dim: usize, enough: usize) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for p in points.chunks_exact(dim) {
        // +0.0 and -0.0 are the same point
        seen.insert(p.iter().map(|v| (v + 0.0).to_bits()).collect());
        if seen.len() >= enough {
            break;
        }
    }
    seen.len()
}

/// Lloyd's algorithm from k-means++ seeding. Deterministic for a seed.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument(format!(
            "{} values do not form {dim}-dimensional points",
            points.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if let Some(i) = points.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("k-means input value {i}")));
    }
    let n = points.len() / dim;
    let distinct = count_distinct(points, dim, k);
    if distinct < k {
        return Err(Error::TooFewSamples {
            needed: k,
            found: distinct,
        });
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    // k-means++ seeding
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(point(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centers[..dim])).collect();
    while centers.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
        }
        let pick = pick.expect("distinct points remain while fewer than k centers exist");
        let start = centers.len();
        centers.extend_from_slice(point(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centers[start..start + dim]));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut sse_history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut sse = 0.0;
        for i in 0..n {
            let (c, d) = nearest_center(&centers, dim, point(i));
            sse += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        sse_history.push(sse);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // an emptied cluster keeps its previous center
            if counts[c] > 0 {
                for j in 0..dim {
                    centers[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
    Ok(KMeans {
        dim,
        centers,
        assignments,
        sse_history,
    })
}

/// Uniform subsample of at most `max` points, order preserved.
pub fn subsample(points: &[f64], dim: usize, max: usize, seed: u64) -> Vec<f64> {
    let n = points.len() / dim;
    if n <= max {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, max).into_vec();
    idx.sort_unstable();
    idx.iter()
        .flat_map(|&i| points[i * dim..(i + 1) * dim].iter().copied())
        .collect()
}

/// `C` cluster centers in flow space.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCodebook {
    centers: Vec<[f64; 2]>,
    zero_index: usize,
}

impl FlowCodebook {
    pub fn new(centers: Vec<[f64; 2]>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidArgument(
                "a codebook needs at least one center".into(),
            ));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook center".into()));
        }
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if centers[i] == centers[j] {
                    return Err(Error::InvalidArgument(format!(
                        "codebook centers {i} and {j} coincide"
                    )));
                }
            }
        }
        let mut zero_index = 0;
        let mut best = f64::INFINITY;
        for (i, c) in centers.iter().enumerate() {
            let m = c[0].hypot(c[1]);
            if m < best {
                best = m;
                zero_index = i;
            }
        }
        Ok(Self {
            centers,
            zero_index,
        })
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Index of the smallest-magnitude center (lowest index on ties).
    pub fn zero_index(&self) -> usize {
        self.zero_index
    }

    /// Nearest center to `(u, v)`, lowest index on ties.
    pub fn nearest(&self, u: f64, v: f64) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centers.iter().enumerate() {
            let d = (c[0] - u).powi(2) + (c[1] - v).powi(2);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn max_magnitude(&self) -> f64 {
        self.centers
            .iter()
            .map(|c| c[0].hypot(c[1]))
            .fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("FLOWCB 1 {}\n", self.centers.len());
        for c in &self.centers {
            let _ = writeln!(s, "{} {}", c[0], c[1]);
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = header_fields(lines.next(), "FLOWCB", 3, origin)?;
        let c = header[0];
        let mut centers = Vec::with_capacity(c);
        for _ in 0..c {
            let vals = float_line(lines.next(), 2, origin)?;
            centers.push([vals[0], vals[1]]);
        }
        trailing(lines, origin)?;
        Self::new(centers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

fn parse_err(origin: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Parses `TAG 1 a b …` and returns the numeric fields after the version.
fn header_fields(
    line: Option<(usize, &str)>,
    tag: &str,
    count: usize,
    origin: &Path,
) -> Result<Vec<usize>> {
    let (_, line) = line.ok_or_else(|| parse_err(origin, 1, "empty file"))?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != count || fields[0] != tag || fields[1] != "1" {
        return Err(parse_err(
            origin,
            1,
            format!("expected header `{tag} 1 …` with {count} fields, got {line:?}"),
        ));
    }
    fields[2..]
        .iter()
        .map(|f| {
            f.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| parse_err(origin, 1, format!("bad count {f:?}")))
        })
        .collect()
}

fn float_line(line: Option<(usize, &str)>, count: usize, origin: &Path) -> Result<Vec<f64>> {
    let (i, line) = line.ok_or_else(|| parse_err(origin, 0, "unexpected end of file"))?;
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|f| f.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(origin, i + 1, e.to_string()))?;
    if vals.len() != count {
        return Err(parse_err(
            origin,
            i + 1,
            format!("expected {count} numbers, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

fn trailing<'a>(mut lines: impl Iterator<Item = (usize, &'a str)>, origin: &Path) -> Result<()> {
    match lines.find(|(_, l)| !l.trim().is_empty()) {
        Some((i, _)) => Err(parse_err(origin, i + 1, "unexpected trailing content")),
        None => Ok(()),
    }
}

/// Fits a flow codebook on 2-D samples (flattened `u, v` pairs).
pub fn build_codebook(
    samples: &[f64],
    clusters: usize,
    seed: u64,
    max_iters: usize,
) -> Result<FlowCodebook> {
    let km = kmeans(samples, 2, clusters, seed, max_iters)?;
    FlowCodebook::new(km.centers.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

/// Per-cell cluster indices over an `rows × cols` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedLabelGrid {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<usize>,
}

impl QuantizedLabelGrid {
    pub fn new(rows: usize, cols: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::shape(
                "label grid",
                format!(
                    "{rows}x{cols} needs {} labels, got {}",
                    rows * cols,
                    labels.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Assigns each cell's mean flow vector to its nearest codebook center.
pub fn quantize(
    flow: &FlowField,
    codebook: &FlowCodebook,
    rows: usize,
    cols: usize,
) -> Result<QuantizedLabelGrid> {
    let means = cell_means(flow, rows, cols)?;
    Ok(quantize_coarse(&means, codebook))
}

/// Labels a field that is already at grid resolution.
pub fn quantize_coarse(coarse: &FlowField, codebook: &FlowCodebook) -> QuantizedLabelGrid {
    QuantizedLabelGrid {
        rows: coarse.height(),
        cols: coarse.width(),
        labels: coarse
            .vectors()
            .map(|(u, v)| codebook.nearest(u, v))
            .collect(),
    }
}

/// Per-cell probability distributions over `classes` clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
    /// Cell-major, class-minor.
    pub probs: Vec<f64>,
}

impl PredictionGrid {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(rows: usize, cols: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || classes == 0 || probs.len() != rows * cols * classes {
            return Err(Error::shape(
                "prediction grid",
                format!("{rows}x{cols}x{classes} vs {} values", probs.len()),
            ));
        }
        for (i, cell) in probs.chunks_exact(classes).enumerate() {
            let s: f64 = cell.iter().sum();
            if cell.iter().any(|p| !(0.0..=1.0).contains(p))
                || (s - 1.0).abs() > Self::SUM_TOLERANCE
            {
                return Err(Error::InvalidArgument(format!(
                    "cell {i} is not a probability distribution (sum {s})"
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            classes,
            probs,
        })
    }

    pub fn uniform(rows: usize, cols: usize, classes: usize) -> Self {
        Self {
            rows,
            cols,
            classes,
            probs: vec![1.0 / classes as f64; rows * cols * classes],
        }
    }

    pub fn one_hot(labels: &QuantizedLabelGrid, classes: usize) -> Self {
        let mut probs = vec![0.0; labels.len() * classes];
        for (i, &l) in labels.labels.iter().enumerate() {
            probs[i * classes + l] = 1.0;
        }
        Self {
            rows: labels.rows,
            cols: labels.cols,
            classes,
            probs,
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    /// Classes of cell `i` from most to least probable, lower index first
    /// among equal probabilities.
    pub fn ranking(&self, i: usize) -> Vec<usize> {
        let p = self.cell(i);
        let mut idx: Vec<usize> = (0..self.classes).collect();
        idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        idx
    }
}

fn check_classes(pred: &PredictionGrid, codebook: &FlowCodebook) -> Result<()> {
    if pred.classes != codebook.len() {
        return Err(Error::shape(
            "decode",
            format!(
                "prediction has {} classes, codebook {}",
                pred.classes,
                codebook.len()
            ),
        ));
    }
    Ok(())
}

/// Expected flow per cell: `Σ_r p_r · center_r`.
pub fn soft_decode(pred: &PredictionGrid, codebook: &FlowCodebook) -> Result<FlowField> {
    check_classes(pred, codebook)?;
    let mut out = Vec::with_capacity(pred.cells() * 2);
    for i in 0..pred.cells() {
        let (mut u, mut v) = (0.0, 0.0);
        for (p, c) in pred.cell(i).iter().zip(codebook.centers()) {
            u += p * c[0];
            v += p * c[1];
        }
        out.push(u);
        out.push(v);
    }
    FlowField::from_vec(pred.cols, pred.rows, out)
}

/// Most probable class per cell, lowest index on ties.
pub fn hard_decode(pred: &PredictionGrid) -> QuantizedLabelGrid {
    let labels = (0..pred.cells())
        .map(|i| {
            let cell = pred.cell(i);
            let mut best = 0;
            for (r, &p) in cell.iter().enumerate() {
                if p > cell[best] {
                    best = r;
                }
            }
            best
        })
        .collect();
    QuantizedLabelGrid {
        rows: pred.rows,
        cols: pred.cols,
        labels,
    }
}

/// Whole coarse flow frames as cluster centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCodebook {
    pub rows: usize,
    pub cols: usize,
    /// Each centroid is `rows · cols · 2` values, cell-major, `(u, v)` interleaved.
    pub centroids: Vec<Vec<f64>>,
}

impl FrameCodebook {
    pub fn new(rows: usize, cols: usize, centroids: Vec<Vec<f64>>) -> Result<Self> {
        if centroids.is_empty() || rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(
                "a frame codebook needs at least one centroid".into(),
            ));
        }
        if let Some(i) = centroids.iter().position(|c| c.len() != rows * cols * 2) {
            return Err(Error::shape(
                "frame codebook",
                format!(
                    "centroid {i} has {} values, expected {}",
                    centroids[i].len(),
                    rows * cols * 2
                ),
            ));
        }
        Ok(Self {
            rows,
            cols,
            centroids,
        })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn frame(&self, k: usize) -> FlowField {
        FlowField::from_vec(self.cols, self.rows, self.centroids[k].clone())
            .expect("centroid length checked at construction")
    }

    /// Nearest centroid to a coarse frame, lowest index on ties.
    pub fn nearest(&self, frame: &FlowField) -> Result<usize> {
        if frame.width() != self.cols || frame.height() != self.rows {
            return Err(Error::shape(
                "frame codebook lookup",
                format!(
                    "frame is {}x{}, codebook {}x{}",
                    frame.height(),
                    frame.width(),
                    self.rows,
                    self.cols
                ),
            ));
        }
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(c, frame.data());
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best.0)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "FRAMECB 1 {} {} {}\n",
            self.centroids.len(),
            self.rows,
            self.cols
        );
        for c in &self.centroids {
            let line: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let h = header_fields(lines.next(), "FRAMECB", 5, origin)?;
        let (k, rows, cols) = (h[0], h[1], h[2]);
        let mut centroids = Vec::with_capacity(k);
        for _ in 0..k {
            centroids.push(float_line(lines.next(), rows * cols * 2, origin)?);
        }
        trailing(lines, origin)?;
        Self::new(rows, cols, centroids)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// k-means over whole coarse frames flattened to `rows · cols · 2` vectors.
pub fn build_frame_codebook(
    frames: &[FlowField],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<FrameCodebook> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames to cluster".into()))?;
    if let Some(i) = frames.iter().position(|f| !f.same_dims(first)) {
        return Err(Error::shape(
            "build_frame_codebook",
            format!("frame {i} differs in size"),
        ));
    }
    let dim = first.data().len();
    let points: Vec<f64> = frames
        .iter()
        .flat_map(|f| f.data().iter().copied())
        .collect();
    let km = kmeans(&points, dim, k, seed, max_iters)?;
    FrameCodebook::new(
        first.height(),
        first.width(),
        km.centers.chunks_exact(dim).map(<[f64]>::to_vec).collect(),
    )
}
