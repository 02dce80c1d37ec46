use super::report::{CellPrediction, EvalItem, Predictor, Ranking};
use crate::codebook::QuantizedLabelGrid;
use crate::error::{Error, Result};
use crate::flow::{cell_bounds, FlowField, Image};
use crate::model::Model;

/// Side of the grayscale thumbnail used as the raw-pixel feature.
pub const RAW_FEATURE_SIDE: usize = 32;

fn span(extent: usize, cells: usize, i: usize) -> (usize, usize) {
    let (a, b) = cell_bounds(extent, cells, i);
    if a < b {
        (a, b)
    } else {
        let p = (i * extent / cells).min(extent - 1);
        (p, p + 1)
    }
}

/// Box-averaged 32×32 grayscale thumbnail, row-major.
pub fn raw_features(image: &Image) -> Vec<f64> {
    let gray = image.to_gray();
    let (w, h) = (gray.width(), gray.height());
    let s = RAW_FEATURE_SIDE;
    let mut out = Vec::with_capacity(s * s);
    for r in 0..s {
        let (y0, y1) = span(h, s, r);
        for c in 0..s {
            let (x0, x1) = span(w, s, c);
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += gray.get(x, y, 0);
                }
            }
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `n` training features closest to `query` in L2,
/// nearest first, lower index first among equal distances.
pub fn nn_rank(query: &[f64], train: &[Vec<f64>], n: usize) -> Vec<usize> {
    let dists: Vec<f64> = train.iter().map(|t| sq_dist(query, t)).collect();
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Per cell, the matched frames' labels in match order with repeats dropped.
pub fn nn_cell_rankings(matches: &[usize], labels: &[QuantizedLabelGrid]) -> Vec<Vec<usize>> {
    let cells = matches.first().map_or(0, |&m| labels[m].labels.len());
    (0..cells)
        .map(|i| {
            let mut out: Vec<usize> = Vec::new();
            for &m in matches {
                let l = labels[m].labels[i];
                if !out.contains(&l) {
                    out.push(l);
                }
            }
            out
        })
        .collect()
}

/// Retrieval baseline: the closest training images vote with their labels,
/// and the best match's ground truth is the predicted flow.
pub struct NnPredictor<'a> {
    /// Penultimate activations of this model, or raw thumbnails when `None`.
    pub model: Option<&'a Model>,
    features: Vec<Vec<f64>>,
    labels: Vec<QuantizedLabelGrid>,
    flows: Vec<FlowField>,
    depth: usize,
    classes: usize,
}

impl<'a> NnPredictor<'a> {
    /// `depth` frames are retrieved per query.
    pub fn new(
        model: Option<&'a Model>,
        train: &[EvalItem],
        depth: usize,
        classes: usize,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset(
                "nearest-neighbor training set is empty".into(),
            ));
        }
        let mut me = Self {
            model,
            features: Vec::with_capacity(train.len()),
            labels: train.iter().map(|t| t.labels.clone()).collect(),
            flows: train.iter().map(|t| t.gt.clone()).collect(),
            depth: depth.clamp(1, train.len()),
            classes,
        };
        for t in train {
            let f = me.features_of(&t.image)?;
            me.features.push(f);
        }
        Ok(me)
    }

    fn features_of(&self, image: &Image) -> Result<Vec<f64>> {
        match self.model {
            Some(m) => m.features(image),
            None => Ok(raw_features(image)),
        }
    }
}

impl Predictor for NnPredictor<'_> {
    fn name(&self) -> &str {
        if self.model.is_some() {
            "nn-penultimate"
        } else {
            "nn-raw"
        }
    }

    fn predict(&self, item: &EvalItem) -> Result<CellPrediction> {
        let q = self.features_of(&item.image)?;
        let matches = nn_rank(&q, &self.features, self.depth);
        Ok(CellPrediction {
            flow: self.flows[matches[0]].clone(),
            ranking: Ranking::Frames {
                classes: self.classes,
                frames: matches
                    .iter()
                    .map(|&m| self.labels[m].labels.clone())
                    .collect(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_query_ranks_first() {
        let train = vec![vec![0.0, 1.0], vec![5.0, 5.0], vec![1.0, 1.0]];
        assert_eq!(nn_rank(&[5.0, 5.0], &train, 1), vec![1]);
        assert_eq!(nn_rank(&[0.5, 1.0], &train, 3), vec![0, 2, 1]);
    }

    #[test]
    fn cell_rankings_drop_repeats() {
        let l = |v: Vec<usize>| QuantizedLabelGrid::new(1, 2, v, 5).unwrap();
        let labels = vec![l(vec![1, 2]), l(vec![1, 3]), l(vec![4, 2])];
        assert_eq!(
            nn_cell_rankings(&[2, 0, 1], &labels),
            vec![vec![4, 1], vec![2, 3]]
        );
    }

    #[test]
    fn raw_features_average_blocks() {
        let img = Image::from_vec(
            64,
            64,
            1,
            (0..64 * 64).map(|i| ((i % 64) / 32) as f64).collect(),
        )
        .unwrap();
        let f = raw_features(&img);
        assert_eq!(f.len(), 1024);
        assert_eq!(f[15], 0.0);
        assert_eq!(f[16], 1.0);
        let small = Image::from_vec(8, 8, 1, vec![0.5; 64]).unwrap();
        assert!(raw_features(&small).iter().all(|&v| v == 0.5));
    }
}
