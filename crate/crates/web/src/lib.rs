//! WebAssembly bindings for the flowcast browser demo.
//!
//! The page calls three operations on a generated [`Scene`]: render it with
//! its ground-truth flow, quantize that flow against a k-means codebook,
//! and compute the Canny edge mask used for evaluation. The plain Rust
//! methods return `Result<_, String>` so they run natively in tests; the
//! `js_*` wrappers convert errors for JavaScript.

use flowcast::codebook::{
    build_codebook, hard_decode, quantize, soft_decode, FlowCodebook, PredictionGrid,
};
use flowcast::flow::synth::{random_scene, synthesize_sequence, SceneKind};
use flowcast::flow::{cell_bounds, cell_means, visualize_flow, FlowField, Image};
use flowcast::metrics::{canny_edges, canny_mask, epe, CannyParams, EvalMask};
use wasm_bindgen::prelude::*;

/// Scenes pooled to fit the demo codebook.
const CODEBOOK_SCENES: u32 = 24;

fn to_rgba(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.width() * image.height() * 4);
    for y in 0..image.height() {
        for x in 0..image.width() {
            for c in 0..3 {
                let ch = if image.channels() == 3 { c } else { 0 };
                out.push((image.get(x, y, ch).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

/// Nearest-neighbor upsampling of a coarse field to `width × height`.
fn upsample(coarse: &FlowField, width: usize, height: usize) -> FlowField {
    let mut out = FlowField::zeros(width, height).expect("nonzero size");
    for i in 0..coarse.height() {
        let (y0, y1) = cell_bounds(height, coarse.height(), i);
        for j in 0..coarse.width() {
            let (x0, x1) = cell_bounds(width, coarse.width(), j);
            let (u, v) = coarse.get(j, i);
            for y in y0..y1 {
                for x in x0..x1 {
                    out.set(x, y, u, v);
                }
            }
        }
    }
    out
}

/// Grid cell of every pixel coordinate along one axis.
fn cell_of(extent: usize, cells: usize) -> Vec<usize> {
    let mut out = vec![0; extent];
    for i in 0..cells {
        let (a, b) = cell_bounds(extent, cells, i);
        out[a..b].iter_mut().for_each(|c| *c = i);
    }
    out
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub struct Scene {
    kind: SceneKind,
    size: usize,
    image: Image,
    flow: FlowField,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(js_name = generate)]
    pub fn js_generate(kind: &str, size: u32, seed: u32) -> Result<Scene, JsError> {
        Scene::generate(kind, size, seed).map_err(|e| JsError::new(&e))
    }

    pub fn size(&self) -> u32 {
        self.size as u32
    }

    /// The first frame as RGBA bytes.
    pub fn image_rgba(&self) -> Vec<u8> {
        to_rgba(&self.image)
    }

    /// Ground-truth flow in the color-wheel coding as RGBA bytes.
    pub fn flow_rgba(&self) -> Vec<u8> {
        to_rgba(&visualize_flow(&self.flow, None))
    }

    #[wasm_bindgen(js_name = quantize)]
    pub fn js_quantize(&self, clusters: u32, grid: u32) -> Result<Quantized, JsError> {
        self.quantize(clusters, grid).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = edges)]
    pub fn js_edges(&self, sigma: f64, low: f64, high: f64, grid: u32) -> Result<Edges, JsError> {
        self.edges(sigma, low, high, grid)
            .map_err(|e| JsError::new(&e))
    }
}

impl Scene {
    pub fn generate(kind: &str, size: u32, seed: u32) -> Result<Scene, String> {
        let kind: SceneKind = kind.parse().map_err(err)?;
        let size = size as usize;
        if !(16..=256).contains(&size) {
            return Err(format!("size must be between 16 and 256, got {size}"));
        }
        let (frames, flows) =
            synthesize_sequence(&random_scene(kind, size, 1, seed as u64)).map_err(err)?;
        Ok(Scene {
            kind,
            size,
            image: frames.into_iter().next().expect("one frame"),
            flow: flows.into_iter().next().expect("one flow"),
        })
    }

    pub fn flow(&self) -> &FlowField {
        &self.flow
    }

    /// Fits a codebook on cell means of scenes of the same family, then
    /// quantizes this scene's flow and decodes the one-hot labels.
    pub fn quantize(&self, clusters: u32, grid: u32) -> Result<Quantized, String> {
        let grid = grid as usize;
        let mut samples = Vec::new();
        for s in 0..CODEBOOK_SCENES {
            let spec = random_scene(self.kind, self.size, 1, 0x5eed_0000 + s as u64);
            let (_, flows) = synthesize_sequence(&spec).map_err(err)?;
            samples.extend_from_slice(cell_means(&flows[0], grid, grid).map_err(err)?.data());
        }
        let codebook = build_codebook(&samples, clusters as usize, 0, 100).map_err(err)?;
        let labels = quantize(&self.flow, &codebook, grid, grid).map_err(err)?;
        let onehot = PredictionGrid::one_hot(&labels, codebook.len());
        let decoded = soft_decode(&onehot, &codebook).map_err(err)?;
        let means = cell_means(&self.flow, grid, grid).map_err(err)?;
        let all = EvalMask::all(grid, grid);
        let error = epe(&decoded, &means, &all).map_err(err)?.unwrap_or(0.0);
        let bound = max_quantization_distance(&means, &codebook);
        debug_assert_eq!(hard_decode(&onehot), labels);
        let scale = codebook.max_magnitude().max(means.max_magnitude());
        let show = |f: &FlowField| {
            to_rgba(&visualize_flow(
                &upsample(f, self.size, self.size),
                Some(scale),
            ))
        };
        Ok(Quantized {
            means_rgba: show(&means),
            decoded_rgba: show(&decoded),
            labels: labels.labels.iter().map(|&l| l as u32).collect(),
            centers: codebook
                .centers()
                .iter()
                .flat_map(|c| [c[0], c[1]])
                .collect(),
            epe: error,
            bound,
        })
    }

    /// Canny edges, with cells of the evaluation mask tinted.
    pub fn edges(&self, sigma: f64, low: f64, high: f64, grid: u32) -> Result<Edges, String> {
        if !(sigma > 0.0) || !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) {
            return Err("need sigma > 0 and thresholds in [0, 1]".into());
        }
        let grid = grid as usize;
        if grid == 0 || grid > self.size {
            return Err(format!("grid must be between 1 and {}", self.size));
        }
        let params = CannyParams { sigma, low, high };
        let edges = canny_edges(&self.image, params);
        let mask = canny_mask(&self.image, grid, grid, params);
        let n = self.size;
        let mut rgba = Vec::with_capacity(n * n * 4);
        let cell = cell_of(n, grid);
        for y in 0..n {
            for x in 0..n {
                let tinted = mask.cells[cell[y] * grid + cell[x]];
                let px = if edges[y * n + x] {
                    [255, 255, 255]
                } else if tinted {
                    [40, 90, 160]
                } else {
                    [16, 16, 16]
                };
                rgba.extend_from_slice(&px);
                rgba.push(255);
            }
        }
        Ok(Edges {
            rgba,
            edge_pixels: edges.iter().filter(|&&e| e).count() as u32,
            masked_cells: mask.count() as u32,
        })
    }
}

/// Largest distance from a cell mean to its nearest codebook center.
pub fn max_quantization_distance(means: &FlowField, codebook: &FlowCodebook) -> f64 {
    means
        .vectors()
        .map(|(u, v)| {
            let c = codebook.centers()[codebook.nearest(u, v)];
            (u - c[0]).hypot(v - c[1])
        })
        .fold(0.0, f64::max)
}

#[wasm_bindgen]
pub struct Quantized {
    means_rgba: Vec<u8>,
    decoded_rgba: Vec<u8>,
    labels: Vec<u32>,
    centers: Vec<f64>,
    epe: f64,
    bound: f64,
}

#[wasm_bindgen]
impl Quantized {
    /// Per-cell mean flow, upsampled to the scene size.
    pub fn means_rgba(&self) -> Vec<u8> {
        self.means_rgba.clone()
    }

    /// Flow decoded from the one-hot labels, upsampled.
    pub fn decoded_rgba(&self) -> Vec<u8> {
        self.decoded_rgba.clone()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.labels.clone()
    }

    /// Codebook centers as interleaved `u, v`.
    pub fn centers(&self) -> Vec<f64> {
        self.centers.clone()
    }

    /// Mean end-point error between decoded flow and cell means.
    pub fn epe(&self) -> f64 {
        self.epe
    }

    /// Worst cell's distance to its nearest center.
    pub fn bound(&self) -> f64 {
        self.bound
    }
}

#[wasm_bindgen]
pub struct Edges {
    rgba: Vec<u8>,
    edge_pixels: u32,
    masked_cells: u32,
}

#[wasm_bindgen]
impl Edges {
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    pub fn edge_pixels(&self) -> u32 {
        self.edge_pixels
    }

    pub fn masked_cells(&self) -> u32 {
        self.masked_cells
    }
}
