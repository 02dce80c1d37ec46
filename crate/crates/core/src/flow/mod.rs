//! Images, flow fields and everything that reads, writes, transforms or
//! synthesizes them.

mod augment;
pub mod io;
mod manifest;
pub mod synth;
mod viz;

pub use augment::{
    augment, center_crop_pair, crop_source_side, resize_pair, resize_short_side, AugmentParams,
    CROP_MARGIN,
};
pub use io::{read_flo, read_image, write_flo, write_image, FLO_MAGIC};
pub use manifest::{read_manifest, write_manifest, ManifestRecord};
pub use viz::{color_wheel, flow_to_color, visualize_flow, WHEEL_BINS};

use crate::error::{Error, Result};

/// A raster image with 1 or 3 channels, values in `[0, 1]`, stored
/// interleaved row-major (`(y * width + x) * channels + c`).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::from_vec(
            width,
            height,
            channels,
            vec![0.0; width * height * channels],
        )
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dims must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "Image",
                format!(
                    "{width}x{height}x{channels} needs {} values, got {}",
                    width * height * channels,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Luma (Rec. 601 weights) for RGB, identity for grayscale.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Planar (channel-major) copy, the layout the network consumes.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        out
    }
}

/// Dense per-pixel motion `(u, v)` in pixels per frame, `u` rightward and
/// `v` downward, stored interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::from_vec(width, height, vec![0.0; width * height * 2])
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Result<Self> {
        let data = std::iter::repeat_n([u, v], width * height)
            .flatten()
            .collect();
        Self::from_vec(width, height, data)
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "flow dims must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 2 {
            return Err(Error::shape(
                "FlowField",
                format!(
                    "{width}x{height} needs {} values, got {}",
                    width * height * 2,
                    data.len()
                ),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("flow value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: f64, v: f64) {
        let i = (y * self.width + x) * 2;
        self.data[i] = u;
        self.data[i + 1] = v;
    }

    pub fn vectors(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.data.chunks_exact(2).map(|p| (p[0], p[1]))
    }

    pub fn max_magnitude(&self) -> f64 {
        self.vectors().map(|(u, v)| u.hypot(v)).fold(0.0, f64::max)
    }

    pub fn same_dims(&self, other: &FlowField) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-pixel arithmetic mean of several flow fields of identical size.
pub fn average_flows(fields: &[FlowField]) -> Result<FlowField> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty list of flows".into()))?;
    let mut acc = vec![0.0; first.data.len()];
    for (i, f) in fields.iter().enumerate() {
        if !f.same_dims(first) {
            return Err(Error::shape(
                "average_flows",
                format!(
                    "field {i} is {}x{}, field 0 is {}x{}",
                    f.width, f.height, first.width, first.height
                ),
            ));
        }
        acc.iter_mut().zip(&f.data).for_each(|(a, v)| *a += v);
    }
    let n = fields.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    FlowField::from_vec(first.width, first.height, acc)
}

/// Row and column boundaries of an `m × n` partition of a `height × width`
/// grid; the last row/column of cells absorbs any remainder.
pub fn cell_bounds(extent: usize, cells: usize, index: usize) -> (usize, usize) {
    let step = extent / cells;
    let start = index * step;
    let end = if index + 1 == cells {
        extent
    } else {
        start + step
    };
    (start, end)
}

/// Mean flow vector of each cell of an `m × n` partition, as an `n × m`
/// (width × height) coarse field.
pub fn cell_means(flow: &FlowField, rows: usize, cols: usize) -> Result<FlowField> {
    if rows == 0 || cols == 0 || rows > flow.height || cols > flow.width {
        return Err(Error::InvalidArgument(format!(
            "a {rows}x{cols} grid does not tile a {}x{} field",
            flow.height, flow.width
        )));
    }
    let mut out = Vec::with_capacity(rows * cols * 2);
    for i in 0..rows {
        let (y0, y1) = cell_bounds(flow.height, rows, i);
        for j in 0..cols {
            let (x0, x1) = cell_bounds(flow.width, cols, j);
            let (mut su, mut sv) = (0.0, 0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (u, v) = flow.get(x, y);
                    su += u;
                    sv += v;
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            out.push(su / n);
            out.push(sv / n);
        }
    }
    FlowField::from_vec(cols, rows, out)
}
