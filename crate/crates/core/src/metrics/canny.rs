use super::{EvalMask, MaskKind};
use crate::flow::{cell_bounds, Image};

/// Canny settings. Thresholds are fractions of the image's largest
/// gradient magnitude; a pixel must exceed them strictly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.1,
            high: 0.3,
        }
    }
}

fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with replicated borders.
fn blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * src[y * w + clamp(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Full-resolution edge map, row-major.
pub fn canny_edges(image: &Image, params: CannyParams) -> Vec<bool> {
    let gray = image.to_gray();
    let (w, h) = (gray.width(), gray.height());
    let b = blur(gray.data(), w, h, params.sigma);
    let at = |x: isize, y: isize| b[clamp(y, h) * w + clamp(x, w)];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut mag = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            mag[i] = gx[i].hypot(gy[i]);
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let mut edges = vec![false; w * h];
    if max <= 0.0 {
        return edges;
    }
    // Equal magnitudes along a symmetric ramp can differ by rounding.
    let tol = 1e-9 * max;
    let m = |x: isize, y: isize| mag[clamp(y, h) * w + clamp(x, w)];
    let mut thin = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if mag[i] <= 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            if mag[i] + tol >= m(x + dx, y + dy) && mag[i] + tol >= m(x - dx, y - dy) {
                thin[i] = mag[i];
            }
        }
    }
    let (low, high) = (params.low * max, params.high * max);
    let mut stack: Vec<usize> = Vec::new();
    for (i, &v) in thin.iter().enumerate() {
        if v > high {
            edges[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] > low {
                    edges[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    edges
}

/// Grid cells containing at least one Canny edge pixel.
pub fn canny_mask(image: &Image, rows: usize, cols: usize, params: CannyParams) -> EvalMask {
    let edges = canny_edges(image, params);
    let (w, h) = (image.width(), image.height());
    let mut cells = vec![false; rows * cols];
    for r in 0..rows {
        let (y0, y1) = cell_bounds(h, rows, r);
        for c in 0..cols {
            let (x0, x1) = cell_bounds(w, cols, c);
            cells[r * cols + c] = (y0..y1).any(|y| (x0..x1).any(|x| edges[y * w + x]));
        }
    }
    EvalMask {
        rows,
        cols,
        cells,
        kind: MaskKind::Canny,
    }
}
