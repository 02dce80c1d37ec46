//! Loop-based reimplementations of every metric and mask, and checks that
//! compare them with the library on randomized 8×8 grids. Shared by the
//! metric tests and the acceptance suite.

#![allow(dead_code)]

use flowcast::codebook::{FlowCodebook, PredictionGrid, QuantizedLabelGrid};
use flowcast::flow::{FlowField, Image};
use flowcast::metrics::{
    canny_mask, direction_similarity, epe, nonzero_mask, orientation_similarity, top_n_accuracy,
    CannyParams, EvalMask, MaskKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRIDS: u64 = 50;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

const SIDE: usize = 8;

fn near(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    }
}

fn vectors(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    (0..SIDE * SIDE)
        .map(|_| {
            if rng.gen_bool(0.15) {
                (0.0, 0.0)
            } else {
                (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0))
            }
        })
        .collect()
}

fn field(v: &[(f64, f64)]) -> FlowField {
    FlowField::from_vec(SIDE, SIDE, v.iter().flat_map(|&(u, w)| [u, w]).collect()).unwrap()
}

fn oracle_mean(mask: &[bool], f: impl Fn(usize) -> f64) -> Option<f64> {
    let picked: Vec<f64> = (0..mask.len()).filter(|&i| mask[i]).map(f).collect();
    if picked.is_empty() {
        None
    } else {
        Some(picked.iter().sum::<f64>() / picked.len() as f64)
    }
}

fn oracle_cos(a: (f64, f64), b: (f64, f64)) -> f64 {
    let na = (a.0 * a.0 + a.1 * a.1).sqrt();
    let nb = (b.0 * b.0 + b.1 * b.1).sqrt();
    if na <= 1e-9 || nb <= 1e-9 {
        return 0.0;
    }
    ((a.0 * b.0 + a.1 * b.1) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn flow_metrics(grids: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for idx in 0..grids {
        let (p, g) = (vectors(&mut rng), vectors(&mut rng));
        let cells: Vec<bool> = (0..SIDE * SIDE).map(|_| rng.gen_bool(0.5)).collect();
        let mask = EvalMask {
            rows: SIDE,
            cols: SIDE,
            cells: cells.clone(),
            kind: MaskKind::All,
        };
        let (pf, gf) = (field(&p), field(&g));
        let want_epe = oracle_mean(&cells, |i| {
            ((p[i].0 - g[i].0).powi(2) + (p[i].1 - g[i].1).powi(2)).sqrt()
        });
        let want_dir = oracle_mean(&cells, |i| oracle_cos(p[i], g[i]));
        let want_orient = oracle_mean(&cells, |i| oracle_cos(p[i], g[i]).abs());
        let got_epe = epe(&pf, &gf, &mask).map_err(|e| e.to_string())?;
        ensure!(
            near(got_epe, want_epe),
            "grid {idx}: EPE {got_epe:?} vs {want_epe:?}"
        );
        let got_dir = direction_similarity(&pf, &gf, &mask).map_err(|e| e.to_string())?;
        ensure!(
            near(got_dir, want_dir),
            "grid {idx}: Dir {got_dir:?} vs {want_dir:?}"
        );
        let got_orient = orientation_similarity(&pf, &gf, &mask).map_err(|e| e.to_string())?;
        ensure!(
            near(got_orient, want_orient),
            "grid {idx}: Orient {got_orient:?} vs {want_orient:?}"
        );
    }
    Ok(())
}

pub fn top_n(grids: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for idx in 0..grids {
        let c = rng.gen_range(2..12);
        let mut probs = Vec::new();
        for _ in 0..SIDE * SIDE {
            // Coarse values so ties actually occur.
            let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(1..5) as f64).collect();
            let s: f64 = raw.iter().sum();
            probs.extend(raw.into_iter().map(|v| v / s));
        }
        let grid = PredictionGrid::new(SIDE, SIDE, c, probs.clone()).unwrap();
        let labels: Vec<usize> = (0..SIDE * SIDE).map(|_| rng.gen_range(0..c)).collect();
        let gt = QuantizedLabelGrid::new(SIDE, SIDE, labels.clone(), c).unwrap();
        let cells: Vec<bool> = (0..SIDE * SIDE).map(|_| rng.gen_bool(0.7)).collect();
        let mask = EvalMask {
            rows: SIDE,
            cols: SIDE,
            cells: cells.clone(),
            kind: MaskKind::All,
        };
        for n in 1..=c + 1 {
            let want = oracle_mean(&cells, |i| {
                let cell = &probs[i * c..(i + 1) * c];
                let y = labels[i];
                // Classes strictly more probable, or equally probable with a
                // lower index, come first.
                let ahead = (0..c)
                    .filter(|&k| cell[k] > cell[y] || (cell[k] == cell[y] && k < y))
                    .count();
                if ahead < n {
                    1.0
                } else {
                    0.0
                }
            });
            let got = top_n_accuracy(&grid, &gt, n, &mask).map_err(|e| e.to_string())?;
            ensure!(got == want, "grid {idx}: Top-{n} {got:?} vs {want:?}");
        }
    }
    Ok(())
}

pub fn nonzero(grids: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for idx in 0..grids {
        let c = rng.gen_range(2..10);
        let mut centers: Vec<[f64; 2]> = Vec::new();
        while centers.len() < c {
            let p = [rng.gen_range(-3..=3) as f64, rng.gen_range(-3..=3) as f64];
            if !centers.contains(&p) {
                centers.push(p);
            }
        }
        let cb = FlowCodebook::new(centers.clone()).unwrap();
        let norms: Vec<f64> = centers.iter().map(|p| p[0].hypot(p[1])).collect();
        let min = norms.iter().cloned().fold(f64::MAX, f64::min);
        let zero = norms.iter().position(|&v| v == min).unwrap();
        let labels: Vec<usize> = (0..SIDE * SIDE).map(|_| rng.gen_range(0..c)).collect();
        let gt = QuantizedLabelGrid::new(SIDE, SIDE, labels.clone(), c).unwrap();
        let mask = nonzero_mask(&gt, &cb);
        let want: Vec<bool> = labels.iter().map(|&l| l != zero).collect();
        ensure!(mask.cells == want, "grid {idx}: NZ mask differs");
        ensure!(
            mask.kind == MaskKind::NonZero,
            "grid {idx}: wrong mask kind"
        );
    }
    Ok(())
}

/// Textbook Canny: 2-D Gaussian, Sobel, 4-direction suppression, strict
/// double threshold and flood-fill hysteresis to a fixed point.
fn brute_canny(img: &Image, p: CannyParams) -> Vec<bool> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let px = |x: isize, y: isize| {
        let (x, y) = (x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
        0.299 * img.get(x, y, 0) + 0.587 * img.get(x, y, 1) + 0.114 * img.get(x, y, 2)
    };
    let r = (3.0 * p.sigma).ceil() as isize;
    let g1 = |d: isize| (-(d * d) as f64 / (2.0 * p.sigma * p.sigma)).exp();
    let norm: f64 = (-r..=r).map(g1).sum::<f64>().powi(2);
    let mut blur = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    acc += g1(dx) * g1(dy) * px(x + dx, y + dy);
                }
            }
            blur[(y * w + x) as usize] = acc / norm;
        }
    }
    let b = |x: isize, y: isize| blur[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let sobel_x = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let n = (w * h) as usize;
    let (mut gx, mut gy, mut mag) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..h {
        for x in 0..w {
            let (mut sx, mut sy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let v = b(x + i as isize - 1, y + j as isize - 1);
                    sx += sobel_x[j][i] * v;
                    sy += sobel_x[i][j] * v;
                }
            }
            let k = (y * w + x) as usize;
            gx[k] = sx;
            gy[k] = sy;
            mag[k] = (sx * sx + sy * sy).sqrt();
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![false; n];
    }
    let m = |x: isize, y: isize| mag[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut thin = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let k = (y * w + x) as usize;
            if mag[k] == 0.0 {
                continue;
            }
            let mut a = gy[k].atan2(gx[k]).to_degrees();
            if a < 0.0 {
                a += 180.0;
            }
            let (dx, dy) = match a {
                a if !(22.5..157.5).contains(&a) => (1, 0),
                a if a < 67.5 => (1, 1),
                a if a < 112.5 => (0, 1),
                _ => (-1, 1),
            };
            let tol = 1e-9 * max;
            if mag[k] + tol >= m(x + dx, y + dy) && mag[k] + tol >= m(x - dx, y - dy) {
                thin[k] = mag[k];
            }
        }
    }
    let mut edge: Vec<bool> = thin.iter().map(|&v| v > p.high * max).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let k = (y * w + x) as usize;
                if edge[k] || thin[k] <= p.low * max {
                    continue;
                }
                let touches = (-1..=1).any(|dy: isize| {
                    (-1..=1).any(|dx: isize| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0 && ny >= 0 && nx < w && ny < h && edge[(ny * w + nx) as usize]
                    })
                });
                if touches {
                    edge[k] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return edge;
        }
    }
}

fn blocky_image(rng: &mut ChaCha8Rng, side: usize) -> Image {
    let mut img = Image::new(side, side, 3).unwrap();
    let base = rng.gen_range(0.2..0.5);
    for y in 0..side {
        for x in 0..side {
            for c in 0..3 {
                img.set(x, y, c, base);
            }
        }
    }
    for _ in 0..rng.gen_range(1..4) {
        let (x0, y0) = (rng.gen_range(0..side - 4), rng.gen_range(0..side - 4));
        let (bw, bh) = (rng.gen_range(3..side / 2), rng.gen_range(3..side / 2));
        let tone = rng.gen_range(0.0..1.0);
        for y in y0..(y0 + bh).min(side) {
            for x in x0..(x0 + bw).min(side) {
                for c in 0..3 {
                    img.set(x, y, c, tone + rng.gen_range(-0.02..0.02));
                }
            }
        }
    }
    img
}

pub fn canny(grids: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let side = 32;
    for idx in 0..grids {
        let img = blocky_image(&mut rng, side);
        let params = CannyParams::default();
        let edges = brute_canny(&img, params);
        let mask = canny_mask(&img, SIDE, SIDE, params);
        let step = side / SIDE;
        let want: Vec<bool> = (0..SIDE * SIDE)
            .map(|cell| {
                let (r, c) = (cell / SIDE, cell % SIDE);
                (r * step..(r + 1) * step)
                    .any(|y| (c * step..(c + 1) * step).any(|x| edges[y * side + x]))
            })
            .collect();
        ensure!(mask.cells == want, "grid {idx}: Canny mask differs");
        ensure!(mask.kind == MaskKind::Canny, "grid {idx}: wrong mask kind");
    }
    Ok(())
}
