//! Middlebury flow color coding: hue from direction, saturation from
//! magnitude, white at zero.

use super::{FlowField, Image};

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
pub const WHEEL_BINS: usize = RY + YG + GC + CB + BM + MR;

/// The 55-entry RGB wheel, 0–255 per channel.
pub fn color_wheel() -> [[f64; 3]; WHEEL_BINS] {
    let mut wheel = [[0.0; 3]; WHEEL_BINS];
    let ramp = |i: usize, n: usize| (255.0 * i as f64 / n as f64).floor();
    let mut k = 0;
    for i in 0..RY {
        wheel[k] = [255.0, ramp(i, RY), 0.0];
        k += 1;
    }
    for i in 0..YG {
        wheel[k] = [255.0 - ramp(i, YG), 255.0, 0.0];
        k += 1;
    }
    for i in 0..GC {
        wheel[k] = [0.0, 255.0, ramp(i, GC)];
        k += 1;
    }
    for i in 0..CB {
        wheel[k] = [0.0, 255.0 - ramp(i, CB), 255.0];
        k += 1;
    }
    for i in 0..BM {
        wheel[k] = [ramp(i, BM), 0.0, 255.0];
        k += 1;
    }
    for i in 0..MR {
        wheel[k] = [255.0, 0.0, 255.0 - ramp(i, MR)];
        k += 1;
    }
    wheel
}

/// 8-bit RGB for a flow vector already divided by the normalizing magnitude.
pub fn flow_to_color(wheel: &[[f64; 3]; WHEEL_BINS], u: f64, v: f64) -> [u8; 3] {
    let rad = u.hypot(v);
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (WHEEL_BINS - 1) as f64;
    let k0 = (fk.floor() as usize).min(WHEEL_BINS - 1);
    let k1 = (k0 + 1) % WHEEL_BINS;
    let f = fk - k0 as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let col0 = wheel[k0][c] / 255.0;
        let col1 = wheel[k1][c] / 255.0;
        let mut col = (1.0 - f) * col0 + f * col1;
        if rad <= 1.0 {
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        out[c] = (255.0 * col).floor().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Colors a flow field. `max_magnitude` normalizes saturation; `None`
/// uses the field's largest magnitude (1 for an all-zero field).
pub fn visualize_flow(field: &FlowField, max_magnitude: Option<f64>) -> Image {
    let maxrad = match max_magnitude {
        Some(m) if m > 0.0 => m,
        _ => {
            let m = field.max_magnitude();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let wheel = color_wheel();
    let data = field
        .vectors()
        .flat_map(|(u, v)| flow_to_color(&wheel, u / maxrad, v / maxrad))
        .map(|b| b as f64 / 255.0)
        .collect();
    Image::from_vec(field.width(), field.height(), 3, data).expect("dims come from a valid field")
}
