//! Middlebury `.flo` and binary PGM/PPM reading and writing.
//!
//! `.flo` stores single-precision values; a field written and read back is
//! bit-identical whenever its values are representable as `f32`.

use std::path::Path;

use super::{FlowField, Image};
use crate::error::{Error, Result};

/// The `.flo` header tag, "PIEH" read as a little-endian float.
pub const FLO_MAGIC: f32 = 202021.25;
const MAX_DIM: usize = 1 << 16;

pub fn flo_to_bytes(field: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + field.data().len() * 4);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(field.width() as i32).to_le_bytes());
    out.extend_from_slice(&(field.height() as i32).to_le_bytes());
    for &v in field.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn flo_from_bytes(bytes: &[u8], origin: &Path) -> Result<FlowField> {
    let word = |at: usize, what: &str| -> Result<[u8; 4]> {
        bytes
            .get(at..at + 4)
            .map(|b| [b[0], b[1], b[2], b[3]])
            .ok_or_else(|| {
                Error::format(origin, at as u64, format!("truncated while reading {what}"))
            })
    };
    let magic = f32::from_le_bytes(word(0, "magic")?);
    if magic != FLO_MAGIC {
        return Err(Error::format(
            origin,
            0,
            format!("bad magic {magic}, expected {FLO_MAGIC}"),
        ));
    }
    let w = i32::from_le_bytes(word(4, "width")?);
    let h = i32::from_le_bytes(word(8, "height")?);
    if w <= 0 || h <= 0 || w as usize > MAX_DIM || h as usize > MAX_DIM {
        return Err(Error::format(
            origin,
            4,
            format!("invalid dimensions {w}x{h}"),
        ));
    }
    let (w, h) = (w as usize, h as usize);
    let need = 12 + w * h * 8;
    if bytes.len() < need {
        return Err(Error::format(
            origin,
            bytes.len() as u64,
            format!(
                "truncated payload: {w}x{h} needs {need} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[12..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FlowField::from_vec(w, h, data).map_err(|e| Error::format(origin, 12, e.to_string()))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    flo_from_bytes(&bytes, path)
}

pub fn write_flo(field: &FlowField, path: &Path) -> Result<()> {
    std::fs::write(path, flo_to_bytes(field)).map_err(|e| Error::io(path, e))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// P5 for grayscale, P6 for RGB, maxval 255.
pub fn image_to_bytes(image: &Image) -> Vec<u8> {
    let tag = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{tag}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    out
}

pub fn image_from_bytes(bytes: &[u8], origin: &Path) -> Result<Image> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(origin, pos as u64, "truncated header"));
        }
        fields.push((start, std::str::from_utf8(&bytes[start..pos]).unwrap_or("")));
    }
    let channels = match fields[0].1 {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::format(
                origin,
                0,
                format!("unsupported magic {other:?}, expected P5 or P6"),
            ))
        }
    };
    let num = |i: usize, what: &str| -> Result<usize> {
        fields[i]
            .1
            .parse::<usize>()
            .map_err(|_| Error::format(origin, fields[i].0 as u64, format!("malformed {what}")))
    };
    let (w, h, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
    if maxval != 255 {
        return Err(Error::format(
            origin,
            fields[3].0 as u64,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    if w == 0 || h == 0 || w > MAX_DIM || h > MAX_DIM {
        return Err(Error::format(
            origin,
            fields[1].0 as u64,
            format!("invalid dimensions {w}x{h}"),
        ));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(
            origin,
            pos as u64,
            "missing whitespace after header",
        ));
    }
    pos += 1;
    let need = w * h * channels;
    if bytes.len() - pos < need {
        return Err(Error::format(
            origin,
            bytes.len() as u64,
            format!(
                "truncated raster: need {need} bytes, have {}",
                bytes.len() - pos
            ),
        ));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Image::from_vec(w, h, channels, data)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image_from_bytes(&bytes, path)
}

pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, image_to_bytes(image)).map_err(|e| Error::io(path, e))
}
