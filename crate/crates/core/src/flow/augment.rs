use rand::Rng;

use super::{FlowField, Image};
use crate::error::{Error, Result};

/// A crop window plus an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentParams {
    pub flip: bool,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl AugmentParams {
    /// The full frame, no flip.
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            flip: false,
            x: 0,
            y: 0,
            width,
            height,
        }
    }

    /// A uniformly placed `width × height` window and a fair-coin flip.
    pub fn random<R: Rng>(
        rng: &mut R,
        src_w: usize,
        src_h: usize,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if width > src_w || height > src_h {
            return Err(Error::InvalidArgument(format!(
                "crop {width}x{height} larger than source {src_w}x{src_h}"
            )));
        }
        Ok(Self {
            flip: rng.gen_bool(0.5),
            x: rng.gen_range(0..=src_w - width),
            y: rng.gen_range(0..=src_h - height),
            width,
            height,
        })
    }
}

/// Applies the same crop to image and flow, then optionally mirrors both
/// horizontally. Mirroring negates `u`; `v` is unchanged.
pub fn augment(
    image: &Image,
    flow: &FlowField,
    params: AugmentParams,
) -> Result<(Image, FlowField)> {
    if image.width() != flow.width() || image.height() != flow.height() {
        return Err(Error::shape(
            "augment",
            format!(
                "image {}x{} vs flow {}x{}",
                image.width(),
                image.height(),
                flow.width(),
                flow.height()
            ),
        ));
    }
    let AugmentParams {
        flip,
        x,
        y,
        width,
        height,
    } = params;
    if width == 0 || height == 0 || x + width > image.width() || y + height > image.height() {
        return Err(Error::InvalidArgument(format!(
            "crop {width}x{height}+{x}+{y} outside {}x{} frame",
            image.width(),
            image.height()
        )));
    }
    let ch = image.channels();
    let mut img = Vec::with_capacity(width * height * ch);
    let mut fl = Vec::with_capacity(width * height * 2);
    for row in y..y + height {
        for col in 0..width {
            let src = if flip { x + width - 1 - col } else { x + col };
            for c in 0..ch {
                img.push(image.get(src, row, c));
            }
            let (u, v) = flow.get(src, row);
            fl.push(if flip { -u } else { u });
            fl.push(v);
        }
    }
    Ok((
        Image::from_vec(width, height, ch, img)?,
        FlowField::from_vec(width, height, fl)?,
    ))
}

fn nearest(dst: usize, dst_len: usize, src_len: usize) -> usize {
    (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
}

/// Nearest-neighbor resize of an image/flow pair. Flow vectors are scaled
/// by the resize factor on each axis so they stay in destination pixels.
pub fn resize_pair(
    image: &Image,
    flow: &FlowField,
    width: usize,
    height: usize,
) -> Result<(Image, FlowField)> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(
            "resize target must be positive".into(),
        ));
    }
    if image.width() != flow.width() || image.height() != flow.height() {
        return Err(Error::shape("resize_pair", "image and flow sizes differ"));
    }
    let sx = width as f64 / image.width() as f64;
    let sy = height as f64 / image.height() as f64;
    let ch = image.channels();
    let mut img = Vec::with_capacity(width * height * ch);
    let mut fl = Vec::with_capacity(width * height * 2);
    for y in 0..height {
        let yy = nearest(y, height, image.height());
        for x in 0..width {
            let xx = nearest(x, width, image.width());
            for c in 0..ch {
                img.push(image.get(xx, yy, c));
            }
            let (u, v) = flow.get(xx, yy);
            fl.push(u * sx);
            fl.push(v * sy);
        }
    }
    Ok((
        Image::from_vec(width, height, ch, img)?,
        FlowField::from_vec(width, height, fl)?,
    ))
}

/// Resizes so the shorter side equals `short`, keeping aspect ratio.
/// A pair already at that size is returned unchanged.
pub fn resize_short_side(
    image: &Image,
    flow: &FlowField,
    short: usize,
) -> Result<(Image, FlowField)> {
    let (w, h) = (image.width(), image.height());
    if w.min(h) == short {
        return Ok((image.clone(), flow.clone()));
    }
    let (nw, nh) = if w <= h {
        (
            short,
            ((h as f64 * short as f64 / w as f64).round() as usize).max(short),
        )
    } else {
        (
            ((w as f64 * short as f64 / h as f64).round() as usize).max(short),
            short,
        )
    };
    resize_pair(image, flow, nw, nh)
}

/// Ratio between the resized short side and the crop side.
pub const CROP_MARGIN: f64 = 1.2;

/// Short side that frames are resized to before a `crop`-sized window is
/// taken from them.
pub fn crop_source_side(crop: usize) -> usize {
    (crop as f64 * CROP_MARGIN).round() as usize
}

/// Short-side resize to [`crop_source_side`] of the larger crop side,
/// followed by a centered crop.
pub fn center_crop_pair(
    image: &Image,
    flow: &FlowField,
    width: usize,
    height: usize,
) -> Result<(Image, FlowField)> {
    let (img, fl) = resize_short_side(image, flow, crop_source_side(width.max(height)))?;
    let x = (img.width() - width) / 2;
    let y = (img.height() - height) / 2;
    augment(
        &img,
        &fl,
        AugmentParams {
            flip: false,
            x,
            y,
            width,
            height,
        },
    )
}
