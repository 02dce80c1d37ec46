//! Forward and backward passes for each layer kind.
//!
//! Every function here is value-in/value-out. The network driver in
//! [`super::NetworkSpec`] threads the caches between the two passes.

use super::{gemm, LayerSpec, Op};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// What a layer keeps from its forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv {
        input: Tensor4,
    },
    Lrn {
        input: Tensor4,
        scale: Vec<f64>,
    },
    MaxPool {
        input_dims: [usize; 4],
        argmax: Vec<usize>,
    },
    FullyConnected {
        input: Tensor4,
    },
    Relu {
        output: Tensor4,
    },
    SpatialSoftmax {
        output: Tensor4,
    },
}

impl LayerCache {
    pub fn input(&self) -> Option<&Tensor4> {
        match self {
            LayerCache::Conv { input }
            | LayerCache::Lrn { input, .. }
            | LayerCache::FullyConnected { input } => Some(input),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerCache::Conv { .. } => "Conv",
            LayerCache::Lrn { .. } => "LRN",
            LayerCache::MaxPool { .. } => "MaxPool",
            LayerCache::FullyConnected { .. } => "FullyConnected",
            LayerCache::Relu { .. } => "ReLU",
            LayerCache::SpatialSoftmax { .. } => "SpatialSoftmax",
        }
    }
}

type ParamGrads = Option<(Vec<f64>, Vec<f64>)>;

pub(crate) fn forward(
    layer: &LayerSpec,
    wb: Option<(&[f64], &[f64])>,
    input: Tensor4,
) -> Result<(Tensor4, LayerCache)> {
    match (layer, wb) {
        (LayerSpec::Conv { .. }, Some((w, b))) => {
            let out = conv_forward(&input, w, b, layer)?;
            Ok((out, LayerCache::Conv { input }))
        }
        (LayerSpec::FullyConnected { .. }, Some((w, b))) => {
            let out = fc_forward(&input, w, b, layer)?;
            Ok((out, LayerCache::FullyConnected { input }))
        }
        (LayerSpec::Lrn { .. }, _) => {
            let (out, scale) = lrn_forward_with_scale(&input, layer)?;
            Ok((out, LayerCache::Lrn { input, scale }))
        }
        (LayerSpec::MaxPool { .. }, _) => {
            let (out, argmax) = maxpool_forward(&input, layer)?;
            Ok((
                out,
                LayerCache::MaxPool {
                    input_dims: input.dims(),
                    argmax,
                },
            ))
        }
        (LayerSpec::Relu, _) => {
            let out = relu_forward(input);
            Ok((out.clone(), LayerCache::Relu { output: out }))
        }
        (LayerSpec::SpatialSoftmax { .. }, _) => {
            let out = spatial_softmax_forward(&input, layer)?;
            Ok((out.clone(), LayerCache::SpatialSoftmax { output: out }))
        }
        (_, None) => Err(Error::shape(layer.kind(), "missing weight and bias")),
    }
}

pub(crate) fn backward(
    layer: &LayerSpec,
    wb: Option<(&[f64], &[f64])>,
    cache: &LayerCache,
    grad: &Tensor4,
) -> Result<(Tensor4, ParamGrads)> {
    let mismatch = || {
        Err(Error::NoForward(format!(
            "cache from a {} forward cannot feed a {} backward",
            cache.kind(),
            layer.kind()
        )))
    };
    match (layer, cache) {
        (LayerSpec::Conv { .. }, LayerCache::Conv { input }) => {
            let (w, _) = wb.ok_or_else(|| Error::shape("Conv", "missing weights"))?;
            let (gi, gw, gb) = conv_backward(input, w, layer, grad)?;
            Ok((gi, Some((gw, gb))))
        }
        (LayerSpec::FullyConnected { .. }, LayerCache::FullyConnected { input }) => {
            let (w, _) = wb.ok_or_else(|| Error::shape("FullyConnected", "missing weights"))?;
            let (gi, gw, gb) = fc_backward(input, w, layer, grad)?;
            Ok((gi, Some((gw, gb))))
        }
        (LayerSpec::Lrn { .. }, LayerCache::Lrn { input, scale }) => {
            Ok((lrn_backward(input, scale, layer, grad)?, None))
        }
        (LayerSpec::MaxPool { .. }, LayerCache::MaxPool { input_dims, argmax }) => {
            Ok((maxpool_backward(*input_dims, argmax, grad)?, None))
        }
        (LayerSpec::Relu, LayerCache::Relu { output }) => Ok((relu_backward(output, grad)?, None)),
        (LayerSpec::SpatialSoftmax { .. }, LayerCache::SpatialSoftmax { output }) => {
            Ok((spatial_softmax_backward(output, layer, grad)?, None))
        }
        _ => mismatch(),
    }
}

fn same_dims(context: &str, expected: [usize; 4], got: [usize; 4]) -> Result<()> {
    if expected != got {
        return Err(Error::shape(
            context,
            format!("upstream gradient {got:?} does not match forward output {expected:?}"),
        ));
    }
    Ok(())
}

fn out_dims(layer: &LayerSpec, input: &Tensor4) -> Result<[usize; 4]> {
    let [c, h, w] = layer.output_shape([input.channels(), input.height(), input.width()])?;
    Ok([input.batch(), c, h, w])
}

fn check_params(layer: &LayerSpec, input: &Tensor4, w: &[f64], b: &[f64]) -> Result<()> {
    let shape = [input.channels(), input.height(), input.width()];
    let (wd, bd) = layer
        .param_shapes(shape)
        .ok_or_else(|| Error::shape(layer.kind(), "layer has no parameters"))?;
    let (wn, bn) = (wd.iter().product::<usize>(), bd[0]);
    if w.len() != wn || b.len() != bn {
        return Err(Error::shape(
            layer.kind(),
            format!(
                "input {shape:?} needs weight {wd:?} ({wn}) and bias ({bn}); got {} and {}",
                w.len(),
                b.len()
            ),
        ));
    }
    Ok(())
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(layer: &LayerSpec, input: &Tensor4) -> Result<(Self, usize)> {
        let LayerSpec::Conv {
            kernels,
            size,
            stride,
            pad,
        } = *layer
        else {
            return Err(Error::shape(layer.kind(), "not a convolution"));
        };
        let [_, _, oh, ow] = out_dims(layer, input)?;
        Ok((
            Self {
                cin: input.channels(),
                h: input.height(),
                w: input.width(),
                size,
                stride,
                pad,
                oh,
                ow,
            },
            kernels,
        ))
    }

    fn rows(&self) -> usize {
        self.cin * self.size * self.size
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one image into a (cin·s·s) × (oh·ow) patch matrix.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let p = self.cols();
        for ci in 0..self.cin {
            for ki in 0..self.size {
                for kj in 0..self.size {
                    let row = (ci * self.size + ki) * self.size + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if y < 0 || y >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &img[(ci * self.h + y as usize) * self.w..][..self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let x = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if x < 0 || x >= self.w as isize {
                                0.0
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatter-adds patches back.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let p = self.cols();
        for ci in 0..self.cin {
            for ki in 0..self.size {
                for kj in 0..self.size {
                    let row = (ci * self.size + ki) * self.size + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + ki) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let base = (ci * self.h + y as usize) * self.w;
                        for ox in 0..self.ow {
                            let x = (ox * self.stride + kj) as isize - self.pad as isize;
                            if x >= 0 && x < self.w as isize {
                                img[base + x as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution (cross-correlation) with zero padding.
///
/// `weights` is `[kernels, in_channels, size, size]` row-major, `bias` is `[kernels]`.
pub fn conv_forward(
    input: &Tensor4,
    weights: &[f64],
    bias: &[f64],
    layer: &LayerSpec,
) -> Result<Tensor4> {
    let (g, kernels) = ConvGeom::new(layer, input)?;
    check_params(layer, input, weights, bias)?;
    let (q, p) = (g.rows(), g.cols());
    let mut out = Tensor4::zeros([input.batch(), kernels, g.oh, g.ow]);
    let mut cols = vec![0.0; q * p];
    for b in 0..input.batch() {
        g.im2col(input.item(b), &mut cols);
        let dst = out.item_mut(b);
        gemm(kernels, q, p, weights, Op::N, &cols, Op::N, 0.0, dst);
        for (k, row) in dst.chunks_exact_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v += bias[k]);
        }
    }
    Ok(out)
}

/// Returns (dL/dinput, dL/dweights, dL/dbias).
pub fn conv_backward(
    input: &Tensor4,
    weights: &[f64],
    layer: &LayerSpec,
    grad: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let (g, kernels) = ConvGeom::new(layer, input)?;
    same_dims("Conv backward", out_dims(layer, input)?, grad.dims())?;
    if weights.len() != kernels * g.rows() {
        return Err(Error::shape("Conv backward", "weight length"));
    }
    let (q, p) = (g.rows(), g.cols());
    let mut gw = vec![0.0; kernels * q];
    let mut gb = vec![0.0; kernels];
    let mut gin = Tensor4::zeros(input.dims());
    let mut cols = vec![0.0; q * p];
    let mut dcols = vec![0.0; q * p];
    for b in 0..input.batch() {
        let gout = grad.item(b);
        g.im2col(input.item(b), &mut cols);
        gemm(kernels, p, q, gout, Op::N, &cols, Op::T, 1.0, &mut gw);
        for (k, row) in gout.chunks_exact(p).enumerate() {
            gb[k] += row.iter().sum::<f64>();
        }
        gemm(q, kernels, p, weights, Op::T, gout, Op::N, 0.0, &mut dcols);
        g.col2im(&dcols, gin.item_mut(b));
    }
    Ok((gin, gw, gb))
}

/// Fully connected layer over each batch item flattened to a vector.
pub fn fc_forward(
    input: &Tensor4,
    weights: &[f64],
    bias: &[f64],
    layer: &LayerSpec,
) -> Result<Tensor4> {
    let LayerSpec::FullyConnected { outputs } = *layer else {
        return Err(Error::shape(layer.kind(), "not a fully connected layer"));
    };
    check_params(layer, input, weights, bias)?;
    let (bsz, nin) = (input.batch(), input.item_len());
    let mut out = Tensor4::zeros([bsz, outputs, 1, 1]);
    gemm(
        bsz,
        nin,
        outputs,
        input.data(),
        Op::N,
        weights,
        Op::T,
        0.0,
        out.data_mut(),
    );
    for row in out.data_mut().chunks_exact_mut(outputs) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
    Ok(out)
}

pub fn fc_backward(
    input: &Tensor4,
    weights: &[f64],
    layer: &LayerSpec,
    grad: &Tensor4,
) -> Result<(Tensor4, Vec<f64>, Vec<f64>)> {
    let LayerSpec::FullyConnected { outputs } = *layer else {
        return Err(Error::shape(layer.kind(), "not a fully connected layer"));
    };
    same_dims(
        "FullyConnected backward",
        [input.batch(), outputs, 1, 1],
        grad.dims(),
    )?;
    let (bsz, nin) = (input.batch(), input.item_len());
    if weights.len() != outputs * nin {
        return Err(Error::shape("FullyConnected backward", "weight length"));
    }
    let mut gw = vec![0.0; outputs * nin];
    gemm(
        outputs,
        bsz,
        nin,
        grad.data(),
        Op::T,
        input.data(),
        Op::N,
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0; outputs];
    for row in grad.data().chunks_exact(outputs) {
        gb.iter_mut().zip(row).for_each(|(a, g)| *a += g);
    }
    let mut gin = Tensor4::zeros(input.dims());
    gemm(
        bsz,
        outputs,
        nin,
        grad.data(),
        Op::N,
        weights,
        Op::N,
        0.0,
        gin.data_mut(),
    );
    Ok((gin, gw, gb))
}

fn lrn_params(layer: &LayerSpec) -> Result<(usize, f64, f64, f64)> {
    layer.validate()?;
    match *layer {
        LayerSpec::Lrn { n, alpha, beta, k } => Ok((n, alpha, beta, k)),
        _ => Err(Error::shape(layer.kind(), "not an LRN layer")),
    }
}

/// Cross-channel local response normalization.
pub fn lrn_forward(input: &Tensor4, layer: &LayerSpec) -> Result<Tensor4> {
    Ok(lrn_forward_with_scale(input, layer)?.0)
}

fn lrn_forward_with_scale(input: &Tensor4, layer: &LayerSpec) -> Result<(Tensor4, Vec<f64>)> {
    let (n, alpha, beta, k) = lrn_params(layer)?;
    let [bsz, c, h, w] = input.dims();
    let plane = h * w;
    let half = n / 2;
    let mut scale = vec![0.0; input.len()];
    let mut out = Tensor4::zeros(input.dims());
    let x = input.data();
    for b in 0..bsz {
        let base = b * c * plane;
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for s in 0..plane {
                let mut acc = 0.0;
                for cc in lo..=hi {
                    let v = x[base + cc * plane + s];
                    acc += v * v;
                }
                let i = base + ch * plane + s;
                scale[i] = k + alpha / n as f64 * acc;
                out.data_mut()[i] = x[i] * scale[i].powf(-beta);
            }
        }
    }
    Ok((out, scale))
}

fn lrn_backward(
    input: &Tensor4,
    scale: &[f64],
    layer: &LayerSpec,
    grad: &Tensor4,
) -> Result<Tensor4> {
    let (n, alpha, beta, _) = lrn_params(layer)?;
    same_dims("LRN backward", input.dims(), grad.dims())?;
    let [bsz, c, h, w] = input.dims();
    let plane = h * w;
    let half = n / 2;
    let x = input.data();
    let g = grad.data();
    // t_j = g_j · x_j · scale_j^(-beta-1); windows are symmetric after clipping.
    let t: Vec<f64> = (0..x.len())
        .map(|j| g[j] * x[j] * scale[j].powf(-beta - 1.0))
        .collect();
    let coeff = 2.0 * alpha * beta / n as f64;
    let mut gin = Tensor4::zeros(input.dims());
    for b in 0..bsz {
        let base = b * c * plane;
        for ch in 0..c {
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for s in 0..plane {
                let i = base + ch * plane + s;
                let mut acc = 0.0;
                for cc in lo..=hi {
                    acc += t[base + cc * plane + s];
                }
                gin.data_mut()[i] = g[i] * scale[i].powf(-beta) - coeff * x[i] * acc;
            }
        }
    }
    Ok(gin)
}

/// Max pooling without padding. Returns the pooled tensor and, per output
/// value, the flat input index that supplied it (first maximum in scan order).
pub fn maxpool_forward(input: &Tensor4, layer: &LayerSpec) -> Result<(Tensor4, Vec<usize>)> {
    let LayerSpec::MaxPool { size, stride } = *layer else {
        return Err(Error::shape(layer.kind(), "not a max-pool layer"));
    };
    let dims = out_dims(layer, input)?;
    let [bsz, c, oh, ow] = dims;
    let (h, w) = (input.height(), input.width());
    let x = input.data();
    let mut out = Tensor4::zeros(dims);
    let mut argmax = vec![0usize; out.len()];
    let mut o = 0;
    for b in 0..bsz {
        for ch in 0..c {
            let plane = (b * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = plane + oy * stride * w + ox * stride;
                    for ky in 0..size {
                        let row = plane + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..size {
                            let v = x[row + kx];
                            if v > best {
                                best = v;
                                at = row + kx;
                            }
                        }
                    }
                    out.data_mut()[o] = x[at];
                    argmax[o] = at;
                    o += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each upstream value to the input position recorded in `argmax`.
pub fn maxpool_backward(
    input_dims: [usize; 4],
    argmax: &[usize],
    grad: &Tensor4,
) -> Result<Tensor4> {
    if grad.len() != argmax.len() {
        return Err(Error::shape(
            "MaxPool backward",
            format!(
                "{} upstream values for {} pooled outputs",
                grad.len(),
                argmax.len()
            ),
        ));
    }
    let mut gin = Tensor4::zeros(input_dims);
    for (&at, &g) in argmax.iter().zip(grad.data()) {
        gin.data_mut()[at] += g;
    }
    Ok(gin)
}

pub fn relu_forward(mut input: Tensor4) -> Tensor4 {
    input.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    input
}

pub fn relu_backward(output: &Tensor4, grad: &Tensor4) -> Result<Tensor4> {
    same_dims("ReLU backward", output.dims(), grad.dims())?;
    let data = output
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor4::from_vec(grad.dims(), data)
}

fn softmax_classes(layer: &LayerSpec, input: &Tensor4) -> Result<usize> {
    let LayerSpec::SpatialSoftmax {
        rows,
        cols,
        classes,
    } = *layer
    else {
        return Err(Error::shape(layer.kind(), "not a spatial softmax"));
    };
    if input.item_len() != rows * cols * classes {
        return Err(Error::shape(
            "SpatialSoftmax",
            format!(
                "expects {rows}x{cols}x{classes} = {} logits per item, got {}",
                rows * cols * classes,
                input.item_len()
            ),
        ));
    }
    Ok(classes)
}

/// In-place max-shifted softmax of one cell's logits.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Independent softmax per cell; logits are laid out cell-major, class-minor
/// (an M×N×C array).
pub fn spatial_softmax_forward(logits: &Tensor4, layer: &LayerSpec) -> Result<Tensor4> {
    let classes = softmax_classes(layer, logits)?;
    let mut out = logits.clone();
    out.data_mut()
        .chunks_exact_mut(classes)
        .for_each(softmax_in_place);
    Ok(out)
}

fn spatial_softmax_backward(
    output: &Tensor4,
    layer: &LayerSpec,
    grad: &Tensor4,
) -> Result<Tensor4> {
    let classes = softmax_classes(layer, output)?;
    same_dims("SpatialSoftmax backward", output.dims(), grad.dims())?;
    let mut gin = Tensor4::zeros(output.dims());
    for ((p, g), dz) in output
        .data()
        .chunks_exact(classes)
        .zip(grad.data().chunks_exact(classes))
        .zip(gin.data_mut().chunks_exact_mut(classes))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for r in 0..classes {
            dz[r] = p[r] * (g[r] - dot);
        }
    }
    Ok(gin)
}
