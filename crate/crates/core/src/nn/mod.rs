//! A small differentiable layer kit: the fixed set of layers the motion
//! network needs, with forward and backward passes, initialization, SGD and
//! a finite-difference gradient checker.

mod checkpoint;
mod gemm;
pub mod gradcheck;
mod init;
pub mod layers;
mod sgd;

pub use checkpoint::{Checkpoint, NamedTensor, MODEL_MAGIC, MULTIFRAME_MAGIC};
pub(crate) use gemm::{gemm, Op};
pub use init::{round_to_f32, xavier_bound, xavier_init, xavier_layer};
pub use layers::LayerCache;
pub use sgd::{learning_rate, Sgd, SgdConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// One layer of a feed-forward chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        kernels: usize,
        size: usize,
        stride: usize,
        pad: usize,
    },
    Lrn {
        n: usize,
        alpha: f64,
        beta: f64,
        k: f64,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    FullyConnected {
        outputs: usize,
    },
    Relu,
    /// Independent softmax over `classes` at each of `rows × cols` cells.
    SpatialSoftmax {
        rows: usize,
        cols: usize,
        classes: usize,
    },
}

impl LayerSpec {
    pub fn conv(kernels: usize, size: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv {
            kernels,
            size,
            stride,
            pad,
        }
    }

    /// Local response normalization with the usual 5/1e-4/0.75/1 defaults.
    pub fn lrn() -> Self {
        LayerSpec::Lrn {
            n: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 1.0,
        }
    }

    pub fn max_pool(size: usize, stride: usize) -> Self {
        LayerSpec::MaxPool { size, stride }
    }

    pub fn fc(outputs: usize) -> Self {
        LayerSpec::FullyConnected { outputs }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "Conv",
            LayerSpec::Lrn { .. } => "LRN",
            LayerSpec::MaxPool { .. } => "MaxPool",
            LayerSpec::FullyConnected { .. } => "FullyConnected",
            LayerSpec::Relu => "ReLU",
            LayerSpec::SpatialSoftmax { .. } => "SpatialSoftmax",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. } | LayerSpec::FullyConnected { .. }
        )
    }

    /// Checks the layer's own parameters, independent of its input.
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: &str| {
            Err(Error::LayerSpec {
                layer: self.kind().to_string(),
                detail: detail.to_string(),
            })
        };
        match *self {
            LayerSpec::Conv {
                kernels,
                size,
                stride,
                ..
            } => {
                if kernels == 0 {
                    return bad("kernels must be >= 1");
                }
                if size == 0 {
                    return bad("size must be >= 1");
                }
                if stride == 0 {
                    return bad("stride must be >= 1");
                }
            }
            LayerSpec::Lrn { n, alpha, beta, k } => {
                if n == 0 || n % 2 == 0 {
                    return bad("window n must be odd and >= 1");
                }
                if !(k > 0.0) {
                    return bad("k_bias must be > 0");
                }
                if !alpha.is_finite() || !beta.is_finite() || alpha < 0.0 {
                    return bad("alpha must be finite and >= 0, beta finite");
                }
            }
            LayerSpec::MaxPool { size, stride } => {
                if size == 0 || stride == 0 {
                    return bad("size and stride must be >= 1");
                }
            }
            LayerSpec::FullyConnected { outputs } => {
                if outputs == 0 {
                    return bad("outputs must be >= 1");
                }
            }
            LayerSpec::Relu => {}
            LayerSpec::SpatialSoftmax {
                rows,
                cols,
                classes,
            } => {
                if rows == 0 || cols == 0 || classes == 0 {
                    return bad("rows, cols and classes must be >= 1");
                }
            }
        }
        Ok(())
    }

    /// Output (channels, height, width) for an input of the given shape.
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let [c, h, w] = input;
        let windowed = |size: usize, stride: usize, pad: usize| -> Result<(usize, usize)> {
            let span = |x: usize| -> Option<usize> {
                (x + 2 * pad).checked_sub(size).map(|d| d / stride + 1)
            };
            match (span(h), span(w)) {
                (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok((oh, ow)),
                _ => Err(Error::LayerSpec {
                    layer: self.kind().to_string(),
                    detail: format!(
                        "window {size} stride {stride} pad {pad} does not fit input {h}x{w}"
                    ),
                }),
            }
        };
        match *self {
            LayerSpec::Conv {
                kernels,
                size,
                stride,
                pad,
            } => {
                let (oh, ow) = windowed(size, stride, pad)?;
                Ok([kernels, oh, ow])
            }
            LayerSpec::MaxPool { size, stride } => {
                let (oh, ow) = windowed(size, stride, 0)?;
                Ok([c, oh, ow])
            }
            LayerSpec::FullyConnected { outputs } => Ok([outputs, 1, 1]),
            LayerSpec::Lrn { .. } | LayerSpec::Relu => Ok(input),
            LayerSpec::SpatialSoftmax {
                rows,
                cols,
                classes,
            } => {
                if c * h * w != rows * cols * classes {
                    return Err(Error::LayerSpec {
                        layer: self.kind().to_string(),
                        detail: format!(
                            "expects {} logits, input has {}",
                            rows * cols * classes,
                            c * h * w
                        ),
                    });
                }
                Ok(input)
            }
        }
    }

    /// Shapes of (weight, bias) for a parameterized layer.
    pub fn param_shapes(&self, input: [usize; 3]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv { kernels, size, .. } => {
                Some((vec![kernels, input[0], size, size], vec![kernels]))
            }
            LayerSpec::FullyConnected { outputs } => {
                Some((vec![outputs, input.iter().product()], vec![outputs]))
            }
            _ => None,
        }
    }

    /// Fan-in used by Xavier initialization.
    pub fn fan_in(&self, input: [usize; 3]) -> Option<usize> {
        match *self {
            LayerSpec::Conv { size, .. } => Some(input[0] * size * size),
            LayerSpec::FullyConnected { .. } => Some(input.iter().product()),
            _ => None,
        }
    }
}

/// A feed-forward chain of layers over a fixed input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// A named parameter tensor with its logical dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Learnable tensors of a [`NetworkSpec`], weight then bias per
/// parameterized layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub tensors: Vec<Param>,
    pub iteration: u64,
}

/// Intermediates retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input_dims: [usize; 4],
    caches: Vec<LayerCache>,
    output: Tensor4,
}

impl Trace {
    pub fn output(&self) -> &Tensor4 {
        &self.output
    }

    pub fn into_output(self) -> Tensor4 {
        self.output
    }

    /// The tensor that was fed into layer `index`, when the layer kept it.
    pub fn layer_input(&self, index: usize) -> Option<&Tensor4> {
        self.caches.get(index).and_then(LayerCache::input)
    }
}

/// Gradients of a loss with respect to every parameter and the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Tensor4,
}

impl NetworkSpec {
    pub fn new(input: [usize; 3], layers: Vec<LayerSpec>) -> Self {
        Self { input, layers }
    }

    /// Per-layer output shapes; the first entry is the input shape.
    pub fn shape_trace(&self) -> Result<Vec<[usize; 3]>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = self.input;
        if cur.contains(&0) {
            return Err(Error::shape("network input", format!("{cur:?}")));
        }
        shapes.push(cur);
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.output_shape(cur).map_err(|e| match e {
                Error::LayerSpec { layer, detail } => Error::LayerSpec {
                    layer: format!("{layer} (layer {i})"),
                    detail,
                },
                other => other,
            })?;
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<[usize; 3]> {
        Ok(*self.shape_trace()?.last().expect("input shape present"))
    }

    /// Parameter names and dims, in layer order.
    pub fn param_layout(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let shapes = self.shape_trace()?;
        let mut out = Vec::new();
        let (mut nconv, mut nfc) = (0, 0);
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((w, b)) = layer.param_shapes(shapes[i]) {
                let stem = match layer {
                    LayerSpec::Conv { .. } => {
                        nconv += 1;
                        format!("conv{nconv}")
                    }
                    _ => {
                        nfc += 1;
                        format!("fc{nfc}")
                    }
                };
                out.push((format!("{stem}.weight"), w));
                out.push((format!("{stem}.bias"), b));
            }
        }
        Ok(out)
    }

    /// Checks that `params` has exactly the tensors this spec implies.
    pub fn check_params(&self, params: &NetworkParams) -> Result<()> {
        let layout = self.param_layout()?;
        if layout.len() != params.tensors.len() {
            return Err(Error::shape(
                "network parameters",
                format!(
                    "expected {} tensors, found {}",
                    layout.len(),
                    params.tensors.len()
                ),
            ));
        }
        for ((name, dims), p) in layout.iter().zip(&params.tensors) {
            if *name != p.name || *dims != p.dims {
                return Err(Error::shape(
                    format!("parameter {name}"),
                    format!("expected {name} {dims:?}, found {} {:?}", p.name, p.dims),
                ));
            }
            if p.data.len() != dims.iter().product::<usize>() {
                return Err(Error::shape(
                    format!("parameter {name}"),
                    "payload length disagrees with dims",
                ));
            }
        }
        Ok(())
    }

    /// Runs the chain on a batch, keeping what backward needs.
    pub fn forward(&self, params: &NetworkParams, input: &Tensor4) -> Result<Trace> {
        let [c, h, w] = self.input;
        if input.dims()[1..] != [c, h, w] {
            return Err(Error::shape(
                "network input",
                format!("expected (_, {c}, {h}, {w}), got {:?}", input.dims()),
            ));
        }
        self.check_params(params)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        let mut p = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let wb = if layer.has_params() {
                p += 2;
                Some((
                    &params.tensors[p - 2].data[..],
                    &params.tensors[p - 1].data[..],
                ))
            } else {
                None
            };
            let (out, cache) =
                layers::forward(layer, wb, cur).map_err(|e| annotate(e, i, layer))?;
            caches.push(cache);
            cur = out;
        }
        Ok(Trace {
            input_dims: input.dims(),
            caches,
            output: cur,
        })
    }

    /// Back-propagates `grad_output` (dL/d output) through a trace produced
    /// by [`NetworkSpec::forward`] with the same parameters.
    pub fn backward(
        &self,
        params: &NetworkParams,
        trace: &Trace,
        grad_output: &Tensor4,
    ) -> Result<Gradients> {
        self.backward_from(params, trace, self.layers.len(), grad_output)
    }

    /// Back-propagates through `layers[..end]` only, with `grad` taken as
    /// dL/d(output of layer `end - 1`). Used to skip a final softmax whose
    /// gradient is fused into the loss.
    pub fn backward_from(
        &self,
        params: &NetworkParams,
        trace: &Trace,
        end: usize,
        grad: &Tensor4,
    ) -> Result<Gradients> {
        if trace.caches.len() != self.layers.len() || end > self.layers.len() {
            return Err(Error::NoForward(format!(
                "trace has {} layers, network has {}",
                trace.caches.len(),
                self.layers.len()
            )));
        }
        let shapes = self.shape_trace()?;
        let [c, h, w] = shapes[end];
        let expected = [trace.input_dims[0], c, h, w];
        if grad.dims() != expected {
            return Err(Error::shape(
                "backward upstream gradient",
                format!("expected {expected:?}, got {:?}", grad.dims()),
            ));
        }
        let mut pgrads: Vec<Vec<f64>> = params
            .tensors
            .iter()
            .map(|p| vec![0.0; p.data.len()])
            .collect();
        let mut p = self.layers[..end].iter().filter(|l| l.has_params()).count() * 2;
        let mut grad = grad.clone();
        for (i, layer) in self.layers[..end].iter().enumerate().rev() {
            let wb = if layer.has_params() {
                p -= 2;
                Some((&params.tensors[p].data[..], &params.tensors[p + 1].data[..]))
            } else {
                None
            };
            let (gin, gparams) = layers::backward(layer, wb, &trace.caches[i], &grad)
                .map_err(|e| annotate(e, i, layer))?;
            if let Some((gw, gb)) = gparams {
                pgrads[p] = gw;
                pgrads[p + 1] = gb;
            }
            grad = gin;
        }
        Ok(Gradients {
            params: pgrads,
            input: grad,
        })
    }
}

fn annotate(e: Error, index: usize, layer: &LayerSpec) -> Error {
    match e {
        Error::Shape { context, detail } => Error::Shape {
            context: format!("layer {index} ({}): {context}", layer.kind()),
            detail,
        },
        Error::NoForward(d) => Error::NoForward(format!("layer {index} ({}): {d}", layer.kind())),
        other => other,
    }
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let tensors = spec
            .param_layout()?
            .into_iter()
            .map(|(name, dims)| Param {
                data: vec![0.0; dims.iter().product()],
                name,
                dims,
            })
            .collect();
        Ok(Self {
            tensors,
            iteration: 0,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.tensors.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.tensors.iter_mut().find(|p| p.name == name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|p| p.data.len()).sum()
    }

    pub fn to_checkpoint_tensors(&self) -> Vec<NamedTensor> {
        self.tensors
            .iter()
            .map(|p| NamedTensor::from_f64(&p.name, &p.dims, &p.data))
            .collect()
    }

    /// Picks the tensors named by `spec` out of a checkpoint.
    pub fn from_checkpoint(spec: &NetworkSpec, ckpt: &Checkpoint) -> Result<Self> {
        let mut tensors = Vec::new();
        for (name, dims) in spec.param_layout()? {
            let t = ckpt.get(&name).ok_or_else(|| {
                Error::shape("checkpoint", format!("missing parameter tensor {name}"))
            })?;
            if t.dims != dims {
                return Err(Error::shape(
                    format!("checkpoint tensor {name}"),
                    format!("expected dims {dims:?}, found {:?}", t.dims),
                ));
            }
            tensors.push(Param {
                name,
                dims,
                data: t.to_f64(),
            });
        }
        Ok(Self {
            tensors,
            iteration: ckpt.iteration,
        })
    }
}
