use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkSpec, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 200×200 input, seven-layer backbone, 20×20×40 spatial softmax.
    Paper,
    /// 64×64 input, three small conv stages, 8×8×10 spatial softmax.
    Tiny,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset {other:?} (expected paper or tiny)"
            ))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Tiny => "tiny",
        })
    }
}

/// Architecture, output grid and optimizer settings of the single-frame model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub preset: Preset,
    /// Square input side; inputs are RGB.
    pub input_size: usize,
    /// Every layer before the classification head.
    pub backbone: Vec<LayerSpec>,
    pub grid_m: usize,
    pub grid_n: usize,
    pub clusters: usize,
    pub sgd: SgdConfig,
    /// Random crops, plus mirroring when `flip` is also set.
    pub augment: bool,
    pub flip: bool,
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Tiny => Self::tiny(),
        }
    }

    pub fn paper() -> Self {
        use LayerSpec::Relu;
        Self {
            preset: Preset::Paper,
            input_size: 200,
            backbone: vec![
                LayerSpec::conv(96, 11, 4, 0),
                Relu,
                LayerSpec::lrn(),
                LayerSpec::max_pool(3, 2),
                LayerSpec::conv(256, 5, 1, 2),
                Relu,
                LayerSpec::lrn(),
                LayerSpec::max_pool(3, 2),
                LayerSpec::conv(384, 3, 1, 1),
                Relu,
                LayerSpec::conv(384, 3, 1, 1),
                Relu,
                LayerSpec::conv(256, 3, 1, 1),
                Relu,
                LayerSpec::max_pool(3, 2),
                LayerSpec::fc(4096),
                Relu,
                LayerSpec::fc(4096),
                Relu,
            ],
            grid_m: 20,
            grid_n: 20,
            clusters: 40,
            sgd: SgdConfig {
                base_lr: 1e-4,
                stepsize: 50_000,
                gamma: 0.1,
                batch: 16,
                max_iters: 100_000,
                seed: 0,
                momentum: 0.0,
                weight_decay: 0.0,
            },
            augment: true,
            flip: true,
        }
    }

    pub fn tiny() -> Self {
        use LayerSpec::Relu;
        Self {
            preset: Preset::Tiny,
            input_size: 64,
            backbone: vec![
                LayerSpec::conv(16, 5, 2, 2),
                Relu,
                LayerSpec::max_pool(3, 2),
                LayerSpec::conv(32, 3, 1, 1),
                Relu,
                LayerSpec::max_pool(3, 2),
                LayerSpec::conv(32, 3, 1, 1),
                Relu,
                LayerSpec::max_pool(3, 2),
                LayerSpec::fc(256),
                Relu,
            ],
            grid_m: 8,
            grid_n: 8,
            clusters: 10,
            sgd: SgdConfig {
                base_lr: 1e-3,
                stepsize: 5_000,
                gamma: 0.1,
                batch: 16,
                max_iters: 10_000,
                seed: 0,
                momentum: 0.0,
                weight_decay: 0.0,
            },
            augment: true,
            flip: true,
        }
    }

    /// Width of the spatial softmax layer, `M · N · C`.
    pub fn logits(&self) -> usize {
        self.grid_m * self.grid_n * self.clusters
    }

    /// Backbone, final fully connected layer and spatial softmax.
    pub fn network(&self) -> NetworkSpec {
        let mut layers = self.backbone.clone();
        layers.push(LayerSpec::fc(self.logits()));
        layers.push(LayerSpec::SpatialSoftmax {
            rows: self.grid_m,
            cols: self.grid_n,
            classes: self.clusters,
        });
        NetworkSpec::new([3, self.input_size, self.input_size], layers)
    }

    /// Width of the activations feeding the final fully connected layer.
    pub fn feature_width(&self) -> Result<usize> {
        let shapes = self.network().shape_trace()?;
        Ok(shapes[self.backbone.len()].iter().product())
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_m == 0 || self.grid_n == 0 || self.clusters == 0 {
            return Err(Error::InvalidArgument(
                "grid and cluster counts must be >= 1".into(),
            ));
        }
        if self.grid_m > self.input_size || self.grid_n > self.input_size {
            return Err(Error::InvalidArgument(format!(
                "a {}x{} grid does not fit a {} pixel input",
                self.grid_m, self.grid_n, self.input_size
            )));
        }
        self.sgd.validate()?;
        self.network().shape_trace()?;
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
        }
        match key {
            "preset" => {
                let keep_seed = self.sgd.seed;
                *self = Self::preset(value.parse()?);
                self.sgd.seed = keep_seed;
            }
            "input_size" => {
                let dims: Vec<&str> = value.split('x').collect();
                let side: usize = num(key, dims[0])?;
                let square = dims.len() < 2 || dims[1].parse::<usize>().ok() == Some(side);
                let rgb = dims.len() < 3 || dims[2] == "3";
                if !square || !rgb || dims.len() > 3 {
                    return Err(Error::InvalidArgument(format!(
                        "input_size must be square RGB (N, NxN or NxNx3), got {value:?}"
                    )));
                }
                self.input_size = side;
            }
            "grid_m" => self.grid_m = num(key, value)?,
            "grid_n" => self.grid_n = num(key, value)?,
            "clusters" => self.clusters = num(key, value)?,
            "base_lr" => self.sgd.base_lr = num(key, value)?,
            "stepsize" => self.sgd.stepsize = num(key, value)?,
            "gamma" => self.sgd.gamma = num(key, value)?,
            "batch" => self.sgd.batch = num(key, value)?,
            "max_iters" => self.sgd.max_iters = num(key, value)?,
            "seed" => self.sgd.seed = num(key, value)?,
            "momentum" => self.sgd.momentum = num(key, value)?,
            "weight_decay" => self.sgd.weight_decay = num(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "flip" => self.flip = parse_bool(key, value)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of `base`. A `preset` line is
    /// applied first wherever it appears; `#` starts a comment.
    pub fn parse(text: &str, base: ModelConfig, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                detail: "expected `key = value`".into(),
            })?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = base;
        entries.sort_by_key(|(_, k, _)| k != "preset");
        for (line, k, v) in entries {
            cfg.set(&k, &v).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line,
                detail: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key in `key = value` form; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let s = &self.sgd;
        format!(
            "preset = {}\ninput_size = {}\ngrid_m = {}\ngrid_n = {}\nclusters = {}\nbase_lr = {}\n\
             stepsize = {}\ngamma = {}\nbatch = {}\nmax_iters = {}\nseed = {}\nmomentum = {}\n\
             weight_decay = {}\naugment = {}\nflip = {}\n",
            self.preset,
            self.input_size,
            self.grid_m,
            self.grid_n,
            self.clusters,
            s.base_lr,
            s.stepsize,
            s.gamma,
            s.batch,
            s.max_iters,
            s.seed,
            s.momentum,
            s.weight_decay,
            self.augment,
            self.flip
        )
    }

    pub fn load(path: &Path, base: ModelConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, base, path)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "bad boolean {value:?} for {key}"
        ))),
    }
}
