use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LayerSpec, NetworkParams, NetworkSpec, Param};
use crate::error::Result;

/// Half-width `sqrt(3 / fan_in)` of the uniform Xavier distribution, which
/// has variance `1 / fan_in`.
pub fn xavier_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

/// Parameters are kept at single precision so checkpoints round-trip exactly.
pub fn round_to_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Draws `(weight, bias)` for one layer: uniform weights in `[-a, a]` with
/// `a = sqrt(3 / fan_in)`, zero bias.
pub fn xavier_layer(
    layer: &LayerSpec,
    input: [usize; 3],
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let (wd, bd) = layer.param_shapes(input)?;
    let fan_in = layer.fan_in(input)?;
    let a = xavier_bound(fan_in);
    let dist = Uniform::new_inclusive(-a, a);
    let w = (0..wd.iter().product::<usize>())
        .map(|_| round_to_f32(dist.sample(rng)).clamp(-a, a))
        .collect();
    Some((w, vec![0.0; bd[0]]))
}

/// Xavier-initializes every parameterized layer of `spec`, deterministically
/// for a given seed.
pub fn xavier_init(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    let shapes = spec.shape_trace()?;
    let layout = spec.param_layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::with_capacity(layout.len());
    let mut names = layout.into_iter();
    for (i, layer) in spec.layers.iter().enumerate() {
        if let Some((w, b)) = xavier_layer(layer, shapes[i], &mut rng) {
            for data in [w, b] {
                let (name, dims) = names.next().expect("layout matches layers");
                tensors.push(Param { name, dims, data });
            }
        }
    }
    Ok(NetworkParams {
        tensors,
        iteration: 0,
    })
}
