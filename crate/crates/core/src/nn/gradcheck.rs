//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{xavier_init, LayerSpec, NetworkParams, NetworkSpec};
use crate::error::Result;
use crate::tensor::Tensor4;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps`; restores `x[i]` afterwards.
pub fn central_difference(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &mut [f64],
    i: usize,
    eps: f64,
) -> f64 {
    let orig = x[i];
    x[i] = orig + eps;
    let up = f(x);
    x[i] = orig - eps;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * eps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
        self.checked += 1;
    }

    fn merge(self, other: GradReport) -> GradReport {
        GradReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            checked: self.checked + other.checked,
        }
    }
}

fn random_tensor(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
    let n = dims.iter().product();
    Tensor4::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("dims match length")
}

/// Checks one layer in isolation under the scalar loss `Σ out ⊙ R` for a
/// random projection `R`, comparing every input and parameter partial.
pub fn check_layer(layer: LayerSpec, input: [usize; 4], seed: u64, eps: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = NetworkSpec::new([input[1], input[2], input[3]], vec![layer]);
    let mut params = xavier_init(&spec, seed)?;
    for p in params.tensors.iter_mut() {
        p.data
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.1..0.1));
    }
    let mut x = random_tensor(input, &mut rng);
    if matches!(layer, LayerSpec::Relu) {
        // keep inputs away from the kink
        x.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 0.05 {
                *v += 0.1f64.copysign(*v);
            }
        });
    }
    let out_dims = spec.forward(&params, &x)?.output().dims();
    let proj = random_tensor(out_dims, &mut rng);
    let trace = spec.forward(&params, &x)?;
    let grads = spec.backward(&params, &trace, &proj)?;

    let objective = |spec: &NetworkSpec, params: &NetworkParams, x: &Tensor4| -> f64 {
        let out = spec.forward(params, x).expect("shapes validated");
        out.output()
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut report = GradReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut xs = x.clone().into_vec();
    for i in 0..xs.len() {
        let mut f = |v: &[f64]| {
            objective(
                &spec,
                &params,
                &Tensor4::from_vec(input, v.to_vec()).unwrap(),
            )
        };
        let num = central_difference(&mut f, &mut xs, i, eps);
        report.record(grads.input.data()[i], num);
    }
    for t in 0..params.tensors.len() {
        let mut vals = params.tensors[t].data.clone();
        for i in 0..vals.len() {
            let mut f = |v: &[f64]| {
                let mut p = params.clone();
                p.tensors[t].data.copy_from_slice(v);
                objective(&spec, &p, &x)
            };
            let num = central_difference(&mut f, &mut vals, i, eps);
            report.record(grads.params[t][i], num);
        }
    }
    Ok(report)
}

/// Checks a whole network on a sample of parameter coordinates.
///
/// `loss` maps the network output to a scalar loss and its gradient with
/// respect to the output of layer `end - 1` (see [`NetworkSpec::backward_from`]).
pub fn check_network(
    spec: &NetworkSpec,
    params: &NetworkParams,
    input: &Tensor4,
    end: usize,
    loss: &dyn Fn(&Tensor4) -> (f64, Tensor4),
    samples: usize,
    seed: u64,
    eps: f64,
) -> Result<GradReport> {
    let trace = spec.forward(params, input)?;
    let (_, g) = loss(trace.output());
    let grads = spec.backward_from(params, &trace, end, &g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = params.num_values();
    let mut report = GradReport {
        max_rel_error: 0.0,
        checked: 0,
    };
    let mut work = params.clone();
    for _ in 0..samples {
        let mut k = rng.gen_range(0..total);
        let mut t = 0;
        while k >= work.tensors[t].data.len() {
            k -= work.tensors[t].data.len();
            t += 1;
        }
        let orig = work.tensors[t].data[k];
        let mut eval = |v: f64| {
            work.tensors[t].data[k] = v;
            let out = spec.forward(&work, input).expect("shapes validated");
            loss(out.output()).0
        };
        let num = (eval(orig + eps) - eval(orig - eps)) / (2.0 * eps);
        work.tensors[t].data[k] = orig;
        report.record(grads.params[t][k], num);
    }
    Ok(report)
}

/// Runs [`check_layer`] for every layer kind at small shapes.
pub fn check_all_layer_kinds(seed: u64) -> Result<Vec<(&'static str, GradReport)>> {
    let eps = 1e-4;
    let cases: Vec<(LayerSpec, [usize; 4])> = vec![
        (LayerSpec::conv(3, 3, 1, 1), [2, 2, 5, 5]),
        (LayerSpec::conv(2, 3, 2, 0), [1, 3, 7, 6]),
        (
            LayerSpec::Lrn {
                n: 3,
                alpha: 0.5,
                beta: 0.75,
                k: 1.0,
            },
            [2, 5, 3, 3],
        ),
        (LayerSpec::max_pool(3, 2), [2, 2, 7, 7]),
        (LayerSpec::fc(4), [3, 2, 2, 2]),
        (LayerSpec::Relu, [2, 3, 3, 3]),
        (
            LayerSpec::SpatialSoftmax {
                rows: 2,
                cols: 3,
                classes: 4,
            },
            [2, 24, 1, 1],
        ),
    ];
    let mut out: Vec<(&'static str, GradReport)> = Vec::new();
    for (i, (layer, dims)) in cases.into_iter().enumerate() {
        let r = check_layer(layer, dims, seed + i as u64, eps)?;
        match out.iter_mut().find(|(k, _)| *k == layer.kind()) {
            Some(entry) => entry.1 = entry.1.merge(r),
            None => out.push((layer.kind(), r)),
        }
    }
    Ok(out)
}
