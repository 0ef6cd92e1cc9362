//! Central finite-difference verification of the autodiff engine.
//!
//! Every check runs in `f64`. The numerical side only ever calls forward ops,
//! so it does not share any code path with [`Graph::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::losses::{loss_total, LossConfig, PerceptualExtractor};
use crate::model::{FhdrParams, ModelConfig};
use crate::tensor::{Graph, Shape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Analytic gradients below this magnitude (on both sides) are not compared.
const MAGNITUDE_FLOOR: f64 = 1e-6;

/// Largest share of entries whose difference stencil may straddle a ReLU or
/// `|x|` kink before the check fails outright.
const MAX_KINK_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Model,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub compared: usize,
    /// Entries whose `x ± eps` evaluations fell in different linear regions
    /// of a nonsmooth op; the derivative is undefined there.
    pub kinks_skipped: usize,
    pub passed: bool,
}

/// Knobs for one run of a suite.
#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub eps: f64,
    pub tol: f64,
    pub seed: u64,
    /// Multiplies the analytic gradient of every conv2d check. Used as a
    /// negative control: any factor away from 1 must make the suite fail.
    pub conv_grad_fault: Option<f64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: DEFAULT_EPS,
            tol: DEFAULT_TOL,
            seed: 7,
            conv_grad_fault: None,
        }
    }
}

/// Relative error with a shared denominator, `|a - n| / max(|a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central-difference derivative of `f` w.r.t. element `index` of input `which`.
pub fn numeric_partial(
    inputs: &[Tensor<f64>],
    which: usize,
    index: usize,
    eps: f64,
    f: &dyn Fn(&[Tensor<f64>]) -> Result<f64>,
) -> Result<f64> {
    let mut shifted = inputs.to_vec();
    let x0 = shifted[which].data()[index];
    shifted[which].data_mut()[index] = x0 + eps;
    let plus = f(&shifted)?;
    shifted[which].data_mut()[index] = x0 - eps;
    let minus = f(&shifted)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Compares backward against central differences for a scalar function of
/// several tensors.
///
/// `build` constructs the scalar loss from leaves on the supplied graph.
/// When `sample` is set, only that many randomly chosen elements per input
/// are compared.
pub fn check_gradient<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    build: F,
    sample: Option<usize>,
    analytic_scale: f64,
    opts: &CheckOptions,
) -> Result<CheckResult>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;

    let eval = |ts: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::inference();
        g.track_region();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let l = build(&mut g, &vars)?;
        Ok((g.value(l).item(), g.region().unwrap_or(0)))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    let mut max_err = 0.0f64;
    let mut compared = 0;
    let mut kinks = 0;
    let mut shifted = inputs.to_vec();
    for (which, v) in vars.iter().enumerate() {
        let n = inputs[which].numel();
        let zeros = vec![0.0; n];
        let analytic = g.grad(*v).unwrap_or(&zeros);
        let indices: Vec<usize> = match sample {
            Some(k) if k < n => (0..k).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for i in indices {
            let a = analytic[i] * analytic_scale;
            let x0 = inputs[which].data()[i];
            shifted[which].data_mut()[i] = x0 + opts.eps;
            let (plus, region_plus) = eval(&shifted)?;
            shifted[which].data_mut()[i] = x0 - opts.eps;
            let (minus, region_minus) = eval(&shifted)?;
            shifted[which].data_mut()[i] = x0;
            if region_plus != region_minus {
                kinks += 1;
                continue;
            }
            let num = (plus - minus) / (2.0 * opts.eps);
            if a.abs().max(num.abs()) <= MAGNITUDE_FLOOR {
                continue;
            }
            compared += 1;
            max_err = max_err.max(relative_error(a, num));
        }
    }
    let kink_ok = kinks as f64 <= MAX_KINK_FRACTION * (compared + kinks).max(1) as f64;
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: max_err,
        compared,
        kinks_skipped: kinks,
        passed: max_err < opts.tol && kink_ok && compared > 0,
    })
}

pub fn random_normal(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn random_positive(shape: Shape, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        v.abs() + 0.05
    })
}

/// Reduces a tensor to a scalar through an L1 distance to a fixed random
/// target, so every output element carries a distinct-signed weight.
fn reduce(g: &mut Graph<f64>, out: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let target = random_normal(g.shape(out), &mut rng).map(|v| 3.0 * v);
    let t = g.constant(target);
    g.l1_mean(out, t)
}

/// One check per autodiff primitive.
pub fn ops_suite(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let s = opts.seed;
    let fault = opts.conv_grad_fault.unwrap_or(1.0);
    let mut results = Vec::new();

    for (name, k, dilation) in [("conv2d_3x3", 3, 1), ("conv2d_3x3_dilated", 3, 2), ("conv2d_1x1", 1, 1)] {
        let x = random_normal(Shape::new(2, 3, 6, 5), &mut rng);
        let w = random_normal(Shape::new(4, 3, k, k), &mut rng);
        let b = random_normal(Shape::new(4, 1, 1, 1), &mut rng);
        results.push(check_gradient(
            name,
            &[x, w, b],
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], dilation)?;
                reduce(g, y, s)
            },
            None,
            fault,
            opts,
        )?);
    }

    let x = random_normal(Shape::new(2, 3, 4, 4), &mut rng);
    results.push(check_gradient(
        "relu",
        &[x],
        |g, v| {
            let y = g.relu(v[0]);
            reduce(g, y, s)
        },
        None,
        1.0,
        opts,
    )?);

    let a = random_normal(Shape::new(2, 2, 3, 3), &mut rng);
    let b = random_normal(Shape::new(2, 3, 3, 3), &mut rng);
    results.push(check_gradient(
        "concat_channels",
        &[a, b],
        |g, v| {
            let y = g.concat_channels(v[0], v[1])?;
            reduce(g, y, s)
        },
        None,
        1.0,
        opts,
    )?);

    let a = random_normal(Shape::new(1, 2, 3, 3), &mut rng);
    let b = random_normal(Shape::new(1, 2, 3, 3), &mut rng);
    results.push(check_gradient(
        "add",
        &[a, b],
        |g, v| {
            let y = g.add(v[0], v[1])?;
            reduce(g, y, s)
        },
        None,
        1.0,
        opts,
    )?);

    let x = random_positive(Shape::new(1, 3, 3, 3), &mut rng);
    results.push(check_gradient(
        "log1p_scaled",
        &[x],
        |g, v| {
            let y = g.log1p_scaled(v[0], 50.0)?;
            reduce(g, y, s)
        },
        None,
        1.0,
        opts,
    )?);

    let a = random_normal(Shape::new(1, 2, 3, 3), &mut rng);
    let b = random_normal(Shape::new(1, 2, 3, 3), &mut rng);
    results.push(check_gradient(
        "l1_mean",
        &[a, b],
        |g, v| g.l1_mean(v[0], v[1]),
        None,
        1.0,
        opts,
    )?);

    let x = random_normal(Shape::new(1, 2, 3, 3), &mut rng);
    results.push(check_gradient(
        "scale",
        &[x],
        |g, v| {
            let y = g.scale(v[0], -1.7);
            reduce(g, y, s)
        },
        None,
        1.0,
        opts,
    )?);

    let x = random_normal(Shape::new(2, 1, 2, 2), &mut rng);
    results.push(check_gradient("sum", &[x], |g, v| Ok(g.sum(v[0])), None, 1.0, opts)?);

    let x = random_normal(Shape::new(1, 2, 5, 4), &mut rng);
    results.push(check_gradient(
        "avg_pool2",
        &[x],
        |g, v| {
            let y = g.avg_pool2(v[0])?;
            reduce(g, y, s)
        },
        None,
        1.0,
        opts,
    )?);

    Ok(results)
}

/// A FHDR configuration small enough for exhaustive finite differences.
pub fn tiny_model_config(iterations: usize) -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        growth_rate: 2,
        num_ddb: 3,
        dilated_layers_per_ddb: 4,
        iterations,
        dilation: 2,
    }
}

/// Backpropagation through an unrolled FEB→FBB→HRB graph (n = 2) into every
/// shared weight, with the averaged tonemapped loss on top.
pub fn model_suite(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let cfg = tiny_model_config(2);
    let mut params = FhdrParams::<f64>::init(&cfg, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    // Zero biases would park dead channels exactly on a ReLU kink.
    for (name, t) in params.names().to_vec().iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            *t = random_normal(t.shape(), &mut rng).map(|v| 0.1 * v);
        }
    }
    let ldr = random_normal(Shape::new(1, 3, 8, 8), &mut rng);
    let gt = Tensor::from_fn(Shape::new(1, 3, 8, 8), |_| rng.gen_range(0.0..1.0));
    // Moderate mu keeps the curvature of the tonemap within reach of ε = 1e-4.
    let loss_cfg = LossConfig {
        mu: 10.0,
        lambda: 0.1,
        perceptual_enabled: true,
    };
    let extractor = PerceptualExtractor::<f64>::seeded(&[4, 4], 3)?;

    let tensors: Vec<Tensor<f64>> = params.tensors().to_vec();
    let fault = opts.conv_grad_fault.unwrap_or(1.0);
    let build = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var> {
        let bound = params.bind_vars(vars)?;
        let x = g.constant(ldr.clone());
        let y = g.constant(gt.clone());
        let outputs = bound.forward(g, x, cfg.iterations)?;
        loss_total(g, &outputs, y, &extractor, &loss_cfg)
    };
    let result = check_gradient("fhdr_bptt_n2", &tensors, build, None, fault, opts)?;
    Ok(vec![result])
}

pub fn run(scope: Scope, opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    match scope {
        Scope::Ops => ops_suite(opts),
        Scope::Model => model_suite(opts),
    }
}
