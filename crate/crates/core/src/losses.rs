//! μ-law tonemapping and the training losses built on top of it.
//!
//! All distances are measured between tonemapped images. The L1 and
//! perceptual terms are each averaged over the per-iteration outputs, and the
//! total is `perceptual + lambda * l1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Shape, Tensor, Var};

pub const DEFAULT_MU: f64 = 5000.0;
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub mu: f64,
    pub lambda: f64,
    pub perceptual_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mu: DEFAULT_MU,
            lambda: DEFAULT_LAMBDA,
            perceptual_enabled: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::contract(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `log(1 + mu * h) / log(1 + mu)` on plain numbers.
pub fn tonemap_scalar(h: f64, mu: f64) -> f64 {
    (mu * h).ln_1p() / mu.ln_1p()
}

/// Inverse of [`tonemap_scalar`].
pub fn inverse_tonemap_scalar(t: f64, mu: f64) -> f64 {
    (t * mu.ln_1p()).exp_m1() / mu
}

/// Differentiable μ-law tonemap. Fails on any negative (or NaN) element.
pub fn tonemap<T: Real>(g: &mut Graph<T>, h: Var, mu: f64) -> Result<Var> {
    g.log1p_scaled(h, mu)
}

/// Tonemaps a tensor outside any graph.
pub fn tonemap_tensor<T: Real>(h: &Tensor<T>, mu: f64) -> Result<Tensor<T>> {
    let mut g = Graph::inference();
    let v = g.constant(h.clone());
    let t = g.log1p_scaled(v, mu)?;
    Ok(g.value(t).clone())
}

pub const DEFAULT_EXTRACTOR_WIDTHS: [usize; 3] = [16, 32, 64];
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5eed_f00d;

/// A frozen conv+ReLU feature pyramid standing in for a pretrained
/// classification network.
///
/// Stage `i > 0` starts with 2×2 average pooling. Weights are either drawn
/// from a seeded generator or imported from a named-tensor file; they are
/// always bound as constants, so gradients pass through them without
/// updating them.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualExtractor<T> {
    stages: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> PerceptualExtractor<T> {
    pub fn seeded(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::contract("extractor needs at least one stage of nonzero width"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let stages = widths
            .iter()
            .map(|&cout| {
                let bound = (6.0 / (cin * 9) as f64).sqrt();
                let w = Tensor::from_fn(Shape::new(cout, cin, 3, 3), |_| {
                    T::from_f64(rng.gen_range(-bound..bound))
                });
                cin = cout;
                (w, Tensor::zeros(Shape::new(cout, 1, 1, 1)))
            })
            .collect();
        Ok(PerceptualExtractor { stages })
    }

    /// Builds from `extractor.stage{i}.weight` / `.bias` tensors.
    pub fn from_named(mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Result<Self> {
        let mut stages = Vec::new();
        let mut cin = 3;
        while let Some(w) = lookup(&format!("extractor.stage{}.weight", stages.len())) {
            let name = format!("extractor.stage{}.bias", stages.len());
            let b = lookup(&name).ok_or_else(|| Error::contract(format!("missing {name}")))?;
            let s = w.shape();
            if s.c != cin || s.h != 3 || s.w != 3 || b.numel() != s.n {
                return Err(Error::contract(format!(
                    "extractor stage {} has weight {s} and {} biases; expected 3x3 kernels over {cin} channels",
                    stages.len(),
                    b.numel()
                )));
            }
            cin = s.n;
            stages.push((w, b));
        }
        if stages.is_empty() {
            return Err(Error::contract("weights file holds no extractor stages"));
        }
        Ok(PerceptualExtractor { stages })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| {
                [
                    (format!("extractor.stage{i}.weight"), w),
                    (format!("extractor.stage{i}.bias"), b),
                ]
            })
            .collect()
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn cast<U: Real>(&self) -> PerceptualExtractor<U> {
        PerceptualExtractor {
            stages: self.stages.iter().map(|(w, b)| (w.cast(), b.cast())).collect(),
        }
    }

    /// Leaves for the frozen weights on `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<(Var, Var)> {
        self.stages
            .iter()
            .map(|(w, b)| (g.constant(w.clone()), g.constant(b.clone())))
            .collect()
    }

    /// Feature maps after every stage.
    pub fn features(&self, g: &mut Graph<T>, bound: &[(Var, Var)], x: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(bound.len());
        let mut cur = x;
        for (i, &(w, b)) in bound.iter().enumerate() {
            if i > 0 {
                cur = g.avg_pool2(cur)?;
            }
            let pre = g.conv2d(cur, w, b, 1)?;
            cur = g.relu(pre);
            feats.push(cur);
        }
        Ok(feats)
    }
}

impl<T: Real> Default for PerceptualExtractor<T> {
    fn default() -> Self {
        Self::seeded(&DEFAULT_EXTRACTOR_WIDTHS, DEFAULT_EXTRACTOR_SEED).expect("default widths are valid")
    }
}

fn check_outputs<T: Real>(g: &Graph<T>, outputs: &[Var], gt: Var) -> Result<()> {
    if outputs.is_empty() {
        return Err(Error::contract("loss needs at least one iteration output"));
    }
    let s = g.shape(gt);
    if let Some(&o) = outputs.iter().find(|&&o| g.shape(o) != s) {
        return Err(Error::contract(format!(
            "output shape {} does not match ground truth {s}",
            g.shape(o)
        )));
    }
    Ok(())
}

fn average<T: Real>(g: &mut Graph<T>, terms: &[Var]) -> Result<Var> {
    let total = g.add_all(terms)?;
    Ok(g.scale(total, 1.0 / terms.len() as f64))
}

fn l1_tonemapped<T: Real>(g: &mut Graph<T>, mapped: &[Var], mapped_gt: Var) -> Result<Var> {
    let terms = mapped
        .iter()
        .map(|&m| g.l1_mean(m, mapped_gt))
        .collect::<Result<Vec<_>>>()?;
    average(g, &terms)
}

fn perceptual_tonemapped<T: Real>(
    g: &mut Graph<T>,
    mapped: &[Var],
    mapped_gt: Var,
    ext: &PerceptualExtractor<T>,
) -> Result<Var> {
    let bound = ext.bind(g);
    let gt_feats = ext.features(g, &bound, mapped_gt)?;
    let mut per_iter = Vec::with_capacity(mapped.len());
    for &m in mapped {
        let feats = ext.features(g, &bound, m)?;
        let stage_terms = feats
            .iter()
            .zip(&gt_feats)
            .map(|(&a, &b)| g.l1_mean(a, b))
            .collect::<Result<Vec<_>>>()?;
        per_iter.push(average(g, &stage_terms)?);
    }
    average(g, &per_iter)
}

fn tonemap_all<T: Real>(g: &mut Graph<T>, outputs: &[Var], gt: Var, mu: f64) -> Result<(Vec<Var>, Var)> {
    let mapped_gt = tonemap(g, gt, mu)?;
    let mapped = outputs.iter().map(|&o| tonemap(g, o, mu)).collect::<Result<Vec<_>>>()?;
    Ok((mapped, mapped_gt))
}

/// Iteration-averaged mean absolute error between tonemapped images.
pub fn loss_l1<T: Real>(g: &mut Graph<T>, outputs: &[Var], gt: Var, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    check_outputs(g, outputs, gt)?;
    let (mapped, mapped_gt) = tonemap_all(g, outputs, gt, cfg.mu)?;
    l1_tonemapped(g, &mapped, mapped_gt)
}

/// Iteration-averaged, stage-averaged L1 between extractor features of
/// tonemapped images.
pub fn loss_perceptual<T: Real>(
    g: &mut Graph<T>,
    outputs: &[Var],
    gt: Var,
    ext: &PerceptualExtractor<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_outputs(g, outputs, gt)?;
    let (mapped, mapped_gt) = tonemap_all(g, outputs, gt, cfg.mu)?;
    perceptual_tonemapped(g, &mapped, mapped_gt, ext)
}

/// `perceptual + lambda * l1`, or `lambda * l1` with the perceptual term off.
pub fn loss_total<T: Real>(
    g: &mut Graph<T>,
    outputs: &[Var],
    gt: Var,
    ext: &PerceptualExtractor<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_outputs(g, outputs, gt)?;
    let (mapped, mapped_gt) = tonemap_all(g, outputs, gt, cfg.mu)?;
    let l1 = l1_tonemapped(g, &mapped, mapped_gt)?;
    let weighted = g.scale(l1, cfg.lambda);
    if !cfg.perceptual_enabled {
        return Ok(weighted);
    }
    let p = perceptual_tonemapped(g, &mapped, mapped_gt, ext)?;
    g.add(p, weighted)
}
