use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BoundFhdr, DdbLayout, Layout, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Shape, Tensor, Var};

/// Static description of one convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvLayer {
    fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, dilation: usize) -> Self {
        ConvLayer {
            name: name.into(),
            cin,
            cout,
            kernel,
            dilation,
        }
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.cout, self.cin, self.kernel, self.kernel)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(self.cout, 1, 1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel + self.cout
    }
}

fn build_layers(cfg: &ModelConfig) -> (Vec<ConvLayer>, Layout) {
    let c = cfg.base_channels;
    let gr = cfg.growth_rate;
    let mut layers = Vec::new();
    let mut push = |l: ConvLayer| {
        layers.push(l);
        layers.len() - 1
    };

    let feb = [
        push(ConvLayer::new("feb.0", 3, c, 3, 1)),
        push(ConvLayer::new("feb.1", c, c, 3, 1)),
    ];
    let fbb_fusion = push(ConvLayer::new("fbb.fusion", 2 * c, c, 1, 1));
    let mut ddbs = Vec::with_capacity(cfg.num_ddb);
    for d in 0..cfg.num_ddb {
        let fusion = push(ConvLayer::new(format!("fbb.ddb{d}.fusion"), 2 * c, c, 1, 1));
        let dense = (0..cfg.dilated_layers_per_ddb)
            .map(|j| {
                push(ConvLayer::new(
                    format!("fbb.ddb{d}.dense{j}"),
                    c + j * gr,
                    gr,
                    3,
                    cfg.dilation,
                ))
            })
            .collect();
        let compress = push(ConvLayer::new(
            format!("fbb.ddb{d}.compress"),
            c + cfg.dilated_layers_per_ddb * gr,
            c,
            1,
            1,
        ));
        ddbs.push(DdbLayout {
            fusion,
            dense,
            compress,
        });
    }
    let fbb_trailing = push(ConvLayer::new("fbb.trailing", c, c, 3, 1));
    let hrb = [
        push(ConvLayer::new("hrb.0", c, c, 3, 1)),
        push(ConvLayer::new("hrb.1", c, 3, 3, 1)),
    ];
    (
        layers,
        Layout {
            feb,
            fbb_fusion,
            ddbs,
            fbb_trailing,
            hrb,
        },
    )
}

/// Every trainable tensor of the network, in a fixed order: for each conv
/// layer its weight and then its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct FhdrParams<T> {
    config: ModelConfig,
    layers: Vec<ConvLayer>,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> FhdrParams<T> {
    fn with_tensors(cfg: &ModelConfig, mut make: impl FnMut(&ConvLayer, bool) -> Tensor<T>) -> Result<Self> {
        cfg.validate()?;
        let (layers, layout) = build_layers(cfg);
        let mut names = Vec::with_capacity(2 * layers.len());
        let mut tensors = Vec::with_capacity(2 * layers.len());
        for l in &layers {
            names.push(format!("{}.weight", l.name));
            tensors.push(make(l, true));
            names.push(format!("{}.bias", l.name));
            tensors.push(make(l, false));
        }
        Ok(FhdrParams {
            config: cfg.clone(),
            layers,
            layout,
            names,
            tensors,
        })
    }

    /// He-style uniform initialization: weights in `±sqrt(6 / fan_in)`,
    /// zero biases, drawn from a seeded ChaCha stream.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_tensors(cfg, |l, is_weight| {
            if is_weight {
                let bound = (6.0 / (l.cin * l.kernel * l.kernel) as f64).sqrt();
                Tensor::from_fn(l.weight_shape(), |_| T::from_f64(rng.gen_range(-bound..bound)))
            } else {
                Tensor::zeros(l.bias_shape())
            }
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        Self::with_tensors(cfg, |l, is_weight| {
            Tensor::zeros(if is_weight { l.weight_shape() } else { l.bias_shape() })
        })
    }

    /// Rebuilds parameters from named tensors, e.g. a loaded checkpoint.
    pub fn from_named(cfg: &ModelConfig, mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Result<Self> {
        let mut missing = None;
        let p = Self::with_tensors(cfg, |l, is_weight| {
            let (name, shape) = if is_weight {
                (format!("{}.weight", l.name), l.weight_shape())
            } else {
                (format!("{}.bias", l.name), l.bias_shape())
            };
            match lookup(&name) {
                Some(t) if t.shape() == shape => t,
                Some(t) => {
                    missing.get_or_insert(format!("{name} has shape {}, expected {shape}", t.shape()));
                    Tensor::zeros(shape)
                }
                None => {
                    missing.get_or_insert(format!("missing parameter {name}"));
                    Tensor::zeros(shape)
                }
            }
        })?;
        match missing {
            Some(msg) => Err(Error::contract(msg)),
            None => Ok(p),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same weights, different unroll length.
    pub fn with_iterations(mut self, n: usize) -> Result<Self> {
        self.config.iterations = n;
        self.config.validate()?;
        Ok(self)
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundFhdr {
        let vars: Vec<Var> = self.tensors.iter().map(|t| g.param(t.clone())).collect();
        self.bind_vars(&vars).expect("one leaf per tensor")
    }

    /// Uses leaves already on a graph, in parameter order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundFhdr> {
        BoundFhdr::new(&self.config, &self.layers, &self.layout, vars)
    }

    pub fn cast<U: Real>(&self) -> FhdrParams<U> {
        FhdrParams {
            config: self.config.clone(),
            layers: self.layers.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Exact number of scalar trainable parameters for `cfg`.
pub fn param_count(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    Ok(build_layers(cfg).0.iter().map(ConvLayer::param_count).sum())
}

impl ModelConfig {
    pub fn param_count(&self) -> Result<usize> {
        param_count(self)
    }
}
