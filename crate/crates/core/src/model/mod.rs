//! The FHDR feedback network.
//!
//! A forward pass extracts features once (FEB), then runs the feedback block
//! (FBB) `n` times with a global hidden state and one local hidden state per
//! dilated dense block (DDB). Every iteration adds the first FEB layer's
//! features back in and decodes an HDR image with the reconstruction block
//! (HRB). All iterations share one set of weights.

mod config;
mod params;

pub use config::ModelConfig;
pub use params::{param_count, ConvLayer, FhdrParams};

use crate::error::{Error, Result};
use crate::tensor::{Graph, OpKind, Real, Shape, Tensor, Var};

/// Index of every conv layer inside [`FhdrParams`], grouped by block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub feb: [usize; 2],
    pub fbb_fusion: usize,
    pub ddbs: Vec<DdbLayout>,
    pub fbb_trailing: usize,
    pub hrb: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DdbLayout {
    /// 1×1 compression of `concat(input, local_hidden)`.
    pub fusion: usize,
    /// Dilated 3×3 layers, each seeing every earlier feature map.
    pub dense: Vec<usize>,
    /// 1×1 compression of all accumulated features.
    pub compress: usize,
}

/// Hidden states carried between feedback iterations.
#[derive(Clone, Debug)]
pub struct FeedbackState {
    pub global_hidden: Var,
    /// `None` means "not yet set": the DDB uses its own input instead.
    pub local_hidden: Vec<Option<Var>>,
}

impl FeedbackState {
    /// State for the first iteration: the global hidden equals `F_in`.
    pub fn initial(f_in: Var, num_ddb: usize) -> Self {
        FeedbackState {
            global_hidden: f_in,
            local_hidden: vec![None; num_ddb],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BoundConv {
    weight: Var,
    bias: Var,
    dilation: usize,
}

/// Parameters placed on a particular [`Graph`] as leaves.
///
/// The same leaves are reused by every iteration, which is what makes the
/// unrolled graph share weights across time.
#[derive(Clone, Debug)]
pub struct BoundFhdr {
    config: ModelConfig,
    layout: Layout,
    convs: Vec<BoundConv>,
    vars: Vec<Var>,
}

impl BoundFhdr {
    pub(crate) fn new(params_cfg: &ModelConfig, layers: &[ConvLayer], layout: &Layout, vars: &[Var]) -> Result<Self> {
        if vars.len() != 2 * layers.len() {
            return Err(Error::contract(format!(
                "expected {} parameter leaves, got {}",
                2 * layers.len(),
                vars.len()
            )));
        }
        let convs = layers
            .iter()
            .enumerate()
            .map(|(i, l)| BoundConv {
                weight: vars[2 * i],
                bias: vars[2 * i + 1],
                dilation: l.dilation,
            })
            .collect();
        Ok(BoundFhdr {
            config: params_cfg.clone(),
            layout: layout.clone(),
            convs,
            vars: vars.to_vec(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Leaves in parameter order; gradients are read back through these.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn conv<T: Real>(&self, g: &mut Graph<T>, layer: usize, x: Var) -> Result<Var> {
        let c = self.convs[layer];
        g.conv2d(x, c.weight, c.bias, c.dilation)
    }

    fn conv_relu<T: Real>(&self, g: &mut Graph<T>, layer: usize, x: Var) -> Result<Var> {
        let pre = self.conv(g, layer, x)?;
        let out = g.relu(pre);
        g.release(pre);
        Ok(out)
    }

    /// Feature extraction. Returns `(f_in, f_in1)`: the second layer's output
    /// and the first layer's output (used by the global residual).
    pub fn feb<T: Real>(&self, g: &mut Graph<T>, ldr: Var) -> Result<(Var, Var)> {
        let s = g.shape(ldr);
        if s.c != 3 {
            return Err(Error::contract(format!("FEB expects a 3-channel image, got {s}")));
        }
        let f_in1 = self.conv_relu(g, self.layout.feb[0], ldr)?;
        let f_in = self.conv_relu(g, self.layout.feb[1], f_in1)?;
        Ok((f_in, f_in1))
    }

    /// One dilated dense block. The output doubles as the block's new local
    /// hidden state.
    pub fn ddb<T: Real>(&self, g: &mut Graph<T>, index: usize, x: Var, local_hidden: Option<Var>) -> Result<Var> {
        let layout = self.layout.ddbs.get(index).ok_or_else(|| {
            Error::contract(format!(
                "DDB index {index} out of range for {} blocks",
                self.layout.ddbs.len()
            ))
        })?;
        let c = self.config.base_channels;
        if g.shape(x).c != c {
            return Err(Error::contract(format!(
                "DDB expects {c} input channels, got {}",
                g.shape(x)
            )));
        }
        let hidden = local_hidden.unwrap_or(x);
        if g.shape(hidden) != g.shape(x) {
            return Err(Error::contract(format!(
                "DDB local hidden {} does not match input {}",
                g.shape(hidden),
                g.shape(x)
            )));
        }
        let joined = g.concat_channels(x, hidden)?;
        let mut features = self.conv_relu(g, layout.fusion, joined)?;
        g.release(joined);
        for &layer in &layout.dense {
            let new = self.conv_relu(g, layer, features)?;
            let grown = g.concat_channels(features, new)?;
            g.release(features);
            g.release(new);
            features = grown;
        }
        let out = self.conv_relu(g, layout.compress, features)?;
        g.release(features);
        Ok(out)
    }

    /// The feedback block: fuses `f_in` with the global hidden state, runs
    /// the DDB chain and a trailing 3×3 conv.
    pub fn fbb<T: Real>(&self, g: &mut Graph<T>, f_in: Var, state: &FeedbackState) -> Result<(Var, FeedbackState)> {
        if state.local_hidden.len() != self.layout.ddbs.len() {
            return Err(Error::contract(format!(
                "feedback state has {} local hiddens for {} DDBs",
                state.local_hidden.len(),
                self.layout.ddbs.len()
            )));
        }
        let joined = g.concat_channels(f_in, state.global_hidden)?;
        let mut x = self.conv_relu(g, self.layout.fbb_fusion, joined)?;
        g.release(joined);
        let mut locals = Vec::with_capacity(self.layout.ddbs.len());
        for (i, hidden) in state.local_hidden.iter().enumerate() {
            x = self.ddb(g, i, x, *hidden)?;
            locals.push(Some(x));
        }
        let out = self.conv_relu(g, self.layout.fbb_trailing, x)?;
        Ok((
            out,
            FeedbackState {
                global_hidden: out,
                local_hidden: locals,
            },
        ))
    }

    /// HDR reconstruction: two conv+ReLU layers down to 3 channels.
    pub fn hrb<T: Real>(&self, g: &mut Graph<T>, f_res: Var) -> Result<Var> {
        let h = self.conv_relu(g, self.layout.hrb[0], f_res)?;
        let out = self.conv_relu(g, self.layout.hrb[1], h)?;
        g.release(h);
        Ok(out)
    }

    /// Unrolls `n` feedback iterations and returns one HDR image per iteration.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, ldr: Var, n: usize) -> Result<Vec<Var>> {
        if n < 1 {
            return Err(Error::contract("forward needs at least one iteration"));
        }
        let (f_in, f_in1) = self.feb(g, ldr)?;
        let mut state = FeedbackState::initial(f_in, self.layout.ddbs.len());
        let mut outputs = Vec::with_capacity(n);
        for t in 0..n {
            let (f_fbb, next) = self.fbb(g, f_in, &state)?;
            if t > 0 {
                release_state(g, &state);
            }
            let f_res = g.add(f_in1, f_fbb)?;
            outputs.push(self.hrb(g, f_res)?);
            g.release(f_res);
            state = next;
        }
        Ok(outputs)
    }
}

fn release_state<T: Real>(g: &mut Graph<T>, s: &FeedbackState) {
    g.release(s.global_hidden);
    for v in s.local_hidden.iter().flatten() {
        g.release(*v);
    }
}

/// Binds `params` on a fresh recording graph and runs the forward pass.
/// Returns the graph, the bound parameters and the per-iteration outputs.
pub fn fhdr_forward<T: Real>(
    params: &FhdrParams<T>,
    ldr: &Tensor<T>,
    n: usize,
) -> Result<(Graph<T>, BoundFhdr, Vec<Var>)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.constant(ldr.clone());
    let outputs = bound.forward(&mut g, x, n)?;
    Ok((g, bound, outputs))
}

/// Forward-only reconstruction that frees intermediates as it goes.
pub fn fhdr_infer<T: Real>(params: &FhdrParams<T>, ldr: &Tensor<T>, n: usize) -> Result<Vec<Tensor<T>>> {
    let mut g = Graph::inference();
    let bound = params.bind(&mut g);
    let x = g.constant(ldr.clone());
    let outputs = bound.forward(&mut g, x, n)?;
    Ok(outputs.iter().map(|&v| g.value(v).clone()).collect())
}

/// Conv-layer counts per block, measured from a recorded forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerAudit {
    pub feb: usize,
    pub fbb: usize,
    pub hrb: usize,
    /// Channels of the last dense concatenation inside the first DDB.
    pub ddb_concat_channels: usize,
}

pub fn layer_audit(cfg: &ModelConfig) -> Result<LayerAudit> {
    let params = FhdrParams::<f32>::zeros(cfg)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.constant(Tensor::zeros(Shape::new(1, 3, 4, 4)));

    let before = g.count_ops(OpKind::Conv2d);
    let (f_in, f_in1) = bound.feb(&mut g, x)?;
    let feb = g.count_ops(OpKind::Conv2d) - before;

    let state = FeedbackState::initial(f_in, cfg.num_ddb);
    let before = g.count_ops(OpKind::Conv2d);
    let first_op = g.len();
    let (f_fbb, _) = bound.fbb(&mut g, f_in, &state)?;
    let fbb = g.count_ops(OpKind::Conv2d) - before;

    // Widest concat recorded during the FBB pass is the first DDB's final one.
    let ddb_concat_channels = g
        .ops()
        .skip(first_op)
        .filter(|r| r.kind == OpKind::Concat)
        .map(|r| r.shape.c)
        .max()
        .unwrap_or(0);

    let f_res = g.add(f_in1, f_fbb)?;
    let before = g.count_ops(OpKind::Conv2d);
    bound.hrb(&mut g, f_res)?;
    let hrb = g.count_ops(OpKind::Conv2d) - before;

    Ok(LayerAudit {
        feb,
        fbb,
        hrb,
        ddb_concat_channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(n: usize) -> ModelConfig {
        ModelConfig {
            base_channels: 8,
            growth_rate: 4,
            num_ddb: 3,
            dilated_layers_per_ddb: 4,
            iterations: n,
            dilation: 2,
        }
    }

    /// Random weights and biases, so no layer is trivially dead.
    fn generic_params(cfg: &ModelConfig, seed: u64) -> FhdrParams<f64> {
        let mut p = FhdrParams::<f64>::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for t in p.tensors_mut() {
            if t.shape().h == 1 && t.shape().c == 1 && t.shape().w == 1 {
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.0..0.2));
            }
        }
        p
    }

    fn random_image(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(Shape::new(n, 3, h, w), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn default_config_matches_layer_audit() {
        let audit = layer_audit(&ModelConfig::default()).unwrap();
        assert_eq!((audit.feb, audit.fbb, audit.hrb), (2, 20, 2));
        assert_eq!(audit.ddb_concat_channels, 64 + 4 * 32);
    }

    #[test]
    fn param_count_matches_hand_audit() {
        // Per-layer Cout·Cin·k² + Cout for the default config, tallied by hand:
        // FEB 1792 + 36928, FBB fusion 8256, per DDB 8256 + 18464 + 27680
        // + 36896 + 46112 + 12352, trailing 36928, HRB 36928 + 1731.
        assert_eq!(param_count(&ModelConfig::default()).unwrap(), 571_843);
        let counted: usize = FhdrParams::<f32>::zeros(&ModelConfig::default())
            .unwrap()
            .tensors()
            .iter()
            .map(Tensor::numel)
            .sum();
        assert_eq!(counted, 571_843);
    }

    #[test]
    fn param_count_ignores_iterations_and_grows_with_width() {
        let counts: Vec<usize> = (1..=4)
            .map(|n| {
                param_count(&ModelConfig {
                    iterations: n,
                    ..Default::default()
                })
                .unwrap()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
        let wide = ModelConfig {
            base_channels: 128,
            ..Default::default()
        };
        assert!(param_count(&wide).unwrap() > counts[0]);
    }

    #[test]
    fn feb_shapes_and_distinct_layers() {
        let cfg = small(1);
        let p = generic_params(&cfg, 3);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.constant(random_image(2, 6, 6, 4));
        let (f_in, f_in1) = b.feb(&mut g, x).unwrap();
        assert_eq!(g.shape(f_in), Shape::new(2, 8, 6, 6));
        assert_eq!(g.shape(f_in1), Shape::new(2, 8, 6, 6));
        assert_ne!(g.value(f_in), g.value(f_in1));

        let grey = g.constant(Tensor::zeros(Shape::new(1, 1, 6, 6)));
        assert!(b.feb(&mut g, grey).is_err());
    }

    #[test]
    fn zero_input_and_zero_bias_give_zero_features() {
        let cfg = small(1);
        let p = FhdrParams::<f64>::init(&cfg, 9).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.constant(Tensor::zeros(Shape::new(1, 3, 5, 5)));
        let (f_in, f_in1) = b.feb(&mut g, x).unwrap();
        assert!(g
            .value(f_in)
            .data()
            .iter()
            .chain(g.value(f_in1).data())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn ddb_and_fbb_preserve_shape() {
        let cfg = small(1);
        let p = generic_params(&cfg, 5);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.constant(Tensor::full(Shape::new(1, 8, 7, 7), 0.3));
        let out = b.ddb(&mut g, 0, x, None).unwrap();
        assert_eq!(g.shape(out), Shape::new(1, 8, 7, 7));
        let before = g.count_ops(OpKind::Conv2d);
        b.ddb(&mut g, 1, x, Some(out)).unwrap();
        assert_eq!(g.count_ops(OpKind::Conv2d) - before, 6);
        assert!(b.ddb(&mut g, 3, x, None).is_err());

        let state = FeedbackState::initial(x, 3);
        let (f, next) = b.fbb(&mut g, x, &state).unwrap();
        assert_eq!(g.shape(f), g.shape(x));
        assert_eq!(next.global_hidden, f);
        assert!(next.local_hidden.iter().all(Option::is_some));
    }

    #[test]
    fn fbb_is_deterministic_from_initial_state() {
        let cfg = small(1);
        let p = generic_params(&cfg, 6);
        let run = || {
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let x = g.constant(random_image(1, 5, 5, 1));
            let (f_in, _) = b.feb(&mut g, x).unwrap();
            let (f, _) = b.fbb(&mut g, f_in, &FeedbackState::initial(f_in, 3)).unwrap();
            g.value(f).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn hrb_output_is_nonnegative_rgb() {
        let cfg = small(1);
        let p = generic_params(&cfg, 8);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = g.constant(Tensor::from_fn(Shape::new(1, 8, 6, 6), |_| rng.gen_range(-1.0..1.0)));
        let out = b.hrb(&mut g, f).unwrap();
        assert_eq!(g.shape(out), Shape::new(1, 3, 6, 6));
        assert!(g.value(out).data().iter().all(|&v| v >= 0.0));

        let zeros = FhdrParams::<f64>::zeros(&cfg).unwrap();
        let mut g = Graph::new();
        let b = zeros.bind(&mut g);
        let f = g.constant(Tensor::full(Shape::new(1, 8, 4, 4), 1.0));
        let out = b.hrb(&mut g, f).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_yields_one_valid_image_per_iteration() {
        let cfg = small(4);
        let p = generic_params(&cfg, 10);
        let x = random_image(2, 6, 5, 11);
        let (g, _, outs) = fhdr_forward(&p, &x, 4).unwrap();
        assert_eq!(outs.len(), 4);
        for &o in &outs {
            let v = g.value(o);
            assert_eq!(v.shape(), Shape::new(2, 3, 6, 5));
            assert!(v.is_finite());
            assert!(v.data().iter().all(|&a| a >= 0.0));
        }
        assert!(fhdr_forward(&p, &x, 0).is_err());

        let inferred = fhdr_infer(&p, &x, 4).unwrap();
        for (a, &b) in inferred.iter().zip(&outs) {
            assert_eq!(a, g.value(b));
        }
    }

    #[test]
    fn single_iteration_is_feed_forward_with_hidden_equal_to_features() {
        let cfg = small(1);
        let p = generic_params(&cfg, 12);
        let x = random_image(1, 5, 5, 13);
        let (g, _, outs) = fhdr_forward(&p, &x, 1).unwrap();

        let mut h = Graph::new();
        let b = p.bind(&mut h);
        let xi = h.constant(x);
        let (f_in, f_in1) = b.feb(&mut h, xi).unwrap();
        let state = FeedbackState {
            global_hidden: f_in,
            local_hidden: vec![None; 3],
        };
        let (f, _) = b.fbb(&mut h, f_in, &state).unwrap();
        let res = h.add(f_in1, f).unwrap();
        let out = b.hrb(&mut h, res).unwrap();
        assert_eq!(g.value(outs[0]), h.value(out));
    }

    #[test]
    fn every_iteration_reads_the_same_weight_leaves() {
        let cfg = small(4);
        let p = generic_params(&cfg, 14);
        let leaves = |n: usize| {
            let (g, bound, _) = fhdr_forward(&p, &random_image(1, 4, 4, 1), n).unwrap();
            let params: std::collections::HashSet<usize> = bound.vars().iter().map(|v| v.index()).collect();
            let used: std::collections::HashSet<usize> = g
                .ops()
                .filter(|o| o.kind == OpKind::Conv2d)
                .flat_map(|o| o.inputs[1..].to_vec())
                .map(|v| v.index())
                .collect();
            assert_eq!(used, params);
            (g.count_ops(OpKind::Leaf), g.count_ops(OpKind::Conv2d))
        };
        let (leaves1, convs1) = leaves(1);
        let (leaves4, convs4) = leaves(4);
        assert_eq!(leaves1, leaves4);
        assert_eq!(convs4 - convs1, 3 * (20 + 2));
    }

    #[test]
    fn feedback_path_is_live() {
        let cfg = small(2);
        let p = generic_params(&cfg, 15);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = g.constant(random_image(1, 6, 6, 16));
        let (f_in, f_in1) = b.feb(&mut g, x).unwrap();
        let (_, state) = b.fbb(&mut g, f_in, &FeedbackState::initial(f_in, 3)).unwrap();

        let second = |g: &mut Graph<f64>, s: &FeedbackState| {
            let (f, _) = b.fbb(g, f_in, s).unwrap();
            let r = g.add(f_in1, f).unwrap();
            let out = b.hrb(g, r).unwrap();
            g.value(out).clone()
        };
        let base = second(&mut g, &state);
        let bumped = g.value(state.global_hidden).map(|v| v + 0.5);
        let perturbed = FeedbackState {
            global_hidden: g.constant(bumped),
            ..state.clone()
        };
        assert_ne!(second(&mut g, &perturbed), base);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig {
            iterations: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            base_channels: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            growth_rate: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let c = small(3);
        assert_eq!(ModelConfig::from_array(c.as_array()), c);
        assert!(c.same_weights_as(&small(1)));
    }
}
