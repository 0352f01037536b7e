//! Finite-difference gradient checks for every layer of the network.
//!
//! Each check draws seeded random inputs and parameters, contracts the layer
//! output with a random cotangent to get a scalar, and compares the analytic
//! gradient over all inputs and parameters with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoder::{NodeForward, NodeInputs};
use crate::featurize::{GEOMETRIC_DIM, SEMANTIC_DIM, VISUAL_DIM};
use crate::nn::gradcheck::{numeric_gradient, relative_error};
use crate::nn::ops::{
    attention_pool, attention_pool_backward, gconv_cross, gconv_cross_backward, gconv_intra,
    gconv_intra_backward, linear, linear_backward, relu, relu_backward, softmax_rows,
    softmax_rows_backward, CrossWeights, IntraWeights,
};
use crate::nn::{perm_xent_loss, Adjacency, Grads, HyperParams, Model, SlackSinkhorn, Tensor};
use crate::textembed::TEXT_DIM;

pub const STEP: f64 = 1e-5;
pub const THRESHOLD: f64 = 1e-4;
pub const STRICT_THRESHOLD: f64 = 1e-5;
pub const INSTANCES: usize = 20;
/// Redraws allowed per layer when an instance sits on a ReLU kink.
const MAX_RESAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Linear,
    Relu,
    Softmax,
    AttentionPool,
    GconvIntra,
    GconvCross,
    NodeEmbedding,
    Sinkhorn,
    PermXentLoss,
}

impl Layer {
    pub const ALL: [Layer; 9] = [
        Layer::Linear,
        Layer::Relu,
        Layer::Softmax,
        Layer::AttentionPool,
        Layer::GconvIntra,
        Layer::GconvCross,
        Layer::NodeEmbedding,
        Layer::Sinkhorn,
        Layer::PermXentLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Linear => "linear",
            Layer::Relu => "relu",
            Layer::Softmax => "softmax",
            Layer::AttentionPool => "attention_pool",
            Layer::GconvIntra => "gconv_intra",
            Layer::GconvCross => "gconv_cross",
            Layer::NodeEmbedding => "node_embedding",
            Layer::Sinkhorn => "sinkhorn",
            Layer::PermXentLoss => "perm_xent_loss",
        }
    }

    pub fn threshold(self) -> f64 {
        match self {
            Layer::Linear | Layer::Softmax => STRICT_THRESHOLD,
            _ => THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerCheck {
    pub layer: Layer,
    pub instances: usize,
    pub resampled: usize,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_rel_err < self.threshold
    }
}

/// A scalar objective over a flat parameter vector together with its analytic gradient.
type Objective = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>;

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Consecutive slices of `x` with the given lengths.
fn slices<'a>(x: &'a [f64], lens: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(lens.len());
    let mut at = 0;
    for &n in lens {
        out.push(&x[at..at + n]);
        at += n;
    }
    out
}

fn dot(a: &Tensor, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| x * y).sum()
}

fn flat(parts: &[&Tensor]) -> Vec<f64> {
    parts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn linear_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let (n, i, o) = (3, 4, 5);
    let c = uniform(rng, n * o, 1.0);
    let x = uniform(rng, n * i + i * o + o, 1.0);
    let f = move |p: &[f64]| {
        let s = slices(p, &[n * i, i * o, o]);
        let (x, w, b) = (Tensor::matrix(n, i, s[0].to_vec()), Tensor::matrix(i, o, s[1].to_vec()), Tensor::vector(s[2].to_vec()));
        let y = linear(&x, &w, &b).expect("shapes");
        let g = linear_backward(&x, &w, &Tensor::matrix(n, o, c.clone())).expect("shapes");
        (dot(&y, &c), flat(&[&g.dx, &g.dw, &g.db]))
    };
    (x, Box::new(f))
}

fn relu_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let n = 20;
    let c = uniform(rng, n, 1.0);
    let x = uniform(rng, n, 1.0);
    let f = move |p: &[f64]| {
        let y = relu(&Tensor::vector(p.to_vec()));
        let g = relu_backward(&y, &Tensor::vector(c.clone()));
        (dot(&y, &c), g.into_data())
    };
    (x, Box::new(f))
}

fn softmax_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let (n, d) = (3, 6);
    let c = uniform(rng, n * d, 1.0);
    let x = uniform(rng, n * d, 2.0);
    let f = move |p: &[f64]| {
        let y = softmax_rows(&Tensor::matrix(n, d, p.to_vec()));
        let g = softmax_rows_backward(&y, &Tensor::matrix(n, d, c.clone()));
        (dot(&y, &c), g.into_data())
    };
    (x, Box::new(f))
}

fn attention_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let (k, d) = (5, 4);
    let c = uniform(rng, d, 1.0);
    let x = uniform(rng, k * d + d, 1.0);
    let f = move |p: &[f64]| {
        let s = slices(p, &[k * d, d]);
        let (x, w) = (Tensor::matrix(k, d, s[0].to_vec()), Tensor::vector(s[1].to_vec()));
        let (y, a) = attention_pool(&x, &w).expect("shapes");
        let (dx, dw) = attention_pool_backward(&x, &w, &a, &Tensor::vector(c.clone()));
        (dot(&y, &c), flat(&[&dx, &dw]))
    };
    (x, Box::new(f))
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> Adjacency {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    Adjacency::row_normalized(n, edges)
}

fn intra_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let (n, d, dr, o) = (5, 4, 3, 6);
    let adj = random_adjacency(rng, n);
    let e = adj.edges.len();
    let c = uniform(rng, n * o, 1.0);
    let lens = [n * d, e * dr, d * o, (d + dr) * o, o];
    let x = uniform(rng, lens.iter().sum(), 1.0);
    let f = move |p: &[f64]| {
        let s = slices(p, &lens);
        let h = Tensor::matrix(n, d, s[0].to_vec());
        let r = Tensor::matrix(e, dr, s[1].to_vec());
        let (w_self, w_msg, bias) = (Tensor::matrix(d, o, s[2].to_vec()), Tensor::matrix(d + dr, o, s[3].to_vec()), Tensor::vector(s[4].to_vec()));
        let w = IntraWeights { w_self: &w_self, w_msg: &w_msg, bias: &bias };
        let cache = gconv_intra(&adj, &h, &r, &w).expect("shapes");
        let g = gconv_intra_backward(&adj, &h, &w, &cache, &Tensor::matrix(n, o, c.clone())).expect("shapes");
        (dot(cache.output(), &c), flat(&[&g.dh, &g.dr, &g.dw_self, &g.dw_msg, &g.db]))
    };
    (x, Box::new(f))
}

fn cross_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let (n1, n2, d, o) = (4, 5, 3, 6);
    let c = uniform(rng, n1 * o, 1.0);
    let lens = [n1 * n2, n1 * d, n2 * d, d * o, d * o, o];
    let x = uniform(rng, lens.iter().sum(), 1.0);
    let f = move |p: &[f64]| {
        let s = slices(p, &lens);
        let corr = Tensor::matrix(n1, n2, s[0].to_vec());
        let (hs, ho) = (Tensor::matrix(n1, d, s[1].to_vec()), Tensor::matrix(n2, d, s[2].to_vec()));
        let (w_self, w_cross, bias) = (Tensor::matrix(d, o, s[3].to_vec()), Tensor::matrix(d, o, s[4].to_vec()), Tensor::vector(s[5].to_vec()));
        let w = CrossWeights { w_self: &w_self, w_cross: &w_cross, bias: &bias };
        let cache = gconv_cross(&corr, &hs, &ho, &w).expect("shapes");
        let g = gconv_cross_backward(&corr, &hs, &ho, &w, &cache, &Tensor::matrix(n1, o, c.clone())).expect("shapes");
        (dot(cache.output(), &c), flat(&[&g.ds, &g.dh_self, &g.dh_other, &g.dw_self, &g.dw_cross, &g.db]))
    };
    (x, Box::new(f))
}

const EMBED_PARAMS: [&str; 10] = [
    "embed.s.w", "embed.s.b", "embed.t.w", "embed.t.b", "embed.v.w", "embed.v.b", "embed.c.w", "embed.c.b",
    "embed.n.w", "embed.n.b",
];

fn node_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let hyper = HyperParams {
        dim_semantic: 3,
        dim_text: 4,
        dim_visual: 3,
        dim_fused: 5,
        dim_node: 4,
        ..Default::default()
    };
    let model = Model::new(hyper, rng.gen());
    let n = 3;
    let o = model.hyper.dim_node;
    let c = uniform(rng, n * o, 1.0);
    let input_dims = [SEMANTIC_DIM, TEXT_DIM, VISUAL_DIM, GEOMETRIC_DIM];
    let mut lens: Vec<usize> = input_dims.iter().map(|d| n * d).collect();
    lens.extend(EMBED_PARAMS.iter().map(|name| model.get(name).len()));
    let mut x = uniform(rng, input_dims.iter().map(|d| n * d).sum(), 1.0);
    x.extend(EMBED_PARAMS.iter().flat_map(|name| model.get(name).data().to_vec()));
    let f = move |p: &[f64]| {
        let s = slices(p, &lens);
        let mut m = model.clone();
        for (k, name) in EMBED_PARAMS.iter().enumerate() {
            m.get_mut(name).data_mut().copy_from_slice(s[4 + k]);
        }
        let inputs = NodeInputs {
            semantic: Tensor::matrix(n, SEMANTIC_DIM, s[0].to_vec()),
            text: Tensor::matrix(n, TEXT_DIM, s[1].to_vec()),
            visual: Tensor::matrix(n, VISUAL_DIM, s[2].to_vec()),
            geometric: Tensor::matrix(n, GEOMETRIC_DIM, s[3].to_vec()),
        };
        let fwd = NodeForward::new(inputs, true, &m).expect("shapes");
        let mut grads = Grads::for_model(&m);
        let gi = fwd.backward(&m, &Tensor::matrix(n, o, c.clone()), &mut grads).expect("shapes");
        let mut g = flat(&[&gi.semantic, &gi.text, &gi.visual, &gi.geometric]);
        for name in EMBED_PARAMS {
            g.extend_from_slice(grads.get(m.id(name)).data());
        }
        (dot(fwd.output(), &c), g)
    };
    (x, Box::new(f))
}

fn sinkhorn_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let (n1, n2) = (3, 4);
    let c = uniform(rng, (n1 + 1) * (n2 + 1), 1.0);
    let x = uniform(rng, n1 * n2 + 1, 1.0);
    let f = move |p: &[f64]| {
        let scores = Tensor::matrix(n1, n2, p[..n1 * n2].to_vec());
        let sk = SlackSinkhorn::forward(&scores, p[n1 * n2], 0.5, 20).expect("finite");
        let (dm, dslack) = sk.backward(&Tensor::matrix(n1 + 1, n2 + 1, c.clone()));
        let mut g = dm.into_data();
        g.push(dslack);
        (dot(sk.correspondence(), &c), g)
    };
    (x, Box::new(f))
}

fn loss_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    let (r, c) = (4, 5);
    let target: Vec<f64> = (0..r * c).map(|_| rng.gen_range(0.0..1.0)).collect();
    let x: Vec<f64> = (0..r * c).map(|_| rng.gen_range(0.05..0.95)).collect();
    let f = move |p: &[f64]| {
        let (l, g) = perm_xent_loss(&Tensor::matrix(r, c, p.to_vec()), &Tensor::matrix(r, c, target.clone())).expect("shapes");
        (l, g.into_data())
    };
    (x, Box::new(f))
}

fn draw(layer: Layer, rng: &mut ChaCha8Rng) -> (Vec<f64>, Objective) {
    match layer {
        Layer::Linear => linear_case(rng),
        Layer::Relu => relu_case(rng),
        Layer::Softmax => softmax_case(rng),
        Layer::AttentionPool => attention_case(rng),
        Layer::GconvIntra => intra_case(rng),
        Layer::GconvCross => cross_case(rng),
        Layer::NodeEmbedding => node_case(rng),
        Layer::Sinkhorn => sinkhorn_case(rng),
        Layer::PermXentLoss => loss_case(rng),
    }
}

fn max_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| relative_error(*a, *n)).fold(0.0, f64::max)
}

/// An instance straddles a kink when shrinking the step changes the numeric
/// gradient; smooth points agree to truncation error.
fn on_kink(f: &Objective, x: &[f64], numeric: &[f64]) -> bool {
    let finer = numeric_gradient(|p| f(p).0, x, STEP / 8.0);
    max_error(numeric, &finer) > 1e-3
}

pub fn check_layer(layer: Layer, seed: u64, instances: usize) -> LayerCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut worst: f64 = 0.0;
    let (mut done, mut resampled) = (0, 0);
    while done < instances && resampled <= MAX_RESAMPLES {
        let (x, f) = draw(layer, &mut rng);
        let (_, analytic) = f(&x);
        let numeric = numeric_gradient(|p| f(p).0, &x, STEP);
        let err = max_error(&analytic, &numeric);
        if err >= layer.threshold() && on_kink(&f, &x, &numeric) {
            resampled += 1;
            continue;
        }
        worst = worst.max(err);
        done += 1;
    }
    LayerCheck {
        layer,
        instances: done,
        resampled,
        max_rel_err: worst,
        threshold: layer.threshold(),
    }
}

/// Runs every layer check with `instances` seeded draws each.
pub fn run_suite(seed: u64, instances: usize) -> Vec<LayerCheck> {
    Layer::ALL.iter().map(|&l| check_layer(l, seed, instances)).collect()
}
