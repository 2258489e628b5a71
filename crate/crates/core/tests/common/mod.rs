#![allow(dead_code)]

use okd_core::nets::{InputKind, Layer, ModelSpec, Network};
use okd_core::rng::{self, Rng};
use okd_core::{Graph, Result, Tensor, Var};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    rng::substream(seed, "test", 0)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(lo..hi))
}

pub fn labels(n: usize, classes: usize, r: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| r.random_range(0..classes)).collect()
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Largest relative error between tape gradients and central differences
/// of the scalar `f` over every element of every input.
pub fn grad_check(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let h = 1e-5;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars).expect("forward");
    g.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).numel()])).collect();

    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars).expect("forward");
        g.value(out).item().expect("scalar")
    };
    let mut worst = 0.0f64;
    #[allow(clippy::needless_range_loop)]
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut ts = inputs.to_vec();
            ts[i].data_mut()[j] = t.data()[j] + h;
            let up = eval(&ts);
            ts[i].data_mut()[j] = t.data()[j] - h;
            let down = eval(&ts);
            worst = worst.max(rel_err(analytic[i][j], (up - down) / (2.0 * h)));
        }
    }
    worst
}

/// Reduces `out` to a scalar through fixed random weights so every output
/// element gets a distinct upstream gradient.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let w = uniform(g.value(out).shape(), -1.0, 1.0, &mut rng(seed ^ 0x9e37));
    let w = g.constant(w);
    let m = g.mul(out, w)?;
    g.sum(m)
}

pub fn small_cnn(classes: usize, seed: u64) -> Network {
    Network::build(ModelSpec {
        input_kind: InputKind::Image2d,
        input_shape: vec![2, 4, 4],
        layers: vec![
            Layer::Conv2d { filters: 3, kernel: 3, stride: 1, padding: 1 },
            Layer::Relu,
            Layer::Maxpool { k: 2 },
            Layer::Flatten,
            Layer::Dense { out: classes },
        ],
        num_classes: classes,
        init_seed: seed,
    })
    .unwrap()
}

pub fn mlp(input: usize, hidden: usize, classes: usize, seed: u64) -> Network {
    Network::build(ModelSpec {
        input_kind: InputKind::Flat,
        input_shape: vec![input],
        layers: vec![Layer::Dense { out: hidden }, Layer::Relu, Layer::Dense { out: classes }],
        num_classes: classes,
        init_seed: seed,
    })
    .unwrap()
}
