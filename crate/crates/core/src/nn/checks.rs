//! Per-layer gradient checks at f64, shared by tests and `verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::checks::project;
use crate::numerics::{grad_check, GradCheck, Graph, NodeId, ParamSet, Tensor};

use super::*;

/// Finite-difference step for the layer checks.
pub const EPSILON: f64 = 3e-5;

/// Gives every bias a random value so no gate sits at an exact symmetry.
fn randomize_biases(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params
        .iter()
        .filter(|(_, p)| p.value.shape().len() == 1)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let shape = params.value(id).shape().to_vec();
        params.get_mut(id).value = random(rng, &shape, 0.5);
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Gradient-checks a layer closure; random input data is held as
/// parameters so its gradient is checked too.
fn check<F>(params: &mut ParamSet<f64>, seed: u64, epsilon: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<NodeId>,
{
    grad_check(
        |g, p| {
            let out = build(g, p)?;
            project(g, out, seed ^ 0xa11)
        },
        params,
        epsilon,
    )
}

/// Runs a gradient check on every layer with dropout disabled.
pub fn layer_grad_checks(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    layer_grad_checks_with(seed, EPSILON)
}

pub fn layer_grad_checks_with(seed: u64, eps: f64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    {
        let mut ps = ParamSet::new();
        let emb = Embedding::new(&mut ps, "emb", 6, 3, true, &mut rng);
        let ids = [1, 4, 5, 4, 2, 3];
        out.push((
            "embedding",
            check(&mut ps, seed, eps, |g, p| emb.forward(g, p, &ids, 2, 3))?,
        ));
    }
    {
        let mut ps = ParamSet::new();
        let cell = GruCell::new(&mut ps, "gru", 3, 4, &mut rng);
        randomize_biases(&mut ps, &mut rng);
        let x = ps.add("x", random(&mut rng, &[2, 3], 1.0), true);
        let h = ps.add("h", random(&mut rng, &[2, 4], 0.9), true);
        out.push((
            "gru_cell",
            check(&mut ps, seed, eps, |g, p| {
                let (xn, hn) = (g.param(p, x), g.param(p, h));
                cell.step(g, p, xn, hn)
            })?,
        ));
    }
    {
        let mut ps = ParamSet::new();
        let bigru = BiGru::new(&mut ps, "bigru", 3, 3, &mut rng);
        randomize_biases(&mut ps, &mut rng);
        let x = ps.add("x", random(&mut rng, &[3, 4, 3], 1.0), true);
        let lengths = [4, 2, 0];
        out.push((
            "bigru",
            check(&mut ps, seed, eps, |g, p| {
                let xn = g.param(p, x);
                bigru.forward(g, p, xn, &lengths, None)
            })?,
        ));
    }
    {
        let mut ps = ParamSet::new();
        let x = ps.add("x", random(&mut rng, &[2, 4, 3], 1.0), true);
        let lengths = [3, 1];
        out.push((
            "max_pool_time",
            check(&mut ps, seed, eps, |g, p| {
                let xn = g.param(p, x);
                max_pool_time(g, xn, &lengths)
            })?,
        ));
        out.push((
            "avg_pool_time",
            check(&mut ps, seed, eps, |g, p| {
                let xn = g.param(p, x);
                avg_pool_time(g, xn, &lengths)
            })?,
        ));
    }
    {
        let mut ps = ParamSet::new();
        let att = Attention::new(&mut ps, "att", 4, 3, &mut rng);
        randomize_biases(&mut ps, &mut rng);
        let h = ps.add("h", random(&mut rng, &[3, 5, 4], 1.0), true);
        let lengths = [5, 2, 1];
        out.push((
            "attention",
            check(&mut ps, seed, eps, |g, p| {
                let hn = g.param(p, h);
                Ok(att.forward(g, p, hn, &lengths)?.context)
            })?,
        ));
    }
    for (name, activation) in [
        ("dense_softmax", Activation::Softmax),
        ("dense_sigmoid", Activation::Sigmoid),
        ("dense_linear", Activation::None),
    ] {
        let mut ps = ParamSet::new();
        let dense = Dense::new(&mut ps, "dense", 5, 3, activation, &mut rng);
        randomize_biases(&mut ps, &mut rng);
        let x = ps.add("x", random(&mut rng, &[2, 5], 1.0), true);
        out.push((
            name,
            check(&mut ps, seed, eps, |g, p| {
                let xn = g.param(p, x);
                dense.forward(g, p, xn)
            })?,
        ));
    }
    {
        let mut ps = ParamSet::new();
        let z = ps.add("z", random(&mut rng, &[3, 4], 2.0), true);
        let target = [0., 1., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1.];
        out.push((
            "categorical_cross_entropy",
            grad_check(
                |g, p| {
                    let zn = g.param(p, z);
                    let probs = g.softmax(zn);
                    categorical_cross_entropy(g, probs, &target)
                },
                &mut ps,
                eps,
            )?,
        ));
        let multi = [1., 1., 0., 0., 0., 0., 0., 1., 1., 0., 1., 0.];
        out.push((
            "binary_cross_entropy",
            grad_check(
                |g, p| {
                    let zn = g.param(p, z);
                    let probs = g.sigmoid(zn);
                    binary_cross_entropy(g, probs, &multi)
                },
                &mut ps,
                eps,
            )?,
        ));
    }
    Ok(out)
}
