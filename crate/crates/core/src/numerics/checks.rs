//! Gradient checks for every primitive, shared by the test suite and the
//! `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::gradcheck::{grad_check, GradCheck};
use super::graph::{Graph, NodeId};
use super::param::{ParamId, ParamSet};
use super::tensor::Tensor;

pub const EPSILON: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Contracts `out` with fixed random weights so every output entry
/// contributes a distinct O(1) amount to the scalar objective.
pub fn project(g: &mut Graph<f64>, out: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.value(out).len();
    let w = (0..n)
        .map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let scaled = g.mul_const(out, w)?;
    Ok(g.sum(scaled))
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &ParamSet<f64>, &[ParamId]) -> Result<NodeId>>;

fn case(shapes: &[&[usize]], scale: f64, seed: u64, build: Builder) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| params.add(format!("in{i}"), random(&mut rng, s, scale), true))
        .collect();
    grad_check(
        |g, p| {
            let out = build(g, p, &ids)?;
            project(g, out, seed ^ 0x5eed)
        },
        &mut params,
        EPSILON,
    )
}

fn leaves(g: &mut Graph<f64>, p: &ParamSet<f64>, ids: &[ParamId]) -> Vec<NodeId> {
    ids.iter().map(|&id| g.param(p, id)).collect()
}

/// Runs a gradient check on each primitive with random f64 inputs.
pub fn primitive_grad_checks(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut out = Vec::new();
    let s = seed;
    out.push((
        "matmul",
        case(
            &[&[3, 4], &[4, 2]],
            1.0,
            s,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.matmul(x[0], x[1])
            }),
        )?,
    ));
    out.push((
        "add",
        case(
            &[&[2, 3, 4], &[4]],
            1.0,
            s + 1,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.add(x[0], x[1])
            }),
        )?,
    ));
    out.push((
        "sub",
        case(
            &[&[3, 2], &[3, 2]],
            1.0,
            s + 2,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.sub(x[0], x[1])
            }),
        )?,
    ));
    out.push((
        "mul",
        case(
            &[&[3, 2], &[3, 2]],
            1.0,
            s + 3,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.mul(x[0], x[1])
            }),
        )?,
    ));
    out.push((
        "row_scale",
        case(
            &[&[3, 2]],
            1.0,
            s + 4,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.row_scale(x[0], vec![0.5, -2.0, 0.0])
            }),
        )?,
    ));
    out.push((
        "tanh",
        case(
            &[&[3, 3]],
            2.0,
            s + 5,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                Ok(g.tanh(x[0]))
            }),
        )?,
    ));
    out.push((
        "sigmoid",
        case(
            &[&[3, 3]],
            3.0,
            s + 6,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                Ok(g.sigmoid(x[0]))
            }),
        )?,
    ));
    out.push((
        "softmax",
        case(
            &[&[3, 5]],
            2.0,
            s + 7,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.masked_softmax(x[0], Some(&[5, 2, 1]))
            }),
        )?,
    ));
    out.push((
        "concat",
        case(
            &[&[2, 3], &[2, 1], &[2, 2]],
            1.0,
            s + 8,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.concat(&x, 1)
            }),
        )?,
    ));
    out.push((
        "stack",
        case(
            &[&[2, 3], &[2, 3]],
            1.0,
            s + 9,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.stack(&x)
            }),
        )?,
    ));
    out.push((
        "max_over_axis",
        case(
            &[&[3, 4, 2]],
            1.0,
            s + 10,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.max_over_axis(x[0], 1, Some(&[4, 2, 0]))
            }),
        )?,
    ));
    out.push((
        "mean_over_axis",
        case(
            &[&[3, 4, 2]],
            1.0,
            s + 11,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.mean_over_axis(x[0], 1, Some(&[4, 1, 3]))
            }),
        )?,
    ));
    out.push((
        "slice",
        case(
            &[&[2, 5, 2]],
            1.0,
            s + 12,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.slice(x[0], 1, 1, 3)
            }),
        )?,
    ));
    out.push((
        "select",
        case(
            &[&[2, 5, 2]],
            1.0,
            s + 13,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.select(x[0], 1, 3)
            }),
        )?,
    ));
    out.push((
        "reshape",
        case(
            &[&[2, 6]],
            1.0,
            s + 14,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.reshape(x[0], &[3, 4])
            }),
        )?,
    ));
    out.push((
        "embedding_gather",
        case(
            &[&[5, 3]],
            1.0,
            s + 15,
            Box::new(|g, p, ids| g.embedding_gather(p, ids[0], &[1, 4, 4, 0, 2, 0], &[2, 3], None)),
        )?,
    ));
    out.push((
        "weighted_sum",
        case(
            &[&[2, 3], &[2, 3, 4]],
            1.0,
            s + 16,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                g.weighted_sum(x[0], x[1])
            }),
        )?,
    ));
    out.push((
        "categorical_cross_entropy",
        case(
            &[&[3, 4]],
            1.0,
            s + 17,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                let probs = g.softmax(x[0]);
                let mut t = vec![0.0; 12];
                t[1] = 1.0;
                t[4] = 1.0;
                t[11] = 1.0;
                g.categorical_cross_entropy(probs, t)
            }),
        )?,
    ));
    out.push((
        "binary_cross_entropy",
        case(
            &[&[3, 4]],
            2.0,
            s + 18,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                let probs = g.sigmoid(x[0]);
                let t = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
                g.binary_cross_entropy(probs, t)
            }),
        )?,
    ));
    out.push((
        "composite",
        case(
            &[&[4, 3], &[3, 3], &[3], &[3, 2]],
            1.0,
            s + 19,
            Box::new(|g, p, ids| {
                let x = leaves(g, p, ids);
                let h = g.matmul(x[0], x[1])?;
                let h = g.add(h, x[2])?;
                let h = g.tanh(h);
                let h = g.matmul(h, x[3])?;
                let h = g.sigmoid(h);
                let both = g.concat(&[h, h], 1)?;
                g.mean_over_axis(both, 0, None)
            }),
        )?,
    ));
    Ok(out)
}
