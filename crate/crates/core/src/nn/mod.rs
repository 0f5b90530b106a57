//! Layers built on the tape: embeddings, GRU cells, bidirectional GRU,
//! pooling over time, additive attention, dense heads and dropout.
//!
//! Every layer owns only [`ParamId`]s; the values live in a shared
//! [`ParamSet`], so a model is one `ParamSet` plus a handful of layer
//! descriptors. Sequences are `[B, T, D]` with padding as a contiguous
//! suffix and per-example valid lengths.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::corpus::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamId, ParamSet, Scalar, Tensor};

pub mod checks;

/// Glorot/Xavier uniform: `U(−√(6/(fan_in+fan_out)), +√(…))`.
pub fn glorot_uniform<T: Scalar>(fan_in: usize, fan_out: usize, shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-limit..=limit)))
}

/// Token-id → vector lookup table. Row `padding_id` is zero and never
/// receives gradient.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub padding_id: usize,
    pub vocab_size: usize,
    pub dim: usize,
}

pub const EMBEDDING_INIT_RANGE: f64 = 0.05;

impl Embedding {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        vocab_size: usize,
        dim: usize,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut value = Tensor::from_fn(&[vocab_size, dim], |_| {
            T::from_f64(rng.gen_range(-EMBEDDING_INIT_RANGE..=EMBEDDING_INIT_RANGE))
        });
        value.data_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(T::zero());
        Embedding {
            table: params.add(name, value, trainable),
            padding_id: PAD_ID,
            vocab_size,
            dim,
        }
    }

    /// `ids` is `batch × len`, row-major; returns `[batch, len, dim]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        ids: &[usize],
        batch: usize,
        len: usize,
    ) -> Result<NodeId> {
        g.embedding_gather(params, self.table, ids, &[batch, len], Some(self.padding_id))
    }

    /// Overwrites rows of tokens found in a `token v1 … vd` text file.
    /// Tokens missing from the file keep their random rows; the padding row
    /// stays zero. Returns the number of rows replaced.
    pub fn load_pretrained<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        vocab: &Vocabulary,
        path: &Path,
    ) -> Result<usize> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut replaced = 0;
        let dim = self.dim;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if values.len() != dim {
                return Err(Error::parse(
                    path,
                    n + 1,
                    format!("expected {dim} values for '{token}', found {}", values.len()),
                ));
            }
            let Some(id) = vocab.id(token) else { continue };
            if id == self.padding_id {
                continue;
            }
            let row: Vec<T> = values
                .iter()
                .map(|v| v.parse::<f64>().map(T::from_f64))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, n + 1, format!("bad value: {e}")))?;
            params.get_mut(self.table).value.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&row);
            replaced += 1;
        }
        Ok(replaced)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// h̃  = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

/// Per-graph handles to a cell's fused weights: the input projection of
/// all three gates is one `[d_in, 3H]` matrix.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    w_x: NodeId,
    b_x: NodeId,
    u_zr: NodeId,
    u_h: NodeId,
    hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (d, h) = (input_size, hidden_size);
        let mut w = |name: &str, rows: usize| {
            params.add(
                format!("{prefix}.{name}"),
                glorot_uniform(rows, h, &[rows, h], rng),
                true,
            )
        };
        let (w_z, u_z) = (w("w_z", d), w("u_z", h));
        let (w_r, u_r) = (w("w_r", d), w("u_r", h));
        let (w_h, u_h) = (w("w_h", d), w("u_h", h));
        let mut b = |name: &str| params.add(format!("{prefix}.{name}"), Tensor::zeros(&[h]), true);
        let (b_z, b_r, b_h) = (b("b_z"), b("b_r"), b("b_h"));
        GruCell {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            input_size,
            hidden_size,
        }
    }

    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>) -> Result<BoundGru> {
        let p = |g: &mut Graph<T>, id| g.param(params, id);
        let (wz, wr, wh) = (p(g, self.w_z), p(g, self.w_r), p(g, self.w_h));
        let (bz, br, bh) = (p(g, self.b_z), p(g, self.b_r), p(g, self.b_h));
        let (uz, ur, uh) = (p(g, self.u_z), p(g, self.u_r), p(g, self.u_h));
        Ok(BoundGru {
            w_x: g.concat(&[wz, wr, wh], 1)?,
            b_x: g.concat(&[bz, br, bh], 0)?,
            u_zr: g.concat(&[uz, ur], 1)?,
            u_h: uh,
            hidden: self.hidden_size,
        })
    }

    /// One step on `x: [B, d_in]`, `h_prev: [B, H]`.
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: NodeId, h_prev: NodeId) -> Result<NodeId> {
        let (sx, sh) = (g.shape(x).to_vec(), g.shape(h_prev).to_vec());
        if sx.len() != 2 || sh.len() != 2 || sx[1] != self.input_size || sh[1] != self.hidden_size || sx[0] != sh[0] {
            return Err(Error::shape(
                "gru_cell_step",
                format!("x {sx:?}, h {sh:?} for cell {}→{}", self.input_size, self.hidden_size),
            ));
        }
        let cell = self.bind(g, params)?;
        let xp = cell.project(g, x)?;
        cell.step_projected(g, xp, h_prev, None)
    }
}

impl BoundGru {
    /// `x W + b` for all three gates: `[N, d_in] → [N, 3H]`.
    pub fn project<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let m = g.matmul(x, self.w_x)?;
        g.add(m, self.b_x)
    }

    /// Step given the precomputed input projection `xp: [B, 3H]`.
    /// `recurrent_mask` (length B·H) multiplies `h_prev` inside the gate
    /// products only; the carried state itself is never masked.
    pub fn step_projected<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        xp: NodeId,
        h_prev: NodeId,
        recurrent_mask: Option<&[T]>,
    ) -> Result<NodeId> {
        let h = self.hidden;
        let hd = match recurrent_mask {
            Some(m) => g.mul_const(h_prev, m.to_vec())?,
            None => h_prev,
        };
        let hu = g.matmul(hd, self.u_zr)?;
        let (xz, xr, xh) = (g.slice(xp, 1, 0, h)?, g.slice(xp, 1, h, h)?, g.slice(xp, 1, 2 * h, h)?);
        let (hz, hr) = (g.slice(hu, 1, 0, h)?, g.slice(hu, 1, h, h)?);
        let za = g.add(xz, hz)?;
        let z = g.sigmoid(za);
        let ra = g.add(xr, hr)?;
        let r = g.sigmoid(ra);
        let rh = g.mul(r, hd)?;
        let rhu = g.matmul(rh, self.u_h)?;
        let ca = g.add(xh, rhu)?;
        let cand = g.tanh(ca);
        // (1 − z)·h + z·h̃ written as h + z·(h̃ − h).
        let diff = g.sub(cand, h_prev)?;
        let zd = g.mul(z, diff)?;
        g.add(h_prev, zd)
    }
}

/// Forward and backward GRUs whose outputs are concatenated per step.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

/// Fixed per-sequence recurrent dropout masks for both directions.
#[derive(Debug, Clone)]
pub struct RecurrentMasks<T> {
    pub forward: Vec<T>,
    pub backward: Vec<T>,
}

fn step_mask<T: Scalar>(lengths: &[usize], t: usize) -> Option<Vec<T>> {
    if lengths.iter().all(|&l| t < l) {
        None
    } else {
        Some(
            lengths
                .iter()
                .map(|&l| if t < l { T::one() } else { T::zero() })
                .collect(),
        )
    }
}

impl BiGru {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        BiGru {
            forward: GruCell::new(params, &format!("{prefix}.fwd"), input_size, hidden_size, rng),
            backward: GruCell::new(params, &format!("{prefix}.bwd"), input_size, hidden_size, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size
    }

    /// `x: [B, T, d_in]` → `[B, T, 2H]`. Each direction runs over the valid
    /// prefix only (the backward one starts at `len − 1`); positions at or
    /// beyond an example's length are zero. Steps past the longest valid
    /// length in the batch are not computed at all.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        x: NodeId,
        lengths: &[usize],
        masks: Option<&RecurrentMasks<T>>,
    ) -> Result<NodeId> {
        let shape = g.shape(x).to_vec();
        let h = self.hidden_size();
        if shape.len() != 3 || shape[2] != self.forward.input_size || lengths.len() != shape[0] {
            return Err(Error::shape(
                "bigru_forward",
                format!(
                    "input {shape:?} with {} lengths, d_in {}",
                    lengths.len(),
                    self.forward.input_size
                ),
            ));
        }
        let (b, t_full, d) = (shape[0], shape[1], shape[2]);
        if let Some(&bad) = lengths.iter().find(|&&l| l > t_full) {
            return Err(Error::shape("bigru_forward", format!("length {bad} exceeds {t_full}")));
        }
        let t_eff = lengths.iter().copied().max().unwrap_or(0);
        if t_eff == 0 {
            return Ok(g.constant(Tensor::zeros(&[b, t_full, 2 * h])));
        }
        let x = if t_eff < t_full { g.slice(x, 1, 0, t_eff)? } else { x };
        let flat = g.reshape(x, &[b * t_eff, d])?;
        let h0 = g.constant(Tensor::zeros(&[b, h]));

        let run = |g: &mut Graph<T>, cell: &GruCell, reverse: bool, mask: Option<&[T]>| -> Result<Vec<NodeId>> {
            let bound = cell.bind(g, params)?;
            let proj = bound.project(g, flat)?;
            let proj = g.reshape(proj, &[b, t_eff, 3 * h])?;
            let mut outs = vec![h0; t_eff];
            let mut state = h0;
            let order: Vec<usize> = if reverse {
                (0..t_eff).rev().collect()
            } else {
                (0..t_eff).collect()
            };
            for step in order {
                let xp = g.select(proj, 1, step)?;
                let next = bound.step_projected(g, xp, state, mask)?;
                let out = match step_mask::<T>(lengths, step) {
                    Some(m) => g.row_scale(next, m)?,
                    None => next,
                };
                // Backward direction: zeroed state past the end means each
                // sequence starts fresh at its own last valid step.
                state = if reverse { out } else { next };
                outs[step] = out;
            }
            Ok(outs)
        };
        let fwd = run(g, &self.forward, false, masks.map(|m| m.forward.as_slice()))?;
        let bwd = run(g, &self.backward, true, masks.map(|m| m.backward.as_slice()))?;
        let fwd = g.stack(&fwd)?;
        let bwd = g.stack(&bwd)?;
        let out = g.concat(&[fwd, bwd], 2)?;
        if t_eff == t_full {
            return Ok(out);
        }
        let pad = g.constant(Tensor::zeros(&[b, t_full - t_eff, 2 * h]));
        g.concat(&[out, pad], 1)
    }
}

/// Per-feature max over the valid steps of `[B, T, H]` (zero if empty).
pub fn max_pool_time<T: Scalar>(g: &mut Graph<T>, h: NodeId, lengths: &[usize]) -> Result<NodeId> {
    g.max_over_axis(h, 1, Some(lengths))
}

/// Per-feature mean over the valid steps of `[B, T, H]` (zero if empty).
pub fn avg_pool_time<T: Scalar>(g: &mut Graph<T>, h: NodeId, lengths: &[usize]) -> Result<NodeId> {
    g.mean_over_axis(h, 1, Some(lengths))
}

/// Additive attention with a learned context vector:
///
/// ```text
/// u_i = tanh(h_i ω + b)
/// a   = softmax_i(u_i · u_s)     (valid positions only)
/// v   = Σ_i a_i h_i
/// ```
#[derive(Debug, Clone)]
pub struct Attention {
    pub omega: ParamId,
    pub bias: ParamId,
    pub context: ParamId,
    pub input_size: usize,
    pub attention_size: usize,
}

/// Attention output: context `[B, H]` and weights `[B, T']`, where `T'` is
/// the longest valid length in the batch.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub context: NodeId,
    pub weights: Option<NodeId>,
}

impl Attention {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input_size: usize,
        attention_size: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (k, a) = (input_size, attention_size);
        Attention {
            omega: params.add(format!("{prefix}.omega"), glorot_uniform(k, a, &[k, a], rng), true),
            bias: params.add(format!("{prefix}.bias"), Tensor::zeros(&[a]), true),
            context: params.add(format!("{prefix}.u_s"), glorot_uniform(a, 1, &[a], rng), true),
            input_size,
            attention_size,
        }
    }

    /// `h: [B, T, K]`. An example with no valid step gets a zero context.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        h: NodeId,
        lengths: &[usize],
    ) -> Result<Attended> {
        let shape = g.shape(h).to_vec();
        if shape.len() != 3 || shape[2] != self.input_size || lengths.len() != shape[0] {
            return Err(Error::shape(
                "attention_forward",
                format!("input {shape:?} with {} lengths, K {}", lengths.len(), self.input_size),
            ));
        }
        let (b, t_full, k) = (shape[0], shape[1], shape[2]);
        let t_eff = lengths.iter().copied().max().unwrap_or(0).min(t_full);
        if t_eff == 0 {
            return Ok(Attended {
                context: g.constant(Tensor::zeros(&[b, k])),
                weights: None,
            });
        }
        let h = if t_eff < t_full { g.slice(h, 1, 0, t_eff)? } else { h };
        let flat = g.reshape(h, &[b * t_eff, k])?;
        let omega = g.param(params, self.omega);
        let bias = g.param(params, self.bias);
        let us = g.param(params, self.context);
        let us = g.reshape(us, &[self.attention_size, 1])?;
        let proj = g.matmul(flat, omega)?;
        let proj = g.add(proj, bias)?;
        let u = g.tanh(proj);
        let scores = g.matmul(u, us)?;
        let scores = g.reshape(scores, &[b, t_eff])?;
        let weights = g.masked_softmax(scores, Some(lengths))?;
        let context = g.weighted_sum(weights, h)?;
        Ok(Attended {
            context,
            weights: Some(weights),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softmax,
    Sigmoid,
    None,
}

/// `activation(x ω + b)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weights: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub input_size: usize,
    pub output_size: usize,
}

impl Dense {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        prefix: &str,
        input_size: usize,
        output_size: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let (i, o) = (input_size, output_size);
        Dense {
            weights: params.add(format!("{prefix}.w"), glorot_uniform(i, o, &[i, o], rng), true),
            bias: params.add(format!("{prefix}.b"), Tensor::zeros(&[o]), true),
            activation,
            input_size,
            output_size,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(params, self.weights);
        let b = g.param(params, self.bias);
        let m = g.matmul(x, w).map_err(|_| {
            Error::shape(
                "dense",
                format!("input {:?} for {}→{}", g.shape(x), self.input_size, self.output_size),
            )
        })?;
        let z = g.add(m, b)?;
        Ok(match self.activation {
            Activation::Softmax => g.softmax(z),
            Activation::Sigmoid => g.sigmoid(z),
            Activation::None => z,
        })
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 − rate)`.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

/// Identity unless `training` and `rate > 0`.
pub fn dropout<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(g.value(x).len(), rate, rng);
    g.mul_const(x, mask)
}

/// Batch-mean categorical cross-entropy against one-hot rows.
pub fn categorical_cross_entropy<T: Scalar>(g: &mut Graph<T>, probs: NodeId, target: &[f64]) -> Result<NodeId> {
    g.categorical_cross_entropy(probs, target.iter().map(|&t| T::from_f64(t)).collect())
}

/// Mean over batch and classes of the binary cross-entropy.
pub fn binary_cross_entropy<T: Scalar>(g: &mut Graph<T>, probs: NodeId, target: &[f64]) -> Result<NodeId> {
    g.binary_cross_entropy(probs, target.iter().map(|&t| T::from_f64(t)).collect())
}
