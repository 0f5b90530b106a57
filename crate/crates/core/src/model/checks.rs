//! Whole-model gradient check at toy sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EncodedExample, LabelSpace, Mode};
use crate::error::Result;
use crate::numerics::{grad_check, GradCheck, Graph};

use super::{DualChannelModel, ModelConfig};

/// Finite-difference step for the model check.
pub const EPSILON: f64 = 1e-4;

/// Toy configuration: vocabulary 20, 8-d embeddings, 4 GRU units,
/// windows of 6, 3 classes, dropout off.
pub fn toy_config(mode: Mode, seed: u64) -> ModelConfig {
    ModelConfig {
        mode,
        d_embed: 8,
        gru_units: 4,
        dropout_rate: 0.0,
        recurrent_dropout_rate: 0.0,
        text_length: 6,
        descriptor_length: Some(6),
        vocabulary_max: 20,
        batch_size: 4,
        seed,
        ..ModelConfig::default()
    }
}

/// Random padded examples over a vocabulary of `vocab` ids.
pub fn toy_examples(
    mode: Mode,
    count: usize,
    classes: usize,
    vocab: usize,
    len: usize,
    rng: &mut impl Rng,
) -> Vec<EncodedExample> {
    (0..count)
        .map(|i| {
            let ids = |rng: &mut dyn rand::RngCore, valid: usize| -> Vec<usize> {
                let mut v: Vec<usize> = (0..valid).map(|_| rng.gen_range(1..vocab)).collect();
                v.resize(len, 0);
                v
            };
            let text_len = rng.gen_range(1..=len);
            let desc_len = if i == 0 { 0 } else { rng.gen_range(0..=len) };
            let mut target = vec![0.0; classes];
            match mode {
                Mode::MultiClass => target[rng.gen_range(0..classes)] = 1.0,
                Mode::MultiLabel => target.iter_mut().for_each(|t| *t = f64::from(rng.gen_bool(0.5) as u8)),
            }
            EncodedExample {
                text_ids: ids(rng, text_len),
                descriptor_ids: ids(rng, desc_len),
                target,
            }
        })
        .collect()
}

/// Gradient check of the mean cross-entropy of the full model (f64).
///
/// The check point draws every parameter (padding rows excepted) from
/// U(−1, 1): at the small initial scale many GRU entries have gradients
/// near 1e-9, below what central differences of an O(1) loss can resolve.
pub fn full_model_grad_check(mode: Mode, seed: u64) -> Result<GradCheck> {
    full_model_grad_check_with(mode, seed, EPSILON)
}

pub fn full_model_grad_check_with(mode: Mode, seed: u64, epsilon: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = LabelSpace::new(["a", "b", "c"], mode)?;
    let mut model = DualChannelModel::<f64>::new(toy_config(mode, seed), labels, 20)?;
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let p = model.params_mut().get_mut(id);
        let skip = if p.name.starts_with("embedding") {
            p.value.shape()[1]
        } else {
            0
        };
        p.value
            .data_mut()
            .iter_mut()
            .skip(skip)
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    let examples = toy_examples(mode, 4, 3, 20, 6, &mut rng);
    let batch = model.batch(&examples)?;
    let mut params = model.params().clone();
    grad_check(
        |g: &mut Graph<f64>, p| {
            let mut m = model.clone();
            m.params = p.clone();
            let probs = m.forward(g, &batch, None)?;
            m.loss(g, probs, &batch)
        },
        &mut params,
        epsilon,
    )
}
