//! The dual-channel classifier: a text channel (embedding → BiGRU → max and
//! average pooling over time) and a descriptor channel (embedding → BiGRU →
//! attention) whose outputs are concatenated and fed to a dense head.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{encode, target_vector, valid_length, Document, EncodedExample, LabelSpace, Mode, Vocabulary};
use crate::descriptors::{build_descriptor_channel_input, ClassDescriptorSet};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, argmax, labels_above, per_class_auc};
use crate::nn::{
    avg_pool_time, binary_cross_entropy, categorical_cross_entropy, dropout, dropout_mask, max_pool_time, Activation,
    Attention, BiGru, Dense, Embedding, RecurrentMasks,
};
use crate::numerics::{adam_step, Adam, Graph, NodeId, ParamSet, Scalar, Tensor};

mod checkpoint;
pub mod checks;
mod config;

pub use checkpoint::{file_digest, Checkpoint, Digest, CHECKPOINT_VERSION};
pub use config::{parse_line, ModelConfig, MODEL_KEYS};

/// Encodes one tokenized document for both channels.
pub fn encode_tokens<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    descriptors: &ClassDescriptorSet,
    config: &ModelConfig,
) -> (Vec<usize>, Vec<usize>) {
    (
        encode(tokens, vocab, config.text_length),
        build_descriptor_channel_input(tokens, descriptors, vocab, config.descriptor_len()),
    )
}

/// Encodes a labelled corpus.
pub fn encode_corpus(
    docs: &[Document],
    space: &LabelSpace,
    vocab: &Vocabulary,
    descriptors: &ClassDescriptorSet,
    config: &ModelConfig,
) -> Vec<EncodedExample> {
    docs.iter()
        .map(|d| {
            let (text_ids, descriptor_ids) = encode_tokens(&d.tokens, vocab, descriptors, config);
            EncodedExample {
                text_ids,
                descriptor_ids,
                target: target_vector(d, space),
            }
        })
        .collect()
}

/// A mini-batch flattened for the graph.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub text_ids: Vec<usize>,
    pub text_lengths: Vec<usize>,
    pub descriptor_ids: Vec<usize>,
    pub descriptor_lengths: Vec<usize>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn new<'a>(
        examples: impl IntoIterator<Item = &'a EncodedExample>,
        config: &ModelConfig,
        classes: usize,
    ) -> Result<Self> {
        let (lt, ld) = (config.text_length, config.descriptor_len());
        let mut b = Batch {
            size: 0,
            text_ids: Vec::new(),
            text_lengths: Vec::new(),
            descriptor_ids: Vec::new(),
            descriptor_lengths: Vec::new(),
            targets: Vec::new(),
        };
        for ex in examples {
            if ex.text_ids.len() != lt || ex.descriptor_ids.len() != ld || ex.target.len() != classes {
                return Err(Error::shape(
                    "batch",
                    format!(
                        "example has text {}, descriptors {}, target {}; model expects {lt}, {ld}, {classes}",
                        ex.text_ids.len(),
                        ex.descriptor_ids.len(),
                        ex.target.len()
                    ),
                ));
            }
            b.size += 1;
            b.text_ids.extend_from_slice(&ex.text_ids);
            b.text_lengths.push(valid_length(&ex.text_ids));
            if config.ablate_descriptors {
                b.descriptor_ids.extend(std::iter::repeat_n(0, ld));
                b.descriptor_lengths.push(0);
            } else {
                b.descriptor_ids.extend_from_slice(&ex.descriptor_ids);
                b.descriptor_lengths.push(valid_length(&ex.descriptor_ids));
            }
            b.targets.extend_from_slice(&ex.target);
        }
        if b.size == 0 {
            return Err(Error::NoExamples);
        }
        Ok(b)
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

/// `epoch,train_loss,val_metric` CSV with a header line.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_metric\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_metric));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Loss of the very first mini-batch, before any update.
    pub first_batch_loss: f64,
}

/// Predicted label set plus the class probabilities it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: BTreeSet<usize>,
    pub probabilities: Vec<f64>,
}

/// Decision rule: argmax (lowest index on ties) for multi-class; every
/// class with probability strictly above `threshold` for multi-label.
pub fn decide(mode: Mode, probs: &[f64], threshold: Option<f64>) -> Result<BTreeSet<usize>> {
    match mode {
        Mode::MultiClass => Ok(BTreeSet::from([argmax(probs)])),
        Mode::MultiLabel => {
            let t = threshold
                .ok_or_else(|| Error::InvalidArgument("multi-label prediction requires a threshold".into()))?;
            Ok(labels_above(probs, t))
        }
    }
}

/// Validation metric: accuracy (multi-class) or the mean of the defined
/// per-label AUCs (multi-label; 0.5 when no label has both outcomes).
pub fn validation_metric(mode: Mode, probs: &[Vec<f64>], examples: &[EncodedExample]) -> Result<f64> {
    match mode {
        Mode::MultiClass => {
            let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            let gold: Vec<usize> = examples.iter().map(|e| argmax(&e.target)).collect();
            accuracy(&pred, &gold)
        }
        Mode::MultiLabel => {
            let gold: Vec<BTreeSet<usize>> = examples
                .iter()
                .map(|e| {
                    e.target
                        .iter()
                        .enumerate()
                        .filter(|(_, &t)| t > 0.5)
                        .map(|(i, _)| i)
                        .collect()
                })
                .collect();
            let classes = examples.first().map_or(0, |e| e.target.len());
            Ok(per_class_auc(probs, &gold, classes).1.unwrap_or(0.5))
        }
    }
}

/// Two-channel classifier over a [`ParamSet`] of precision `T`.
#[derive(Debug, Clone)]
pub struct DualChannelModel<T> {
    config: ModelConfig,
    labels: LabelSpace,
    vocab_size: usize,
    params: ParamSet<T>,
    text_embedding: Embedding,
    descriptor_embedding: Embedding,
    text_gru: BiGru,
    descriptor_gru: BiGru,
    attention: Attention,
    output: Dense,
    history: Vec<EpochRecord>,
}

impl<T: Scalar> DualChannelModel<T> {
    /// Builds a freshly initialized model; initialization is a function of
    /// `config.seed` alone.
    pub fn new(config: ModelConfig, labels: LabelSpace, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size < 3 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {vocab_size} tokens is too small"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let (d, h) = (config.d_embed, config.gru_units);
        let text_embedding = Embedding::new(
            &mut params,
            "embedding.text",
            vocab_size,
            d,
            config.trainable_embedding,
            &mut rng,
        );
        let descriptor_embedding = if config.share_embedding {
            text_embedding.clone()
        } else {
            Embedding::new(
                &mut params,
                "embedding.descriptor",
                vocab_size,
                d,
                config.trainable_embedding,
                &mut rng,
            )
        };
        let text_gru = BiGru::new(&mut params, "text_gru", d, h, &mut rng);
        let descriptor_gru = BiGru::new(&mut params, "descriptor_gru", d, h, &mut rng);
        let attention = Attention::new(&mut params, "attention", 2 * h, 2 * h, &mut rng);
        let activation = match config.mode {
            Mode::MultiClass => Activation::Softmax,
            Mode::MultiLabel => Activation::Sigmoid,
        };
        if labels.mode() != config.mode {
            return Err(Error::InvalidArgument(format!(
                "label space is {} but config mode is {}",
                labels.mode(),
                config.mode
            )));
        }
        let output = Dense::new(&mut params, "output", 6 * h, labels.len(), activation, &mut rng);
        Ok(DualChannelModel {
            config,
            labels,
            vocab_size,
            params,
            text_embedding,
            descriptor_embedding,
            text_gru,
            descriptor_gru,
            attention,
            output,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn text_embedding(&self) -> &Embedding {
        &self.text_embedding
    }

    pub fn descriptor_embedding(&self) -> &Embedding {
        &self.descriptor_embedding
    }

    /// Width of the concatenated feature vector fed to the head.
    pub fn feature_width(&self) -> usize {
        self.output.input_size
    }

    pub fn output_layer(&self) -> &Dense {
        &self.output
    }

    /// Concatenated `[max_pool ; avg_pool ; attention context]` features.
    /// Dropout is applied only when `rng` is given.
    pub fn features(&self, g: &mut Graph<T>, batch: &Batch, mut rng: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
        let cfg = &self.config;
        let (b, h) = (batch.size, cfg.gru_units);
        let rate = cfg.dropout_rate;
        let channel = |g: &mut Graph<T>,
                       emb: &Embedding,
                       gru: &BiGru,
                       ids: &[usize],
                       lengths: &[usize],
                       len: usize,
                       rng: &mut Option<&mut ChaCha8Rng>|
         -> Result<NodeId> {
            let mut x = emb.forward(g, &self.params, ids, b, len)?;
            let mut masks = None;
            if let Some(r) = rng.as_deref_mut() {
                if cfg.input_dropout {
                    x = dropout(g, x, rate, true, r)?;
                }
                if cfg.recurrent_dropout_rate > 0.0 {
                    masks = Some(RecurrentMasks {
                        forward: dropout_mask(b * h, cfg.recurrent_dropout_rate, r),
                        backward: dropout_mask(b * h, cfg.recurrent_dropout_rate, r),
                    });
                }
            }
            gru.forward(g, &self.params, x, lengths, masks.as_ref())
        };
        let text = channel(
            g,
            &self.text_embedding,
            &self.text_gru,
            &batch.text_ids,
            &batch.text_lengths,
            cfg.text_length,
            &mut rng,
        )?;
        let pooled_max = max_pool_time(g, text, &batch.text_lengths)?;
        let pooled_avg = avg_pool_time(g, text, &batch.text_lengths)?;
        let context = if batch.descriptor_lengths.iter().all(|&l| l == 0) {
            // Nothing to attend to: the channel's output is exactly zero.
            g.constant(Tensor::zeros(&[b, 2 * h]))
        } else {
            let desc = channel(
                g,
                &self.descriptor_embedding,
                &self.descriptor_gru,
                &batch.descriptor_ids,
                &batch.descriptor_lengths,
                cfg.descriptor_len(),
                &mut rng,
            )?;
            self.attention
                .forward(g, &self.params, desc, &batch.descriptor_lengths)?
                .context
        };
        let features = g.concat(&[pooled_max, pooled_avg, context], 1)?;
        match rng {
            Some(r) if cfg.feature_dropout => dropout(g, features, rate, true, r),
            _ => Ok(features),
        }
    }

    /// Class probabilities `[B, C]`.
    pub fn forward(&self, g: &mut Graph<T>, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
        let features = self.features(g, batch, rng)?;
        self.output.forward(g, &self.params, features)
    }

    /// Mode-appropriate cross-entropy of `probs` against the batch targets.
    pub fn loss(&self, g: &mut Graph<T>, probs: NodeId, batch: &Batch) -> Result<NodeId> {
        match self.config.mode {
            Mode::MultiClass => categorical_cross_entropy(g, probs, &batch.targets),
            Mode::MultiLabel => binary_cross_entropy(g, probs, &batch.targets),
        }
    }

    pub fn batch<'a>(&self, examples: impl IntoIterator<Item = &'a EncodedExample>) -> Result<Batch> {
        Batch::new(examples, &self.config, self.labels.len())
    }

    /// Inference-mode class probabilities, one row per example.
    pub fn predict_proba(&self, examples: &[EncodedExample]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(self.config.batch_size) {
            let batch = self.batch(chunk)?;
            let mut g = Graph::new();
            let probs = self.forward(&mut g, &batch, None)?;
            out.extend(
                g.value(probs)
                    .rows()
                    .map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()),
            );
        }
        Ok(out)
    }

    pub fn predict(&self, examples: &[EncodedExample], threshold: Option<f64>) -> Result<Vec<Prediction>> {
        if self.config.mode == Mode::MultiLabel && threshold.is_none() {
            return Err(Error::InvalidArgument(
                "multi-label prediction requires a threshold".into(),
            ));
        }
        self.predict_proba(examples)?
            .into_iter()
            .map(|probabilities| {
                Ok(Prediction {
                    labels: decide(self.config.mode, &probabilities, threshold)?,
                    probabilities,
                })
            })
            .collect()
    }

    pub fn train(&mut self, train: &[EncodedExample], validation: &[EncodedExample]) -> Result<TrainReport> {
        self.train_with(train, validation, |_| {})
    }

    /// Mini-batch Adam with per-epoch validation. Keeps the parameters of
    /// the best validation epoch and stops once `patience` epochs pass
    /// without improvement (so `patience = 0` runs one epoch).
    pub fn train_with(
        &mut self,
        train: &[EncodedExample],
        validation: &[EncodedExample],
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainReport> {
        if train.is_empty() || validation.is_empty() {
            return Err(Error::NoExamples);
        }
        let cfg = self.config.clone();
        let adam = Adam {
            learning_rate: cfg.learning_rate,
            ..Adam::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut step = 0u64;
        let mut first_batch_loss = None;
        let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;
        let mut since_best = 0;
        self.history.clear();

        for epoch in 1..=cfg.max_epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch = self.batch(chunk.iter().map(|&i| &train[i]))?;
                self.params.zero_grad();
                let mut g = Graph::new();
                let probs = self.forward(&mut g, &batch, Some(&mut rng))?;
                let loss = self.loss(&mut g, probs, &batch)?;
                let value = g.value(loss).data()[0].as_f64();
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss {value} at epoch {epoch}, batch {}",
                        bi + 1
                    )));
                }
                first_batch_loss.get_or_insert(value);
                g.backward(loss, &mut self.params)?;
                step += 1;
                adam_step(&mut self.params, &adam, step)
                    .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {}: {e}", bi + 1)))?;
                total += value * batch.size as f64;
            }
            let probs = self.predict_proba(validation)?;
            let metric = validation_metric(cfg.mode, &probs, validation)?;
            let record = EpochRecord {
                epoch,
                train_loss: total / train.len() as f64,
                val_metric: metric,
            };
            self.history.push(record);
            on_epoch(&record);
            if best.as_ref().is_none_or(|b| metric > b.0) {
                best = Some((metric, epoch, self.params.values()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if since_best >= cfg.patience {
                break;
            }
        }
        let (best_metric, best_epoch, values) = best.expect("at least one epoch ran");
        self.params.restore(values);
        Ok(TrainReport {
            history: self.history.clone(),
            best_epoch,
            best_metric,
            first_batch_loss: first_batch_loss.unwrap_or(f64::NAN),
        })
    }

    /// Copies parameter values from a checkpoint after checking that every
    /// name and shape matches this model.
    pub fn load_parameters(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.tensors.len() != self.params.len() {
            return Err(Error::shape(
                "load_checkpoint",
                format!(
                    "checkpoint has {} tensors, model has {}",
                    ckpt.tensors.len(),
                    self.params.len()
                ),
            ));
        }
        for ((name, tensor), (_, p)) in ckpt.tensors.iter().zip(self.params.iter()) {
            if *name != p.name || tensor.shape() != p.value.shape() {
                return Err(Error::shape(
                    "load_checkpoint",
                    format!(
                        "checkpoint tensor '{name}' {:?} does not match model parameter '{}' {:?}",
                        tensor.shape(),
                        p.name,
                        p.value.shape()
                    ),
                ));
            }
        }
        let values = ckpt.tensors.iter().map(|(_, t)| t.cast::<T>()).collect();
        self.params.restore(values);
        Ok(())
    }

    /// Rebuilds a model from a checkpoint's config and parameters.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(ckpt.config.clone(), ckpt.labels.clone(), ckpt.vocab_size)?;
        model.load_parameters(ckpt)?;
        Ok(model)
    }

    /// Snapshot of the current parameters (stored as f32).
    pub fn to_checkpoint(&self, vocab: Digest, descriptors: Digest, epoch: u32, val_metric: f64) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            labels: self.labels.clone(),
            vocab_size: self.vocab_size,
            vocab_digest: vocab,
            descriptor_digest: descriptors,
            epoch,
            val_metric,
            tensors: self
                .params
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.cast::<f32>()))
                .collect(),
        }
    }

    pub fn save_checkpoint(
        &self,
        path: &Path,
        vocab: Digest,
        descriptors: Digest,
        epoch: u32,
        val_metric: f64,
    ) -> Result<()> {
        self.to_checkpoint(vocab, descriptors, epoch, val_metric).save(path)
    }
}

/// A trained model with the artifacts needed to classify raw text.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub model: DualChannelModel<f32>,
    pub vocab: Vocabulary,
    pub descriptors: ClassDescriptorSet,
    pub threshold: Option<f64>,
}

impl Classifier {
    pub fn encode(&self, text: &str) -> EncodedExample {
        let tokens = crate::corpus::preprocess_text(text);
        let (text_ids, descriptor_ids) = encode_tokens(&tokens, &self.vocab, &self.descriptors, self.model.config());
        EncodedExample {
            text_ids,
            descriptor_ids,
            target: vec![0.0; self.model.labels().len()],
        }
    }

    pub fn predict_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Prediction>> {
        let encoded: Vec<EncodedExample> = texts.iter().map(|t| self.encode(t.as_ref())).collect();
        if encoded.is_empty() {
            return Ok(Vec::new());
        }
        self.model.predict(&encoded, self.threshold)
    }
}

#[cfg(test)]
mod tests;
