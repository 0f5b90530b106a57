//! One-call train/validate/test runs used by the examples and the
//! acceptance suite.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use crate::corpus::{build_vocabulary, Document, LabelSpace, Mode, Vocabulary};
use crate::descriptors::{extract_descriptors, ClassDescriptorSet, ExtractOptions};
use crate::error::Result;
use crate::metrics::{select_threshold, EvaluationReport};
use crate::model::{encode_corpus, DualChannelModel, EpochRecord, ModelConfig, TrainReport};

/// Everything produced by [`fit_and_score`].
#[derive(Debug, Clone)]
pub struct Outcome {
    pub model: DualChannelModel<f32>,
    pub vocab: Vocabulary,
    pub descriptors: ClassDescriptorSet,
    pub training: TrainReport,
    /// Threshold chosen on validation (multi-label only).
    pub threshold: Option<f64>,
    pub test: EvaluationReport,
    pub elapsed: Duration,
}

impl Outcome {
    /// Accuracy for multi-class runs, macro AUC for multi-label ones.
    pub fn headline(&self) -> f64 {
        self.test.accuracy.or(self.test.macro_auc).unwrap_or(f64::NAN)
    }
}

/// Builds the vocabulary and descriptors from `train` only, trains with
/// early stopping on `validation`, and evaluates the restored best model
/// on `test`.
pub fn fit_and_score(
    space: &LabelSpace,
    train: &[Document],
    validation: &[Document],
    test: &[Document],
    config: &ModelConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<Outcome> {
    let start = Instant::now();
    let vocab = build_vocabulary(train, config.vocabulary_max)?;
    let descriptors = extract_descriptors(
        train,
        &vocab,
        space,
        ExtractOptions::new(config.descriptor_test, config.descriptor_dimension),
    )?;
    let enc = |d: &[Document]| encode_corpus(d, space, &vocab, &descriptors, config);
    let (tr, va, te) = (enc(train), enc(validation), enc(test));
    let mut model = DualChannelModel::<f32>::new(config.clone(), space.clone(), vocab.len())?;
    let training = model.train_with(&tr, &va, on_epoch)?;
    let gold = |d: &[Document]| -> Vec<BTreeSet<usize>> { d.iter().map(|d| d.labels.clone()).collect() };
    let threshold = match space.mode() {
        Mode::MultiClass => None,
        Mode::MultiLabel => Some(select_threshold(&model.predict_proba(&va)?, &gold(validation))?),
    };
    let test = EvaluationReport::from_probabilities(space, &model.predict_proba(&te)?, &gold(test), threshold)?;
    Ok(Outcome {
        model,
        vocab,
        descriptors,
        training,
        threshold,
        test,
        elapsed: start.elapsed(),
    })
}
