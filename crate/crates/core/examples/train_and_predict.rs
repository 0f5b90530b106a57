//! Trains the dual-channel classifier on a small two-class corpus, saves a
//! checkpoint, reloads it and classifies raw text.
//!
//! ```text
//! cargo run --release --example train_and_predict
//! ```

use dualdesc::corpus::split;
use dualdesc::experiment::fit_and_score;
use dualdesc::model::{Checkpoint, Classifier, DualChannelModel, ModelConfig};
use dualdesc::synthetic::{marker_token, separable_corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (space, docs) = separable_corpus(3)?;
    let (train, val, test) = split(&docs, (0.7, 0.15, 0.15), 3)?;
    let config = ModelConfig {
        d_embed: 32,
        gru_units: 16,
        text_length: 16,
        descriptor_dimension: 5,
        learning_rate: 0.01,
        batch_size: 16,
        max_epochs: 10,
        patience: 3,
        seed: 3,
        ..ModelConfig::default()
    };
    let out = fit_and_score(&space, &train, &val, &test, &config, |r| {
        println!(
            "epoch {:2}  loss {:.4}  val accuracy {:.4}",
            r.epoch, r.train_loss, r.val_metric
        );
    })?;
    println!("test accuracy {:.4} ({:.1?})", out.headline(), out.elapsed);

    let dir = std::env::temp_dir().join("dualdesc-train-and-predict");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    out.model.save_checkpoint(
        &path,
        [0; 32],
        [0; 32],
        out.training.best_epoch as u32,
        out.training.best_metric,
    )?;
    let restored = DualChannelModel::from_checkpoint(&Checkpoint::load(&path)?)?;
    println!(
        "checkpoint: {} bytes at {}",
        std::fs::metadata(&path)?.len(),
        path.display()
    );

    let classifier = Classifier {
        model: restored,
        vocab: out.vocab,
        descriptors: out.descriptors,
        threshold: None,
    };
    let texts = [
        format!("{} noise words around it", marker_token(0)),
        format!("and here {} shows up late", marker_token(1)),
        "nothing informative at all".to_string(),
    ];
    for (text, p) in texts.iter().zip(classifier.predict_texts(&texts)?) {
        let label = space.name(*p.labels.iter().next().expect("one label"));
        println!(
            "{label:>8}  {:?}  {text}",
            p.probabilities.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
