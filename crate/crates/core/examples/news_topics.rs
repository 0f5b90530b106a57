//! Four-topic news classification at desk scale: the dual-channel model
//! against the same model with its descriptor channel zeroed.
//!
//! ```text
//! cargo run --release --example news_topics -- [seed] [max_epochs]
//! ```

use dualdesc::corpus::Document;
use dualdesc::experiment::fit_and_score;
use dualdesc::model::ModelConfig;
use dualdesc::synthetic::{news_corpus, NewsStyle};

fn main() -> dualdesc::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let epochs: usize = args.next().map_or(4, |s| s.parse().expect("max_epochs"));

    let (space, docs) = news_corpus(&NewsStyle::default(), seed)?;
    let (train, test) = docs.split_at(8000);
    let (val, train): (&[Document], &[Document]) = train.split_at(800);
    println!(
        "{} train / {} validation / {} test documents",
        train.len(),
        val.len(),
        test.len()
    );

    for ablate in [false, true] {
        let config = ModelConfig {
            d_embed: 64,
            gru_units: 64,
            descriptor_dimension: 100,
            max_epochs: epochs,
            patience: 1,
            seed,
            ablate_descriptors: ablate,
            ..ModelConfig::default()
        };
        let out = fit_and_score(&space, train, val, test, &config, |r| {
            println!(
                "  epoch {} loss {:.4} val acc {:.4}",
                r.epoch, r.train_loss, r.val_metric
            );
        })?;
        println!(
            "{}: test accuracy {:.4} (best epoch {}, {:.0?})",
            if ablate { "descriptors ablated" } else { "dual channel" },
            out.headline(),
            out.training.best_epoch,
            out.elapsed
        );
        if !ablate {
            for (class, words) in out.descriptors.preview(8) {
                println!("  {class}: {}", words.join(", "));
            }
        }
    }
    Ok(())
}
