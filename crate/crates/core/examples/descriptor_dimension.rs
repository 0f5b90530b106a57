//! How many descriptor words per class? Compares n = 50 and n = 100 on a
//! task whose class signal sits beyond the text-channel window.
//!
//! ```text
//! cargo run --release --example descriptor_dimension -- [seeds]
//! ```

use dualdesc::corpus::split;
use dualdesc::experiment::fit_and_score;
use dualdesc::model::ModelConfig;
use dualdesc::synthetic::{buried_signal_corpus, BuriedSignal};

fn main() -> dualdesc::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed count"));
    let task = BuriedSignal::default();
    let mut means = Vec::new();
    for n in [50, 100] {
        let mut total = 0.0;
        for seed in 0..seeds {
            let (space, docs) = buried_signal_corpus(&task, seed)?;
            let (train, val, test) = split(&docs, (0.7, 0.2, 0.1), seed)?;
            let config = ModelConfig {
                d_embed: 32,
                gru_units: 16,
                text_length: task.window,
                descriptor_length: Some(task.length - task.window),
                descriptor_dimension: n,
                max_epochs: 12,
                patience: 3,
                learning_rate: 3e-3,
                seed,
                ..ModelConfig::default()
            };
            let out = fit_and_score(&space, &train, &val, &test, &config, |_| {})?;
            println!(
                "n={n:3} seed {seed}: best validation accuracy {:.4} (epoch {}), test {:.4}, {:.1?}",
                out.training.best_metric,
                out.training.best_epoch,
                out.headline(),
                out.elapsed
            );
            total += out.training.best_metric;
        }
        means.push(total / seeds as f64);
        println!("n={n:3}: mean validation accuracy {:.4}", total / seeds as f64);
    }
    println!("n=100 minus n=50: {:+.4}", means[1] - means[0]);
    Ok(())
}
