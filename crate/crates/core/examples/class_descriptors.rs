//! Ranks each class's most characteristic words with χ² and ANOVA F and
//! writes the descriptor file the classifier consumes.
//!
//! ```text
//! cargo run --release --example class_descriptors -- [n] [out.tsv]
//! ```

use dualdesc::corpus::build_vocabulary;
use dualdesc::descriptors::{extract_descriptors, ExtractOptions, TestKind};
use dualdesc::synthetic::{news_corpus, NewsStyle};

fn main() -> dualdesc::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(10, |s| s.parse().expect("descriptor count"));
    let out = args.next();

    let style = NewsStyle {
        docs_per_class: 500,
        ..NewsStyle::default()
    };
    let (space, docs) = news_corpus(&style, 0)?;
    let vocab = build_vocabulary(&docs, 20_000)?;
    println!("{} documents, {} word types", docs.len(), vocab.len());

    for test in [TestKind::Chi2, TestKind::Anova] {
        let set = extract_descriptors(&docs, &vocab, &space, ExtractOptions::new(test, n))?;
        println!("\n{test}");
        for class in &set.classes {
            let words: Vec<String> = class
                .entries
                .iter()
                .take(8)
                .map(|(w, s)| format!("{w} ({s:.1})"))
                .collect();
            println!("  {:<10} {}", class.class, words.join(", "));
        }
        if let (Some(path), TestKind::Chi2) = (&out, test) {
            set.save(path.as_ref())?;
            println!("  wrote {path}");
        }
    }
    Ok(())
}
