//! Evaluation metrics on hand-made predictions: ROC AUC with ties,
//! precision/recall/F1 aggregates and multi-label threshold selection.
//!
//! ```text
//! cargo run --example metrics
//! ```

use std::collections::BTreeSet;

use dualdesc::corpus::{LabelSpace, Mode};
use dualdesc::metrics::{precision_recall_f1, roc_auc, select_threshold, Averaging, EvaluationReport};

fn main() -> dualdesc::Result<()> {
    let labels = [false, false, true, true];
    println!("AUC, one swapped pair: {}", roc_auc(&[0.1, 0.4, 0.35, 0.8], &labels)?);
    println!("AUC, all tied:         {}", roc_auc(&[0.5; 4], &labels)?);

    let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
    let gold = vec![set(&[0]), set(&[0, 2]), set(&[1]), set(&[2]), set(&[1, 2])];
    let predicted = vec![set(&[0]), set(&[0]), set(&[1, 2]), set(&[2]), set(&[1])];
    let prf = precision_recall_f1(&predicted, &gold, 3)?;
    for avg in [Averaging::Macro, Averaging::Micro, Averaging::Weighted] {
        let a = prf.aggregate(avg);
        println!(
            "{avg:?}: precision {:.3} recall {:.3} f1 {:.3}",
            a.precision, a.recall, a.f1
        );
    }

    let probs = vec![
        vec![0.9, 0.2, 0.1],
        vec![0.7, 0.1, 0.6],
        vec![0.2, 0.8, 0.4],
        vec![0.1, 0.3, 0.9],
        vec![0.3, 0.6, 0.55],
    ];
    let t = select_threshold(&probs, &gold)?;
    println!("selected threshold {t:.2}");
    let space = LabelSpace::new(["economy", "sport", "politics"], Mode::MultiLabel)?;
    print!(
        "{}",
        EvaluationReport::from_probabilities(&space, &probs, &gold, Some(t))?.to_tsv()
    );
    Ok(())
}
