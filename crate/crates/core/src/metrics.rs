//! Evaluation measures and validation-set threshold selection.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{LabelSpace, Mode};
use crate::error::{Error, Result};

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. Computed from
/// tie-averaged ranks (Mann–Whitney U).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score passed to roc_auc".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Sum of 1-based ranks of positives, ties sharing their average rank.
    // Ranks are kept doubled so every value stays an exact integer.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled_avg = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        doubled_rank_sum += doubled_avg * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * p * n) as f64)
}

/// How per-class values are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Macro,
    Micro,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold documents carrying the class.
    pub support: usize,
    #[serde(skip)]
    tp: usize,
    #[serde(skip)]
    fp: usize,
    #[serde(skip)]
    fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrfReport {
    pub per_class: Vec<ClassPrf>,
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    #[serde(rename = "micro")]
    pub micro_avg: Prf,
    #[serde(rename = "weighted")]
    pub weighted_avg: Prf,
}

impl PrfReport {
    pub fn aggregate(&self, averaging: Averaging) -> Prf {
        match averaging {
            Averaging::Macro => self.macro_avg,
            Averaging::Micro => self.micro_avg,
            Averaging::Weighted => self.weighted_avg,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class precision, recall and F1 plus macro, micro and
/// support-weighted aggregates. A class that is never predicted and never
/// gold scores zero and still counts toward the macro mean.
pub fn precision_recall_f1(
    predicted: &[BTreeSet<usize>],
    gold: &[BTreeSet<usize>],
    num_classes: usize,
) -> Result<PrfReport> {
    if predicted.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold sets",
            predicted.len(),
            gold.len()
        )));
    }
    let mut per_class: Vec<ClassPrf> = (0..num_classes)
        .map(|_| ClassPrf {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            support: 0,
            tp: 0,
            fp: 0,
            fn_: 0,
        })
        .collect();
    for (p, g) in predicted.iter().zip(gold) {
        for &c in p.union(g) {
            if c >= num_classes {
                return Err(Error::InvalidArgument(format!("class index {c} out of range")));
            }
            let entry = &mut per_class[c];
            match (p.contains(&c), g.contains(&c)) {
                (true, true) => entry.tp += 1,
                (true, false) => entry.fp += 1,
                (false, true) => entry.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    for c in &mut per_class {
        c.support = c.tp + c.fn_;
        c.precision = ratio(c.tp, c.tp + c.fp);
        c.recall = ratio(c.tp, c.tp + c.fn_);
        c.f1 = f1(c.precision, c.recall);
    }
    let k = num_classes.max(1) as f64;
    let macro_avg = Prf {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
    };
    let (tp, fp, fn_) = per_class
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.tp, acc.1 + c.fp, acc.2 + c.fn_));
    let (mp, mr) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    let micro_avg = Prf {
        precision: mp,
        recall: mr,
        f1: f1(mp, mr),
    };
    let total_support: usize = per_class.iter().map(|c| c.support).sum();
    let weighted = |f: fn(&ClassPrf) -> f64| {
        if total_support == 0 {
            0.0
        } else {
            per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total_support as f64
        }
    };
    let weighted_avg = Prf {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
    };
    Ok(PrfReport {
        per_class,
        macro_avg,
        micro_avg,
        weighted_avg,
    })
}

/// Fraction of exact matches.
pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::NoExamples);
    }
    if predicted.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold classes",
            predicted.len(),
            gold.len()
        )));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Labels whose probability is strictly above `threshold`.
pub fn labels_above(probs: &[f64], threshold: f64) -> BTreeSet<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// The threshold grid 0.01, 0.02, …, 0.99.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|i| i as f64 / 100.0)
}

/// Macro-F1 of thresholding `probs` at `threshold`.
pub fn macro_f1_at(probs: &[Vec<f64>], gold: &[BTreeSet<usize>], threshold: f64) -> Result<f64> {
    let num_classes = probs.first().map_or(0, Vec::len);
    let predicted: Vec<BTreeSet<usize>> = probs.iter().map(|p| labels_above(p, threshold)).collect();
    Ok(precision_recall_f1(&predicted, gold, num_classes)?.macro_avg.f1)
}

/// Grid threshold maximizing validation macro-F1; ties go to the smaller
/// threshold.
pub fn select_threshold(probs: &[Vec<f64>], gold: &[BTreeSet<usize>]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::NoExamples);
    }
    let mut best = (f64::NEG_INFINITY, 0.5);
    for t in threshold_grid() {
        let score = macro_f1_at(probs, gold, t)?;
        if score > best.0 {
            best = (score, t);
        }
    }
    Ok(best.1)
}

/// Full evaluation of a set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub mode: String,
    pub labels: Vec<String>,
    pub examples: usize,
    pub prf: PrfReport,
    /// Reported aggregate for P/R/F1.
    pub default_averaging: Averaging,
    pub accuracy: Option<f64>,
    /// One-vs-rest AUC per class; `None` where the class is all-positive or
    /// all-negative in the gold data.
    pub per_class_auc: Vec<Option<f64>>,
    /// Unweighted mean of the defined per-class AUCs.
    pub macro_auc: Option<f64>,
    pub threshold: Option<f64>,
}

/// Mean of the defined one-vs-rest AUCs and the per-class values.
pub fn per_class_auc(
    probs: &[Vec<f64>],
    gold: &[BTreeSet<usize>],
    num_classes: usize,
) -> (Vec<Option<f64>>, Option<f64>) {
    let per: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let labels: Vec<bool> = gold.iter().map(|g| g.contains(&c)).collect();
            roc_auc(&scores, &labels).ok()
        })
        .collect();
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (per, mean)
}

impl EvaluationReport {
    /// Evaluates class probabilities against gold label sets. Multi-label
    /// evaluation requires `threshold`.
    pub fn from_probabilities(
        space: &LabelSpace,
        probs: &[Vec<f64>],
        gold: &[BTreeSet<usize>],
        threshold: Option<f64>,
    ) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::NoExamples);
        }
        let c = space.len();
        let (predicted, accuracy_value) = match space.mode() {
            Mode::MultiClass => {
                let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
                let gold_cls: Vec<usize> = gold
                    .iter()
                    .map(|g| g.iter().next().copied().unwrap_or(usize::MAX))
                    .collect();
                let acc = accuracy(&pred, &gold_cls)?;
                (
                    pred.into_iter().map(|p| BTreeSet::from([p])).collect::<Vec<_>>(),
                    Some(acc),
                )
            }
            Mode::MultiLabel => {
                let t = threshold
                    .ok_or_else(|| Error::InvalidArgument("multi-label evaluation requires a threshold".into()))?;
                (probs.iter().map(|p| labels_above(p, t)).collect(), None)
            }
        };
        let prf = precision_recall_f1(&predicted, gold, c)?;
        let (per_class_auc, macro_auc) = per_class_auc(probs, gold, c);
        Ok(EvaluationReport {
            mode: space.mode().to_string(),
            labels: space.names().to_vec(),
            examples: probs.len(),
            prf,
            default_averaging: Averaging::Weighted,
            accuracy: accuracy_value,
            per_class_auc,
            macro_auc,
            threshold: if space.mode() == Mode::MultiLabel {
                threshold
            } else {
                None
            },
        })
    }

    /// One `name<TAB>value` line per metric.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}\t{v}");
        };
        line("mode", self.mode.clone());
        line("examples", self.examples.to_string());
        if let Some(a) = self.accuracy {
            line("accuracy", a.to_string());
        }
        if let Some(t) = self.threshold {
            line("threshold", t.to_string());
        }
        for (name, prf) in [
            ("weighted", self.prf.weighted_avg),
            ("macro", self.prf.macro_avg),
            ("micro", self.prf.micro_avg),
        ] {
            line(&format!("{name}_precision"), prf.precision.to_string());
            line(&format!("{name}_recall"), prf.recall.to_string());
            line(&format!("{name}_f1"), prf.f1.to_string());
        }
        if let Some(a) = self.macro_auc {
            line("macro_auc", a.to_string());
        }
        for (i, label) in self.labels.iter().enumerate() {
            let c = &self.prf.per_class[i];
            line(&format!("{label}_precision"), c.precision.to_string());
            line(&format!("{label}_recall"), c.recall.to_string());
            line(&format!("{label}_f1"), c.f1.to_string());
            line(&format!("{label}_support"), c.support.to_string());
            if let Some(a) = self.per_class_auc[i] {
                line(&format!("{label}_auc"), a.to_string());
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
