//! Built-in verification suite behind the `verify` command: statistics
//! against from-definition oracles, gradient checks, probability
//! invariants and metric oracles.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocabulary, Document, LabelSpace, Mode, Vocabulary};
use crate::descriptors::{build_contingency, F_SENTINEL};
use crate::error::Result;
use crate::metrics::roc_auc;
use crate::model::checks::full_model_grad_check;
use crate::nn::checks::layer_grad_checks;
use crate::nn::{Activation, Attention, Dense};
use crate::numerics::checks::primitive_grad_checks;
use crate::numerics::{Graph, ParamSet, Tensor};

pub const STATS_TOLERANCE: f64 = 1e-9;
pub const EXACT_TOLERANCE: f64 = 1e-12;
pub const LAYER_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

/// One line of the verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    /// Largest observed deviation (relative error, absolute error, …).
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            measured,
            tolerance,
            passed: measured.is_finite() && measured < tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: impl Into<String>, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            measured: f64::NAN,
            tolerance,
            passed: false,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\tmeasured={:.3e}\ttolerance={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, "\t{}", self.detail)?;
        }
        Ok(())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Random multi-class corpus: 2–4 classes, at most 10 documents, tokens
/// drawn from at most 15 types, every class non-empty.
pub fn random_small_corpus(rng: &mut impl Rng) -> Result<(Vec<Document>, Vocabulary, LabelSpace)> {
    let classes = rng.gen_range(2..=4);
    let space = LabelSpace::new((0..classes).map(|c| format!("c{c}")), Mode::MultiClass)?;
    let n_docs = rng.gen_range(classes..=10);
    let n_types = rng.gen_range(1..=15);
    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let len = rng.gen_range(1..=8);
        let text: Vec<String> = (0..len).map(|_| format!("t{}", rng.gen_range(0..n_types))).collect();
        let class = if i < classes { i } else { rng.gen_range(0..classes) };
        docs.push(Document::new(i, text.join(" "), BTreeSet::from([class]), &space)?);
    }
    let vocab = build_vocabulary(&docs, 1000)?;
    Ok((docs, vocab, space))
}

/// Σ (O − E)² / E with E from the table margins, counted directly from the
/// documents. Zero when any margin is zero.
pub fn chi2_from_definition(docs: &[Document], token: &str, class: usize) -> f64 {
    let mut observed = [[0.0f64; 2]; 2];
    for d in docs {
        let has = d.tokens.iter().any(|t| t == token);
        let inside = d.labels.contains(&class);
        observed[usize::from(!inside)][usize::from(!has)] += 1.0;
    }
    let n: f64 = observed.iter().flatten().sum();
    let rows = [observed[0][0] + observed[0][1], observed[1][0] + observed[1][1]];
    let cols = [observed[0][0] + observed[1][0], observed[0][1] + observed[1][1]];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return 0.0;
    }
    let mut stat = 0.0;
    for (r, row) in observed.iter().enumerate() {
        for (c, &o) in row.iter().enumerate() {
            let e = rows[r] * cols[c] / n;
            stat += (o - e) * (o - e) / e;
        }
    }
    stat
}

/// `(SSB / 1) / (SSW / (N − 2))` over per-document raw counts of `token`,
/// grouped in-class vs out-of-class. Zero when the means agree or fewer
/// than three documents exist; [`F_SENTINEL`] when the means differ but
/// every group is constant.
pub fn anova_from_definition(docs: &[Document], token: &str, class: usize) -> f64 {
    let mut groups: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    for d in docs {
        let count = d.tokens.iter().filter(|t| *t == token).count() as u64;
        groups[usize::from(!d.labels.contains(&class))].push(count);
    }
    let n = docs.len();
    if n < 3 || groups.iter().any(Vec::is_empty) {
        return 0.0;
    }
    let (s1, s2): (u64, u64) = (groups[0].iter().sum(), groups[1].iter().sum());
    let (n1, n2) = (groups[0].len() as u64, groups[1].len() as u64);
    if s1 * n2 == s2 * n1 {
        return 0.0;
    }
    if groups.iter().all(|g| g.iter().all(|&x| x == g[0])) {
        return F_SENTINEL;
    }
    let mean = |g: &[u64]| g.iter().sum::<u64>() as f64 / g.len() as f64;
    let grand = (s1 + s2) as f64 / n as f64;
    let (m1, m2) = (mean(&groups[0]), mean(&groups[1]));
    let ssb = n1 as f64 * (m1 - grand).powi(2) + n2 as f64 * (m2 - grand).powi(2);
    let ssw: f64 = groups[0].iter().map(|&x| (x as f64 - m1).powi(2)).sum::<f64>()
        + groups[1].iter().map(|&x| (x as f64 - m2).powi(2)).sum::<f64>();
    ssb / (ssw / (n as f64 - 2.0))
}

/// Maximum relative errors (χ², ANOVA) of the library statistics against
/// the from-definition oracles over `corpora` random corpora.
pub fn statistics_vs_oracle(corpora: usize, seed: u64) -> Result<(f64, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut chi, mut anova, mut pairs) = (0.0f64, 0.0f64, 0);
    for _ in 0..corpora {
        let (docs, vocab, space) = random_small_corpus(&mut rng)?;
        let stats = build_contingency(&docs, &vocab, &space)?;
        for (id, token) in vocab.tokens() {
            for class in 0..space.len() {
                chi = chi.max(rel_err(
                    stats.chi2(id, class),
                    chi2_from_definition(&docs, token, class),
                ));
                anova = anova.max(rel_err(
                    stats.anova(id, class),
                    anova_from_definition(&docs, token, class),
                ));
                pairs += 1;
            }
        }
    }
    Ok((chi, anova, pairs))
}

/// χ²(cat, A) and ANOVA F(cat, A) on `cat cat`/A, `cat`/A, `dog`/B, `dog dog`/B.
pub fn worked_statistics() -> Result<(f64, f64)> {
    let space = LabelSpace::new(["A", "B"], Mode::MultiClass)?;
    let docs = [("cat cat", 0), ("cat", 0), ("dog", 1), ("dog dog", 1)]
        .iter()
        .enumerate()
        .map(|(i, &(t, c))| Document::new(i, t, BTreeSet::from([c]), &space))
        .collect::<Result<Vec<_>>>()?;
    let vocab = build_vocabulary(&docs, 100)?;
    let stats = build_contingency(&docs, &vocab, &space)?;
    let cat = vocab.id("cat").expect("cat in vocabulary");
    Ok((stats.chi2(cat, 0), stats.anova(cat, 0)))
}

/// Fraction of concordant (positive, negative) pairs, ties counting ½.
pub fn auc_pair_count(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Max |roc_auc − pair count| over random instances (≤ 200 points, with
/// deliberate score ties).
pub fn auc_vs_oracle(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(2..=50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
            .collect();
        worst = worst.max((roc_auc(&scores, &labels)? - auc_pair_count(&scores, &labels)).abs());
    }
    Ok(worst)
}

/// AUC on the three hand-computed cases; expected 0.75, 1.0, 0.5.
pub fn worked_auc() -> Result<[f64; 3]> {
    Ok([
        roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true])?,
        roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true])?,
        roc_auc(&[0.5, 0.5, 0.5, 0.5], &[false, true, false, true])?,
    ])
}

/// Largest deviation from the probability contracts over `trials` random
/// f32 parameterizations: (softmax row-sum error, attention weight-sum
/// error, sigmoid outputs outside (0,1)).
pub fn probability_invariants(trials: usize, seed: u64) -> Result<(f64, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut softmax_err, mut attention_err, mut sigmoid_bad) = (0.0f64, 0.0f64, 0);
    for _ in 0..trials {
        let (b, t, k, c) = (
            rng.gen_range(1..5),
            rng.gen_range(1..9),
            rng.gen_range(1..7),
            rng.gen_range(2..6),
        );
        let scale = 10f64.powf(rng.gen_range(-1.0..1.5));
        let mut params = ParamSet::<f32>::new();
        let att = Attention::new(&mut params, "att", k, rng.gen_range(1..7), &mut rng);
        let soft = Dense::new(&mut params, "soft", k, c, Activation::Softmax, &mut rng);
        let sig = Dense::new(&mut params, "sig", k, c, Activation::Sigmoid, &mut rng);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            params
                .get_mut(id)
                .value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v *= scale as f32);
        }
        let lengths: Vec<usize> = (0..b).map(|i| if i == 0 { t } else { rng.gen_range(1..=t) }).collect();
        let h = Tensor::from_fn(&[b, t, k], |_| rng.gen_range(-scale..scale) as f32);
        let mut g = Graph::new();
        let h = g.constant(h);
        let attended = att.forward(&mut g, &params, h, &lengths)?;
        let weights = attended.weights.expect("non-empty lengths give weights");
        for row in g.value(weights).rows() {
            let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
            attention_err = attention_err.max((s - 1.0).abs());
        }
        let x = g.constant(Tensor::from_fn(&[b, k], |_| rng.gen_range(-scale..scale) as f32));
        let p = soft.forward(&mut g, &params, x)?;
        for row in g.value(p).rows() {
            let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
            softmax_err = softmax_err.max((s - 1.0).abs());
        }
        let q = sig.forward(&mut g, &params, x)?;
        sigmoid_bad += g.value(q).data().iter().filter(|&&v| !(v > 0.0 && v < 1.0)).count();
    }
    Ok((softmax_err, attention_err, sigmoid_bad))
}

/// Runs every check. Failures to even run a check are reported as failed
/// outcomes rather than errors.
pub fn run_suite(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();

    match statistics_vs_oracle(1000, seed) {
        Ok((chi, anova, pairs)) => {
            out.push(CheckOutcome::new(
                "stats.chi2_vs_definition",
                chi,
                STATS_TOLERANCE,
                format!("{pairs} token/class pairs"),
            ));
            out.push(CheckOutcome::new(
                "stats.anova_vs_definition",
                anova,
                STATS_TOLERANCE,
                format!("{pairs} token/class pairs"),
            ));
        }
        Err(e) => out.push(CheckOutcome::failed(
            "stats.vs_definition",
            STATS_TOLERANCE,
            e.to_string(),
        )),
    }
    match worked_statistics() {
        Ok((chi, f)) => {
            out.push(CheckOutcome::new(
                "stats.worked_chi2",
                (chi - 4.0).abs(),
                EXACT_TOLERANCE,
                format!("chi2={chi}"),
            ));
            out.push(CheckOutcome::new(
                "stats.worked_anova",
                (f - 9.0).abs(),
                EXACT_TOLERANCE,
                format!("F={f}"),
            ));
        }
        Err(e) => out.push(CheckOutcome::failed("stats.worked", EXACT_TOLERANCE, e.to_string())),
    }

    for (prefix, checks) in [
        ("grad.primitive", primitive_grad_checks(seed)),
        ("grad.layer", layer_grad_checks(seed)),
    ] {
        match checks {
            Ok(list) => {
                for (name, r) in list {
                    out.push(CheckOutcome::new(
                        format!("{prefix}.{name}"),
                        r.max_relative_error,
                        LAYER_TOLERANCE,
                        format!("worst {}", r.worst_entry),
                    ));
                }
            }
            Err(e) => out.push(CheckOutcome::failed(prefix, LAYER_TOLERANCE, e.to_string())),
        }
    }
    for mode in [Mode::MultiClass, Mode::MultiLabel] {
        let name = format!("grad.model.{mode}");
        match full_model_grad_check(mode, seed) {
            Ok(r) => out.push(CheckOutcome::new(
                name,
                r.max_relative_error,
                MODEL_TOLERANCE,
                format!("{} entries, worst {}", r.entries_checked, r.worst_entry),
            )),
            Err(e) => out.push(CheckOutcome::failed(name, MODEL_TOLERANCE, e.to_string())),
        }
    }

    match probability_invariants(1000, seed) {
        Ok((s, a, bad)) => {
            out.push(CheckOutcome::new(
                "prob.softmax_row_sum",
                s,
                PROBABILITY_TOLERANCE,
                "1000 f32 parameterizations",
            ));
            out.push(CheckOutcome::new(
                "prob.attention_weight_sum",
                a,
                PROBABILITY_TOLERANCE,
                "1000 f32 parameterizations",
            ));
            out.push(CheckOutcome::new(
                "prob.sigmoid_open_interval",
                bad as f64,
                0.5,
                format!("{bad} outputs outside (0,1)"),
            ));
        }
        Err(e) => out.push(CheckOutcome::failed("prob", PROBABILITY_TOLERANCE, e.to_string())),
    }

    match auc_vs_oracle(100, seed) {
        Ok(d) => out.push(CheckOutcome::new(
            "metrics.auc_vs_pair_count",
            d,
            EXACT_TOLERANCE,
            "100 instances",
        )),
        Err(e) => out.push(CheckOutcome::failed(
            "metrics.auc_vs_pair_count",
            EXACT_TOLERANCE,
            e.to_string(),
        )),
    }
    match worked_auc() {
        Ok(v) => {
            let d = (v[0] - 0.75).abs().max((v[1] - 1.0).abs()).max((v[2] - 0.5).abs());
            out.push(CheckOutcome::new(
                "metrics.auc_worked",
                d,
                EXACT_TOLERANCE,
                format!("{v:?}"),
            ));
        }
        Err(e) => out.push(CheckOutcome::failed(
            "metrics.auc_worked",
            EXACT_TOLERANCE,
            e.to_string(),
        )),
    }
    out
}
