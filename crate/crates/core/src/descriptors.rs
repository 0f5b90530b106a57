//! Per-class descriptor words from χ² and ANOVA F hypothesis tests, and the
//! filtered descriptor-channel input built from them.
//!
//! Every class is contrasted one-vs-rest against the remaining documents.
//! χ² works on document-level presence (a 2×2 table per token and class);
//! ANOVA works on raw per-document counts of the token, split into the
//! in-class and out-of-class groups.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{encode, Document, LabelSpace, Vocabulary, OOV_ID};
use crate::error::{Error, Result};

/// Score assigned when the within-group variance is zero but the group
/// means differ: the F ratio is unbounded there.
pub const F_SENTINEL: f64 = f64::MAX;

/// Default minimum document frequency for a token to be scored.
pub const DEFAULT_MIN_DOC_FREQ: usize = 2;

/// Hypothesis test used to rank tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    Chi2,
    Anova,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestKind::Chi2 => "chi2",
            TestKind::Anova => "anova",
        })
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chi2" => Ok(TestKind::Chi2),
            "anova" => Ok(TestKind::Anova),
            other => Err(Error::InvalidArgument(format!("unknown test '{other}'"))),
        }
    }
}

/// One-vs-rest 2×2 document table for a (token, class) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contingency {
    /// In class, containing the token.
    pub a: u64,
    /// Out of class, containing the token.
    pub b: u64,
    /// In class, lacking the token.
    pub c: u64,
    /// Out of class, lacking the token.
    pub d: u64,
}

impl Contingency {
    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// `N (ad − bc)² / ((a+b)(c+d)(a+c)(b+d))`; zero when any marginal is zero.
pub fn chi2_score(t: &Contingency) -> f64 {
    let n = t.total() as f64;
    let marginals = [t.a + t.b, t.c + t.d, t.a + t.c, t.b + t.d];
    if marginals.contains(&0) {
        return 0.0;
    }
    let diff = (t.a as i128) * (t.d as i128) - (t.b as i128) * (t.c as i128);
    if diff == 0 {
        return 0.0;
    }
    let diff = diff as f64;
    let denom: f64 = marginals.iter().map(|&m| m as f64).product();
    n * diff * diff / denom
}

/// Sufficient statistics of one ANOVA group.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GroupSums {
    pub n: f64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl GroupSums {
    pub fn of(values: &[f64]) -> Self {
        GroupSums {
            n: values.len() as f64,
            sum: values.iter().sum(),
            sum_sq: values.iter().map(|v| v * v).sum(),
        }
    }
}

/// Two-group one-way F from group sums.
///
/// Written as `(N−2)(s₁n₂ − s₂n₁)² / (N[(n₁q₁ − s₁²)n₂ + (n₂q₂ − s₂²)n₁])`
/// so that integer counts produce exact zeros in both numerator and
/// denominator.
pub fn anova_f_from_sums(g1: GroupSums, g2: GroupSums) -> Result<f64> {
    if g1.n < 1.0 || g2.n < 1.0 {
        return Err(Error::InvalidArgument("ANOVA groups must be non-empty".into()));
    }
    let total = g1.n + g2.n;
    if total < 3.0 {
        return Err(Error::InsufficientDegreesOfFreedom);
    }
    let between = g1.sum * g2.n - g2.sum * g1.n;
    if between == 0.0 {
        return Ok(0.0);
    }
    let within = (g1.n * g1.sum_sq - g1.sum * g1.sum) * g2.n + (g2.n * g2.sum_sq - g2.sum * g2.sum) * g1.n;
    if within <= 0.0 {
        return Ok(F_SENTINEL);
    }
    Ok((total - 2.0) * between * between / (total * within))
}

/// One-way ANOVA F statistic for two groups (df 1 and N−2).
pub fn anova_f_score(in_class: &[f64], out_class: &[f64]) -> Result<f64> {
    if in_class.len() + out_class.len() < 3 {
        return Err(Error::InsufficientDegreesOfFreedom);
    }
    anova_f_from_sums(GroupSums::of(in_class), GroupSums::of(out_class))
}

/// Token/class occurrence statistics over a training corpus.
#[derive(Debug, Clone)]
pub struct TokenClassStats {
    num_docs: usize,
    class_sizes: Vec<usize>,
    /// Per document: label set.
    doc_labels: Vec<BTreeSet<usize>>,
    /// Per vocabulary id: (document index, raw count) for documents
    /// containing the token.
    postings: Vec<Vec<(usize, u32)>>,
    /// Per vocabulary id and class: documents in class containing the token.
    in_class_docs: Vec<Vec<u64>>,
    /// Per vocabulary id and class: (Σ count, Σ count²) over in-class docs.
    in_class_sums: Vec<Vec<(f64, f64)>>,
    /// Per vocabulary id: (Σ count, Σ count²) over all docs.
    total_sums: Vec<(f64, f64)>,
}

/// Tallies presence tables and per-document counts for every vocabulary
/// token (padding and OOV excluded).
pub fn build_contingency(corpus: &[Document], vocab: &Vocabulary, labels: &LabelSpace) -> Result<TokenClassStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let c = labels.len();
    let v = vocab.len();
    let mut class_sizes = vec![0usize; c];
    let mut postings: Vec<Vec<(usize, u32)>> = vec![Vec::new(); v];
    let mut in_class_docs = vec![vec![0u64; c]; v];
    let mut in_class_sums = vec![vec![(0.0, 0.0); c]; v];
    let mut total_sums = vec![(0.0, 0.0); v];
    let mut doc_labels = Vec::with_capacity(corpus.len());
    for (di, doc) in corpus.iter().enumerate() {
        if let Some(&bad) = doc.labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "document {}: label {bad} out of range",
                doc.id
            )));
        }
        for &l in &doc.labels {
            class_sizes[l] += 1;
        }
        let mut counts: HashMap<usize, u32> = HashMap::new();
        for tok in &doc.tokens {
            let id = vocab.id_or_oov(tok);
            if id > OOV_ID {
                *counts.entry(id).or_default() += 1;
            }
        }
        let mut counts: Vec<(usize, u32)> = counts.into_iter().collect();
        counts.sort_unstable();
        for (id, n) in counts {
            let x = n as f64;
            postings[id].push((di, n));
            total_sums[id].0 += x;
            total_sums[id].1 += x * x;
            for &l in &doc.labels {
                in_class_docs[id][l] += 1;
                in_class_sums[id][l].0 += x;
                in_class_sums[id][l].1 += x * x;
            }
        }
        doc_labels.push(doc.labels.clone());
    }
    if let Some(empty) = class_sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyClass(labels.name(empty).to_owned()));
    }
    Ok(TokenClassStats {
        num_docs: corpus.len(),
        class_sizes,
        doc_labels,
        postings,
        in_class_docs,
        in_class_sums,
        total_sums,
    })
}

impl TokenClassStats {
    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn num_classes(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn class_size(&self, class: usize) -> usize {
        self.class_sizes[class]
    }

    /// Number of training documents containing the token.
    pub fn doc_frequency(&self, token: usize) -> usize {
        self.postings.get(token).map_or(0, Vec::len)
    }

    pub fn contingency(&self, token: usize, class: usize) -> Contingency {
        let n = self.num_docs as u64;
        let in_class = self.class_sizes[class] as u64;
        let a = self.in_class_docs[token][class];
        let df = self.doc_frequency(token) as u64;
        let b = df - a;
        let c = in_class - a;
        Contingency {
            a,
            b,
            c,
            d: n - in_class - b,
        }
    }

    /// Raw per-document counts of `token`, split into the in-class and
    /// out-of-class groups (zeros included).
    pub fn anova_groups(&self, token: usize, class: usize) -> (Vec<f64>, Vec<f64>) {
        let mut counts = vec![0.0; self.num_docs];
        for &(d, n) in &self.postings[token] {
            counts[d] = n as f64;
        }
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for (d, x) in counts.into_iter().enumerate() {
            if self.doc_labels[d].contains(&class) {
                inside.push(x);
            } else {
                outside.push(x);
            }
        }
        (inside, outside)
    }

    pub fn chi2(&self, token: usize, class: usize) -> f64 {
        chi2_score(&self.contingency(token, class))
    }

    /// ANOVA F for (token, class); zero when the out-of-class group is
    /// empty or there are fewer than three documents.
    pub fn anova(&self, token: usize, class: usize) -> f64 {
        let n1 = self.class_sizes[class] as f64;
        let n2 = self.num_docs as f64 - n1;
        let (s1, q1) = self.in_class_sums[token][class];
        let (st, qt) = self.total_sums[token];
        let g1 = GroupSums {
            n: n1,
            sum: s1,
            sum_sq: q1,
        };
        let g2 = GroupSums {
            n: n2,
            sum: st - s1,
            sum_sq: qt - q1,
        };
        anova_f_from_sums(g1, g2).unwrap_or(0.0)
    }

    /// Whether the token is over-represented in the class: higher document
    /// rate (χ²) or higher mean count (ANOVA) than in the rest. Both tests
    /// are two-sided, so without this a word marking one class would also
    /// rank high as a descriptor of every other class.
    pub fn positively_associated(&self, test: TestKind, token: usize, class: usize) -> bool {
        match test {
            TestKind::Chi2 => {
                let t = self.contingency(token, class);
                (t.a as u128) * (t.d as u128) > (t.b as u128) * (t.c as u128)
            }
            TestKind::Anova => {
                let n1 = self.class_sizes[class] as f64;
                let n2 = self.num_docs as f64 - n1;
                let s1 = self.in_class_sums[token][class].0;
                let s2 = self.total_sums[token].0 - s1;
                s1 * n2 > s2 * n1
            }
        }
    }

    pub fn score(&self, test: TestKind, token: usize, class: usize) -> f64 {
        match test {
            TestKind::Chi2 => self.chi2(token, class),
            TestKind::Anova => self.anova(token, class),
        }
    }
}

/// Ranked descriptor words of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDescriptors {
    pub class: String,
    pub entries: Vec<(String, f64)>,
}

/// Per-class top-n descriptor lists under one test.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDescriptorSet {
    pub test: TestKind,
    pub dimension: usize,
    pub classes: Vec<ClassDescriptors>,
    union: BTreeSet<String>,
}

impl ClassDescriptorSet {
    pub fn new(test: TestKind, dimension: usize, classes: Vec<ClassDescriptors>) -> Self {
        let union = classes
            .iter()
            .flat_map(|c| c.entries.iter().map(|(t, _)| t.clone()))
            .collect();
        ClassDescriptorSet {
            test,
            dimension,
            classes,
            union,
        }
    }

    /// Every token appearing in any class list.
    pub fn union_vocabulary(&self) -> &BTreeSet<String> {
        &self.union
    }

    pub fn contains(&self, token: &str) -> bool {
        self.union.contains(token)
    }

    pub fn class(&self, name: &str) -> Option<&ClassDescriptors> {
        self.classes.iter().find(|c| c.class == name)
    }

    /// Top `k` tokens of every class, for previews.
    pub fn preview(&self, k: usize) -> Vec<(String, Vec<String>)> {
        self.classes
            .iter()
            .map(|c| {
                (
                    c.class.clone(),
                    c.entries.iter().take(k).map(|(t, _)| t.clone()).collect(),
                )
            })
            .collect()
    }

    /// Header `#test=<test> n=<n>`, then `class<TAB>token<TAB>score` per
    /// entry with scores at 17 significant digits.
    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "#test={} n={}", self.test, self.dimension)?;
        for class in &self.classes {
            for (token, score) in &class.entries {
                writeln!(out, "{}\t{}\t{:.16e}", class.class, token, score)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a descriptor file. Classes appear in file order; a class with
    /// no entries is not represented in the file and so is absent here.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(path, 1, "empty descriptor file")),
        };
        let (test, dimension) = parse_header(&header).map_err(|m| Error::parse(path, 1, m))?;
        let mut classes: Vec<ClassDescriptors> = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields[0].is_empty() || fields[1].is_empty() {
                return Err(Error::parse(path, lineno, "expected class<TAB>token<TAB>score"));
            }
            let score: f64 = fields[2]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad score '{}'", fields[2])))?;
            if score.is_nan() || score < 0.0 {
                return Err(Error::parse(path, lineno, format!("invalid score {score}")));
            }
            let start_new = classes.last().is_none_or(|c| c.class != fields[0]);
            if start_new {
                if classes.iter().any(|c| c.class == fields[0]) {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("entries of class '{}' are not contiguous", fields[0]),
                    ));
                }
                classes.push(ClassDescriptors {
                    class: fields[0].to_owned(),
                    entries: Vec::new(),
                });
            }
            let current = classes.last_mut().unwrap();
            if let Some(&(_, prev)) = current.entries.last() {
                if score > prev {
                    return Err(Error::parse(
                        path,
                        lineno,
                        "scores must be non-increasing within a class",
                    ));
                }
            }
            if current.entries.len() == dimension {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("class '{}' has more than n={dimension} entries", current.class),
                ));
            }
            current.entries.push((fields[1].to_owned(), score));
        }
        Ok(ClassDescriptorSet::new(test, dimension, classes))
    }
}

fn parse_header(line: &str) -> std::result::Result<(TestKind, usize), String> {
    let rest = line
        .strip_prefix("#test=")
        .ok_or_else(|| "header must start with '#test='".to_string())?;
    let (test, n) = rest
        .split_once(" n=")
        .ok_or_else(|| "header must be '#test=<chi2|anova> n=<int>'".to_string())?;
    let test = test.parse::<TestKind>().map_err(|e| e.to_string())?;
    let n: usize = n.trim().parse().map_err(|_| format!("bad dimension '{n}'"))?;
    if n == 0 {
        return Err("dimension must be >= 1".into());
    }
    Ok((test, n))
}

/// Options for descriptor extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractOptions {
    pub test: TestKind,
    pub dimension: usize,
    pub min_doc_freq: usize,
}

impl ExtractOptions {
    pub fn new(test: TestKind, dimension: usize) -> Self {
        ExtractOptions {
            test,
            dimension,
            min_doc_freq: DEFAULT_MIN_DOC_FREQ,
        }
    }
}

/// Ranks the candidate tokens of each class by descending score (ties:
/// higher document frequency, then lexicographic) and keeps the top `n`.
///
/// Candidates are vocabulary tokens with at least `min_doc_freq` training
/// documents that are over-represented in the class.
pub fn extract_descriptors(
    corpus: &[Document],
    vocab: &Vocabulary,
    labels: &LabelSpace,
    options: ExtractOptions,
) -> Result<ClassDescriptorSet> {
    if options.dimension == 0 {
        return Err(Error::InvalidArgument("descriptor dimension must be >= 1".into()));
    }
    let stats = build_contingency(corpus, vocab, labels)?;
    Ok(extract_from_stats(&stats, vocab, labels, options))
}

pub fn extract_from_stats(
    stats: &TokenClassStats,
    vocab: &Vocabulary,
    labels: &LabelSpace,
    options: ExtractOptions,
) -> ClassDescriptorSet {
    let min_df = options.min_doc_freq.max(1);
    let candidates: Vec<(usize, &str, usize)> = vocab
        .tokens()
        .filter_map(|(id, tok)| {
            let df = stats.doc_frequency(id);
            (df >= min_df).then_some((id, tok, df))
        })
        .collect();
    let classes = (0..labels.len())
        .map(|class| {
            let mut scored: Vec<(f64, usize, &str)> = candidates
                .iter()
                .filter(|&&(id, _, _)| stats.positively_associated(options.test, id, class))
                .map(|&(id, tok, df)| (stats.score(options.test, id, class), df, tok))
                .collect();
            scored.sort_by(|x, y| {
                y.0.total_cmp(&x.0)
                    .then_with(|| y.1.cmp(&x.1))
                    .then_with(|| x.2.cmp(y.2))
            });
            ClassDescriptors {
                class: labels.name(class).to_owned(),
                entries: scored
                    .into_iter()
                    .take(options.dimension)
                    .map(|(s, _, t)| (t.to_owned(), s))
                    .collect(),
            }
        })
        .collect();
    ClassDescriptorSet::new(options.test, options.dimension, classes)
}

/// The document's own tokens that are descriptor words of any class, in
/// order and with repeats.
pub fn descriptor_tokens<'a, S: AsRef<str>>(tokens: &'a [S], descriptors: &ClassDescriptorSet) -> Vec<&'a str> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| descriptors.contains(t))
        .collect()
}

/// Filters `tokens` to descriptor words, then encodes and zero-pads to
/// `max_len`.
pub fn build_descriptor_channel_input<S: AsRef<str>>(
    tokens: &[S],
    descriptors: &ClassDescriptorSet,
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<usize> {
    encode(&descriptor_tokens(tokens, descriptors), vocab, max_len)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::{build_vocabulary, Mode};

    fn corpus(space: &LabelSpace, docs: &[(&str, &[usize])]) -> Vec<Document> {
        docs.iter()
            .enumerate()
            .map(|(i, (text, labels))| Document::new(i, *text, labels.iter().copied().collect(), space).unwrap())
            .collect()
    }

    fn cat_dog() -> (Vec<Document>, Vocabulary, LabelSpace) {
        let space = LabelSpace::new(["A", "B"], Mode::MultiClass).unwrap();
        let docs = corpus(
            &space,
            &[("cat cat", &[0]), ("cat", &[0]), ("dog", &[1]), ("dog dog", &[1])],
        );
        let vocab = build_vocabulary(&docs, 100).unwrap();
        (docs, vocab, space)
    }

    /// Σ (O − E)² / E over the four cells.
    fn chi2_oracle(t: &Contingency) -> f64 {
        let n = t.total() as f64;
        let cells = [
            (t.a, t.a + t.b, t.a + t.c),
            (t.b, t.a + t.b, t.b + t.d),
            (t.c, t.c + t.d, t.a + t.c),
            (t.d, t.c + t.d, t.b + t.d),
        ];
        if cells.iter().any(|&(_, r, c)| r == 0 || c == 0) {
            return 0.0;
        }
        cells
            .iter()
            .map(|&(o, r, c)| {
                let e = r as f64 * c as f64 / n;
                (o as f64 - e).powi(2) / e
            })
            .sum()
    }

    #[test]
    fn contingency_counts_presence_per_document() {
        let (docs, vocab, space) = cat_dog();
        let stats = build_contingency(&docs, &vocab, &space).unwrap();
        let cat = vocab.id("cat").unwrap();
        assert_eq!(stats.contingency(cat, 0), Contingency { a: 2, b: 0, c: 0, d: 2 });
        assert_eq!(stats.anova_groups(cat, 0), (vec![2.0, 1.0], vec![0.0, 0.0]));
    }

    #[test]
    fn saturated_token_table() {
        let space = LabelSpace::new(["A", "B"], Mode::MultiClass).unwrap();
        let docs = corpus(&space, &[("the x", &[0]), ("the y", &[1]), ("the", &[1])]);
        let vocab = build_vocabulary(&docs, 100).unwrap();
        let stats = build_contingency(&docs, &vocab, &space).unwrap();
        let the = vocab.id("the").unwrap();
        assert_eq!(stats.contingency(the, 0), Contingency { a: 1, b: 2, c: 0, d: 0 });
        assert_eq!(stats.chi2(the, 0), 0.0);
    }

    #[test]
    fn multi_label_documents_count_for_each_label() {
        let space = LabelSpace::new(["toxic", "insult", "threat"], Mode::MultiLabel).unwrap();
        let docs = corpus(&space, &[("you idiot", &[0, 1]), ("idiot", &[0]), ("hello", &[2])]);
        let vocab = build_vocabulary(&docs, 100).unwrap();
        let stats = build_contingency(&docs, &vocab, &space).unwrap();
        let idiot = vocab.id("idiot").unwrap();
        assert_eq!(stats.contingency(idiot, 0), Contingency { a: 2, b: 0, c: 0, d: 1 });
        assert_eq!(stats.contingency(idiot, 1), Contingency { a: 1, b: 1, c: 0, d: 1 });
        assert_eq!(stats.class_size(1), 1);
    }

    #[test]
    fn empty_class_is_an_error() {
        let space = LabelSpace::new(["A", "B", "C"], Mode::MultiClass).unwrap();
        let docs = corpus(&space, &[("x", &[0]), ("y", &[1])]);
        let vocab = build_vocabulary(&docs, 100).unwrap();
        let err = build_contingency(&docs, &vocab, &space).unwrap_err();
        assert!(matches!(err, Error::EmptyClass(ref c) if c == "C"));
    }

    #[test]
    fn chi2_examples() {
        let t = Contingency { a: 2, b: 0, c: 0, d: 2 };
        assert_eq!(chi2_score(&t), 4.0);
        assert_eq!(chi2_oracle(&t), 4.0);
        assert_eq!(chi2_score(&Contingency { a: 1, b: 1, c: 1, d: 1 }), 0.0);
        assert_eq!(chi2_score(&Contingency { a: 3, b: 1, c: 1, d: 3 }), 2.0);
        assert_eq!(chi2_score(&Contingency { a: 0, b: 0, c: 3, d: 1 }), 0.0);
    }

    #[test]
    fn anova_examples() {
        assert_eq!(anova_f_score(&[2.0, 1.0], &[0.0, 0.0]).unwrap(), 9.0);
        assert_eq!(anova_f_score(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(anova_f_score(&[2.0, 2.0], &[0.0, 0.0]).unwrap(), F_SENTINEL);
        assert!(matches!(
            anova_f_score(&[1.0], &[0.0]),
            Err(Error::InsufficientDegreesOfFreedom)
        ));
    }

    #[test]
    fn stats_scores_match_worked_examples() {
        let (docs, vocab, space) = cat_dog();
        let stats = build_contingency(&docs, &vocab, &space).unwrap();
        let cat = vocab.id("cat").unwrap();
        assert_eq!(stats.chi2(cat, 0), 4.0);
        assert_eq!(stats.anova(cat, 0), 9.0);
    }

    #[test]
    fn marker_token_ranks_first_under_both_tests() {
        let space = LabelSpace::new(["A", "B"], Mode::MultiClass).unwrap();
        let docs = corpus(
            &space,
            &[
                ("alpha the cup", &[0]),
                ("alpha cup of tea", &[0]),
                ("the alpha", &[0]),
                ("the tea cup", &[1]),
                ("of the beta", &[1]),
                ("tea beta of", &[1]),
            ],
        );
        let vocab = build_vocabulary(&docs, 100).unwrap();
        for test in [TestKind::Chi2, TestKind::Anova] {
            let set = extract_descriptors(&docs, &vocab, &space, ExtractOptions::new(test, 3)).unwrap();
            assert_eq!(set.classes[0].entries[0].0, "alpha", "{test}");
            assert_eq!(set.classes[1].entries[0].0, "beta", "{test}");
            // Brute force: alpha's score is the maximum over all tokens. The
            // two-sided statistic ties it with beta's; direction separates them.
            let stats = build_contingency(&docs, &vocab, &space).unwrap();
            let best = vocab
                .tokens()
                .map(|(id, _)| stats.score(test, id, 0))
                .fold(f64::MIN, f64::max);
            assert_eq!(stats.score(test, vocab.id("alpha").unwrap(), 0), best);
        }
    }

    #[test]
    fn large_n_keeps_every_candidate() {
        let (docs, vocab, space) = cat_dog();
        let set = extract_descriptors(&docs, &vocab, &space, ExtractOptions::new(TestKind::Chi2, 50)).unwrap();
        assert_eq!(set.classes[0].entries, vec![("cat".to_string(), 4.0)]);
        assert_eq!(set.classes[1].entries, vec![("dog".to_string(), 4.0)]);
        assert_eq!(set.union_vocabulary().len(), 2);
    }

    #[test]
    fn min_doc_freq_excludes_hapaxes() {
        let space = LabelSpace::new(["A", "B"], Mode::MultiClass).unwrap();
        let docs = corpus(&space, &[("a rare", &[0]), ("a", &[0]), ("b", &[1]), ("b", &[1])]);
        let vocab = build_vocabulary(&docs, 100).unwrap();
        let set = extract_descriptors(&docs, &vocab, &space, ExtractOptions::new(TestKind::Chi2, 10)).unwrap();
        assert!(!set.contains("rare"));
        let mut opts = ExtractOptions::new(TestKind::Chi2, 10);
        opts.min_doc_freq = 1;
        let set = extract_descriptors(&docs, &vocab, &space, opts).unwrap();
        assert!(set.contains("rare"));
    }

    #[test]
    fn descriptor_channel_filters_and_pads() {
        let space = LabelSpace::new(["World", "Sports"], Mode::MultiClass).unwrap();
        let docs = corpus(&space, &[("the iraq game of", &[0])]);
        let vocab = build_vocabulary(&docs, 100).unwrap();
        let set = ClassDescriptorSet::new(
            TestKind::Chi2,
            1,
            vec![
                ClassDescriptors {
                    class: "World".into(),
                    entries: vec![("iraq".into(), 2.0)],
                },
                ClassDescriptors {
                    class: "Sports".into(),
                    entries: vec![("game".into(), 1.0)],
                },
            ],
        );
        let tokens = ["the", "iraq", "game", "of"];
        let ids = build_descriptor_channel_input(&tokens, &set, &vocab, 4);
        assert_eq!(ids, vec![vocab.id("iraq").unwrap(), vocab.id("game").unwrap(), 0, 0]);
        assert_eq!(
            build_descriptor_channel_input(&["the", "of"], &set, &vocab, 3),
            vec![0, 0, 0]
        );
        let both = ["iraq", "game", "iraq"];
        assert_eq!(
            build_descriptor_channel_input(&both, &set, &vocab, 2),
            encode(&both, &vocab, 2)
        );
    }

    #[test]
    fn descriptor_file_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let classes = ["World", "Sports"]
            .iter()
            .map(|c| {
                let mut scores: Vec<f64> = (0..20).map(|_| rng.gen::<f64>() * 1e3).collect();
                scores.sort_by(|a, b| b.total_cmp(a));
                scores[0] = F_SENTINEL;
                ClassDescriptors {
                    class: c.to_string(),
                    entries: scores
                        .into_iter()
                        .enumerate()
                        .map(|(i, s)| (format!("{c}{i}").to_lowercase(), s))
                        .collect(),
                }
            })
            .collect();
        let set = ClassDescriptorSet::new(TestKind::Anova, 20, classes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        set.save(&path).unwrap();
        let loaded = ClassDescriptorSet::load(&path).unwrap();
        assert_eq!(loaded, set);
        for (a, b) in loaded.classes.iter().zip(&set.classes) {
            for (x, y) in a.entries.iter().zip(&b.entries) {
                assert_eq!(x.1.to_bits(), y.1.to_bits());
            }
        }

        std::fs::write(&path, "#test=ttest n=3\nA\tx\t1.0\n").unwrap();
        assert!(ClassDescriptorSet::load(&path)
            .unwrap_err()
            .to_string()
            .contains("line 1"));
        std::fs::write(&path, "#test=chi2 n=3\nA\tx\t1.0\nA\ty\tabc\n").unwrap();
        assert!(ClassDescriptorSet::load(&path)
            .unwrap_err()
            .to_string()
            .contains("line 3"));
        std::fs::write(&path, "#test=chi2 n=3\nA\tx\t1.0\nB\ty\t1.0\nA\tz\t0.5\n").unwrap();
        assert!(ClassDescriptorSet::load(&path).is_err());
        std::fs::write(&path, "#test=chi2 n=3\nA\tx\t1.0\nA\ty\t2.0\n").unwrap();
        assert!(ClassDescriptorSet::load(&path).is_err());
    }

    fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<Document>, Vocabulary, LabelSpace) {
        let classes = rng.gen_range(2..=4);
        let names: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
        let space = LabelSpace::new(names, Mode::MultiClass).unwrap();
        let n_docs = rng.gen_range(classes..=10);
        let n_tokens = rng.gen_range(1..=15);
        let docs: Vec<Document> = (0..n_docs)
            .map(|i| {
                let len = rng.gen_range(1..8);
                let text: Vec<String> = (0..len).map(|_| format!("t{}", rng.gen_range(0..n_tokens))).collect();
                let class = if i < classes { i } else { rng.gen_range(0..classes) };
                Document::new(i, text.join(" "), BTreeSet::from([class]), &space).unwrap()
            })
            .collect();
        let vocab = build_vocabulary(&docs, 100).unwrap();
        (docs, vocab, space)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn chi2_matches_cell_sum_and_is_symmetric(a in 0u64..30, b in 0u64..30, c in 0u64..30, d in 0u64..30) {
            let t = Contingency { a, b, c, d };
            let s = chi2_score(&t);
            let o = chi2_oracle(&t);
            prop_assert!(s >= 0.0);
            prop_assert!((s - o).abs() <= 1e-9 * o.abs().max(1e-300) || (s == 0.0 && o.abs() < 1e-9));
            let swapped = Contingency { a: b, b: a, c: d, d: c };
            prop_assert!((chi2_score(&swapped) - s).abs() <= 1e-12 * s.max(1.0));
            prop_assert_eq!(s == 0.0, (a * d == b * c) || [a + b, c + d, a + c, b + d].contains(&0));
        }

        #[test]
        fn anova_is_permutation_invariant(
            mut g1 in prop::collection::vec(0u32..6, 1..8),
            mut g2 in prop::collection::vec(0u32..6, 2..8),
        ) {
            let f = |v: &[u32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
            let s = anova_f_score(&f(&g1), &f(&g2)).unwrap();
            g1.reverse();
            g2.rotate_left(1);
            prop_assert_eq!(s, anova_f_score(&f(&g1), &f(&g2)).unwrap());
            prop_assert!(s >= 0.0);
        }

        #[test]
        fn extracted_lists_are_sorted_and_supported(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (docs, vocab, space) = random_corpus(&mut rng);
            let set = extract_descriptors(&docs, &vocab, &space, ExtractOptions::new(TestKind::Anova, 5)).unwrap();
            let stats = build_contingency(&docs, &vocab, &space).unwrap();
            for class in &set.classes {
                prop_assert!(class.entries.windows(2).all(|w| w[0].1 >= w[1].1));
                for (tok, _) in &class.entries {
                    prop_assert!(stats.doc_frequency(vocab.id(tok).unwrap()) > 0);
                }
            }
        }

        #[test]
        fn descriptor_input_is_subsequence_of_text(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (docs, vocab, space) = random_corpus(&mut rng);
            let mut opts = ExtractOptions::new(TestKind::Chi2, 2);
            opts.min_doc_freq = 1;
            let set = extract_descriptors(&docs, &vocab, &space, opts).unwrap();
            for doc in &docs {
                let text = encode(&doc.tokens, &vocab, 64);
                let desc = build_descriptor_channel_input(&doc.tokens, &set, &vocab, 64);
                let mut it = text.iter();
                for id in desc.iter().filter(|&&i| i != 0) {
                    prop_assert!(it.any(|t| t == id));
                }
            }
        }
    }
}
