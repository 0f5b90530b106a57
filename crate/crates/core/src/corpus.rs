//! Dataset ingestion, text normalization, vocabulary construction and
//! fixed-length integer encoding.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Padding id; padding only ever appears as a contiguous suffix.
pub const PAD_ID: usize = 0;
/// Shared id for every out-of-vocabulary token.
pub const OOV_ID: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const OOV_TOKEN: &str = "<oov>";

/// Whether a document carries exactly one class or any number of labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    MultiClass,
    MultiLabel,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::MultiClass => "multi_class",
            Mode::MultiLabel => "multi_label",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_class" => Ok(Mode::MultiClass),
            "multi_label" => Ok(Mode::MultiLabel),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode '{other}' (expected multi_class or multi_label)"
            ))),
        }
    }
}

/// Ordered label names plus the labelling mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    names: Vec<String>,
    mode: Mode,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>, mode: Mode) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidArgument("label space is empty".into()));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::InvalidArgument("label names must be unique".into()));
        }
        if let Some(bad) = names.iter().find(|n| n.is_empty() || n.contains('|')) {
            return Err(Error::InvalidArgument(format!("invalid label name '{bad}'")));
        }
        Ok(LabelSpace { names, mode })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }
}

/// A raw document with its normalized tokens and label indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: usize,
    pub text: String,
    pub tokens: Vec<String>,
    pub labels: BTreeSet<usize>,
}

impl Document {
    /// Builds a document, tokenizing `text` and validating labels.
    pub fn new(id: usize, text: impl Into<String>, labels: BTreeSet<usize>, space: &LabelSpace) -> Result<Self> {
        let text = text.into();
        if space.mode() == Mode::MultiClass && labels.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "document {id}: multi-class documents need exactly one label, got {}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= space.len()) {
            return Err(Error::InvalidArgument(format!(
                "document {id}: label index {bad} out of range"
            )));
        }
        Ok(Document {
            id,
            tokens: preprocess_text(&text),
            text,
            labels,
        })
    }

    /// The single class of a multi-class document.
    pub fn class(&self) -> usize {
        *self.labels.iter().next().expect("document without label")
    }
}

/// Lowercase, squeeze runs of three or more identical characters to one,
/// replace every non-alphanumeric character with a space, split on
/// whitespace.
pub fn preprocess_text(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let chars: Vec<char> = lowered.chars().collect();
    let mut cleaned = String::with_capacity(lowered.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut run = 1;
        while i + run < chars.len() && chars[i + run] == c {
            run += 1;
        }
        let keep = if run >= 3 { 1 } else { run };
        let mapped = if c.is_alphanumeric() { c } else { ' ' };
        for _ in 0..keep {
            cleaned.push(mapped);
        }
        i += run;
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Token ↔ id mapping. Ids 0 and 1 are reserved for padding and OOV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    doc_frequency: Vec<usize>,
    max_size: usize,
}

impl Vocabulary {
    fn with_specials(max_size: usize) -> Self {
        Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: vec![PAD_TOKEN.to_owned(), OOV_TOKEN.to_owned()],
            doc_frequency: vec![0, 0],
            max_size,
        }
    }

    fn insert(&mut self, token: String, doc_frequency: usize) {
        self.token_to_id.insert(token.clone(), self.id_to_token.len());
        self.id_to_token.push(token);
        self.doc_frequency.push(doc_frequency);
    }

    /// Total number of ids, including the two reserved ones.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 2
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_oov(&self, token: &str) -> usize {
        self.id(token).unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn doc_frequency(&self, id: usize) -> usize {
        self.doc_frequency.get(id).copied().unwrap_or(0)
    }

    /// Real (non-reserved) tokens in id order.
    pub fn tokens(&self) -> impl Iterator<Item = (usize, &str)> {
        self.id_to_token
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (i, t.as_str()))
    }

    /// Writes `token<TAB>id<TAB>doc_frequency` lines sorted by id.
    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for (id, token) in self.id_to_token.iter().enumerate() {
            writeln!(out, "{token}\t{id}\t{}", self.doc_frequency[id])?;
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

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            doc_frequency: Vec::new(),
            max_size: 0,
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let lineno = i + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, lineno, "expected token<TAB>id<TAB>doc_frequency"));
            }
            let id: usize = fields[1]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad id '{}'", fields[1])))?;
            let df: usize = fields[2]
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad doc frequency '{}'", fields[2])))?;
            if id != i {
                return Err(Error::parse(path, lineno, format!("expected id {i}, found {id}")));
            }
            let expected_special = match id {
                PAD_ID => Some(PAD_TOKEN),
                OOV_ID => Some(OOV_TOKEN),
                _ => None,
            };
            match expected_special {
                Some(tok) if fields[0] != tok => {
                    return Err(Error::parse(path, lineno, format!("id {id} must be {tok}")));
                }
                Some(_) => {
                    vocab.id_to_token.push(fields[0].to_owned());
                    vocab.doc_frequency.push(df);
                }
                None => {
                    if vocab.token_to_id.contains_key(fields[0]) {
                        return Err(Error::parse(path, lineno, format!("duplicate token '{}'", fields[0])));
                    }
                    vocab.insert(fields[0].to_owned(), df);
                }
            }
        }
        if vocab.id_to_token.len() < 2 {
            return Err(Error::parse(path, vocab.id_to_token.len() + 1, "missing reserved ids"));
        }
        vocab.max_size = vocab.len();
        Ok(vocab)
    }
}

/// Keeps the `max_size − 2` most frequent tokens by total occurrence count,
/// breaking ties lexicographically.
pub fn build_vocabulary(corpus: &[Document], max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if max_size < 3 {
        return Err(Error::InvalidArgument(format!("max_size {max_size} < 3")));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    for doc in corpus {
        let mut seen = BTreeSet::new();
        for tok in &doc.tokens {
            let entry = counts.entry(tok.as_str()).or_default();
            entry.0 += 1;
            if seen.insert(tok.as_str()) {
                entry.1 += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, df))| (t, c, df)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut vocab = Vocabulary::with_specials(max_size);
    for (tok, _, df) in ranked.into_iter().take(max_size - 2) {
        vocab.insert(tok.to_owned(), df);
    }
    Ok(vocab)
}

/// Maps tokens to ids (OOV → 1), keeps the first `max_len`, right-pads with 0.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id_or_oov(t.as_ref()))
        .collect();
    ids.resize(max_len, PAD_ID);
    ids
}

/// Number of non-padding ids (padding is a contiguous suffix).
pub fn valid_length(ids: &[usize]) -> usize {
    ids.iter().position(|&i| i == PAD_ID).unwrap_or(ids.len())
}

/// Fixed-length model input for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub text_ids: Vec<usize>,
    pub descriptor_ids: Vec<usize>,
    /// One-hot (multi-class) or multi-hot (multi-label), length C.
    pub target: Vec<f64>,
}

/// One-hot / multi-hot target vector for a document.
pub fn target_vector(doc: &Document, space: &LabelSpace) -> Vec<f64> {
    let mut t = vec![0.0; space.len()];
    for &l in &doc.labels {
        t[l] = 1.0;
    }
    t
}

/// What to do with training documents longer than the text window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlength {
    Truncate,
    Drop,
}

impl FromStr for Overlength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncate" => Ok(Overlength::Truncate),
            "drop" => Ok(Overlength::Drop),
            other => Err(Error::InvalidArgument(format!("unknown overlength policy '{other}'"))),
        }
    }
}

impl fmt::Display for Overlength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Overlength::Truncate => "truncate",
            Overlength::Drop => "drop",
        })
    }
}

/// Applies the overlength policy to a training corpus.
pub fn apply_overlength(corpus: Vec<Document>, max_len: usize, policy: Overlength) -> Vec<Document> {
    match policy {
        Overlength::Truncate => corpus,
        Overlength::Drop => corpus.into_iter().filter(|d| d.tokens.len() <= max_len).collect(),
    }
}

/// Supported dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Tsv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown format '{other}'"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Tsv => "tsv",
            Format::Jsonl => "jsonl",
        })
    }
}

fn parse_labels<S: AsRef<str>>(raw: &[S], space: &LabelSpace, record: &str) -> Result<BTreeSet<usize>> {
    let mut labels = BTreeSet::new();
    for name in raw {
        let name = name.as_ref().trim();
        if name.is_empty() {
            continue;
        }
        let idx = space.index_of(name).ok_or_else(|| Error::UnknownLabel {
            record: record.to_owned(),
            label: name.to_owned(),
        })?;
        labels.insert(idx);
    }
    Ok(labels)
}

#[derive(Deserialize, Serialize)]
struct JsonRecord {
    text: String,
    labels: Vec<String>,
}

/// Reads one [`Document`] per record.
///
/// CSV/TSV files carry a `text,label` header; multi-label cells join label
/// names with `|`. JSONL lines are `{"text": ..., "labels": [...]}`.
pub fn load_dataset(path: &Path, format: Format, space: &LabelSpace) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let make = |id: usize, line: usize, text: String, labels: BTreeSet<usize>| {
        Document::new(id, text, labels, space).map_err(|e| Error::parse(path, line, e.to_string()))
    };
    match format {
        Format::Csv | Format::Tsv => {
            let delimiter = if format == Format::Csv { b',' } else { b'\t' };
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delimiter)
                .has_headers(true)
                .from_reader(BufReader::new(file));
            let headers = reader
                .headers()
                .map_err(|e| Error::parse(path, 1, e.to_string()))?
                .clone();
            if headers.len() != 2 || &headers[0] != "text" || &headers[1] != "label" {
                return Err(Error::parse(path, 1, "header must be `text,label`"));
            }
            for (i, rec) in reader.records().enumerate() {
                let rec = rec.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    Error::parse(path, line, e.to_string())
                })?;
                let line = rec.position().map_or(i + 2, |p| p.line() as usize);
                let cell = &rec[1];
                let raw: Vec<&str> = match space.mode() {
                    Mode::MultiLabel => cell.split('|').collect(),
                    Mode::MultiClass => vec![cell],
                };
                let labels = parse_labels(&raw, space, &format!("{}:{line}", path.display()))?;
                docs.push(make(docs.len(), line, rec[0].to_owned(), labels)?);
            }
        }
        Format::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                let lineno = i + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JsonRecord =
                    serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
                let labels = parse_labels(&rec.labels, space, &format!("{}:{lineno}", path.display()))?;
                docs.push(make(docs.len(), lineno, rec.text, labels)?);
            }
        }
    }
    Ok(docs)
}

/// Writes documents in a format [`load_dataset`] reads back.
pub fn write_dataset(path: &Path, format: Format, docs: &[Document], space: &LabelSpace) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let names = |d: &Document| -> Vec<String> { d.labels.iter().map(|&l| space.name(l).to_owned()).collect() };
    match format {
        Format::Csv | Format::Tsv => {
            let mut w = csv::WriterBuilder::new()
                .delimiter(if format == Format::Csv { b',' } else { b'\t' })
                .from_writer(BufWriter::new(file));
            let err = |e: csv::Error| Error::io(path, e.into());
            w.write_record(["text", "label"]).map_err(err)?;
            for d in docs {
                w.write_record([d.text.as_str(), names(d).join("|").as_str()])
                    .map_err(err)?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
        Format::Jsonl => {
            let mut w = BufWriter::new(file);
            for d in docs {
                let rec = JsonRecord {
                    text: d.text.clone(),
                    labels: names(d),
                };
                let line = serde_json::to_string(&rec).expect("string fields serialize");
                writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

/// Deterministic shuffled partition into (train, validation, test).
/// Validation and test sizes are `floor(n · fraction)`; train takes the rest.
pub fn split<T: Clone>(corpus: &[T], fractions: (f64, f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (ftrain, fval, ftest) = fractions;
    if ftrain <= 0.0 || fval <= 0.0 || ftest <= 0.0 || ((ftrain + fval + ftest) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    if corpus.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "cannot split a corpus of {} documents",
            corpus.len()
        )));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * fval).floor() as usize;
    let n_test = (n as f64 * ftest).floor() as usize;
    let n_train = n - n_val - n_test;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

#[cfg(test)]
mod tests {
    use std::io::Write as _;

    use proptest::prelude::*;

    use super::*;

    fn space4() -> LabelSpace {
        LabelSpace::new(["World", "Sports", "Business", "Sci/Tech"], Mode::MultiClass).unwrap()
    }

    fn doc(id: usize, text: &str) -> Document {
        let space = LabelSpace::new(["x"], Mode::MultiClass).unwrap();
        Document::new(id, text, BTreeSet::from([0]), &space).unwrap()
    }

    #[test]
    fn written_datasets_load_back() {
        let space = LabelSpace::new(["a", "b", "c"], Mode::MultiLabel).unwrap();
        let docs = vec![
            Document::new(0, "he said, \"hi\"\tthere", BTreeSet::from([0, 2]), &space).unwrap(),
            Document::new(1, "", BTreeSet::new(), &space).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        for format in [Format::Csv, Format::Tsv, Format::Jsonl] {
            let path = dir.path().join(format!("d.{format}"));
            write_dataset(&path, format, &docs, &space).unwrap();
            assert_eq!(load_dataset(&path, format, &space).unwrap(), docs, "{format}");
        }
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(preprocess_text("yoooouuuuu"), vec!["you"]);
        assert!(preprocess_text("").is_empty());
        assert_eq!(preprocess_text("Good DOG!! good"), vec!["good", "dog", "good"]);
        assert_eq!(preprocess_text("naïve café, 2024!!!"), vec!["naïve", "café", "2024"]);
    }

    #[test]
    fn vocabulary_frequency_cap() {
        let corpus = vec![doc(0, "a a a b b c")];
        let v = build_vocabulary(&corpus, 4).unwrap();
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), Some(3));
        assert_eq!(v.id("c"), None);
        assert_eq!(v.len(), 4);
        let all = build_vocabulary(&corpus, 10).unwrap();
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn vocabulary_tie_break_is_lexicographic() {
        let corpus = vec![doc(0, "b a b a")];
        let v = build_vocabulary(&corpus, 3).unwrap();
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn vocabulary_errors() {
        assert!(matches!(build_vocabulary(&[], 10), Err(Error::EmptyCorpus)));
        assert!(build_vocabulary(&[doc(0, "a")], 2).is_err());
    }

    #[test]
    fn vocabulary_doc_frequency_and_file_round_trip() {
        let corpus = vec![doc(0, "x x y"), doc(1, "x z")];
        let v = build_vocabulary(&corpus, 100).unwrap();
        assert_eq!(v.doc_frequency(v.id("x").unwrap()), 2);
        assert_eq!(v.doc_frequency(v.id("y").unwrap()), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<pad>\t0\t0\n<oov>\t1\t0\nx\t2\t2\n"));
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.id_to_token, v.id_to_token);
        assert_eq!(loaded.doc_frequency, v.doc_frequency);
    }

    #[test]
    fn vocabulary_file_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        std::fs::write(&path, "<pad>\t0\t0\n<oov>\t1\t0\nx\t3\t1\n").unwrap();
        let err = Vocabulary::load(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn encode_examples() {
        let corpus = vec![doc(0, "you you rock")];
        let v = build_vocabulary(&corpus, 10).unwrap();
        assert_eq!(encode(&["you", "rock"], &v, 4), vec![2, 3, 0, 0]);
        assert_eq!(encode::<&str>(&[], &v, 3), vec![0, 0, 0]);
        assert_eq!(encode(&["zzz"], &v, 1), vec![1]);
        assert_eq!(encode(&["you", "rock", "you"], &v, 2), vec![2, 3]);
        assert_eq!(valid_length(&[2, 3, 0, 0]), 2);
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn load_csv_multi_class() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.csv",
            "text,label\n\"Iraq talks, again\",World\nCup final,Sports\n",
        );
        let docs = load_dataset(&p, Format::Csv, &space4()).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].labels, BTreeSet::from([0]));
        assert_eq!(docs[1].labels, BTreeSet::from([1]));
        assert_eq!(docs[0].tokens, vec!["iraq", "talks", "again"]);
    }

    #[test]
    fn load_multi_label_pipe_cell_and_jsonl() {
        let space = LabelSpace::new(["toxic", "insult", "threat"], Mode::MultiLabel).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.tsv", "text\tlabel\nyou idiot\ttoxic|insult\nhello\t\n");
        let docs = load_dataset(&p, Format::Tsv, &space).unwrap();
        assert_eq!(docs[0].labels, BTreeSet::from([0, 1]));
        assert!(docs[1].labels.is_empty());
        let j = write(
            &dir,
            "d.jsonl",
            "{\"text\": \"a b\", \"labels\": [\"threat\"]}\n\n{\"text\": \"c\", \"labels\": []}\n",
        );
        let docs = load_dataset(&j, Format::Jsonl, &space).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].labels, BTreeSet::from([2]));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "text,label\nrain again,Weather\n");
        let err = load_dataset(&p, Format::Csv, &space4()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { ref label, .. } if label == "Weather"));
        let p = write(&dir, "e.csv", "text,label\nfine,World\nbroken,World,extra\n");
        let err = load_dataset(&p, Format::Csv, &space4()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let p = write(&dir, "f.jsonl", "{\"text\": \"a\", \"labels\": [\"World\"]}\n{oops\n");
        let err = load_dataset(&p, Format::Jsonl, &space4()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let p = write(&dir, "g.csv", "body,label\nx,World\n");
        assert!(load_dataset(&p, Format::Csv, &space4()).is_err());
        let missing = dir.path().join("missing.csv");
        assert!(matches!(
            load_dataset(&missing, Format::Csv, &space4()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<usize> = (0..10).collect();
        let (a, b, c) = split(&items, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        assert_eq!(split(&items, (0.8, 0.1, 0.1), 7).unwrap(), (a, b, c));
        let hundred: Vec<usize> = (0..100).collect();
        let s1 = split(&hundred, (0.6, 0.2, 0.2), 1).unwrap();
        let s2 = split(&hundred, (0.6, 0.2, 0.2), 2).unwrap();
        assert_ne!(s1.0, s2.0);
        assert_eq!(s1.0.len(), s2.0.len());
        assert!(split(&items[..2], (0.8, 0.1, 0.1), 1).is_err());
        assert!(split(&items, (0.8, 0.3, 0.1), 1).is_err());
    }

    #[test]
    fn label_space_validation() {
        assert!(LabelSpace::new(Vec::<String>::new(), Mode::MultiClass).is_err());
        assert!(LabelSpace::new(["a", "a"], Mode::MultiClass).is_err());
        let s = space4();
        let two = Document::new(0, "x", BTreeSet::from([0, 1]), &s);
        assert!(two.is_err());
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(text in "\\PC{0,60}") {
            let once = preprocess_text(&text);
            let twice = preprocess_text(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn encode_length_and_round_trip(
            words in prop::collection::vec("[a-e]{1,2}", 0..20),
            max_len in 1usize..12,
        ) {
            let corpus = vec![doc(0, &words.join(" ")), doc(1, "zz")];
            let vocab = build_vocabulary(&corpus, 1000).unwrap();
            let ids = encode(&words, &vocab, max_len);
            prop_assert_eq!(ids.len(), max_len);
            let n = valid_length(&ids);
            prop_assert!(ids[n..].iter().all(|&i| i == PAD_ID));
            for (id, w) in ids[..n].iter().zip(&words) {
                prop_assert_eq!(vocab.token(*id), Some(w.as_str()));
            }
        }

        #[test]
        fn vocabulary_retains_min_of_distinct_and_cap(
            words in prop::collection::vec("[a-h]{1,2}", 1..40),
            max_size in 3usize..30,
        ) {
            let corpus = vec![doc(0, &words.join(" "))];
            let distinct: BTreeSet<&String> = words.iter().collect();
            let vocab = build_vocabulary(&corpus, max_size).unwrap();
            prop_assert_eq!(vocab.len() - 2, distinct.len().min(max_size - 2));
            for (id, tok) in vocab.tokens() {
                prop_assert_eq!(vocab.id(tok), Some(id));
            }
        }

        #[test]
        fn split_is_a_partition(n in 3usize..200, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (a, b, c) = split(&items, (0.7, 0.2, 0.1), seed).unwrap();
            let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }
    }
}
