//! `dualdesc` command line: descriptor extraction, training, evaluation,
//! prediction and the verification suite.
//!
//! Every command reads a flat `key = value` config file (`--config`), then
//! applies `--set key=value` overrides and the shared `--seed` /
//! `--out-dir` flags. The effective configuration is echoed to
//! `<out_dir>/<command>.conf`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    apply_overlength, build_vocabulary, load_dataset, Document, Format, LabelSpace, Mode, Overlength, Vocabulary,
};
use crate::descriptors::{extract_descriptors, ClassDescriptorSet, ExtractOptions, DEFAULT_MIN_DOC_FREQ};
use crate::error::{Error, Result};
use crate::metrics::{select_threshold, EvaluationReport};
use crate::model::{
    encode_corpus, file_digest, history_csv, parse_line, Checkpoint, Classifier, DualChannelModel, ModelConfig,
};
use crate::numerics::inject_adjoint_fault;
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INCOMPATIBLE: i32 = 4;

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) => EXIT_NUMERICAL,
        Error::Incompatible(_) | Error::Shape { .. } => EXIT_INCOMPATIBLE,
        _ => EXIT_INPUT,
    }
}

/// Everything a command needs: the model hyper-parameters plus data and
/// artifact locations. Unset artifact paths default to files inside
/// `out_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Label names in output order.
    pub labels: Vec<String>,
    pub format: Format,
    pub train: Option<PathBuf>,
    /// Validation file; when unset, `validation_fraction` of the training
    /// file is held out.
    pub validation: Option<PathBuf>,
    pub validation_fraction: f64,
    pub test: Option<PathBuf>,
    /// Pretrained `token v1 … vd` embedding file.
    pub embedding: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub descriptors: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub threshold_file: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub overlength: Overlength,
    pub min_doc_freq: usize,
    /// Words per class printed by `extract-descriptors`.
    pub preview: usize,
    /// Let `train` extract descriptors when the files are missing.
    pub auto_extract: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            labels: Vec::new(),
            format: Format::Csv,
            train: None,
            validation: None,
            validation_fraction: 0.1,
            test: None,
            embedding: None,
            vocab: None,
            descriptors: None,
            checkpoint: None,
            threshold_file: None,
            out_dir: PathBuf::from("out"),
            overlength: Overlength::Truncate,
            min_doc_freq: DEFAULT_MIN_DOC_FREQ,
            preview: 10,
            auto_extract: true,
        }
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key} = {value}: {e}")))
}

impl RunConfig {
    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        match key {
            "labels" => {
                self.labels = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "format" => self.format = value.parse()?,
            "train" => self.train = opt_path(value),
            "validation" => self.validation = opt_path(value),
            "validation_fraction" => self.validation_fraction = parse_value(key, value)?,
            "test" => self.test = opt_path(value),
            "embedding" => self.embedding = opt_path(value),
            "vocab" => self.vocab = opt_path(value),
            "descriptors" => self.descriptors = opt_path(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "threshold_file" => self.threshold_file = opt_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "overlength" => self.overlength = value.parse()?,
            "min_doc_freq" => self.min_doc_freq = parse_value(key, value)?,
            "preview" => self.preview = parse_value(key, value)?,
            "auto_extract" => self.auto_extract = parse_value(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let Some(kv) = parse_line(line) else { continue };
            let (k, v) = kv.map_err(|m| Error::parse(origin, n + 1, m))?;
            self.set(k, v).map_err(|e| Error::parse(origin, n + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.vocab.clone().unwrap_or_else(|| self.out_dir.join("vocab.tsv"))
    }

    pub fn descriptors_path(&self) -> PathBuf {
        self.descriptors
            .clone()
            .unwrap_or_else(|| self.out_dir.join("descriptors.tsv"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn threshold_path(&self) -> PathBuf {
        self.threshold_file
            .clone()
            .unwrap_or_else(|| self.out_dir.join("threshold.txt"))
    }

    /// Every key with its effective value, model keys first.
    pub fn to_text(&self) -> String {
        let mut s = self.model.to_text();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("labels", self.labels.join(","));
        put("format", self.format.to_string());
        put("train", show(&self.train));
        put("validation", show(&self.validation));
        put("validation_fraction", self.validation_fraction.to_string());
        put("test", show(&self.test));
        put("embedding", show(&self.embedding));
        put("vocab", self.vocab_path().display().to_string());
        put("descriptors", self.descriptors_path().display().to_string());
        put("checkpoint", self.checkpoint_path().display().to_string());
        put("threshold_file", self.threshold_path().display().to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("overlength", self.overlength.to_string());
        put("min_doc_freq", self.min_doc_freq.to_string());
        put("preview", self.preview.to_string());
        put("auto_extract", self.auto_extract.to_string());
        s
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        if self.labels.is_empty() {
            return Err(Error::InvalidArgument(
                "no labels configured; set `labels = a,b,c` in the config file".into(),
            ));
        }
        LabelSpace::new(self.labels.iter().cloned(), self.model.mode)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dualdesc",
    version,
    about = "Dual-channel text classifier with statistical class descriptors"
)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Shared {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's `out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Overrides any config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank per-class descriptor words on the training split.
    ExtractDescriptors,
    /// Train a model; writes the checkpoint, history and (multi-label) threshold.
    Train,
    /// Evaluate a checkpoint on labelled data.
    Evaluate {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Labelled data; defaults to the config's `test`.
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
    },
    /// Classify raw texts; one output line per input.
    Predict {
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Text to classify; repeatable.
        #[arg(long)]
        text: Vec<String>,
        /// File with one text per line (`-` for standard input).
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Multi-label decision threshold; defaults to the threshold file.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run the built-in verification suite.
    Verify {
        #[arg(long, hide = true, value_name = "OP")]
        inject_fault: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ExtractDescriptors => "extract-descriptors",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Predict { .. } => "predict",
            Command::Verify { .. } => "verify",
        }
    }
}

fn keys_help() -> String {
    let mut s = String::from("Config keys and defaults (config file or --set KEY=VALUE):\n");
    for line in RunConfig::default().to_text().lines() {
        let _ = writeln!(s, "  {line}");
    }
    s.push_str("\nEmpty values mean unset; unset artifact paths live in out_dir.\n");
    s.push_str(
        "Exit codes: 0 ok, 1 verification failure, 2 input error, 3 numerical failure, 4 incompatible artifact.",
    );
    s
}

fn effective_config(shared: &Shared) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &shared.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    for o in &shared.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{o}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = shared.seed {
        cfg.model.seed = seed;
    }
    if let Some(dir) = &shared.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn prepare_out_dir(cfg: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_file(&cfg.out_dir.join(format!("{command}.conf")), &cfg.to_text())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let matches = match Cli::command().after_long_help(keys_help()).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if e.use_stderr() => {
            let _ = write!(err, "{}", e.render());
            return EXIT_INPUT;
        }
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return EXIT_INPUT;
        }
    };
    let name = cli.command.name();
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "dualdesc {name}: error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let cfg = effective_config(&cli.shared)?;
    match cli.command {
        Command::ExtractDescriptors => cmd_extract_descriptors(&cfg, out),
        Command::Train => cmd_train(&cfg, out, err),
        Command::Evaluate { checkpoint, data } => cmd_evaluate(&cfg, checkpoint, data, out),
        Command::Predict {
            checkpoint,
            text,
            input,
            threshold,
        } => cmd_predict(&cfg, checkpoint, text, input, threshold, out),
        Command::Verify { inject_fault } => {
            cmd_verify(&cfg, inject_fault.as_deref(), cli.shared.out_dir.is_some(), out)
        }
    }
}

fn io_err(e: io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Training and validation documents. Without a validation file a seeded
/// `validation_fraction` holdout of the training file is used, so that
/// descriptors and vocabulary only ever see the training portion.
fn training_split(cfg: &RunConfig, space: &LabelSpace) -> Result<(Vec<Document>, Vec<Document>)> {
    let path = cfg
        .train
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no training data; set `train = <file>`".into()))?;
    let docs = load_dataset(path, cfg.format, space)?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (train, val) = match &cfg.validation {
        Some(vpath) => (docs, load_dataset(vpath, cfg.format, space)?),
        None => {
            let mut order: Vec<usize> = (0..docs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.model.seed ^ 0x7661_6c69));
            let n_val = ((docs.len() as f64 * cfg.validation_fraction).floor() as usize).max(1);
            if n_val >= docs.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} training documents are too few for a validation holdout",
                    docs.len()
                )));
            }
            let mut is_val = vec![false; docs.len()];
            order[..n_val].iter().for_each(|&i| is_val[i] = true);
            let (mut train, mut val) = (Vec::new(), Vec::new());
            for (doc, v) in docs.into_iter().zip(is_val) {
                if v {
                    val.push(doc)
                } else {
                    train.push(doc)
                }
            }
            (train, val)
        }
    };
    Ok((apply_overlength(train, cfg.model.text_length, cfg.overlength), val))
}

fn extract(cfg: &RunConfig, train: &[Document], space: &LabelSpace) -> Result<(Vocabulary, ClassDescriptorSet)> {
    let vocab = build_vocabulary(train, cfg.model.vocabulary_max)?;
    let mut options = ExtractOptions::new(cfg.model.descriptor_test, cfg.model.descriptor_dimension);
    options.min_doc_freq = cfg.min_doc_freq;
    let set = extract_descriptors(train, &vocab, space, options)?;
    vocab.save(&cfg.vocab_path())?;
    set.save(&cfg.descriptors_path())?;
    Ok((vocab, set))
}

fn cmd_extract_descriptors(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let space = cfg.label_space()?;
    let (train, _) = training_split(cfg, &space)?;
    prepare_out_dir(cfg, "extract-descriptors")?;
    let (vocab, set) = extract(cfg, &train, &space)?;
    writeln!(
        out,
        "{} descriptors (n={}) from {} training documents, vocabulary {}",
        set.test,
        set.dimension,
        train.len(),
        vocab.len()
    )
    .map_err(io_err)?;
    for (class, words) in set.preview(cfg.preview) {
        writeln!(out, "{class}\t{}", words.join(", ")).map_err(io_err)?;
    }
    writeln!(
        out,
        "wrote {} and {}",
        cfg.vocab_path().display(),
        cfg.descriptors_path().display()
    )
    .map_err(io_err)?;
    Ok(EXIT_OK)
}

fn check_descriptor_classes(set: &ClassDescriptorSet, space: &LabelSpace, path: &Path) -> Result<()> {
    let names: Vec<&str> = set.classes.iter().map(|c| c.class.as_str()).collect();
    let expected: Vec<&str> = space.names().iter().map(String::as_str).collect();
    if names != expected {
        return Err(Error::Incompatible(format!(
            "{}: descriptor classes {names:?} differ from labels {expected:?}",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let space = cfg.label_space()?;
    let (train, val) = training_split(cfg, &space)?;
    prepare_out_dir(cfg, "train")?;
    let (vocab_path, desc_path) = (cfg.vocab_path(), cfg.descriptors_path());
    let (vocab, descriptors) = if vocab_path.exists() && desc_path.exists() {
        (Vocabulary::load(&vocab_path)?, ClassDescriptorSet::load(&desc_path)?)
    } else if cfg.auto_extract {
        let _ = writeln!(err, "extracting descriptors into {}", cfg.out_dir.display());
        extract(cfg, &train, &space)?
    } else {
        return Err(Error::InvalidArgument(format!(
            "{} or {} missing; run `dualdesc extract-descriptors` or set auto_extract = true",
            vocab_path.display(),
            desc_path.display()
        )));
    };
    check_descriptor_classes(&descriptors, &space, &desc_path)?;
    let enc = |d: &[Document]| encode_corpus(d, &space, &vocab, &descriptors, &cfg.model);
    let (train_x, val_x) = (enc(&train), enc(&val));

    let mut model = DualChannelModel::<f32>::new(cfg.model.clone(), space.clone(), vocab.len())?;
    if let Some(path) = &cfg.embedding {
        let text = model.text_embedding().clone();
        let replaced = text.load_pretrained(model.params_mut(), &vocab, path)?;
        if !cfg.model.share_embedding {
            let desc = model.descriptor_embedding().clone();
            desc.load_pretrained(model.params_mut(), &vocab, path)?;
        }
        let _ = writeln!(err, "loaded {replaced} pretrained vectors from {}", path.display());
    }
    let _ = writeln!(
        err,
        "training on {} documents, validating on {}",
        train_x.len(),
        val_x.len()
    );
    let report = model.train_with(&train_x, &val_x, |r| {
        let _ = writeln!(
            err,
            "epoch {}\ttrain_loss {:.6}\tval_metric {:.6}",
            r.epoch, r.train_loss, r.val_metric
        );
    })?;

    write_file(&cfg.out_dir.join("history.csv"), &history_csv(&report.history))?;
    let ckpt_path = cfg.checkpoint_path();
    model.save_checkpoint(
        &ckpt_path,
        file_digest(&vocab_path)?,
        file_digest(&desc_path)?,
        report.best_epoch as u32,
        report.best_metric,
    )?;
    writeln!(
        out,
        "best epoch {} of {} (val_metric {:.6}); checkpoint {}",
        report.best_epoch,
        report.history.len(),
        report.best_metric,
        ckpt_path.display()
    )
    .map_err(io_err)?;
    if space.mode() == Mode::MultiLabel {
        let probs = model.predict_proba(&val_x)?;
        let gold: Vec<BTreeSet<usize>> = val.iter().map(|d| d.labels.clone()).collect();
        let t = select_threshold(&probs, &gold)?;
        write_file(&cfg.threshold_path(), &format!("{t:.2}\n"))?;
        writeln!(out, "threshold {t:.2} written to {}", cfg.threshold_path().display()).map_err(io_err)?;
    }
    Ok(EXIT_OK)
}

/// Loads the checkpoint and the vocabulary/descriptor files it was trained
/// with, refusing files whose hashes differ.
fn load_classifier(cfg: &RunConfig, checkpoint: Option<PathBuf>) -> Result<(Classifier, Checkpoint)> {
    let ckpt_path = checkpoint.unwrap_or_else(|| cfg.checkpoint_path());
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let (vocab_path, desc_path) = (cfg.vocab_path(), cfg.descriptors_path());
    for (path, expected, what) in [
        (&vocab_path, ckpt.vocab_digest, "vocabulary"),
        (&desc_path, ckpt.descriptor_digest, "descriptor"),
    ] {
        if file_digest(path)? != expected {
            return Err(Error::Incompatible(format!(
                "{what} file {} does not match the one {} was trained with",
                path.display(),
                ckpt_path.display()
            )));
        }
    }
    let vocab = Vocabulary::load(&vocab_path)?;
    let descriptors = ClassDescriptorSet::load(&desc_path)?;
    let model = DualChannelModel::<f32>::from_checkpoint(&ckpt)?;
    Ok((
        Classifier {
            model,
            vocab,
            descriptors,
            threshold: None,
        },
        ckpt,
    ))
}

fn read_threshold(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let t: f64 = text
        .trim()
        .parse()
        .map_err(|e| Error::parse(path, 1, format!("threshold: {e}")))?;
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::parse(path, 1, format!("threshold {t} outside (0, 1)")));
    }
    Ok(t)
}

fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32> {
    let data = data
        .or_else(|| cfg.test.clone())
        .ok_or_else(|| Error::InvalidArgument("no evaluation data; pass --data or set `test = <file>`".into()))?;
    let (clf, _) = load_classifier(cfg, checkpoint)?;
    let space = clf.model.labels().clone();
    let threshold = match space.mode() {
        Mode::MultiClass => None,
        Mode::MultiLabel => {
            let path = cfg.threshold_path();
            if !path.exists() {
                return Err(Error::InvalidArgument(format!(
                    "multi-label evaluation needs a threshold file, {} not found; run `dualdesc train` \
                     with this out_dir or set `threshold_file = <file>`",
                    path.display()
                )));
            }
            Some(read_threshold(&path)?)
        }
    };
    let docs = load_dataset(&data, cfg.format, &space)?;
    let examples = encode_corpus(&docs, &space, &clf.vocab, &clf.descriptors, clf.model.config());
    let probs = clf.model.predict_proba(&examples)?;
    let gold: Vec<BTreeSet<usize>> = docs.iter().map(|d| d.labels.clone()).collect();
    let report = EvaluationReport::from_probabilities(&space, &probs, &gold, threshold)?;
    prepare_out_dir(cfg, "evaluate")?;
    let tsv = report.to_tsv();
    write_file(&cfg.out_dir.join("report.tsv"), &tsv)?;
    write_file(&cfg.out_dir.join("report.json"), &report.to_json())?;
    out.write_all(tsv.as_bytes()).map_err(io_err)?;
    Ok(EXIT_OK)
}

fn cmd_predict(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    mut texts: Vec<String>,
    input: Option<PathBuf>,
    threshold: Option<f64>,
    out: &mut dyn Write,
) -> Result<i32> {
    let (mut clf, _) = load_classifier(cfg, checkpoint)?;
    if clf.model.labels().mode() == Mode::MultiLabel {
        clf.threshold = Some(match threshold {
            Some(t) if t > 0.0 && t < 1.0 => t,
            Some(t) => return Err(Error::InvalidArgument(format!("--threshold {t} outside (0, 1)"))),
            None => read_threshold(&cfg.threshold_path())
                .map_err(|e| Error::InvalidArgument(format!("{e}; pass --threshold or train with this out_dir")))?,
        });
    }
    if let Some(path) = input {
        let lines: Vec<String> = if path.as_os_str() == "-" {
            io::stdin()
                .lock()
                .lines()
                .collect::<io::Result<_>>()
                .map_err(|e| Error::io("<stdin>", e))?
        } else {
            fs::read_to_string(&path)
                .map_err(|e| Error::io(&path, e))?
                .lines()
                .map(String::from)
                .collect()
        };
        texts.extend(lines);
    }
    if texts.is_empty() {
        return Err(Error::InvalidArgument(
            "nothing to classify; pass --text or --input".into(),
        ));
    }
    let space = clf.model.labels().clone();
    for p in clf.predict_texts(&texts)? {
        let labels: Vec<&str> = p.labels.iter().map(|&l| space.name(l)).collect();
        let mut line = labels.join("|");
        for (c, prob) in p.probabilities.iter().enumerate() {
            let _ = write!(line, "\t{}={prob:.6}", space.name(c));
        }
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &RunConfig, fault: Option<&str>, write_report: bool, out: &mut dyn Write) -> Result<i32> {
    inject_adjoint_fault(fault);
    let outcomes = verify::run_suite(cfg.model.seed);
    inject_adjoint_fault(None);
    let mut report = String::new();
    for o in &outcomes {
        let _ = writeln!(report, "{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let _ = writeln!(
        report,
        "{} checks, {} passed, {failed} failed",
        outcomes.len(),
        outcomes.len() - failed
    );
    out.write_all(report.as_bytes()).map_err(io_err)?;
    if write_report {
        prepare_out_dir(cfg, "verify")?;
        write_file(&cfg.out_dir.join("verify.tsv"), &report)?;
    }
    Ok(if failed == 0 { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips_through_text() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("labels = a, b\ntrain = x.csv\nmode = multi_label\npreview = 3\n", "t")
            .unwrap();
        assert_eq!(cfg.labels, ["a", "b"]);
        let mut again = RunConfig::default();
        again.apply_text(&cfg.to_text(), "echo").unwrap();
        assert_eq!(again.to_text(), cfg.to_text());
        assert_eq!(again.model.mode, Mode::MultiLabel);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = RunConfig::default()
            .apply_text("\n# c\nbogus = 1\n", "cfg.txt")
            .unwrap_err();
        assert_eq!(
            err.to_string(),
            "cfg.txt: line 3: invalid argument: unknown config key 'bogus'"
        );
        assert_eq!(exit_code(&err), EXIT_INPUT);
    }

    #[test]
    fn help_lists_defaults() {
        let help = keys_help();
        assert!(help.contains("gru_units = 128"));
        assert!(help.contains("validation_fraction = 0.1"));
    }
}
