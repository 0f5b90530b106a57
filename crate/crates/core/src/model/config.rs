use std::fmt::Write as _;
use std::str::FromStr;

use crate::corpus::Mode;
use crate::descriptors::TestKind;
use crate::error::{Error, Result};

/// Hyperparameters of the dual-channel classifier.
///
/// Serialized as flat `key = value` lines; see [`ModelConfig::to_text`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    pub d_embed: usize,
    pub gru_units: usize,
    /// Rate for GRU-input and pre-dense dropout.
    pub dropout_rate: f64,
    /// Rate for the fixed per-sequence mask on the recurrent state.
    pub recurrent_dropout_rate: f64,
    /// Apply `dropout_rate` to the embedded GRU inputs.
    pub input_dropout: bool,
    /// Apply `dropout_rate` to the concatenated features before the head.
    pub feature_dropout: bool,
    pub descriptor_test: TestKind,
    pub descriptor_dimension: usize,
    pub text_length: usize,
    /// Descriptor-channel window; `None` follows `text_length`.
    pub descriptor_length: Option<usize>,
    pub vocabulary_max: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub share_embedding: bool,
    pub trainable_embedding: bool,
    /// Feed an all-padding descriptor channel (zero attention context).
    pub ablate_descriptors: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Mode::MultiClass,
            d_embed: 300,
            gru_units: 128,
            dropout_rate: 0.5,
            recurrent_dropout_rate: 0.5,
            input_dropout: true,
            feature_dropout: true,
            descriptor_test: TestKind::Chi2,
            descriptor_dimension: 100,
            text_length: 80,
            descriptor_length: None,
            vocabulary_max: 130_000,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            seed: 42,
            share_embedding: true,
            trainable_embedding: true,
            ablate_descriptors: false,
        }
    }
}

/// Keys accepted by [`ModelConfig::set`], in serialization order.
pub const MODEL_KEYS: &[&str] = &[
    "mode",
    "d_embed",
    "gru_units",
    "dropout_rate",
    "recurrent_dropout_rate",
    "input_dropout",
    "feature_dropout",
    "descriptor_test",
    "descriptor_dimension",
    "text_length",
    "descriptor_length",
    "vocabulary_max",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "share_embedding",
    "trainable_embedding",
    "ablate_descriptors",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key} = {value}: {e}")))
}

/// Splits `key = value`, ignoring blank lines and `#` comments.
pub fn parse_line(line: &str) -> Option<std::result::Result<(&str, &str), String>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    Some(match line.split_once('=') {
        Some((k, v)) => Ok((k.trim(), v.trim())),
        None => Err(format!("expected 'key = value', found '{line}'")),
    })
}

impl ModelConfig {
    pub fn descriptor_len(&self) -> usize {
        self.descriptor_length.unwrap_or(self.text_length)
    }

    /// Sets one key from its text form. Returns `Ok(false)` for keys this
    /// type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "mode" => self.mode = parse(key, value)?,
            "d_embed" => self.d_embed = parse(key, value)?,
            "gru_units" => self.gru_units = parse(key, value)?,
            "dropout_rate" => self.dropout_rate = parse(key, value)?,
            "recurrent_dropout_rate" => self.recurrent_dropout_rate = parse(key, value)?,
            "input_dropout" => self.input_dropout = parse(key, value)?,
            "feature_dropout" => self.feature_dropout = parse(key, value)?,
            "descriptor_test" => self.descriptor_test = parse(key, value)?,
            "descriptor_dimension" => self.descriptor_dimension = parse(key, value)?,
            "text_length" => self.text_length = parse(key, value)?,
            "descriptor_length" => {
                self.descriptor_length = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "vocabulary_max" => self.vocabulary_max = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "share_embedding" => self.share_embedding = parse(key, value)?,
            "trainable_embedding" => self.trainable_embedding = parse(key, value)?,
            "ablate_descriptors" => self.ablate_descriptors = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("d_embed", self.d_embed),
            ("gru_units", self.gru_units),
            ("descriptor_dimension", self.descriptor_dimension),
            ("text_length", self.text_length),
            ("descriptor_length", self.descriptor_len()),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.vocabulary_max < 3 {
            return Err(Error::InvalidArgument("vocabulary_max must be at least 3".into()));
        }
        for (name, r) in [
            ("dropout_rate", self.dropout_rate),
            ("recurrent_dropout_rate", self.recurrent_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("{name} {r} outside [0, 1)")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// One `key = value` line per field, every value explicit.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("mode", self.mode.to_string());
        put("d_embed", self.d_embed.to_string());
        put("gru_units", self.gru_units.to_string());
        put("dropout_rate", self.dropout_rate.to_string());
        put("recurrent_dropout_rate", self.recurrent_dropout_rate.to_string());
        put("input_dropout", self.input_dropout.to_string());
        put("feature_dropout", self.feature_dropout.to_string());
        put("descriptor_test", self.descriptor_test.to_string());
        put("descriptor_dimension", self.descriptor_dimension.to_string());
        put("text_length", self.text_length.to_string());
        put("descriptor_length", self.descriptor_len().to_string());
        put("vocabulary_max", self.vocabulary_max.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("batch_size", self.batch_size.to_string());
        put("max_epochs", self.max_epochs.to_string());
        put("patience", self.patience.to_string());
        put("seed", self.seed.to_string());
        put("share_embedding", self.share_embedding.to_string());
        put("trainable_embedding", self.trainable_embedding.to_string());
        put("ablate_descriptors", self.ablate_descriptors.to_string());
        s
    }

    /// Parses [`ModelConfig::to_text`] output (or any subset of keys over
    /// the defaults). Unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (n, line) in text.lines().enumerate() {
            let Some(kv) = parse_line(line) else { continue };
            let (k, v) = kv.map_err(|m| Error::InvalidArgument(format!("line {}: {m}", n + 1)))?;
            if !cfg.set(k, v)? {
                return Err(Error::InvalidArgument(format!("line {}: unknown key '{k}'", n + 1)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
