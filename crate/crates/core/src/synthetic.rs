//! Seeded corpus generators for tests, examples and benchmarks.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, LabelSpace, Mode};
use crate::error::Result;

/// Marker token of class `c` in [`marker_corpus`].
pub fn marker_token(c: usize) -> String {
    format!("marker{}", (b'a' + c as u8) as char)
}

/// Noise token `i` shared by all classes.
pub fn noise_token(i: usize) -> String {
    format!("noise{i}")
}

/// Multi-class corpus in which every document of class `c` contains the
/// single token [`marker_token`]`(c)` once, mixed with 3–12 tokens drawn
/// uniformly from `noise_vocab` noise tokens. Documents are interleaved by
/// class.
pub fn marker_corpus(
    classes: usize,
    docs_per_class: usize,
    noise_vocab: usize,
    seed: u64,
) -> Result<(LabelSpace, Vec<Document>)> {
    let names: Vec<String> = (0..classes).map(|c| format!("class{c}")).collect();
    let space = LabelSpace::new(names, Mode::MultiClass)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(classes * docs_per_class);
    for i in 0..docs_per_class {
        for c in 0..classes {
            let n = rng.gen_range(3..=12);
            let mut tokens: Vec<String> = (0..n).map(|_| noise_token(rng.gen_range(0..noise_vocab))).collect();
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, marker_token(c));
            docs.push(Document::new(
                i * classes + c,
                tokens.join(" "),
                BTreeSet::from([c]),
                &space,
            )?);
        }
    }
    Ok((space, docs))
}

/// The separable two-class corpus: 200 documents, each holding its class
/// marker plus noise.
pub fn separable_corpus(seed: u64) -> Result<(LabelSpace, Vec<Document>)> {
    marker_corpus(2, 100, 50, seed)
}

/// Multi-label variant: each document carries 1–2 of `classes` labels and
/// the markers of exactly those labels.
pub fn multilabel_marker_corpus(classes: usize, docs: usize, seed: u64) -> Result<(LabelSpace, Vec<Document>)> {
    let names: Vec<String> = (0..classes).map(|c| format!("label{c}")).collect();
    let space = LabelSpace::new(names, Mode::MultiLabel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(docs);
    for i in 0..docs {
        let mut labels = BTreeSet::new();
        labels.insert(rng.gen_range(0..classes));
        if rng.gen_bool(0.4) {
            labels.insert(rng.gen_range(0..classes));
        }
        let n = rng.gen_range(3..=10);
        let mut tokens: Vec<String> = (0..n).map(|_| noise_token(rng.gen_range(0..40))).collect();
        for &l in &labels {
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, marker_token(l));
        }
        out.push(Document::new(i, tokens.join(" "), labels, &space)?);
    }
    Ok((space, out))
}

/// Parameters of [`buried_signal_corpus`].
#[derive(Debug, Clone)]
pub struct BuriedSignal {
    pub classes: usize,
    pub docs: usize,
    /// Weak signal words per class.
    pub signal_words: usize,
    /// Signal occurrences per document, all placed after `window`.
    pub signal_per_doc: usize,
    /// Probability that a signal occurrence comes from a wrong class.
    pub confusion: f64,
    /// Leading noise-only prefix (the text-channel window).
    pub window: usize,
    pub length: usize,
    pub noise_vocab: usize,
}

impl Default for BuriedSignal {
    fn default() -> Self {
        BuriedSignal {
            classes: 2,
            docs: 800,
            signal_words: 120,
            signal_per_doc: 3,
            confusion: 0.2,
            window: 20,
            length: 60,
            noise_vocab: 400,
        }
    }
}

/// Signal word `w` of class `c` in [`buried_signal_corpus`].
pub fn signal_token(c: usize, w: usize) -> String {
    format!("sig{}x{w}", (b'a' + c as u8) as char)
}

/// Documents whose first `window` tokens are pure noise and whose few
/// class-signal words occur only later, each drawn uniformly from that
/// class's `signal_words` (or, with probability `confusion`, another
/// class's). Only a model that sees past the window — i.e. through the
/// descriptor channel — can use the signal, and covering more of the
/// signal vocabulary with descriptors helps.
pub fn buried_signal_corpus(task: &BuriedSignal, seed: u64) -> Result<(LabelSpace, Vec<Document>)> {
    let names: Vec<String> = (0..task.classes).map(|c| format!("class{c}")).collect();
    let space = LabelSpace::new(names, Mode::MultiClass)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(task.docs);
    for i in 0..task.docs {
        let c = i % task.classes;
        let mut tokens: Vec<String> = (0..task.length)
            .map(|_| noise_token(rng.gen_range(0..task.noise_vocab)))
            .collect();
        let mut slots: Vec<usize> = (task.window..task.length).collect();
        slots.shuffle(&mut rng);
        for &slot in slots.iter().take(task.signal_per_doc) {
            let source = if task.classes > 1 && rng.gen_bool(task.confusion) {
                (c + rng.gen_range(1..task.classes)) % task.classes
            } else {
                c
            };
            tokens[slot] = signal_token(source, rng.gen_range(0..task.signal_words));
        }
        docs.push(Document::new(i, tokens.join(" "), BTreeSet::from([c]), &space)?);
    }
    Ok((space, docs))
}

/// Topic vocabularies of the news-style generator.
pub const NEWS_TOPICS: [(&str, &[&str]); 4] = [
    (
        "World",
        &[
            "minister",
            "president",
            "government",
            "election",
            "military",
            "troops",
            "iraq",
            "killed",
            "nuclear",
            "talks",
            "police",
            "rebels",
            "peace",
            "prime",
            "leader",
            "capital",
            "border",
            "parliament",
            "attack",
            "officials",
            "un",
            "united",
            "nations",
            "war",
            "palestinian",
            "israel",
            "iran",
            "forces",
            "embassy",
            "opposition",
            "vote",
            "crisis",
            "refugees",
            "ceasefire",
            "summit",
            "diplomat",
            "sanctions",
            "protest",
            "bomb",
            "soldiers",
            "hostage",
            "regime",
            "treaty",
            "foreign",
        ],
    ),
    (
        "Sports",
        &[
            "season",
            "league",
            "team",
            "game",
            "coach",
            "win",
            "victory",
            "cup",
            "championship",
            "players",
            "scored",
            "match",
            "olympic",
            "football",
            "baseball",
            "tournament",
            "final",
            "quarterback",
            "playoffs",
            "inning",
            "goal",
            "striker",
            "medal",
            "racing",
            "tennis",
            "golf",
            "rookie",
            "defense",
            "injury",
            "stadium",
            "fans",
            "titles",
            "semifinal",
            "seeded",
            "homer",
            "pitcher",
            "basketball",
            "hockey",
            "soccer",
            "lap",
            "draft",
            "roster",
            "touchdown",
            "champion",
        ],
    ),
    (
        "Business",
        &[
            "company",
            "shares",
            "profit",
            "oil",
            "prices",
            "stocks",
            "market",
            "sales",
            "billion",
            "percent",
            "quarter",
            "earnings",
            "investors",
            "bank",
            "economy",
            "dollar",
            "deal",
            "merger",
            "analysts",
            "revenue",
            "retail",
            "growth",
            "inflation",
            "fed",
            "rates",
            "ceo",
            "firm",
            "bid",
            "acquire",
            "crude",
            "exports",
            "trade",
            "jobs",
            "airline",
            "debt",
            "bonds",
            "fiscal",
            "forecast",
            "wall",
            "street",
            "insurer",
            "tariff",
            "dividend",
            "layoffs",
        ],
    ),
    (
        "Sci/Tech",
        &[
            "software",
            "microsoft",
            "internet",
            "computer",
            "technology",
            "users",
            "web",
            "search",
            "google",
            "space",
            "scientists",
            "research",
            "wireless",
            "linux",
            "windows",
            "online",
            "network",
            "chip",
            "intel",
            "phone",
            "mobile",
            "digital",
            "nasa",
            "data",
            "virus",
            "security",
            "browser",
            "apple",
            "version",
            "launch",
            "researchers",
            "study",
            "species",
            "broadband",
            "server",
            "spam",
            "desktop",
            "processor",
            "satellite",
            "genome",
            "robot",
            "download",
            "hackers",
            "telescope",
        ],
    ),
];

/// Settings of [`news_corpus`].
#[derive(Debug, Clone)]
pub struct NewsStyle {
    pub docs_per_class: usize,
    /// Chance that a token is topical rather than background.
    pub topical_rate: f64,
    /// Chance that a topical token is borrowed from another topic.
    pub leakage: f64,
    pub background_vocab: usize,
    /// Median document length in tokens (lengths are log-normal).
    pub median_length: f64,
}

impl Default for NewsStyle {
    fn default() -> Self {
        NewsStyle {
            docs_per_class: 2500,
            topical_rate: 0.12,
            leakage: 0.3,
            background_vocab: 3000,
            median_length: 40.0,
        }
    }
}

fn background_word(i: usize) -> String {
    const SYL: [&str; 16] = [
        "ba", "ke", "ri", "so", "tu", "la", "mo", "ne", "pi", "da", "go", "vu", "ze", "fa", "hi", "ca",
    ];
    let (a, b, c) = (i % 16, (i / 16) % 16, i / 256);
    format!(
        "{}{}{}",
        SYL[a],
        SYL[b],
        if c == 0 {
            String::new()
        } else {
            SYL[c % 16].to_string() + &(c / 16).to_string()
        }
    )
}

fn zipf_weights(n: usize, exponent: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / (r as f64).powf(exponent))).expect("non-empty")
}

/// Four-topic, AG-News-shaped corpus: each token is background (Zipfian
/// over pseudo-words) or, with `topical_rate`, drawn from a topic
/// vocabulary — the document's own topic, or another one with probability
/// `leakage`. Document order is shuffled.
pub fn news_corpus(style: &NewsStyle, seed: u64) -> Result<(LabelSpace, Vec<Document>)> {
    let space = LabelSpace::new(NEWS_TOPICS.iter().map(|t| t.0), Mode::MultiClass)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = zipf_weights(style.background_vocab, 1.0);
    let topical: Vec<WeightedIndex<f64>> = NEWS_TOPICS.iter().map(|t| zipf_weights(t.1.len(), 0.7)).collect();
    let mut labels: Vec<usize> = (0..4)
        .flat_map(|c| std::iter::repeat_n(c, style.docs_per_class))
        .collect();
    labels.shuffle(&mut rng);
    let mut docs = Vec::with_capacity(labels.len());
    for (i, &c) in labels.iter().enumerate() {
        // Box–Muller normal for a log-normal length with σ = 0.5.
        let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        let len = ((style.median_length.ln() + 0.5 * z).exp().round() as usize).clamp(6, 200);
        let tokens: Vec<String> = (0..len)
            .map(|_| {
                if rng.gen_bool(style.topical_rate) {
                    let topic = if rng.gen_bool(style.leakage) {
                        rng.gen_range(0..4)
                    } else {
                        c
                    };
                    NEWS_TOPICS[topic].1[topical[topic].sample(&mut rng)].to_string()
                } else {
                    background_word(background.sample(&mut rng))
                }
            })
            .collect();
        docs.push(Document::new(i, tokens.join(" "), BTreeSet::from([c]), &space)?);
    }
    Ok((space, docs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::preprocess_text;

    #[test]
    fn marker_corpus_shape() {
        let (space, docs) = marker_corpus(3, 10, 50, 1).unwrap();
        assert_eq!(space.len(), 3);
        assert_eq!(docs.len(), 30);
        for d in &docs {
            let m = marker_token(d.class());
            assert_eq!(d.tokens.iter().filter(|t| **t == m).count(), 1);
            assert!(d.tokens.iter().all(|t| *t == m || t.starts_with("noise")));
        }
    }

    #[test]
    fn generated_tokens_survive_preprocessing() {
        for t in [
            marker_token(3),
            noise_token(17),
            signal_token(1, 99),
            background_word(4000),
        ] {
            assert_eq!(preprocess_text(&t), vec![t.clone()]);
        }
        for (_, words) in NEWS_TOPICS {
            for w in words {
                assert_eq!(preprocess_text(w), vec![w.to_string()], "{w}");
            }
        }
    }

    #[test]
    fn background_words_are_distinct() {
        let words: BTreeSet<String> = (0..3000).map(background_word).collect();
        assert_eq!(words.len(), 3000);
        let topical: BTreeSet<&str> = NEWS_TOPICS.iter().flat_map(|t| t.1.iter().copied()).collect();
        assert!(words.iter().all(|w| !topical.contains(w.as_str())));
    }

    #[test]
    fn buried_signal_window_is_pure_noise() {
        let task = BuriedSignal {
            docs: 40,
            ..BuriedSignal::default()
        };
        let (_, docs) = buried_signal_corpus(&task, 3).unwrap();
        for d in &docs {
            assert_eq!(d.tokens.len(), task.length);
            assert!(d.tokens[..task.window].iter().all(|t| t.starts_with("noise")));
            assert_eq!(
                d.tokens.iter().filter(|t| t.starts_with("sig")).count(),
                task.signal_per_doc
            );
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let style = NewsStyle {
            docs_per_class: 20,
            ..NewsStyle::default()
        };
        assert_eq!(news_corpus(&style, 5).unwrap().1, news_corpus(&style, 5).unwrap().1);
        assert_ne!(news_corpus(&style, 5).unwrap().1, news_corpus(&style, 6).unwrap().1);
        let (_, docs) = news_corpus(&style, 5).unwrap();
        assert_eq!(docs.len(), 80);
        assert!(docs.iter().all(|d| (6..=200).contains(&d.tokens.len())));
    }
}
