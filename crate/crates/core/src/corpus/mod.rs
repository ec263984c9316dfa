//! Log ingestion, normalisation, chronological splits, per-user behaviour
//! histories, training-pair construction and the IE/IT slice labels.

mod examples;
mod history;
mod lexicon;
pub mod logio;
mod split;
pub mod synth;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use examples::{make_examples, Candidate, ExampleConfig, Impression, NegativeSource, TrainingExample};
pub use history::{BehaviorSequence, History, SessionIndex, ViewSpec};
pub use lexicon::{label_ie, label_it, CategoryLexicon};
pub use split::{build_splits, Splits, SplitSpec, Window};
pub use synth::{synth_corpus, PlantedFlags, SynthConfig, SynthCorpus, Taxonomy};
pub use vocab::{tokenize, tokenize_pad, Vocab, PAD, UNK};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    SearchedQuery,
    ClickedItem,
    PurchasedItem,
}

impl BehaviorKind {
    pub const ALL: [BehaviorKind; 3] = [
        BehaviorKind::SearchedQuery,
        BehaviorKind::ClickedItem,
        BehaviorKind::PurchasedItem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorKind::SearchedQuery => "searched_query",
            BehaviorKind::ClickedItem => "clicked_item",
            BehaviorKind::PurchasedItem => "purchased_item",
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown behaviour kind `{s}`"))
    }
}

/// One timestamped user event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub user_id: String,
    pub timestamp: i64,
    pub kind: BehaviorKind,
    pub text: String,
    pub category: Option<String>,
    /// Prefix typed before the query was chosen, when the log recorded it.
    pub prefix: Option<String>,
}

impl LogRecord {
    /// Normalises the text (and prefix) in place; `None` means drop the record.
    pub fn normalized(mut self) -> Option<Self> {
        if self.timestamp <= 0 {
            return None;
        }
        self.text = normalize_query(&self.text)?;
        self.prefix = self.prefix.as_deref().and_then(normalize_query);
        Some(self)
    }
}

/// Lower-cases, strips punctuation and symbols, collapses whitespace.
/// Returns `None` when nothing is left.
pub fn normalize_query(text: &str) -> Option<String> {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    (!out.is_empty()).then_some(out)
}

/// CJK ideographs, kana and hangul are tokenised one character at a time.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_query("LED灯泡!!").as_deref(), Some("led灯泡"));
        assert_eq!(normalize_query("  Men's   Casual ").as_deref(), Some("mens casual"));
        assert_eq!(normalize_query("!!!"), None);
        assert_eq!(normalize_query("a - b"), Some("a b".into()));
        assert_eq!(normalize_query("男士休闲，"), Some("男士休闲".into()));
    }

    #[test]
    fn kinds_parse() {
        for k in BehaviorKind::ALL {
            assert_eq!(k.as_str().parse::<BehaviorKind>().unwrap(), k);
        }
        assert!("browsed".parse::<BehaviorKind>().is_err());
    }
}
