//! Candidate generation: most-popular completion over a character trie and
//! maximum-context back-off over query tails.

mod suffix;
mod trie;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use suffix::SuffixIndex;
pub use trie::{CompletionTrie, SNAPSHOT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum MatcherError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported trie snapshot version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt trie snapshot: {0}")]
    Corrupt(String),
}

/// A generated completion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub text: String,
    /// Exact background frequency of `text`; 0 for synthesised candidates.
    pub frequency: u64,
    /// Number of leading context tokens dropped to produce it.
    pub tier: usize,
}

/// Most popular completions of `prefix`, best first.
pub fn mpc_topk(trie: &CompletionTrie, prefix: &str, k: usize) -> Vec<MatchCandidate> {
    trie.top_ids(prefix, k)
        .iter()
        .map(|&id| {
            let (q, f) = trie.query(id);
            MatchCandidate {
                text: q.to_string(),
                frequency: f,
                tier: 0,
            }
        })
        .collect()
}

/// Most popular completions first; when fewer than `k` exist, repeatedly
/// drop the leading context token and complete the remaining suffix from
/// query tails, re-attaching the dropped tokens. Tiers are concatenated in
/// order of retained context length and duplicates are removed.
pub fn mcg_topk(
    index: &SuffixIndex,
    trie: &CompletionTrie,
    prefix: &str,
    k: usize,
) -> Vec<MatchCandidate> {
    let mut out = mpc_topk(trie, prefix, k);
    if out.len() >= k {
        return out;
    }
    let mut seen: HashSet<String> = out.iter().map(|c| c.text.clone()).collect();
    let starts = suffix::token_starts(prefix);
    for (tier, &s) in starts.iter().enumerate().skip(1) {
        let head = prefix[..s].trim_end();
        let context = &prefix[s..];
        for (tail, _) in index.complete(context, trie.k()) {
            let text = format!("{head} {tail}");
            if seen.insert(text.clone()) {
                out.push(MatchCandidate {
                    frequency: trie.frequency(&text).unwrap_or(0),
                    text,
                    tier,
                });
                if out.len() == k {
                    return out;
                }
            }
        }
    }
    out
}

/// Whether the exact query occurs in the background set.
pub fn is_seen(trie: &CompletionTrie, query: &str) -> bool {
    trie.contains(query)
}

/// Trie plus tail index, built once from background frequencies.
#[derive(Clone, Debug)]
pub struct Matcher {
    pub trie: CompletionTrie,
    pub suffixes: SuffixIndex,
}

impl Matcher {
    pub fn new(trie: CompletionTrie) -> Self {
        let suffixes = SuffixIndex::build(&trie);
        Self { trie, suffixes }
    }

    pub fn build(background: impl IntoIterator<Item = (String, u64)>, k: usize) -> Self {
        Self::new(CompletionTrie::build(background, k))
    }

    pub fn mpc(&self, prefix: &str, k: usize) -> Vec<MatchCandidate> {
        mpc_topk(&self.trie, prefix, k)
    }

    pub fn mcg(&self, prefix: &str, k: usize) -> Vec<MatchCandidate> {
        mcg_topk(&self.suffixes, &self.trie, prefix, k)
    }

    pub fn is_seen(&self, query: &str) -> bool {
        is_seen(&self.trie, query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg(pairs: &[(&str, u64)]) -> CompletionTrie {
        CompletionTrie::build(pairs.iter().map(|(q, f)| (q.to_string(), *f)), 64)
    }

    fn texts(c: &[MatchCandidate]) -> Vec<&str> {
        c.iter().map(|c| c.text.as_str()).collect()
    }

    #[test]
    fn frequency_then_lexicographic() {
        let t = bg(&[("abc", 2), ("abd", 1)]);
        assert_eq!(texts(&mpc_topk(&t, "ab", 2)), ["abc", "abd"]);
        let t = bg(&[("abd", 1), ("abc", 1)]);
        assert_eq!(texts(&mpc_topk(&t, "ab", 2)), ["abc", "abd"]);
        assert!(mpc_topk(&t, "x", 2).is_empty());
        let empty = bg(&[]);
        assert!(mpc_topk(&empty, "", 5).is_empty());
        assert!(empty.is_empty());
    }

    #[test]
    fn seen_is_exact() {
        let t = bg(&[("led bulb", 5)]);
        assert!(is_seen(&t, "led bulb"));
        assert!(!is_seen(&t, "led bulbs"));
        assert!(!is_seen(&t, "led"));
    }

    #[test]
    fn backoff_reattaches_dropped_tokens() {
        let t = bg(&[("x yak", 5), ("x yam", 3), ("q x yes", 2), ("w z", 1)]);
        let idx = SuffixIndex::build(&t);
        let got = mcg_topk(&idx, &t, "w x y", 10);
        assert_eq!(texts(&got), ["w x yak", "w x yam", "w x yes"]);
        assert!(got.iter().all(|c| c.tier == 1 && c.frequency == 0));
        // full prefix already covered: identical to MPC
        let full = mcg_topk(&idx, &t, "x y", 2);
        assert_eq!(full, mpc_topk(&t, "x y", 2));
    }

    #[test]
    fn backoff_falls_through_tiers_without_duplicates() {
        let t = bg(&[("a b cat", 4), ("b cow", 3), ("cup", 2), ("a b cup", 1)]);
        let idx = SuffixIndex::build(&t);
        let got = mcg_topk(&idx, &t, "a b c", 10);
        // tier 0: a b cat, a b cup; tier 1 ("b c"): b cow -> "a b cow";
        // tier 2 ("c"): cat, cup, cow -> "a b cat"/"a b cup"/"a b cow" dedup
        assert_eq!(texts(&got), ["a b cat", "a b cup", "a b cow"]);
        assert_eq!(got[2].tier, 1);
    }

    #[test]
    fn snapshot_round_trip_and_version_check() {
        let t = bg(&[("lamp cheap", 9), ("lamp mini", 4), ("lego", 4), ("灯泡", 2)]);
        let mut buf = Vec::new();
        t.write_snapshot(&mut buf).unwrap();
        let back = CompletionTrie::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        buf[8] = 99;
        assert!(matches!(
            CompletionTrie::read_snapshot(buf.as_slice()),
            Err(MatcherError::Version { found: 99, .. })
        ));
    }
}
