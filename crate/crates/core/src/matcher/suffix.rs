use std::collections::HashMap;

use super::CompletionTrie;

/// Token-boundary tails of background queries, for completing a context
/// whose leading tokens were dropped.
///
/// Every tail `t_s … t_m` (including the full query) is stored in its own
/// completion trie, weighted by the summed frequency of the background
/// queries that end with it.
#[derive(Clone, Debug)]
pub struct SuffixIndex {
    tails: CompletionTrie,
    sources: HashMap<String, Vec<u32>>,
}

/// Byte offsets at which a token starts.
pub(crate) fn token_starts(text: &str) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut prev_space = true;
    for (i, c) in text.char_indices() {
        if c == ' ' {
            prev_space = true;
        } else {
            if prev_space {
                starts.push(i);
            }
            prev_space = false;
        }
    }
    starts
}

impl SuffixIndex {
    pub fn build(trie: &CompletionTrie) -> Self {
        let mut weights: HashMap<String, u64> = HashMap::new();
        let mut sources: HashMap<String, Vec<u32>> = HashMap::new();
        for id in 0..trie.len() as u32 {
            let (q, f) = trie.query(id);
            for s in token_starts(q) {
                let tail = &q[s..];
                *weights.entry(tail.to_string()).or_default() += f;
                sources.entry(tail.to_string()).or_default().push(id);
            }
        }
        Self {
            tails: CompletionTrie::build(weights, trie.k()),
            sources,
        }
    }

    pub fn tails(&self) -> &CompletionTrie {
        &self.tails
    }

    /// Background query ids ending with `tail`.
    pub fn sources(&self, tail: &str) -> &[u32] {
        self.sources.get(tail).map_or(&[], Vec::as_slice)
    }

    /// Best-weighted tails starting with `context`.
    pub fn complete(&self, context: &str, k: usize) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.tails
            .top_ids(context, k)
            .iter()
            .map(move |&id| self.tails.query(id))
    }
}
