use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize_pad, BehaviorKind, History, LogRecord, SessionIndex, ViewSpec, Vocab};
use crate::matcher::Matcher;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExampleConfig {
    /// Negatives sampled per positive from the prefix's top completions.
    pub neg_per_pos: usize,
    /// How many top completions negatives are drawn from.
    pub candidate_pool: usize,
    pub negatives: NegativeSource,
    /// Simulated keystroke prefixes kept per click when none was logged.
    pub max_prefixes_per_click: usize,
    pub views: Vec<ViewSpec>,
    pub seed: u64,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self {
            neg_per_pos: 4,
            candidate_pool: 10,
            negatives: NegativeSource::Mcg,
            max_prefixes_per_click: 3,
            views: ViewSpec::defaults(),
            seed: 0,
        }
    }
}

/// Where negatives come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Logged completions of the prefix only.
    Trie,
    /// The candidate generator used at serving time: logged completions
    /// first, then suffix-spliced ones.
    Mcg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    /// Background frequency; 0 when unseen.
    pub frequency: u64,
    pub label: bool,
}

impl Candidate {
    /// `log(1 + frequency)`.
    pub fn popularity(&self) -> f64 {
        (self.frequency as f64).ln_1p()
    }
}

/// One typed prefix with the user's history at that moment and the
/// candidates to rank; at most one candidate is the clicked query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub user_id: String,
    pub timestamp: i64,
    pub prefix: String,
    pub clicked: String,
    pub history: History,
    pub candidates: Vec<Candidate>,
}

impl Impression {
    pub fn positive(&self) -> Option<usize> {
        self.candidates.iter().position(|c| c.label)
    }

    /// Flattens into per-candidate examples.
    pub fn examples<'a>(
        &'a self,
        vocab: &'a Vocab,
        views: &'a [ViewSpec],
        query_pad: usize,
        max_prefix_chars: usize,
    ) -> impl Iterator<Item = TrainingExample> + 'a {
        let prefix_chars = vocab.char_ids(&self.prefix, max_prefix_chars);
        let history: Vec<Vec<Vec<u32>>> = self
            .history
            .views
            .iter()
            .zip(views)
            .map(|(seq, spec)| {
                seq.items
                    .iter()
                    .map(|t| tokenize_pad(t, vocab, spec.pad_len))
                    .collect()
            })
            .collect();
        self.candidates.iter().map(move |c| TrainingExample {
            prefix_chars: prefix_chars.clone(),
            candidate_tokens: tokenize_pad(&c.text, vocab, query_pad),
            history: history.clone(),
            popularity: c.popularity(),
            label: u8::from(c.label),
        })
    }
}

/// A single (prefix, candidate, history, popularity, label) instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prefix_chars: Vec<u32>,
    pub candidate_tokens: Vec<u32>,
    /// Per view, per element, padded token ids.
    pub history: Vec<Vec<Vec<u32>>>,
    pub popularity: f64,
    pub label: u8,
}

/// Leading substrings of `query` usable as typed prefixes (never ending in
/// a space), sampled down to at most `max` distinct lengths.
fn simulated_prefixes<R: Rng>(query: &str, max: usize, rng: &mut R) -> Vec<String> {
    let all: Vec<String> = query
        .char_indices()
        .map(|(i, c)| &query[..i + c.len_utf8()])
        .filter(|p| !p.ends_with(' '))
        .map(str::to_string)
        .collect();
    if all.len() <= max {
        return all;
    }
    let mut picked: Vec<usize> = sample(rng, all.len(), max).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i].clone()).collect()
}

/// Builds training impressions: for each searched query in `records` and each
/// logged (or simulated) prefix, the clicked query is the positive and up to
/// `neg_per_pos` other top completions of the prefix are negatives. History
/// holds only events strictly earlier than the click.
pub fn make_examples(
    records: &[LogRecord],
    sessions: &SessionIndex,
    matcher: &Matcher,
    cfg: &ExampleConfig,
) -> Vec<Impression> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.kind == BehaviorKind::SearchedQuery) {
        let prefixes = match &r.prefix {
            Some(p) => vec![p.clone()],
            None => simulated_prefixes(&r.text, cfg.max_prefixes_per_click, &mut rng),
        };
        let history = sessions.history_before(&r.user_id, r.timestamp, &cfg.views);
        for prefix in prefixes {
            let pool: Vec<(String, u64)> = match cfg.negatives {
                NegativeSource::Trie => matcher.mpc(&prefix, cfg.candidate_pool),
                NegativeSource::Mcg => matcher.mcg(&prefix, cfg.candidate_pool),
            }
            .into_iter()
            .filter(|c| c.text != r.text)
            .map(|c| (c.text, c.frequency))
            .collect();
            if pool.is_empty() {
                continue;
            }
            let n = cfg.neg_per_pos.min(pool.len());
            let mut chosen: Vec<usize> = sample(&mut rng, pool.len(), n).into_vec();
            chosen.sort_unstable();
            let mut candidates = vec![Candidate {
                text: r.text.clone(),
                frequency: matcher.trie.frequency(&r.text).unwrap_or(0),
                label: true,
            }];
            candidates.extend(chosen.into_iter().map(|i| Candidate {
                text: pool[i].0.clone(),
                frequency: pool[i].1,
                label: false,
            }));
            out.push(Impression {
                user_id: r.user_id.clone(),
                timestamp: r.timestamp,
                prefix,
                clicked: r.text.clone(),
                history: history.clone(),
                candidates,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::CompletionTrie;

    fn q(user: &str, t: i64, text: &str, prefix: Option<&str>) -> LogRecord {
        LogRecord {
            user_id: user.into(),
            timestamp: t,
            kind: BehaviorKind::SearchedQuery,
            text: text.into(),
            category: None,
            prefix: prefix.map(str::to_string),
        }
    }

    fn trie() -> CompletionTrie {
        CompletionTrie::build(
            [("led lamp", 9), ("led bulb", 5), ("lens", 2)].map(|(a, b)| (a.to_string(), b)),
            64,
        )
    }

    #[test]
    fn positive_and_negatives_from_top_completions() {
        let recs = vec![q("u", 10, "led bulb", Some("le"))];
        let idx = SessionIndex::build(&recs);
        let imps = make_examples(&recs, &idx, &Matcher::new(trie()), &ExampleConfig::default());
        assert_eq!(imps.len(), 1);
        let c: Vec<(&str, bool)> = imps[0]
            .candidates
            .iter()
            .map(|c| (c.text.as_str(), c.label))
            .collect();
        assert_eq!(c, [("led bulb", true), ("led lamp", false), ("lens", false)]);
        // cold start: no earlier events
        assert!(imps[0].history.is_empty());
    }

    #[test]
    fn mcg_negatives_include_spliced_candidates() {
        let recs = vec![q("u", 10, "led bulb", Some("led l"))];
        let t = CompletionTrie::build(
            [("led lamp", 9), ("lens cap", 4)].map(|(a, b)| (a.to_string(), b)),
            64,
        );
        let m = Matcher::new(t);
        let idx = SessionIndex::build(&recs);
        let mcg = make_examples(&recs, &idx, &m, &ExampleConfig::default());
        let texts: Vec<&str> = mcg[0].candidates.iter().map(|c| c.text.as_str()).collect();
        assert!(texts.contains(&"led lens cap"), "{texts:?}");
        let cfg = ExampleConfig {
            negatives: NegativeSource::Trie,
            ..ExampleConfig::default()
        };
        let trie_only = make_examples(&recs, &idx, &m, &cfg);
        let texts: Vec<&str> = trie_only[0].candidates.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["led bulb", "led lamp"]);
    }

    #[test]
    fn full_query_prefix_is_valid() {
        let recs = vec![q("u", 10, "led", Some("led"))];
        let t = CompletionTrie::build(
            [("led", 3), ("led lamp", 9)].map(|(a, b)| (a.to_string(), b)),
            64,
        );
        let imps = make_examples(&recs, &SessionIndex::build(&recs), &Matcher::new(t), &ExampleConfig::default());
        assert!(imps[0].candidates[0].label);
        assert_eq!(imps[0].prefix, "led");
    }

    #[test]
    fn no_candidates_skips() {
        let recs = vec![q("u", 10, "zebra", Some("ze"))];
        let imps = make_examples(&recs, &SessionIndex::build(&recs), &Matcher::new(trie()), &ExampleConfig::default());
        assert!(imps.is_empty());
    }

    #[test]
    fn simulated_prefixes_are_bounded_leading_substrings() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = simulated_prefixes("led bulb", 3, &mut rng);
        assert_eq!(ps.len(), 3);
        for p in &ps {
            assert!("led bulb".starts_with(p.as_str()) && !p.ends_with(' '));
        }
        assert_eq!(simulated_prefixes("ab", 3, &mut rng), ["a", "ab"]);
    }

    #[test]
    fn examples_flatten_with_padding() {
        let recs = vec![q("u", 10, "led bulb", Some("le"))];
        let imps = make_examples(&recs, &SessionIndex::build(&recs), &Matcher::new(trie()), &ExampleConfig::default());
        let vocab = Vocab::build(["led lamp", "led bulb", "lens"]);
        let views = ViewSpec::defaults();
        let ex: Vec<_> = imps[0].examples(&vocab, &views, 8, 20).collect();
        assert_eq!(ex.len(), 3);
        assert_eq!(ex.iter().filter(|e| e.label == 1).count(), 1);
        assert_eq!(ex[0].prefix_chars.len(), 2);
        assert_eq!(ex[0].candidate_tokens.len(), 8);
        assert!((ex[0].popularity - 6f64.ln()).abs() < 1e-12);
        assert_eq!(ex[0].history, vec![Vec::<Vec<u32>>::new(), Vec::new()]);
    }
}
