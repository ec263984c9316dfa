use std::collections::BTreeSet;

use qac_core::corpus::{tokenize, CategoryLexicon, History};

/// Elements always kept per view when too few are related to the prefix.
pub const FALLBACK_RECENT: usize = 3;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "of", "on", "or",
    "the", "to", "with",
];

fn content_tokens(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Keeps history elements related to the prefix: sharing a non-stopword
/// token or a lexicon category. A view left with fewer than
/// [`FALLBACK_RECENT`] elements also keeps its most recent ones. Order is
/// preserved.
pub fn filter_history(history: &History, prefix: &str, lexicon: Option<&CategoryLexicon>) -> History {
    let tokens = content_tokens(prefix);
    let cats = lexicon.map(|l| l.categories_of(prefix)).unwrap_or_default();
    let related = |text: &str| {
        let shares_token = !tokens.is_disjoint(&content_tokens(text));
        let shares_cat = match lexicon {
            Some(l) if !cats.is_empty() => !cats.is_disjoint(&l.categories_of(text)),
            _ => false,
        };
        shares_token || shares_cat
    };
    let mut out = history.clone();
    for seq in &mut out.views {
        let n = seq.items.len();
        let mut keep: Vec<bool> = seq.items.iter().map(|t| related(t)).collect();
        if keep.iter().filter(|k| **k).count() < FALLBACK_RECENT {
            for k in keep.iter_mut().skip(n.saturating_sub(FALLBACK_RECENT)) {
                *k = true;
            }
        }
        let mut i = 0;
        seq.items.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let mut j = 0;
        seq.timestamps.retain(|_| {
            j += 1;
            keep[j - 1]
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use qac_core::corpus::{BehaviorKind, BehaviorSequence};

    use super::*;

    fn history(queries: &[&str]) -> History {
        History {
            views: vec![BehaviorSequence {
                kind: BehaviorKind::SearchedQuery,
                items: queries.iter().map(|s| s.to_string()).collect(),
                timestamps: (0..queries.len() as i64).collect(),
            }],
        }
    }

    #[test]
    fn token_overlap_plus_recency_fill() {
        let h = history(&["led lamp", "wool sock", "tent", "rope", "mug"]);
        let f = filter_history(&h, "led", None);
        assert_eq!(f.views[0].items, ["led lamp", "tent", "rope", "mug"]);
        assert_eq!(f.views[0].timestamps, [0, 2, 3, 4]);
    }

    #[test]
    fn small_history_is_kept_whole() {
        let h = history(&["led lamp", "wool sock"]);
        assert_eq!(filter_history(&h, "led", None), h);
    }

    #[test]
    fn no_relation_falls_back_to_three_most_recent() {
        let h = history(&["a1", "b2", "c3", "d4", "e5"]);
        let f = filter_history(&h, "zzz", None);
        assert_eq!(f.views[0].items, ["c3", "d4", "e5"]);
    }

    #[test]
    fn category_match_counts_as_related() {
        let lex = CategoryLexicon::parse("lamp\tlighting\nbulb\tlighting\ntent\toutdoor\n".as_bytes()).unwrap();
        let h = history(&["bulb pro", "tent", "bulb mini", "x", "y", "lamp set", "z"]);
        let f = filter_history(&h, "lamp c", Some(&lex));
        assert_eq!(f.views[0].items, ["bulb pro", "bulb mini", "lamp set"]);
    }

    #[test]
    fn stopwords_do_not_relate() {
        let h = history(&["the lamp", "of mice", "p", "q", "r"]);
        let f = filter_history(&h, "the", None);
        assert_eq!(f.views[0].items, ["p", "q", "r"]);
    }
}
