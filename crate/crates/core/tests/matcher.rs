use std::collections::{BTreeMap, HashMap, HashSet};

use proptest::prelude::*;
use qac_core::matcher::{mcg_topk, mpc_topk, CompletionTrie, SuffixIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_background(n: usize, seed: u64) -> BTreeMap<String, u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let syll = ["ka", "lo", "mi", "su", "te", "ra", "no", "bi", "de", "fu"];
    let words: Vec<String> = (0..400)
        .map(|_| (0..rng.gen_range(1..4)).map(|_| syll[rng.gen_range(0..syll.len())]).collect())
        .collect();
    let mut out = BTreeMap::new();
    while out.len() < n {
        let q: Vec<&str> = (0..rng.gen_range(1..5))
            .map(|_| words[rng.gen_range(0..words.len())].as_str())
            .collect();
        let f = 3 + (1000.0 / rng.gen_range(1.0f64..200.0)) as u64;
        out.insert(q.join(" "), f);
    }
    out
}

fn brute_mpc(bg: &BTreeMap<String, u64>, prefix: &str, k: usize) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = bg
        .iter()
        .filter(|(q, _)| q.starts_with(prefix))
        .map(|(q, &f)| (q.clone(), f))
        .collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

#[test]
fn trie_matches_linear_scan_on_1000_prefixes() {
    let bg = random_background(50_000, 1);
    let trie = CompletionTrie::build(bg.iter().map(|(q, &f)| (q.clone(), f)), 64);
    assert!(trie.len() >= 50_000);
    let queries: Vec<&String> = bg.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let prefix: String = if i % 10 == 9 {
            // prefixes absent from the trie
            format!("zz{i}")
        } else {
            let q = queries[rng.gen_range(0..queries.len())];
            let n = rng.gen_range(1..=q.chars().count());
            q.chars().take(n).collect()
        };
        let k = [1, 5, 10, 64][i % 4];
        let got: Vec<(String, u64)> = mpc_topk(&trie, &prefix, k)
            .into_iter()
            .map(|c| (c.text, c.frequency))
            .collect();
        assert_eq!(got, brute_mpc(&bg, &prefix, k), "prefix {prefix:?}");
    }
}

fn token_starts(s: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = ' ';
    for (i, c) in s.char_indices() {
        if c != ' ' && prev == ' ' {
            out.push(i);
        }
        prev = c;
    }
    out
}

/// Tier-by-tier recomputation by scanning every query tail.
fn brute_mcg(bg: &BTreeMap<String, u64>, prefix: &str, k: usize, big_k: usize) -> Vec<String> {
    let mut out: Vec<String> = brute_mpc(bg, prefix, k).into_iter().map(|p| p.0).collect();
    let starts = token_starts(prefix);
    let mut tails: HashMap<String, u64> = HashMap::new();
    for (q, &f) in bg {
        for s in token_starts(q) {
            *tails.entry(q[s..].to_string()).or_default() += f;
        }
    }
    for &s in starts.iter().skip(1) {
        if out.len() >= k {
            break;
        }
        let head = prefix[..s].trim_end();
        let ctx = &prefix[s..];
        let mut tier: Vec<(&String, u64)> =
            tails.iter().filter(|(t, _)| t.starts_with(ctx)).map(|(t, &f)| (t, f)).collect();
        tier.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for (t, _) in tier.into_iter().take(big_k) {
            let cand = format!("{head} {t}");
            if !out.contains(&cand) && out.len() < k {
                out.push(cand);
            }
        }
    }
    out
}

#[test]
fn mcg_matches_suffix_scan() {
    let bg = random_background(3_000, 3);
    let trie = CompletionTrie::build(bg.iter().map(|(q, &f)| (q.clone(), f)), 64);
    let index = SuffixIndex::build(&trie);
    let queries: Vec<&String> = bg.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        // splice an unrelated head onto a real query to force back-off
        let a = queries[rng.gen_range(0..queries.len())];
        let b = queries[rng.gen_range(0..queries.len())];
        let n = rng.gen_range(1..=b.chars().count());
        let tail: String = b.chars().take(n).collect();
        if tail.ends_with(' ') {
            continue;
        }
        let prefix = format!("{a} {tail}");
        let got: Vec<String> = mcg_topk(&index, &trie, &prefix, 10).into_iter().map(|c| c.text).collect();
        assert_eq!(got, brute_mcg(&bg, &prefix, 10, 64), "prefix {prefix:?}");

        let unique: HashSet<&String> = got.iter().collect();
        assert_eq!(unique.len(), got.len());
        let partial = prefix.rsplit(' ').next().unwrap();
        for c in &got {
            assert!(c.split(' ').any(|t| t.starts_with(partial)), "{c:?} vs {partial:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_lists_are_stable_sorted_and_extend_prefix(
        qs in proptest::collection::btree_map("[abc]{1,5}( [abc]{1,3})?", 1u64..20, 1..60),
        prefix in "[abc]{0,3}",
        k in 1usize..12,
        extra in 0usize..8,
    ) {
        let trie = CompletionTrie::build(qs.iter().map(|(q, &f)| (q.clone(), f)), 32);
        let small = mpc_topk(&trie, &prefix, k);
        let large = mpc_topk(&trie, &prefix, k + extra);
        prop_assert_eq!(&large[..small.len()], &small[..]);
        for c in &large {
            prop_assert!(c.text.starts_with(&prefix));
        }
        for w in large.windows(2) {
            prop_assert!(w[0].frequency >= w[1].frequency);
        }
    }
}
