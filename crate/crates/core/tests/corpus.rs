use std::collections::HashSet;

use qac_core::corpus::{
    build_splits, label_ie, label_it, make_examples, synth_corpus, BehaviorKind, ExampleConfig,
    SessionIndex, SplitSpec, SynthConfig, ViewSpec,
};
use qac_core::matcher::Matcher;

fn cfg(p_transfer: f64, max_visits: usize) -> SynthConfig {
    SynthConfig {
        users: 40,
        min_visits: max_visits.min(5),
        max_visits,
        p_transfer,
        ..SynthConfig::default()
    }
}

#[test]
fn labels_reproduce_planted_flags() {
    for seed in 0..3 {
        let config = cfg(0.5, 40);
        let corpus = synth_corpus(&config, seed).unwrap();
        let lex = config.taxonomy.lexicon().unwrap();
        let sessions = SessionIndex::build(&corpus.records);
        let views = ViewSpec::defaults();
        let mut checked = 0;
        for (r, f) in corpus.records.iter().zip(&corpus.flags) {
            let Some(f) = f else { continue };
            let prefix = r.prefix.as_deref().unwrap();
            let history = sessions.history_before(&r.user_id, r.timestamp, &views);
            assert_eq!(label_ie(prefix, &lex), f.ie, "IE mismatch on {prefix:?}");
            assert_eq!(label_it(prefix, &history, &lex), f.it, "IT mismatch on {prefix:?}");
            checked += 1;
        }
        assert!(checked > 500);
    }
}

#[test]
fn transfer_probability_drives_it_rate() {
    let config = cfg(0.0, 10);
    let corpus = synth_corpus(&config, 11).unwrap();
    let lex = config.taxonomy.lexicon().unwrap();
    let sessions = SessionIndex::build(&corpus.records);
    let views = ViewSpec::defaults();
    let searches: Vec<_> = corpus
        .records
        .iter()
        .filter(|r| r.kind == BehaviorKind::SearchedQuery)
        .collect();
    let it = searches
        .iter()
        .filter(|r| {
            let h = sessions.history_before(&r.user_id, r.timestamp, &views);
            label_it(r.prefix.as_deref().unwrap(), &h, &lex)
        })
        .count();
    assert_eq!(it, 0);

    // few visits keep fresh categories available, so every resolvable
    // transfer prefix with history is an IT impression
    let config = cfg(1.0, 5);
    let corpus = synth_corpus(&config, 12).unwrap();
    let sessions = SessionIndex::build(&corpus.records);
    let mut resolvable = 0;
    for r in corpus.records.iter().filter(|r| r.kind == BehaviorKind::SearchedQuery) {
        let prefix = r.prefix.as_deref().unwrap();
        let h = sessions.history_before(&r.user_id, r.timestamp, &views);
        if !lex.categories_of(prefix).is_empty() && !h.is_empty() {
            resolvable += 1;
            assert!(label_it(prefix, &h, &lex), "{prefix:?}");
        }
    }
    assert!(resolvable > 50);
}

#[test]
fn splits_partition_and_examples_never_see_the_future() {
    let config = cfg(0.5, 30);
    let corpus = synth_corpus(&config, 5).unwrap();
    let start = corpus.records[0].timestamp;
    let end = corpus.records.last().unwrap().timestamp + 1;
    let spec = SplitSpec::proportional(start, end, [0.6, 0.2, 0.1, 0.1]);
    let splits = build_splits(corpus.records.clone(), &spec).unwrap();

    let key = |r: &qac_core::corpus::LogRecord| (r.user_id.clone(), r.timestamp);
    let mut seen = HashSet::new();
    for part in [&splits.background, &splits.train, &splits.valid, &splits.test] {
        for r in part {
            assert!(seen.insert(key(r)), "record in two splits");
        }
    }

    let matcher = Matcher::build(splits.background_counts(), 64);
    let sessions = SessionIndex::build(&corpus.records);
    let imps = make_examples(&splits.train, &sessions, &matcher, &ExampleConfig::default());
    assert!(!imps.is_empty());
    for imp in &imps {
        assert_eq!(imp.candidates.iter().filter(|c| c.label).count(), 1);
        for seq in &imp.history.views {
            assert!(seq.timestamps.iter().all(|&t| t < imp.timestamp));
        }
    }
}

#[test]
fn brand_queries_are_unseen() {
    let config = cfg(0.5, 30);
    let corpus = synth_corpus(&config, 9).unwrap();
    let start = corpus.records[0].timestamp;
    let end = corpus.records.last().unwrap().timestamp + 1;
    let spec = SplitSpec::proportional(start, end, [0.6, 0.2, 0.1, 0.1]);
    let splits = build_splits(corpus.records, &spec).unwrap();
    let matcher = Matcher::build(splits.background_counts(), 64);
    let unseen = splits
        .test
        .iter()
        .filter(|r| r.kind == BehaviorKind::SearchedQuery && !matcher.is_seen(&r.text))
        .count();
    assert!(unseen > 0);
}
