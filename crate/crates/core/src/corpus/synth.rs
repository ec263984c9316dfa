//! Synthetic AOL-style logs with planted intention signals.
//!
//! Every user has a home category and a style modifier. A visit is a few
//! clicked item titles from the home category followed by one search. With
//! probability `p_transfer` the search moves to a category absent from the
//! user's recent history and uses the user's exploration modifier (or, with
//! probability `1 - p_explore_style`, a random non-home one); otherwise it stays
//! in the home category. Non-transfer searches are typed as a single
//! character with probability `p_single_char`.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BehaviorKind, CategoryLexicon, CorpusError, LogRecord, ViewSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    pub cores: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Taxonomy {
    pub categories: Vec<CategorySpec>,
    pub modifiers: Vec<String>,
    /// Filler words used in item titles; must not be lexicon words.
    pub item_words: Vec<String>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        // every core word starts with its own letter
        let cats: [(&str, [&str; 2]); 12] = [
            ("lighting", ["lamp", "bulb"]),
            ("footwear", ["sandals", "clogs"]),
            ("sports", ["dumbbell", "racket"]),
            ("casual", ["hoodie", "jeans"]),
            ("kitchen", ["kettle", "apron"]),
            ("outdoor", ["tent", "umbrella"]),
            ("toys", ["puzzle", "frisbee"]),
            ("beauty", ["mascara", "nailpolish"]),
            ("phones", ["earbuds", "zipcase"]),
            ("home", ["quilt", "ottoman"]),
            ("pets", ["yakchew", "whistle"]),
            ("garden", ["gloves", "ivy"]),
        ];
        Self {
            categories: cats
                .iter()
                .map(|(n, cs)| CategorySpec {
                    name: n.to_string(),
                    cores: cs.iter().map(|c| c.to_string()).collect(),
                })
                .collect(),
            modifiers: ["cheap", "premium", "vintage", "classic", "deluxe"]
                .map(String::from)
                .to_vec(),
            item_words: ["set", "pro", "mini", "kit", "pack", "plus", "xl", "duo"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl Taxonomy {
    pub fn lexicon(&self) -> Result<CategoryLexicon, CorpusError> {
        let mut lex = CategoryLexicon::new();
        for c in &self.categories {
            for core in &c.cores {
                lex.add_core(core, &c.name)?;
            }
        }
        for m in &self.modifiers {
            lex.add_modifier(m)?;
        }
        Ok(lex)
    }

    fn words(&self) -> impl Iterator<Item = &str> {
        self.categories
            .iter()
            .flat_map(|c| c.cores.iter())
            .chain(&self.modifiers)
            .map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub users: usize,
    pub min_visits: usize,
    pub max_visits: usize,
    pub max_clicks_per_visit: usize,
    pub p_transfer: f64,
    /// Probability that a non-transfer search is typed as one character.
    pub p_single_char: f64,
    /// Probability that a non-transfer search typed with two or more
    /// characters keeps the user's usual modifier.
    pub p_keep_style: f64,
    /// Probability that a transfer search uses the user's exploration
    /// modifier (fixed per user, never the home style) instead of a random
    /// non-home one.
    pub p_explore_style: f64,
    /// Probability of appending a rare brand token, yielding unseen queries.
    pub p_brand: f64,
    pub brand_pool: usize,
    pub start_ms: i64,
    pub span_days: u32,
    pub taxonomy: Taxonomy,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 180,
            min_visits: 30,
            max_visits: 40,
            max_clicks_per_visit: 3,
            p_transfer: 0.5,
            p_single_char: 0.7,
            p_keep_style: 1.0,
            p_explore_style: 1.0,
            p_brand: 0.05,
            brand_pool: 400,
            // 2006-03-01T00:00:00Z
            start_ms: 1_141_171_200_000,
            span_days: 120,
            taxonomy: Taxonomy::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Config(m));
        for (name, p) in [
            ("p_transfer", self.p_transfer),
            ("p_single_char", self.p_single_char),
            ("p_keep_style", self.p_keep_style),
            ("p_explore_style", self.p_explore_style),
            ("p_brand", self.p_brand),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} = {p} is not a probability"));
            }
        }
        if self.users == 0 || self.min_visits == 0 || self.min_visits > self.max_visits {
            return err("need users > 0 and 0 < min_visits <= max_visits".into());
        }
        if self.max_clicks_per_visit == 0 {
            return err("max_clicks_per_visit must be positive".into());
        }
        let t = &self.taxonomy;
        if t.categories.len() < 2 || t.categories.iter().any(|c| c.cores.is_empty()) {
            return err("taxonomy needs at least two categories with core words".into());
        }
        if t.modifiers.len() < 2 {
            return err("taxonomy needs at least two modifiers".into());
        }
        if t.item_words.is_empty() {
            return err("taxonomy needs item words".into());
        }
        let words: BTreeSet<&str> = t.words().collect();
        if t.words().any(|w| w.contains(' ') || w.is_empty()) {
            return err("core words and modifiers must be single tokens".into());
        }
        if let Some(w) = t.item_words.iter().find(|w| words.contains(w.as_str())) {
            return err(format!("item word `{w}` is also a lexicon word"));
        }
        if self.p_brand > 0.0 && self.brand_pool == 0 {
            return err("p_brand > 0 needs a brand pool".into());
        }
        t.lexicon().map(|_| ())
    }
}

/// Flags the generator planted on one searched query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedFlags {
    /// The search left the user's home category.
    pub transfer: bool,
    /// The typed prefix holds no complete lexicon word.
    pub ie: bool,
    /// The prefix resolves to a category absent from the history window.
    pub it: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SynthCorpus {
    /// Sorted by timestamp, then user.
    pub records: Vec<LogRecord>,
    /// Parallel to `records`; set on searched queries only.
    pub flags: Vec<Option<PlantedFlags>>,
}

struct Window {
    queries: VecDeque<usize>,
    items: VecDeque<usize>,
    query_cap: usize,
    item_cap: usize,
}

impl Window {
    fn push(q: &mut VecDeque<usize>, cap: usize, cat: usize) {
        q.push_back(cat);
        if q.len() > cap {
            q.pop_front();
        }
    }

    fn categories(&self) -> BTreeSet<usize> {
        self.queries.iter().chain(&self.items).copied().collect()
    }

    fn is_empty(&self) -> bool {
        self.queries.is_empty() && self.items.is_empty()
    }
}

fn brand_pool<R: Rng>(n: usize, taxonomy: &Taxonomy, rng: &mut R) -> Vec<String> {
    const CONS: &[u8] = b"bdfgkmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let b: String = (0..5)
            .map(|i| {
                let set = if i % 2 == 0 { CONS } else { VOWELS };
                set[rng.gen_range(0..set.len())] as char
            })
            .collect();
        // a partial brand token must never read as a lexicon word
        let clash = taxonomy.words().any(|w| b.starts_with(w))
            || taxonomy.item_words.iter().any(|w| b.starts_with(w.as_str()));
        if !clash && seen.insert(b.clone()) {
            out.push(b);
        }
    }
    out
}

/// Leading substring of `query` with `n` characters.
fn char_prefix(query: &str, n: usize) -> String {
    query.chars().take(n).collect()
}

/// Uniform prefix length in `[2, len]` that does not end on a space.
fn multi_char_len<R: Rng>(query: &str, rng: &mut R) -> usize {
    let chars: Vec<char> = query.chars().collect();
    let options: Vec<usize> = (2..=chars.len()).filter(|&n| chars[n - 1] != ' ').collect();
    *options.choose(rng).unwrap_or(&chars.len())
}

/// Generates a deterministic corpus for `seed`.
pub fn synth_corpus(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tax = &cfg.taxonomy;
    let brands = brand_pool(cfg.brand_pool, tax, &mut rng);
    let views = ViewSpec::defaults();
    let ncat = tax.categories.len();
    let span_ms = i64::from(cfg.span_days) * 86_400_000;
    let mut out: Vec<(LogRecord, Option<PlantedFlags>)> = Vec::new();

    for u in 0..cfg.users {
        let user_id = format!("u{u:04}");
        let home = rng.gen_range(0..ncat);
        let style = rng.gen_range(0..tax.modifiers.len());
        let explore = (style + rng.gen_range(1..tax.modifiers.len())) % tax.modifiers.len();
        let visits = rng.gen_range(cfg.min_visits..=cfg.max_visits);
        let mut starts: Vec<i64> = (0..visits).map(|_| rng.gen_range(0..span_ms)).collect();
        starts.sort_unstable();
        let mut window = Window {
            queries: VecDeque::new(),
            items: VecDeque::new(),
            query_cap: views[0].cap,
            item_cap: views[1].cap,
        };
        let mut last_ts = 0i64;
        let mut next_ts = |rng: &mut ChaCha8Rng, base: i64| {
            let t = (cfg.start_ms + base + rng.gen_range(1_000..60_000)).max(last_ts + 1_000);
            last_ts = t;
            t
        };

        for start in starts {
            let mut cursor = start;
            let clicks = rng.gen_range(1..=cfg.max_clicks_per_visit);
            for _ in 0..clicks {
                let core = tax.categories[home].cores.choose(&mut rng).expect("validated");
                let word = tax.item_words.choose(&mut rng).expect("validated");
                let ts = next_ts(&mut rng, cursor);
                cursor = ts - cfg.start_ms;
                out.push((
                    LogRecord {
                        user_id: user_id.clone(),
                        timestamp: ts,
                        kind: BehaviorKind::ClickedItem,
                        text: format!("{core} {} {word}", tax.modifiers[style]),
                        category: Some(tax.categories[home].name.clone()),
                        prefix: None,
                    },
                    None,
                ));
                Window::push(&mut window.items, window.item_cap, home);
            }

            let transfer = rng.gen_bool(cfg.p_transfer);
            let history_cats = window.categories();
            let (cat, modifier) = if transfer {
                let fresh: Vec<usize> = (0..ncat).filter(|c| !history_cats.contains(c)).collect();
                let any: Vec<usize> = (0..ncat).filter(|&c| c != home).collect();
                let pool = if fresh.is_empty() { &any } else { &fresh };
                let others: Vec<usize> = (0..tax.modifiers.len()).filter(|&m| m != style).collect();
                let cat = *pool.choose(&mut rng).expect("two categories");
                let m = if rng.gen_bool(cfg.p_explore_style) {
                    explore
                } else {
                    *others.choose(&mut rng).expect("two modifiers")
                };
                (cat, m)
            } else {
                (home, style)
            };
            let core = tax.categories[cat].cores.choose(&mut rng).expect("validated").clone();
            let single = !transfer && rng.gen_bool(cfg.p_single_char);
            let modifier = if !transfer && !single && !rng.gen_bool(cfg.p_keep_style) {
                let others: Vec<usize> = (0..tax.modifiers.len()).filter(|&m| m != style).collect();
                *others.choose(&mut rng).expect("two modifiers")
            } else {
                modifier
            };
            let mut query = format!("{core} {}", tax.modifiers[modifier]);
            if cfg.p_brand > 0.0 && rng.gen_bool(cfg.p_brand) {
                query.push(' ');
                query.push_str(brands.choose(&mut rng).expect("validated"));
            }
            let len = if single { 1 } else { multi_char_len(&query, &mut rng) };
            let prefix = char_prefix(&query, len);
            let ie = len < core.chars().count();
            let it = !ie && !window.is_empty() && !history_cats.contains(&cat);
            let ts = next_ts(&mut rng, cursor);
            out.push((
                LogRecord {
                    user_id: user_id.clone(),
                    timestamp: ts,
                    kind: BehaviorKind::SearchedQuery,
                    text: query,
                    category: Some(tax.categories[cat].name.clone()),
                    prefix: Some(prefix),
                },
                Some(PlantedFlags { transfer, ie, it }),
            ));
            Window::push(&mut window.queries, window.query_cap, cat);
        }
    }
    out.sort_by(|a, b| {
        a.0.timestamp
            .cmp(&b.0.timestamp)
            .then_with(|| a.0.user_id.cmp(&b.0.user_id))
    });
    let (records, flags) = out.into_iter().unzip();
    Ok(SynthCorpus { records, flags })
}
