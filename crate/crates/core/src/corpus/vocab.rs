use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::is_cjk;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const RESERVED: [&str; 2] = ["[PAD]", "[UNK]"];

/// Whitespace tokens, with every CJK character split into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut run = String::new();
        for c in word.chars() {
            if is_cjk(c) {
                if !run.is_empty() {
                    tokens.push(std::mem::take(&mut run));
                }
                tokens.push(c.to_string());
            } else {
                run.push(c);
            }
        }
        if !run.is_empty() {
            tokens.push(run);
        }
    }
    tokens
}

/// Token and character vocabularies sharing the reserved ids `PAD = 0`, `UNK = 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    chars: Vec<char>,
    #[serde(skip)]
    token_ids: HashMap<String, u32>,
    #[serde(skip)]
    char_ids: HashMap<char, u32>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.chars == other.chars
    }
}

impl Vocab {
    /// Builds both vocabularies from normalised texts; ids are assigned in
    /// sorted order so the result does not depend on input order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut toks = BTreeSet::new();
        let mut chars = BTreeSet::new();
        for t in texts {
            for tok in tokenize(t) {
                chars.extend(tok.chars());
                toks.insert(tok);
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(toks.into_iter().filter(|t| !RESERVED.contains(&t.as_str())));
        let mut char_list = vec!['\0', '\u{1}'];
        chars.retain(|c| *c != '\0' && *c != '\u{1}');
        char_list.extend(chars);
        Self::from_lists(tokens, char_list)
    }

    fn from_lists(tokens: Vec<String>, chars: Vec<char>) -> Self {
        let mut v = Self {
            tokens,
            chars,
            token_ids: HashMap::new(),
            char_ids: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds lookup maps after deserialisation.
    pub fn reindex(&mut self) {
        self.token_ids = self
            .tokens
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        self.char_ids = self
            .chars
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .map(|(i, &c)| (c, i as u32))
            .collect();
    }

    pub fn token_id(&self, token: &str) -> u32 {
        self.token_ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> u32 {
        self.char_ids.get(&c).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    /// Character ids of `text`, truncated to `max_len`.
    pub fn char_ids(&self, text: &str, max_len: usize) -> Vec<u32> {
        text.chars().take(max_len).map(|c| self.char_id(c)).collect()
    }
}

/// Token ids of `text`, truncated or tail-padded with `PAD` to `target_len`.
pub fn tokenize_pad(text: &str, vocab: &Vocab, target_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = tokenize(text)
        .iter()
        .take(target_len)
        .map(|t| vocab.token_id(t))
        .collect();
    ids.resize(target_len, PAD);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cjk_characters_are_single_tokens() {
        assert_eq!(tokenize("led灯泡 bulb"), vec!["led", "灯", "泡", "bulb"]);
        assert_eq!(tokenize("男士休闲"), vec!["男", "士", "休", "闲"]);
    }

    #[test]
    fn pad_and_truncate() {
        let v = Vocab::build(["led bulb", "a b c d e f g h i j"]);
        let ids = tokenize_pad("led bulb", &v, 8);
        assert_eq!(ids, vec![v.token_id("led"), v.token_id("bulb"), 0, 0, 0, 0, 0, 0]);
        let long = tokenize_pad("a b c d e f g h i j", &v, 8);
        let expect: Vec<u32> = ["a", "b", "c", "d", "e", "f", "g", "h"]
            .iter()
            .map(|t| v.token_id(t))
            .collect();
        assert_eq!(long, expect);
        assert_eq!(tokenize_pad("", &v, 8), vec![0; 8]);
        assert_eq!(tokenize_pad("zzz", &v, 8)[0], UNK);
    }

    #[test]
    fn reserved_ids_never_collide() {
        let v = Vocab::build(["[PAD] [UNK] x"]);
        assert_eq!(v.token(0), Some("[PAD]"));
        assert_eq!(v.token(1), Some("[UNK]"));
        assert!(v.token_id("x") > UNK);
        assert_eq!(v.num_tokens(), 3);
    }

    #[test]
    fn serde_round_trip_reindexes() {
        let v = Vocab::build(["lamp cheap", "灯泡"]);
        let json = serde_json::to_string(&v).unwrap();
        let mut back: Vocab = serde_json::from_str(&json).unwrap();
        back.reindex();
        assert_eq!(back, v);
        assert_eq!(back.token_id("cheap"), v.token_id("cheap"));
        assert_eq!(back.char_id('灯'), v.char_id('灯'));
    }

    proptest! {
        #[test]
        fn padded_length_is_exact(text in "[a-z ]{0,60}", len in prop::sample::select(vec![8usize, 15])) {
            let v = Vocab::build(["abc def", "ghi"]);
            let ids = tokenize_pad(&text, &v, len);
            prop_assert_eq!(ids.len(), len);
            prop_assert!(ids.iter().all(|&i| (i as usize) < v.num_tokens()));
            // padding only at the tail
            if let Some(first_pad) = ids.iter().position(|&i| i == PAD) {
                prop_assert!(ids[first_pad..].iter().all(|&i| i == PAD));
            }
        }
    }
}
