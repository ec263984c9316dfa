use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use super::{normalize_query, tokenize, CorpusError, History};

/// Core product words mapped to categories, plus a modifier word list.
///
/// File format: `core_word<TAB>category` per line; modifier lines start with `~`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CategoryLexicon {
    core: BTreeMap<String, String>,
    modifiers: BTreeSet<String>,
    // first token -> token sequences of phrases starting with it
    phrases: HashMap<String, Vec<Vec<String>>>,
}

impl CategoryLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_core(&mut self, word: &str, category: &str) -> Result<(), CorpusError> {
        let word = normalize_query(word)
            .ok_or_else(|| CorpusError::Config("empty core word".into()))?;
        if let Some(existing) = self.core.get(&word) {
            if existing != category {
                return Err(CorpusError::Config(format!(
                    "core word `{word}` mapped to both `{existing}` and `{category}`"
                )));
            }
            return Ok(());
        }
        self.core.insert(word.clone(), category.to_string());
        self.index(&word);
        Ok(())
    }

    pub fn add_modifier(&mut self, word: &str) -> Result<(), CorpusError> {
        let word = normalize_query(word)
            .ok_or_else(|| CorpusError::Config("empty modifier".into()))?;
        if self.modifiers.insert(word.clone()) {
            self.index(&word);
        }
        Ok(())
    }

    fn index(&mut self, phrase: &str) {
        let toks = tokenize(phrase);
        self.phrases.entry(toks[0].clone()).or_default().push(toks);
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut lex = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: &str| CorpusError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            if let Some(m) = line.strip_prefix('~') {
                lex.add_modifier(m).map_err(|_| parse_err("empty modifier"))?;
            } else {
                let (word, cat) = line
                    .split_once('\t')
                    .ok_or_else(|| parse_err("expected `core_word<TAB>category`"))?;
                let cat = cat.trim();
                if cat.is_empty() {
                    return Err(parse_err("empty category"));
                }
                lex.add_core(word, cat).map_err(|e| parse_err(&e.to_string()))?;
            }
        }
        Ok(lex)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (w, c) in &self.core {
            s.push_str(&format!("{w}\t{c}\n"));
        }
        for m in &self.modifiers {
            s.push_str(&format!("~{m}\n"));
        }
        s
    }

    pub fn is_empty(&self) -> bool {
        self.core.is_empty() && self.modifiers.is_empty()
    }

    pub fn category(&self, core_word: &str) -> Option<&str> {
        self.core.get(core_word).map(String::as_str)
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.core.values().map(String::as_str).collect()
    }

    /// Lexicon phrases appearing as whole-token runs in `text`.
    fn matches<'a>(&'a self, text: &str) -> impl Iterator<Item = String> + 'a {
        let toks = tokenize(text);
        let mut found = Vec::new();
        for start in 0..toks.len() {
            if let Some(cands) = self.phrases.get(&toks[start]) {
                for phrase in cands {
                    if toks.len() - start >= phrase.len()
                        && toks[start..start + phrase.len()] == phrase[..]
                    {
                        found.push(phrase.join(" "));
                    }
                }
            }
        }
        found.into_iter()
    }

    /// Categories of every core word contained as whole tokens in `text`.
    pub fn categories_of(&self, text: &str) -> BTreeSet<String> {
        self.matches(text)
            .filter_map(|p| self.core_category_of_phrase(&p))
            .collect()
    }

    fn core_category_of_phrase(&self, phrase: &str) -> Option<String> {
        // CJK phrases are indexed with spaces between characters
        self.core
            .get(phrase)
            .or_else(|| self.core.get(&phrase.replace(' ', "")))
            .cloned()
    }

    pub fn has_complete_word(&self, text: &str) -> bool {
        self.matches(text).next().is_some()
    }
}

/// True when the prefix holds no complete core word or modifier, i.e. the
/// user's intention is still equivocal.
pub fn label_ie(prefix: &str, lexicon: &CategoryLexicon) -> bool {
    !lexicon.has_complete_word(prefix)
}

/// True when the prefix resolves to at least one category and none of those
/// categories occurs in the history. Unresolvable prefixes and histories
/// without any known category are never labelled as a transfer.
pub fn label_it(prefix: &str, history: &History, lexicon: &CategoryLexicon) -> bool {
    let current = lexicon.categories_of(prefix);
    if current.is_empty() {
        return false;
    }
    let past: BTreeSet<String> = history
        .texts()
        .flat_map(|t| lexicon.categories_of(t))
        .collect();
    !past.is_empty() && current.is_disjoint(&past)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BehaviorKind, BehaviorSequence};

    fn lex() -> CategoryLexicon {
        CategoryLexicon::parse(
            "led bulb\tlighting\nwrench\ttools\nsneakers\tsports\ncasual\tcasual-wear\n~cheap\n休闲\tcasual-wear\n"
                .as_bytes(),
        )
        .unwrap()
    }

    fn history(items: &[&str]) -> History {
        let mut seq = BehaviorSequence::new(BehaviorKind::ClickedItem);
        for (i, t) in items.iter().enumerate() {
            seq.push_capped(t.to_string(), i as i64 + 1, 15);
        }
        History { views: vec![seq] }
    }

    #[test]
    fn ie_examples() {
        let l = lex();
        assert!(label_ie("l", &l));
        assert!(label_ie("led", &l));
        assert!(label_ie("led bul", &l));
        assert!(!label_ie("led bulb cheap", &l));
        assert!(!label_ie("cheap", &l));
        assert!(label_ie("anything", &CategoryLexicon::new()));
    }

    #[test]
    fn it_examples() {
        let l = lex();
        let sports = history(&["sneakers pro"]);
        assert!(label_it("mens casual", &sports, &l));
        assert!(label_it("男士休闲", &sports, &l));
        let mixed = history(&["led bulb set", "wrench kit"]);
        assert!(!label_it("led bulb", &mixed, &l));
        assert!(!label_it("casual", &history(&[]), &l));
        assert!(!label_it("mens", &sports, &l));
    }

    #[test]
    fn conflicting_category_rejected() {
        let err = CategoryLexicon::parse("lamp\ta\nlamp\tb\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("lamp"));
        let l = lex();
        let back = CategoryLexicon::parse(l.to_file_string().as_bytes()).unwrap();
        assert_eq!(back, l);
    }
}
