use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{BehaviorKind, LogRecord};

/// One behaviour view fed to the model: which events, how many of the most
/// recent ones, and the token length each element is padded to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub kind: BehaviorKind,
    pub cap: usize,
    pub pad_len: usize,
}

impl ViewSpec {
    /// Last 10 searched queries (8 tokens each) and last 15 clicked item
    /// titles (15 tokens each).
    pub fn defaults() -> Vec<ViewSpec> {
        vec![
            ViewSpec {
                kind: BehaviorKind::SearchedQuery,
                cap: 10,
                pad_len: 8,
            },
            ViewSpec {
                kind: BehaviorKind::ClickedItem,
                cap: 15,
                pad_len: 15,
            },
        ]
    }
}

/// Ordered behaviour texts of one kind, oldest first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSequence {
    pub kind: BehaviorKind,
    pub items: Vec<String>,
    pub timestamps: Vec<i64>,
}

impl BehaviorSequence {
    pub fn new(kind: BehaviorKind) -> Self {
        Self {
            kind,
            items: Vec::new(),
            timestamps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends and evicts from the front beyond `cap`.
    pub fn push_capped(&mut self, text: String, timestamp: i64, cap: usize) {
        self.items.push(text);
        self.timestamps.push(timestamp);
        if self.items.len() > cap {
            let excess = self.items.len() - cap;
            self.items.drain(..excess);
            self.timestamps.drain(..excess);
        }
    }
}

/// The N behaviour views of one user at one moment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub views: Vec<BehaviorSequence>,
}

impl History {
    pub fn empty(views: &[ViewSpec]) -> Self {
        Self {
            views: views.iter().map(|v| BehaviorSequence::new(v.kind)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.views.iter().all(BehaviorSequence::is_empty)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.views.iter().flat_map(|v| v.items.iter().map(String::as_str))
    }
}

#[derive(Clone, Debug)]
struct Event {
    timestamp: i64,
    text: String,
}

/// Per-user, per-kind event lists for point-in-time history lookups.
#[derive(Clone, Debug, Default)]
pub struct SessionIndex {
    users: HashMap<String, HashMap<BehaviorKind, Vec<Event>>>,
}

impl SessionIndex {
    pub fn build<'a>(records: impl IntoIterator<Item = &'a LogRecord>) -> Self {
        let mut users: HashMap<String, HashMap<BehaviorKind, Vec<Event>>> = HashMap::new();
        for r in records {
            users
                .entry(r.user_id.clone())
                .or_default()
                .entry(r.kind)
                .or_default()
                .push(Event {
                    timestamp: r.timestamp,
                    text: r.text.clone(),
                });
        }
        for kinds in users.values_mut() {
            for events in kinds.values_mut() {
                events.sort_by_key(|e| e.timestamp);
            }
        }
        Self { users }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Most recent events strictly before `timestamp`, per view.
    pub fn history_before(&self, user: &str, timestamp: i64, views: &[ViewSpec]) -> History {
        let mut history = History::empty(views);
        let Some(kinds) = self.users.get(user) else {
            return history;
        };
        for (seq, spec) in history.views.iter_mut().zip(views) {
            let Some(events) = kinds.get(&spec.kind) else { continue };
            let end = events.partition_point(|e| e.timestamp < timestamp);
            let start = end.saturating_sub(spec.cap);
            for e in &events[start..end] {
                seq.items.push(e.text.clone());
                seq.timestamps.push(e.timestamp);
            }
        }
        history
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: &str, t: i64, kind: BehaviorKind, text: &str) -> LogRecord {
        LogRecord {
            user_id: user.into(),
            timestamp: t,
            kind,
            text: text.into(),
            category: None,
            prefix: None,
        }
    }

    #[test]
    fn strictly_earlier_and_capped() {
        let mut recs = Vec::new();
        for t in 1..=20 {
            recs.push(rec("u", t, BehaviorKind::ClickedItem, &format!("item {t}")));
        }
        recs.push(rec("u", 5, BehaviorKind::SearchedQuery, "q5"));
        recs.push(rec("v", 1, BehaviorKind::SearchedQuery, "other"));
        let idx = SessionIndex::build(&recs);
        let views = ViewSpec::defaults();
        let h = idx.history_before("u", 18, &views);
        assert_eq!(h.views[0].items, vec!["q5"]);
        assert_eq!(h.views[1].len(), 15);
        assert_eq!(h.views[1].items[0], "item 3");
        assert_eq!(h.views[1].items[14], "item 17");
        assert!(h.views[1].timestamps.iter().all(|&t| t < 18));
        assert!(idx.history_before("u", 1, &views).is_empty());
        assert!(idx.history_before("nobody", 99, &views).is_empty());
    }

    #[test]
    fn push_capped_evicts_oldest() {
        let mut s = BehaviorSequence::new(BehaviorKind::ClickedItem);
        for i in 0..16 {
            s.push_capped(format!("t{i}"), i, 15);
        }
        assert_eq!(s.len(), 15);
        assert_eq!(s.items[0], "t1");
    }
}
