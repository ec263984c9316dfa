use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{BehaviorKind, CorpusError, LogRecord};

/// Half-open timestamp interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub background: Window,
    pub train: Window,
    pub valid: Window,
    pub test: Window,
    #[serde(default = "default_min_frequency")]
    pub min_query_frequency: u64,
}

fn default_min_frequency() -> u64 {
    3
}

impl SplitSpec {
    /// Consecutive windows covering `[start, end)` in the given proportions.
    pub fn proportional(start: i64, end: i64, fractions: [f64; 4]) -> Self {
        let total: f64 = fractions.iter().sum();
        let span = (end - start) as f64;
        let mut bounds = [start; 5];
        let mut acc = 0.0;
        for (i, f) in fractions.iter().enumerate() {
            acc += f / total;
            bounds[i + 1] = if i == 3 { end } else { start + (span * acc) as i64 };
        }
        let w = |i: usize| Window {
            start: bounds[i],
            end: bounds[i + 1],
        };
        Self {
            background: w(0),
            train: w(1),
            valid: w(2),
            test: w(3),
            min_query_frequency: default_min_frequency(),
        }
    }

    fn windows(&self) -> [(&'static str, Window); 4] {
        [
            ("background", self.background),
            ("train", self.train),
            ("valid", self.valid),
            ("test", self.test),
        ]
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let ws = self.windows();
        for (name, w) in ws {
            if w.start >= w.end {
                return Err(CorpusError::Config(format!("{name} window is empty")));
            }
        }
        for pair in ws.windows(2) {
            let ((a, wa), (b, wb)) = (pair[0], pair[1]);
            if wa.end > wb.start {
                return Err(CorpusError::Config(format!(
                    "{a} window overlaps or follows {b} window"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub background: Vec<LogRecord>,
    pub train: Vec<LogRecord>,
    pub valid: Vec<LogRecord>,
    pub test: Vec<LogRecord>,
}

impl Splits {
    /// Background searched-query frequencies, sorted by text.
    pub fn background_counts(&self) -> Vec<(String, u64)> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for r in &self.background {
            if r.kind == BehaviorKind::SearchedQuery {
                *counts.entry(&r.text).or_default() += 1;
            }
        }
        let mut v: Vec<(String, u64)> = counts.into_iter().map(|(k, c)| (k.to_string(), c)).collect();
        v.sort();
        v
    }

    /// Every kept record in timestamp order.
    pub fn all_records(&self) -> Vec<LogRecord> {
        let mut all: Vec<LogRecord> = self
            .background
            .iter()
            .chain(&self.train)
            .chain(&self.valid)
            .chain(&self.test)
            .cloned()
            .collect();
        all.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.user_id.cmp(&b.user_id)));
        all
    }
}

/// Normalises records and assigns each to the window holding its timestamp.
/// Background searched queries rarer than `min_query_frequency` are dropped,
/// as are records outside every window and records empty after normalisation.
pub fn build_splits(
    records: impl IntoIterator<Item = LogRecord>,
    spec: &SplitSpec,
) -> Result<Splits, CorpusError> {
    spec.validate()?;
    let mut splits = Splits::default();
    for r in records.into_iter().filter_map(LogRecord::normalized) {
        let t = r.timestamp;
        let slot = if spec.background.contains(t) {
            &mut splits.background
        } else if spec.train.contains(t) {
            &mut splits.train
        } else if spec.valid.contains(t) {
            &mut splits.valid
        } else if spec.test.contains(t) {
            &mut splits.test
        } else {
            continue;
        };
        slot.push(r);
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    for r in &splits.background {
        if r.kind == BehaviorKind::SearchedQuery {
            *freq.entry(r.text.clone()).or_default() += 1;
        }
    }
    splits.background.retain(|r| {
        r.kind != BehaviorKind::SearchedQuery || freq[&r.text] >= spec.min_query_frequency
    });
    for part in [
        &mut splits.background,
        &mut splits.train,
        &mut splits.valid,
        &mut splits.test,
    ] {
        part.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.user_id.cmp(&b.user_id)));
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: i64, text: &str) -> LogRecord {
        LogRecord {
            user_id: "u".into(),
            timestamp: t,
            kind: BehaviorKind::SearchedQuery,
            text: text.into(),
            category: None,
            prefix: None,
        }
    }

    fn spec() -> SplitSpec {
        SplitSpec::proportional(0, 100, [0.6, 0.2, 0.1, 0.1])
    }

    #[test]
    fn assigns_by_window_and_filters_rare() {
        let s = spec();
        assert_eq!(s.train, Window { start: 60, end: 80 });
        let recs = vec![
            rec(1, "lamp"),
            rec(2, "lamp"),
            rec(3, "lamp"),
            rec(4, "rare"),
            rec(5, "rare"),
            rec(6, "!!!"),
            rec(65, "rare"),
            rec(85, "x"),
            rec(95, "y"),
            rec(150, "z"),
        ];
        let sp = build_splits(recs, &s).unwrap();
        assert_eq!(sp.background.len(), 3);
        assert!(sp.background.iter().all(|r| r.text == "lamp"));
        assert_eq!(sp.train.len(), 1);
        assert_eq!(sp.valid.len(), 1);
        assert_eq!(sp.test.len(), 1);
        assert_eq!(sp.background_counts(), vec![("lamp".to_string(), 3)]);
        assert_eq!(sp.all_records().len(), 6);
    }

    #[test]
    fn overlapping_windows_rejected() {
        let mut s = spec();
        s.valid.start = 70;
        assert!(matches!(build_splits(vec![], &s), Err(CorpusError::Config(_))));
        let mut s = spec();
        s.test = Window { start: 10, end: 20 };
        assert!(s.validate().is_err());
    }
}
