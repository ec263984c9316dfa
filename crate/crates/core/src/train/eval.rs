use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{EvalImpression, TrainError};
use crate::corpus::{label_ie, label_it, Candidate, CategoryLexicon};
use crate::matcher::{MatchCandidate, Matcher};
use crate::model::{GroupInput, SinModel};

/// 1-based rank of `clicked` in `list` as a reciprocal; 0 when absent.
pub fn reciprocal_rank<S: AsRef<str>>(list: &[S], clicked: &str) -> f64 {
    list.iter()
        .position(|q| q.as_ref() == clicked)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Mean reciprocal rank over `(ranked list, clicked query)` impressions.
pub fn mrr<S: AsRef<str>>(impressions: &[(Vec<S>, String)]) -> Result<f64, TrainError> {
    if impressions.is_empty() {
        return Err(TrainError::Empty("mrr over zero impressions"));
    }
    let total: f64 = impressions.iter().map(|(l, c)| reciprocal_rank(l, c)).sum();
    Ok(total / impressions.len() as f64)
}

/// What produces the ranked list for a prefix.
#[derive(Clone, Copy, Debug)]
pub enum Ranker<'a> {
    /// Trie completions in frequency order.
    Mpc,
    /// Back-off completions in tier order.
    Mcg,
    /// Back-off completions reordered by model probability.
    Model(&'a SinModel),
}

impl Ranker<'_> {
    pub fn name(&self) -> String {
        match self {
            Ranker::Mpc => "MPC".into(),
            Ranker::Mcg => "MCG".into(),
            Ranker::Model(m) => m.variant.name().into(),
        }
    }
}

/// Candidate list for model scoring.
pub fn candidates_for(matched: &[MatchCandidate], clicked: Option<&str>) -> Vec<Candidate> {
    matched
        .iter()
        .map(|c| Candidate {
            text: c.text.clone(),
            frequency: c.frequency,
            label: Some(c.text.as_str()) == clicked,
        })
        .collect()
}

/// Orders candidates by probability, then frequency, then text.
pub fn rank_by_score(candidates: &[Candidate], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| candidates[b].frequency.cmp(&candidates[a].frequency))
            .then_with(|| candidates[a].text.cmp(&candidates[b].text))
    });
    order
}

/// Impressions scored per model forward during evaluation.
const EVAL_CHUNK: usize = 32;

/// Ranked lists for each impression.
pub fn rank_impressions(
    ranker: Ranker,
    impressions: &[EvalImpression],
    matcher: &Matcher,
    m: usize,
) -> Result<Vec<Vec<String>>, TrainError> {
    match ranker {
        Ranker::Mpc => Ok(impressions
            .iter()
            .map(|i| matcher.mpc(&i.prefix, m).into_iter().map(|c| c.text).collect())
            .collect()),
        Ranker::Mcg => Ok(impressions
            .iter()
            .map(|i| matcher.mcg(&i.prefix, m).into_iter().map(|c| c.text).collect())
            .collect()),
        Ranker::Model(model) => {
            let chunks: Vec<Result<Vec<Vec<String>>, TrainError>> = impressions
                .par_chunks(EVAL_CHUNK)
                .map(|chunk| {
                    let cands: Vec<Vec<Candidate>> = chunk
                        .iter()
                        .map(|i| candidates_for(&matcher.mcg(&i.prefix, m), Some(&i.clicked)))
                        .collect();
                    let live: Vec<usize> = (0..chunk.len()).filter(|&i| !cands[i].is_empty()).collect();
                    let groups: Vec<GroupInput> = live
                        .iter()
                        .map(|&i| GroupInput {
                            prefix: &chunk[i].prefix,
                            history: &chunk[i].history,
                            candidates: &cands[i],
                        })
                        .collect();
                    let scores = if groups.is_empty() { Vec::new() } else { model.score(&groups)? };
                    let mut out = vec![Vec::new(); chunk.len()];
                    for (&i, s) in live.iter().zip(&scores) {
                        out[i] = rank_by_score(&cands[i], s)
                            .into_iter()
                            .map(|j| cands[i][j].text.clone())
                            .collect();
                    }
                    Ok(out)
                })
                .collect();
            let mut all = Vec::with_capacity(impressions.len());
            for c in chunks {
                all.extend(c?);
            }
            Ok(all)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetric {
    pub mrr: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ranker: String,
    pub overall: SliceMetric,
    /// Keys: seen, unseen, ie, non_ie, it, non_it.
    pub slices: BTreeMap<String, SliceMetric>,
    pub fingerprint: String,
    #[serde(skip)]
    pub reciprocal_ranks: Vec<f64>,
}

impl EvalReport {
    pub fn slice(&self, name: &str) -> Option<SliceMetric> {
        self.slices.get(name).copied()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("ranker\tslice\tmrr\tcount\n");
        let _ = writeln!(s, "{}\toverall\t{:.4}\t{}", self.ranker, self.overall.mrr, self.overall.count);
        for (k, v) in &self.slices {
            let _ = writeln!(s, "{}\t{k}\t{:.4}\t{}", self.ranker, v.mrr, v.count);
        }
        s
    }
}

/// Which slicings to report.
#[derive(Clone, Copy, Debug, Default)]
pub struct Slicing<'a> {
    pub seen: bool,
    /// Lexicon for the IE/IT slices; those slices are skipped when `None`.
    pub lexicon: Option<&'a CategoryLexicon>,
}

fn metric(rr: &[f64], keep: impl Fn(usize) -> bool) -> SliceMetric {
    let (mut sum, mut count) = (0.0, 0);
    for (i, r) in rr.iter().enumerate() {
        if keep(i) {
            sum += r;
            count += 1;
        }
    }
    SliceMetric {
        mrr: if count == 0 { 0.0 } else { sum / count as f64 },
        count,
    }
}

/// Ranks every impression, then reports MRR overall and per slice.
pub fn evaluate(
    ranker: Ranker,
    impressions: &[EvalImpression],
    matcher: &Matcher,
    m: usize,
    slicing: Slicing,
    fingerprint: &str,
) -> Result<EvalReport, TrainError> {
    if impressions.is_empty() {
        return Err(TrainError::Empty("evaluation over zero impressions"));
    }
    let lists = rank_impressions(ranker, impressions, matcher, m)?;
    let rr: Vec<f64> = lists
        .iter()
        .zip(impressions)
        .map(|(l, i)| reciprocal_rank(l, &i.clicked))
        .collect();
    let mut slices = BTreeMap::new();
    if slicing.seen {
        let seen: Vec<bool> = impressions.iter().map(|i| matcher.is_seen(&i.clicked)).collect();
        slices.insert("seen".into(), metric(&rr, |i| seen[i]));
        slices.insert("unseen".into(), metric(&rr, |i| !seen[i]));
    }
    if let Some(lex) = slicing.lexicon {
        let ie: Vec<bool> = impressions.iter().map(|i| label_ie(&i.prefix, lex)).collect();
        let it: Vec<bool> = impressions
            .iter()
            .map(|i| label_it(&i.prefix, &i.history, lex))
            .collect();
        slices.insert("ie".into(), metric(&rr, |i| ie[i]));
        slices.insert("non_ie".into(), metric(&rr, |i| !ie[i]));
        slices.insert("it".into(), metric(&rr, |i| it[i]));
        slices.insert("non_it".into(), metric(&rr, |i| !it[i]));
    }
    Ok(EvalReport {
        ranker: ranker.name(),
        overall: metric(&rr, |_| true),
        slices,
        fingerprint: fingerprint.to_string(),
        reciprocal_ranks: rr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub mean_difference: f64,
    pub t: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Two-sided paired t-test on per-impression reciprocal ranks.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        }
    } else {
        let t = mean / (var / n).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).ok()?;
        (t, 2.0 * (1.0 - dist.cdf(t.abs())))
    };
    Some(PairedTTest {
        mean_difference: mean,
        t,
        p_value: p,
        n: a.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reciprocal_ranks() {
        assert_eq!(reciprocal_rank(&["a", "b"], "a"), 1.0);
        assert_eq!(reciprocal_rank(&["a", "b"], "z"), 0.0);
        let imps = vec![
            (vec!["x", "c"], "c".to_string()),
            (vec!["x", "y", "z", "c"], "c".to_string()),
        ];
        assert_eq!(mrr(&imps).unwrap(), 0.375);
        assert!(mrr::<&str>(&[]).is_err());
    }

    #[test]
    fn ties_break_by_frequency_then_text() {
        let c = |t: &str, f| Candidate {
            text: t.into(),
            frequency: f,
            label: false,
        };
        let cands = [c("b", 1), c("a", 1), c("c", 5), c("d", 0)];
        let order = rank_by_score(&cands, &[0.5, 0.5, 0.5, 0.9]);
        assert_eq!(order, [3, 2, 1, 0]);
    }

    #[test]
    fn t_test_matches_hand_computation() {
        let a = [1.0, 0.5, 1.0, 0.25, 1.0];
        let b = [0.5, 0.5, 0.25, 0.25, 1.0];
        let r = paired_t_test(&a, &b).unwrap();
        // d = [0.5, 0, 0.75, 0, 0], mean 0.25, sd 0.3536, t = 1.5811
        assert!((r.t - 1.5811388).abs() < 1e-6);
        assert!(r.p_value > 0.15 && r.p_value < 0.25);
    }
}
