use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, fingerprint, train, Dataset, EvalReport, Ranker, Slicing, TrainConfig, TrainError, TrainState};
use crate::corpus::CategoryLexicon;
use crate::model::{SinConfig, SinModel, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub model: SinConfig,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            seeds: (0..5).collect(),
            model: SinConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub overall: MeanSd,
    pub slices: BTreeMap<String, MeanSd>,
    pub runs: Vec<EvalReport>,
    pub train_states: Vec<TrainState>,
}

/// `better` must beat `worse` on `slice` by mean MRR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub slice: String,
    pub better: String,
    pub worse: String,
    pub better_mean: f64,
    pub worse_mean: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub mpc: EvalReport,
    pub checks: Vec<OrderingCheck>,
    pub fingerprint: String,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant.name())
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_tsv(&self) -> String {
        let slices: Vec<&String> = self.mpc.slices.keys().collect();
        let mut s = String::from("model\toverall");
        for k in &slices {
            let _ = write!(s, "\t{k}");
        }
        s.push('\n');
        let _ = write!(s, "MPC\t{:.4}", self.mpc.overall.mrr);
        for k in &slices {
            let _ = write!(s, "\t{:.4}", self.mpc.slices[*k].mrr);
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{}\t{:.4}±{:.4}", r.variant, r.overall.mean, r.overall.sd);
            for k in &slices {
                let m = r.slices.get(*k).copied().unwrap_or(MeanSd { mean: 0.0, sd: 0.0 });
                let _ = write!(s, "\t{:.4}±{:.4}", m.mean, m.sd);
            }
            s.push('\n');
        }
        for c in &self.checks {
            let _ = writeln!(
                s,
                "# {} {} > {}: {:.4} vs {:.4} {}",
                c.slice,
                c.better,
                c.worse,
                c.better_mean,
                c.worse_mean,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

/// Trains every variant once per seed and evaluates on the test impressions.
pub fn ablation_suite(
    dataset: &Dataset,
    config: &AblationConfig,
    lexicon: Option<&CategoryLexicon>,
) -> Result<AblationTable, TrainError> {
    if config.variants.is_empty() {
        return Err(TrainError::Config("no variants to ablate".into()));
    }
    if config.seeds.len() < 3 {
        return Err(TrainError::Config(format!(
            "ablation needs at least 3 seeds, got {}",
            config.seeds.len()
        )));
    }
    let fp = fingerprint(config);
    let slicing = Slicing { seen: true, lexicon };
    let m = config.train.eval_candidates;
    let jobs: Vec<(Variant, u64)> = config
        .variants
        .iter()
        .flat_map(|&v| config.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<Result<(EvalReport, TrainState), TrainError>> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let mut model = SinModel::new(variant, config.model.clone(), dataset.vocab.clone(), seed)?;
            let tc = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let state = train(&mut model, dataset, &tc)?;
            let report = evaluate(Ranker::Model(&model), &dataset.test, &dataset.matcher, m, slicing, &fp)?;
            Ok((report, state))
        })
        .collect();
    let mut per_variant: BTreeMap<Variant, (Vec<EvalReport>, Vec<TrainState>)> = BTreeMap::new();
    for ((variant, _), r) in jobs.iter().zip(results) {
        let (report, state) = r?;
        let e = per_variant.entry(*variant).or_default();
        e.0.push(report);
        e.1.push(state);
    }
    let rows: Vec<AblationRow> = config
        .variants
        .iter()
        .map(|v| {
            let (runs, states) = per_variant.remove(v).unwrap_or_default();
            let overall = MeanSd::of(&runs.iter().map(|r| r.overall.mrr).collect::<Vec<_>>());
            let slices = runs[0]
                .slices
                .keys()
                .map(|k| {
                    let vals: Vec<f64> = runs.iter().map(|r| r.slices[k].mrr).collect();
                    (k.clone(), MeanSd::of(&vals))
                })
                .collect();
            AblationRow {
                variant: v.name().to_string(),
                overall,
                slices,
                runs,
                train_states: states,
            }
        })
        .collect();
    let mpc = evaluate(Ranker::Mpc, &dataset.test, &dataset.matcher, m, slicing, &fp)?;
    let mut table = AblationTable {
        rows,
        mpc,
        checks: Vec::new(),
        fingerprint: fp,
    };
    if lexicon.is_some() {
        for (slice, better, worse) in [
            ("it", Variant::HistoryEvolution, Variant::History),
            ("ie", Variant::HistoryPrefix, Variant::History),
        ] {
            let (Some(b), Some(w)) = (table.row(better), table.row(worse)) else { continue };
            let (bm, wm) = (b.slices[slice].mean, w.slices[slice].mean);
            table.checks.push(OrderingCheck {
                slice: slice.into(),
                better: better.name().into(),
                worse: worse.name().into(),
                better_mean: bm,
                worse_mean: wm,
                passed: bm > wm,
            });
        }
    }
    Ok(table)
}
