//! Dataset assembly, the training loop with early stopping, MRR evaluation
//! and the ablation runner.

mod ablation;
mod eval;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    make_examples, BehaviorKind, ExampleConfig, History, Impression, LogRecord,
    SessionIndex, Splits, Vocab,
};
use crate::matcher::Matcher;
use crate::model::{GroupInput, ModelError, SinModel};
use crate::tensor::{Adam, Graph, NoamSchedule};

pub use ablation::{ablation_suite, AblationConfig, AblationRow, AblationTable, MeanSd, OrderingCheck};
pub use eval::{
    candidates_for, evaluate, mrr, paired_t_test, rank_by_score, rank_impressions, reciprocal_rank,
    EvalReport, PairedTTest, Ranker, SliceMetric, Slicing,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("nothing to {0}")]
    Empty(&'static str),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at step {step} on a batch of {} impressions", batch.len())]
    NonFinite {
        step: u64,
        loss: f64,
        batch: Vec<Impression>,
    },
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

/// Short stable hash of a serialisable configuration.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).unwrap_or_default();
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// A test-time impression: the model ranks the matcher's candidates for
/// `prefix` and the clicked query's rank is scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalImpression {
    pub user_id: String,
    pub timestamp: i64,
    pub prefix: String,
    pub clicked: String,
    pub history: History,
}

impl From<&Impression> for EvalImpression {
    fn from(i: &Impression) -> Self {
        Self {
            user_id: i.user_id.clone(),
            timestamp: i.timestamp,
            prefix: i.prefix.clone(),
            clicked: i.clicked.clone(),
            history: i.history.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub examples: ExampleConfig,
    /// Completions cached per trie node.
    pub trie_k: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            examples: ExampleConfig::default(),
            trie_k: 32,
        }
    }
}

/// Everything training and evaluation read: the matcher over background
/// counts, the vocabulary, training impressions and valid/test impressions.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub vocab: Vocab,
    pub matcher: Matcher,
    pub train: Vec<Impression>,
    pub valid: Vec<EvalImpression>,
    pub test: Vec<EvalImpression>,
}

impl Dataset {
    /// Histories may draw on every split, but only on events before each click.
    pub fn build(splits: &Splits, config: DatasetConfig) -> Result<Self, TrainError> {
        if config.trie_k < config.examples.candidate_pool {
            return Err(TrainError::Config(format!(
                "trie_k {} is below candidate_pool {}",
                config.trie_k, config.examples.candidate_pool
            )));
        }
        let matcher = Matcher::build(splits.background_counts(), config.trie_k);
        let vocab = Vocab::build(
            splits
                .background
                .iter()
                .chain(&splits.train)
                .map(|r| r.text.as_str()),
        );
        let all = splits.all_records();
        let sessions = SessionIndex::build(&all);
        let train = make_examples(&splits.train, &sessions, &matcher, &config.examples);
        let seed = config.examples.seed;
        let valid = eval_impressions(&splits.valid, &sessions, &config.examples, seed ^ 0x5a5a);
        let test = eval_impressions(&splits.test, &sessions, &config.examples, seed ^ 0xa5a5);
        Ok(Self {
            config,
            vocab,
            matcher,
            train,
            valid,
            test,
        })
    }

    /// Training impressions viewed as evaluation impressions.
    pub fn train_as_eval(&self) -> Vec<EvalImpression> {
        self.train.iter().map(EvalImpression::from).collect()
    }

    pub fn num_train_pairs(&self) -> usize {
        self.train.iter().map(|i| i.candidates.len()).sum()
    }
}

/// One impression per logged prefix, or up to `max_prefixes_per_click`
/// simulated ones when the log has none.
pub fn eval_impressions(
    records: &[LogRecord],
    sessions: &SessionIndex,
    cfg: &ExampleConfig,
    seed: u64,
) -> Vec<EvalImpression> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.kind == BehaviorKind::SearchedQuery) {
        let prefixes = match &r.prefix {
            Some(p) => vec![p.clone()],
            None => {
                let all: Vec<String> = r
                    .text
                    .char_indices()
                    .map(|(i, c)| r.text[..i + c.len_utf8()].to_string())
                    .filter(|p| !p.ends_with(' '))
                    .collect();
                if all.len() <= cfg.max_prefixes_per_click {
                    all
                } else {
                    let mut idx = sample(&mut rng, all.len(), cfg.max_prefixes_per_click).into_vec();
                    idx.sort_unstable();
                    idx.into_iter().map(|i| all[i].clone()).collect()
                }
            }
        };
        let history = sessions.history_before(&r.user_id, r.timestamp, &cfg.views);
        out.extend(prefixes.into_iter().map(|prefix| EvalImpression {
            user_id: r.user_id.clone(),
            timestamp: r.timestamp,
            prefix,
            clicked: r.text.clone(),
            history: history.clone(),
        }));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Minimum (prefix, candidate) rows per mini-batch.
    pub batch_size: usize,
    /// Steps between validation measurements; `None` means
    /// `min(10000, one epoch)`.
    pub eval_every: Option<u64>,
    pub max_steps: u64,
    pub patience: usize,
    pub seed: u64,
    pub schedule: NoamSchedule,
    /// Adam moments; the L2 strength always comes from the model config.
    pub adam: Adam,
    /// Candidates ranked per validation impression.
    pub eval_candidates: usize,
    /// Cap on validation impressions per measurement.
    pub valid_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            eval_every: None,
            max_steps: 200_000,
            patience: 5,
            seed: 0,
            schedule: NoamSchedule::default(),
            adam: Adam::default(),
            eval_candidates: 10,
            valid_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if self.eval_every == Some(0) {
            return bad("eval_every must be positive");
        }
        if self.eval_candidates == 0 {
            return bad("eval_candidates must be positive");
        }
        Ok(())
    }
}

/// Stops once neither the validation loss nor the validation MRR has
/// improved for `patience` consecutive measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_mrr: f64,
    pub non_improvement: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub mrr_improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_mrr: f64::NEG_INFINITY,
            non_improvement: 0,
        }
    }

    pub fn observe(&mut self, loss: f64, mrr: f64) -> Verdict {
        let loss_improved = loss < self.best_loss;
        let mrr_improved = mrr > self.best_mrr;
        if loss_improved {
            self.best_loss = loss;
        }
        if mrr_improved {
            self.best_mrr = mrr;
        }
        if loss_improved || mrr_improved {
            self.non_improvement = 0;
        } else {
            self.non_improvement += 1;
        }
        Verdict {
            mrr_improved,
            stop: self.non_improvement >= self.patience,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_mrr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub best_step: u64,
    pub best_mrr: f64,
    pub non_improvement: usize,
    pub seed: u64,
    pub stopped_early: bool,
    pub history: Vec<Measurement>,
}

/// Mini-batches over a fixed impression set, reshuffled every epoch.
pub struct Batcher<'a> {
    impressions: &'a [Impression],
    batch_rows: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl<'a> Batcher<'a> {
    pub fn new(impressions: &'a [Impression], batch_rows: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..impressions.len()).collect();
        order.shuffle(&mut rng);
        Self {
            impressions,
            batch_rows,
            order,
            cursor: 0,
            rng,
        }
    }

    /// Impressions until at least `batch_rows` candidate rows are collected
    /// or the epoch ends.
    pub fn next_batch(&mut self) -> Vec<&'a Impression> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let mut rows = 0;
        let mut batch = Vec::new();
        while rows < self.batch_rows && self.cursor < self.order.len() {
            let imp = &self.impressions[self.order[self.cursor]];
            self.cursor += 1;
            rows += imp.candidates.len();
            batch.push(imp);
        }
        batch
    }

    /// Batches per pass over the data.
    pub fn epoch_len(&self) -> u64 {
        let rows: usize = self.impressions.iter().map(|i| i.candidates.len()).sum();
        rows.div_ceil(self.batch_rows).max(1) as u64
    }
}

/// One Adam update on `batch`; returns the batch cross-entropy.
pub fn train_step(
    model: &mut SinModel,
    batch: &[&Impression],
    adam: &Adam,
    schedule: &NoamSchedule,
) -> Result<f64, TrainError> {
    let groups: Vec<GroupInput> = batch.iter().map(|i| GroupInput::from(*i)).collect();
    let (loss, grads) = {
        let mut g = Graph::new(&model.store);
        let (loss, _) = model.loss(&mut g, &groups)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(TrainError::NonFinite {
                step: model.store.step() + 1,
                loss: value,
                batch: batch.iter().map(|i| (*i).clone()).collect(),
            });
        }
        (value, g.backward(loss))
    };
    model.store.accumulate(&grads);
    let adam = Adam {
        l2: model.config.l2,
        ..adam.clone()
    };
    adam.step(&mut model.store, schedule);
    Ok(loss)
}

/// Mean cross-entropy over each impression's top-`m` matcher candidates
/// labelled by the click. Impressions without candidates are skipped.
pub fn validation_loss(
    model: &SinModel,
    impressions: &[EvalImpression],
    matcher: &Matcher,
    m: usize,
) -> Result<f64, TrainError> {
    let (mut total, mut rows) = (0.0, 0usize);
    for chunk in impressions.chunks(32) {
        let cands: Vec<_> = chunk
            .iter()
            .map(|i| candidates_for(&matcher.mcg(&i.prefix, m), Some(&i.clicked)))
            .collect();
        let groups: Vec<GroupInput> = chunk
            .iter()
            .zip(&cands)
            .filter(|(_, c)| !c.is_empty())
            .map(|(i, c)| GroupInput {
                prefix: &i.prefix,
                history: &i.history,
                candidates: c,
            })
            .collect();
        if groups.is_empty() {
            continue;
        }
        let n: usize = groups.iter().map(|g| g.candidates.len()).sum();
        let mut g = Graph::new(&model.store);
        let (loss, _) = model.loss(&mut g, &groups)?;
        total += g.value(loss).data()[0] * n as f64;
        rows += n;
    }
    if rows == 0 {
        return Err(TrainError::Empty("validation loss without candidates"));
    }
    Ok(total / rows as f64)
}

/// Trains `model` in place and leaves it holding the best-MRR parameters.
pub fn train(model: &mut SinModel, dataset: &Dataset, config: &TrainConfig) -> Result<TrainState, TrainError> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(TrainError::Empty("training without impressions"));
    }
    if dataset.valid.is_empty() {
        return Err(TrainError::Empty("training without validation impressions"));
    }
    let valid: Vec<EvalImpression> = match config.valid_limit {
        Some(n) if n < dataset.valid.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a11d);
            let mut idx = sample(&mut rng, dataset.valid.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| dataset.valid[i].clone()).collect()
        }
        _ => dataset.valid.clone(),
    };
    let mut batcher = Batcher::new(&dataset.train, config.batch_size, config.seed);
    let eval_every = config.eval_every.unwrap_or_else(|| batcher.epoch_len().min(10_000));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut state = TrainState {
        step: 0,
        best_step: 0,
        best_mrr: f64::NEG_INFINITY,
        non_improvement: 0,
        seed: config.seed,
        stopped_early: false,
        history: Vec::new(),
    };
    let mut best = model.store.clone();
    let mut window_loss = (0.0, 0u64);
    while state.step < config.max_steps {
        let batch = batcher.next_batch();
        let loss = train_step(model, &batch, &config.adam, &config.schedule)?;
        state.step += 1;
        window_loss.0 += loss;
        window_loss.1 += 1;
        if state.step % eval_every != 0 && state.step != config.max_steps {
            continue;
        }
        let valid_loss = validation_loss(model, &valid, &dataset.matcher, config.eval_candidates)?;
        let report = evaluate(
            Ranker::Model(model),
            &valid,
            &dataset.matcher,
            config.eval_candidates,
            Slicing::default(),
            "",
        )?;
        let valid_mrr = report.overall.mrr;
        state.history.push(Measurement {
            step: state.step,
            train_loss: window_loss.0 / window_loss.1 as f64,
            valid_loss,
            valid_mrr,
        });
        window_loss = (0.0, 0);
        let verdict = stopper.observe(valid_loss, valid_mrr);
        state.non_improvement = stopper.non_improvement;
        if verdict.mrr_improved {
            state.best_mrr = valid_mrr;
            state.best_step = state.step;
            best = model.store.clone();
        }
        if verdict.stop {
            state.stopped_early = true;
            break;
        }
    }
    model.store = best;
    Ok(state)
}
