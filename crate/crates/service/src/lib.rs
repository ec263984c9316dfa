//! Online suggest endpoint: per-user sessions, history filtering and
//! micro-batched ranking of matcher candidates.

mod batch;
mod filter;
pub mod http;
mod session;

use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use qac_core::corpus::{normalize_query, BehaviorKind, CategoryLexicon};
use qac_core::matcher::Matcher;
use qac_core::model::SinModel;
use qac_core::train::{candidates_for, rank_by_score};
use serde::{Deserialize, Serialize};

pub use batch::{score_batch, BatchStats, Batcher, Pending};
pub use filter::{filter_history, FALLBACK_RECENT};
pub use session::SessionStore;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("model not loaded")]
    Unavailable,
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::BadRequest(_) => "bad-request",
            ServiceError::Unavailable => "service-unavailable",
            ServiceError::Inference(_) => "inference-error",
            ServiceError::Config(_) => "config-error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub window_ms: u64,
    pub max_batch: usize,
    /// Candidates scored per request.
    pub candidates: usize,
    /// Suggestions returned when the request has no `k`.
    pub default_k: usize,
    pub filter_history: bool,
    pub trie: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Sessions are loaded from and saved to this file when set.
    pub sessions: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            window_ms: 5,
            max_batch: 32,
            candidates: 10,
            default_k: 5,
            filter_history: true,
            trie: None,
            checkpoint: None,
            lexicon: None,
            sessions: None,
        }
    }
}

/// A trie and a checkpoint that are always swapped together.
#[derive(Debug)]
pub struct Snapshot {
    pub matcher: Matcher,
    pub model: SinModel,
    pub lexicon: Option<CategoryLexicon>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestRequest {
    pub user_id: String,
    pub prefix: String,
    pub k: Option<usize>,
    #[serde(default)]
    pub debug: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub query: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestionDebug {
    pub query: String,
    /// Weight of each behaviour view in the pooled history.
    pub view_weights: Option<Vec<f64>>,
    /// Cosine between the pooled history and the prefix encoding.
    pub cosine: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub suggestions: Vec<Suggestion>,
    pub variant: String,
    pub latency_ms: f64,
    /// `ok` or `no-candidates`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub debug: Option<Vec<SuggestionDebug>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
    pub trie_queries: usize,
}

pub struct SuggestService {
    pub config: ServiceConfig,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    pub sessions: SessionStore,
    batcher: Batcher,
}

fn now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

impl SuggestService {
    /// Must be called inside a tokio runtime; the batching worker is spawned on it.
    pub fn new(config: ServiceConfig, sessions: SessionStore) -> Self {
        let batcher = Batcher::spawn(Duration::from_millis(config.window_ms), config.max_batch);
        Self {
            config,
            snapshot: RwLock::new(None),
            sessions,
            batcher,
        }
    }

    /// Atomically replaces the trie/model pair.
    pub fn install(&self, snapshot: Snapshot) -> Result<(), ServiceError> {
        if snapshot.model.config.views != self.sessions.views() {
            return Err(ServiceError::Config("checkpoint views differ from the session store's".into()));
        }
        *self.snapshot.write().expect("snapshot lock") = Some(Arc::new(snapshot));
        Ok(())
    }

    pub fn current(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn batch_stats(&self) -> &BatchStats {
        self.batcher.stats()
    }

    pub fn health(&self) -> Health {
        let snap = self.current();
        Health {
            status: "ok".into(),
            model_loaded: snap.is_some(),
            trie_queries: snap.map_or(0, |s| s.matcher.trie.len()),
        }
    }

    pub fn record_click(&self, user_id: &str, text: &str, kind: &str) -> Result<usize, ServiceError> {
        let kind: BehaviorKind = kind.parse().map_err(ServiceError::BadRequest)?;
        if user_id.is_empty() {
            return Err(ServiceError::BadRequest("empty uid".into()));
        }
        self.sessions.record(user_id, kind, text, now_ms())
    }

    pub async fn suggest(&self, req: &SuggestRequest) -> Result<SuggestResponse, ServiceError> {
        let started = Instant::now();
        let snap = self.current().ok_or(ServiceError::Unavailable)?;
        let prefix = normalize_query(&req.prefix).ok_or_else(|| ServiceError::BadRequest("empty prefix".into()))?;
        let k = req.k.unwrap_or(self.config.default_k);
        let matched = snap.matcher.mcg(&prefix, self.config.candidates);
        let variant = snap.model.variant.name().to_string();
        if matched.is_empty() {
            return Ok(SuggestResponse {
                suggestions: Vec::new(),
                variant,
                latency_ms: started.elapsed().as_secs_f64() * 1e3,
                status: "no-candidates".into(),
                debug: req.debug.then(Vec::new),
            });
        }
        let candidates = candidates_for(&matched, None);
        let mut history = self.sessions.snapshot(&req.user_id);
        if self.config.filter_history {
            history = filter_history(&history, &prefix, snap.lexicon.as_ref());
        }
        let scored = self
            .batcher
            .score(snap.clone(), prefix, history, candidates.clone())
            .await
            .map_err(|e| ServiceError::Inference(e.to_string()))?;
        let probs: Vec<f64> = scored.iter().map(|s| s.probability).collect();
        let order: Vec<usize> = rank_by_score(&candidates, &probs).into_iter().take(k).collect();
        let suggestions = order
            .iter()
            .map(|&i| Suggestion {
                query: candidates[i].text.clone(),
                score: probs[i],
            })
            .collect();
        let debug = req.debug.then(|| {
            order
                .iter()
                .map(|&i| SuggestionDebug {
                    query: candidates[i].text.clone(),
                    view_weights: scored[i].view_weights.clone(),
                    cosine: scored[i].cosine,
                })
                .collect()
        });
        Ok(SuggestResponse {
            suggestions,
            variant,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
            status: "ok".into(),
            debug,
        })
    }
}
