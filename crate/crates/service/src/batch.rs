use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use qac_core::corpus::{Candidate, History};
use qac_core::model::{GroupInput, ModelError, Scored};
use tokio::sync::{mpsc, oneshot};
use tokio::time::{timeout_at, Instant};

use crate::Snapshot;

/// One request waiting to be scored.
pub struct Pending {
    pub snapshot: Arc<Snapshot>,
    pub prefix: String,
    pub history: History,
    pub candidates: Vec<Candidate>,
    pub reply: oneshot::Sender<Result<Vec<Scored>, ModelError>>,
}

#[derive(Debug, Default)]
pub struct BatchStats {
    pub batches: AtomicU64,
    pub requests: AtomicU64,
    pub largest: AtomicU64,
}

/// Front end of the single batching worker.
#[derive(Clone)]
pub struct Batcher {
    tx: mpsc::UnboundedSender<Pending>,
    stats: Arc<BatchStats>,
}

impl Batcher {
    /// Spawns the worker on the current runtime. A batch launches when
    /// `max_batch` requests are queued or `window` has passed since the
    /// first of them arrived, whichever comes first.
    pub fn spawn(window: Duration, max_batch: usize) -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        let stats = Arc::new(BatchStats::default());
        tokio::spawn(run(rx, window, max_batch.max(1), stats.clone()));
        Self { tx, stats }
    }

    pub fn stats(&self) -> &BatchStats {
        &self.stats
    }

    pub async fn score(
        &self,
        snapshot: Arc<Snapshot>,
        prefix: String,
        history: History,
        candidates: Vec<Candidate>,
    ) -> Result<Vec<Scored>, ModelError> {
        let (reply, rx) = oneshot::channel();
        let pending = Pending {
            snapshot,
            prefix,
            history,
            candidates,
            reply,
        };
        if self.tx.send(pending).is_err() {
            return Err(ModelError::Config("batching worker stopped".into()));
        }
        rx.await
            .unwrap_or_else(|_| Err(ModelError::Config("batching worker dropped a request".into())))
    }
}

async fn run(mut rx: mpsc::UnboundedReceiver<Pending>, window: Duration, max_batch: usize, stats: Arc<BatchStats>) {
    while let Some(first) = rx.recv().await {
        let deadline = Instant::now() + window;
        let mut batch = vec![first];
        while batch.len() < max_batch {
            match timeout_at(deadline, rx.recv()).await {
                Ok(Some(p)) => batch.push(p),
                _ => break,
            }
        }
        stats.batches.fetch_add(1, Ordering::Relaxed);
        stats.requests.fetch_add(batch.len() as u64, Ordering::Relaxed);
        stats.largest.fetch_max(batch.len() as u64, Ordering::Relaxed);
        // The worker waits for each batch, so forwards never overlap.
        if let Err(e) = tokio::task::spawn_blocking(move || score_batch(batch)).await {
            tracing::error!("scoring task failed: {e}");
        }
    }
}

/// Scores every request in one forward pass per snapshot.
pub fn score_batch(batch: Vec<Pending>) {
    let mut rest = batch;
    while !rest.is_empty() {
        let snap = rest[0].snapshot.clone();
        let (same, other): (Vec<Pending>, Vec<Pending>) =
            rest.into_iter().partition(|p| Arc::ptr_eq(&p.snapshot, &snap));
        rest = other;
        let groups: Vec<GroupInput> = same
            .iter()
            .map(|p| GroupInput {
                prefix: &p.prefix,
                history: &p.history,
                candidates: &p.candidates,
            })
            .collect();
        match snap.model.score_detailed(&groups) {
            Ok(scores) => {
                for (p, s) in same.into_iter().zip(scores) {
                    let _ = p.reply.send(Ok(s));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for p in same {
                    let _ = p.reply.send(Err(ModelError::Config(msg.clone())));
                }
            }
        }
    }
}
