use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use qac_core::corpus::{normalize_query, BehaviorKind, History, ViewSpec};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Recent behaviour per user, capped per view and evicted oldest first.
///
/// Each user has their own lock, so clicks by different users never contend
/// and one user's appends are applied in arrival order.
#[derive(Debug)]
pub struct SessionStore {
    views: Vec<ViewSpec>,
    users: RwLock<HashMap<String, Arc<Mutex<History>>>>,
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    views: Vec<ViewSpec>,
    users: Vec<(String, History)>,
}

impl SessionStore {
    pub fn new(views: Vec<ViewSpec>) -> Self {
        Self {
            views,
            users: RwLock::new(HashMap::new()),
        }
    }

    pub fn views(&self) -> &[ViewSpec] {
        &self.views
    }

    fn slot(&self, user: &str) -> Arc<Mutex<History>> {
        if let Some(s) = self.users.read().expect("session lock").get(user) {
            return s.clone();
        }
        let mut users = self.users.write().expect("session lock");
        users
            .entry(user.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(History::empty(&self.views))))
            .clone()
    }

    /// Appends a normalised event to the matching view. Returns the view's
    /// new length.
    pub fn record(&self, user: &str, kind: BehaviorKind, text: &str, timestamp: i64) -> Result<usize, ServiceError> {
        let text = normalize_query(text).ok_or_else(|| ServiceError::BadRequest("empty text".into()))?;
        let Some(v) = self.views.iter().position(|s| s.kind == kind) else {
            return Err(ServiceError::BadRequest(format!("no view records `{kind}` events")));
        };
        let slot = self.slot(user);
        let mut h = slot.lock().expect("user lock");
        let seq = &mut h.views[v];
        seq.push_capped(text, timestamp, self.views[v].cap);
        Ok(seq.len())
    }

    /// A consistent copy of the user's history; empty for unknown users.
    pub fn snapshot(&self, user: &str) -> History {
        match self.users.read().expect("session lock").get(user) {
            Some(s) => s.lock().expect("user lock").clone(),
            None => History::empty(&self.views),
        }
    }

    /// Replaces a user's history, truncating each view to its cap.
    pub fn set(&self, user: &str, mut history: History) {
        for (seq, spec) in history.views.iter_mut().zip(&self.views) {
            let excess = seq.items.len().saturating_sub(spec.cap);
            seq.items.drain(..excess);
            seq.timestamps.drain(..excess.min(seq.timestamps.len()));
        }
        *self.slot(user).lock().expect("user lock") = history;
    }

    pub fn num_users(&self) -> usize {
        self.users.read().expect("session lock").len()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let users = self.users.read().expect("session lock");
        let mut list: Vec<(String, History)> = users
            .iter()
            .map(|(u, h)| (u.clone(), h.lock().expect("user lock").clone()))
            .collect();
        list.sort_by(|a, b| a.0.cmp(&b.0));
        let body = serde_json::to_vec(&Persisted {
            views: self.views.clone(),
            users: list,
        })?;
        std::fs::write(path, body)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let bytes = std::fs::read(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let p: Persisted =
            serde_json::from_slice(&bytes).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let store = Self::new(p.views);
        for (u, h) in p.users {
            if h.views.len() != store.views.len() {
                return Err(ServiceError::Config(format!("session for `{u}` has the wrong view count")));
            }
            store.set(&u, h);
        }
        Ok(store)
    }
}
