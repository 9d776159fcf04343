use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use tvstrata::config::RunConfig;
use tvstrata::spectv::SpectralStack;
use tvstrata::ColorImage;

/// An uploaded image with its spectral stack. Immutable once created,
/// apart from the access time.
pub struct Session {
    pub id: String,
    pub image: ColorImage,
    pub stack: SpectralStack,
    /// Resolved configuration the stack was computed with.
    pub config: RunConfig,
    /// Flow steps whose inner solver hit its iteration cap.
    pub capped_steps: usize,
    pub created: Instant,
    last_access: Mutex<Instant>,
}

impl Session {
    pub fn new(image: ColorImage, stack: SpectralStack, config: RunConfig, capped_steps: usize) -> Self {
        let now = Instant::now();
        Self {
            id: uuid::Uuid::new_v4().simple().to_string(),
            image,
            stack,
            config,
            capped_steps,
            created: now,
            last_access: Mutex::new(now),
        }
    }

    pub fn touch(&self, now: Instant) {
        *self.last_access.lock().expect("access time lock") = now;
    }

    pub fn last_access(&self) -> Instant {
        *self.last_access.lock().expect("access time lock")
    }
}

#[derive(Clone)]
pub struct SessionStore {
    sessions: Arc<RwLock<HashMap<String, Arc<Session>>>>,
    ttl: Duration,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self { sessions: Arc::default(), ttl }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn insert(&self, session: Session) -> Arc<Session> {
        let session = Arc::new(session);
        self.sessions.write().expect("session table lock").insert(session.id.clone(), session.clone());
        session
    }

    /// Looks a session up and refreshes its access time. Expired sessions
    /// are dropped and reported as missing.
    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        let now = Instant::now();
        let found = self.sessions.read().expect("session table lock").get(id).cloned();
        match found {
            Some(s) if now.duration_since(s.last_access()) <= self.ttl => {
                s.touch(now);
                Some(s)
            }
            Some(_) => {
                self.sessions.write().expect("session table lock").remove(id);
                None
            }
            None => None,
        }
    }

    /// Drop sessions idle for longer than the TTL as of `now`. Returns how
    /// many were removed.
    pub fn purge_expired(&self, now: Instant) -> usize {
        let mut table = self.sessions.write().expect("session table lock");
        let before = table.len();
        table.retain(|_, s| now.saturating_duration_since(s.last_access()) <= self.ttl);
        before - table.len()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session table lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
