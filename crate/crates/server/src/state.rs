use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use std::collections::BTreeMap;

use vegaplus_core::cache::{CacheMetrics, ResultCache};
use vegaplus_core::partition::NetworkProfile;
use vegaplus_core::runtime::{bind_sources, connect, Backend, DbDriver, DriverCatalog, DriverError, Session, SimulatedNetwork};
use vegaplus_core::spec::parse_spec_with_catalog;

use crate::config::Config;
use crate::error::{ApiError, ErrorCode};

/// How a request uses its session. Writes stop pending prefetch work;
/// interactions also start a new prefetch job afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
    Interact,
}

/// One live session. The tokio mutex queues requests FIFO.
pub struct SessionSlot {
    pub session: Arc<tokio::sync::Mutex<Session>>,
    /// Shared with the session; bumping it stops queued prefetch work.
    pub generation: Arc<AtomicU64>,
    last_used: Mutex<Instant>,
}

impl SessionSlot {
    fn touch(&self) {
        *self.last_used.lock().unwrap_or_else(|p| p.into_inner()) = Instant::now();
    }

    fn idle_for(&self) -> Duration {
        self.last_used.lock().unwrap_or_else(|p| p.into_inner()).elapsed()
    }
}

pub struct AppState {
    pub driver: Arc<dyn DbDriver>,
    pub config: Config,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

impl AppState {
    pub fn new(config: Config) -> Result<AppState, DriverError> {
        let driver = connect(&config.server.db)?;
        Ok(AppState::with_driver(driver, config))
    }

    pub fn with_driver(driver: Arc<dyn DbDriver>, config: Config) -> AppState {
        AppState {
            driver,
            config,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Parses and binds a spec and plans it against this state's driver.
    /// `bindings` renames spec table names to DBMS tables.
    pub fn open_session(
        &self,
        spec_text: &str,
        bindings: &BTreeMap<String, String>,
        profile: NetworkProfile,
    ) -> Result<Session, ApiError> {
        let catalog = DriverCatalog {
            driver: &*self.driver,
            tables: bindings,
            file_root: self.config.server.data_dir.as_deref(),
        };
        let spec = parse_spec_with_catalog(spec_text, &catalog)?;
        let bindings = bind_sources(&spec, &catalog)?;
        let backend = Backend {
            network: SimulatedNetwork::new(self.driver.clone(), profile),
            bindings,
        };
        let cache = Arc::new(ResultCache::new(self.config.cache.budget_bytes));
        Ok(Session::new(&spec, backend, cache, self.config.cost.clone())?
            .with_predictor(self.config.cache.predictor()))
    }

    fn ttl(&self) -> Duration {
        Duration::from_secs(self.config.server.session_ttl_secs)
    }

    pub fn insert(&self, session: Session) -> String {
        self.reap_expired();
        let id = uuid::Uuid::new_v4().simple().to_string();
        let slot = SessionSlot {
            generation: session.generation().clone(),
            session: Arc::new(tokio::sync::Mutex::new(session)),
            last_used: Mutex::new(Instant::now()),
        };
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.clone(), Arc::new(slot));
        id
    }

    pub fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        let slot = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::session_not_found(id))?;
        if slot.idle_for() > self.ttl() {
            self.remove(id);
            return Err(ApiError::session_not_found(id));
        }
        Ok(slot)
    }

    pub fn remove(&self, id: &str) -> bool {
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .remove(id)
            .is_some()
    }

    /// Drops sessions idle longer than the TTL; returns how many.
    pub fn reap_expired(&self) -> usize {
        let ttl = self.ttl();
        let mut map = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        let before = map.len();
        map.retain(|_, s| s.idle_for() <= ttl);
        before - map.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    /// Cache counters summed over live sessions. Sessions busy with a
    /// request are read through their shared cache handle.
    pub fn cache_metrics(&self) -> CacheMetrics {
        let slots: Vec<Arc<SessionSlot>> = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect();
        let mut total = CacheMetrics::default();
        for s in slots {
            let Ok(guard) = s.session.try_lock() else {
                continue;
            };
            let m = guard.cache().metrics();
            total.hits += m.hits;
            total.misses += m.misses;
            total.evictions += m.evictions;
            total.bytes += m.bytes;
            total.entries += m.entries;
            total.rejected += m.rejected;
        }
        total
    }

    /// Runs `f` on a blocking thread once earlier requests to the same
    /// session finish.
    pub async fn with_session<T, F>(&self, id: &str, access: Access, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
    {
        let slot = self.slot(id)?;
        if access != Access::Read {
            slot.generation.fetch_add(1, Ordering::SeqCst);
        }
        let mut guard = slot.session.clone().lock_owned().await;
        slot.touch();
        let prefetch = access == Access::Interact && self.config.cache.prefetch;
        let (out, job) = tokio::task::spawn_blocking(move || {
            let out = f(&mut guard);
            let job = (prefetch && out.is_ok()).then(|| guard.prefetch_job());
            (out, job)
        })
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?;
        if let Some(job) = job.filter(|j| !j.tasks.is_empty()) {
            drop(job.spawn());
        }
        out
    }
}
