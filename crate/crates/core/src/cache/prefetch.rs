use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::lru::ResultCache;
use crate::dataflow::{DataflowGraph, SignalValue};
use crate::partition::PartitionPlan;
use crate::runtime::{choose_step, fetch_server_results, Backend, FetchMode, Freshness, RuntimeError};
use crate::value::Value;

/// A predicted interaction whose server results should be cached.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefetchTask {
    pub signal: String,
    pub value: Value,
    /// Predicted probability, in (0, 1].
    pub priority: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrefetchReport {
    /// Tasks that queried the DBMS.
    pub fetched: usize,
    /// Tasks whose results were already cached.
    pub cached: usize,
    pub failed: usize,
    /// Tasks dropped because a newer request arrived.
    pub dropped: usize,
    pub driver_calls: u64,
}

/// Snapshot of a session taken while it is idle. Running it only touches
/// the shared cache.
pub struct PrefetchJob {
    pub graph: DataflowGraph,
    pub fresh: Freshness,
    pub active: PartitionPlan,
    pub candidates: BTreeMap<String, PartitionPlan>,
    pub backend: Backend,
    pub cache: Arc<ResultCache>,
    pub tasks: Vec<PrefetchTask>,
    pub generation: Arc<AtomicU64>,
    pub started_at: u64,
}

impl PrefetchJob {
    fn preempted(&self) -> bool {
        self.generation.load(Ordering::SeqCst) != self.started_at
    }

    /// Runs tasks by descending priority until done or preempted.
    pub fn run(mut self) -> PrefetchReport {
        self.tasks
            .sort_by(|a, b| b.priority.total_cmp(&a.priority));
        let mut report = PrefetchReport::default();
        let tasks = std::mem::take(&mut self.tasks);
        for (i, task) in tasks.iter().enumerate() {
            if self.preempted() {
                report.dropped = tasks.len() - i;
                break;
            }
            match self.run_task(task) {
                Ok(None) => report.cached += 1,
                Ok(Some(calls)) => {
                    report.fetched += 1;
                    report.driver_calls += calls;
                }
                Err(e) => {
                    tracing::warn!(signal = %task.signal, value = %task.value, error = %e, "prefetch failed");
                    report.failed += 1;
                }
            }
        }
        report
    }

    pub fn spawn(self) -> JoinHandle<PrefetchReport> {
        std::thread::spawn(move || self.run())
    }

    /// Fetches what the interaction would fetch. `None` when nothing was
    /// missing from the cache.
    fn run_task(&self, task: &PrefetchTask) -> Result<Option<u64>, RuntimeError> {
        let g = &self.graph;
        let mut fresh = self.fresh.clone();
        fresh.invalidate(g, &task.signal);
        let mut signals = g.signal_values().clone();
        signals.insert(task.signal.clone(), SignalValue::Scalar(task.value.clone()));
        let (_, plan, probed) = choose_step(
            g,
            &signals,
            &fresh,
            self.candidates.get(&task.signal),
            &self.active,
            &self.backend,
            &self.cache,
        )?;
        if probed.is_some() {
            return Ok(None);
        }
        let need = |id, e| fresh.needs(id, e);
        let res = fetch_server_results(
            plan,
            g,
            &mut signals,
            &self.backend,
            Some(&self.cache),
            FetchMode::Execute,
            &need,
        )?
        .expect("execute mode always yields results");
        Ok(Some(res.driver_calls))
    }
}
