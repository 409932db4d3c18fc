use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use super::driver::ms_since;
use super::exec::{
    client_set, fetch_node_data, fetch_server_results, Backend, FetchMode, PlanLabel, RuntimeError,
    ServerResults, TimingBreakdown,
};
use crate::cache::{InteractionPredictor, PrefetchJob, PrefetchTask, ResultCache};
use crate::dataflow::{build_dataflow, DataflowGraph, NodeId, SignalValue, Signals};
use crate::partition::{
    apply_override, baseline_plan, candidate_plans_for_interactions, choose_partition, CostContext,
    CostParams, PartitionError, PartitionPlan, Side, Stats,
};
use crate::spec::VizSpec;
use crate::table::Table;
use crate::value::Value;

/// Which of a session's plans served an interaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanChoice {
    /// The per-signal plan that keeps the signal's closure on the client.
    Candidate,
    /// The session's active plan.
    Static,
}

/// One row of a session's timing history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub seq: u64,
    #[serde(flatten)]
    pub timing: TimingBreakdown,
    pub total_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    /// Datasets whose output was recomputed.
    pub changed: Vec<String>,
    pub sinks: BTreeMap<String, Arc<Table>>,
    pub timing: TimingBreakdown,
    pub plan: PlanChoice,
    pub driver_calls: u64,
    pub cache_hits: u64,
}

/// Which node outputs held by the graph are current. `stale` covers data
/// outputs; `fresh_extents` the extent values published so far.
#[derive(Clone, Debug, Default)]
pub struct Freshness {
    pub stale: BTreeSet<NodeId>,
    pub fresh_extents: BTreeSet<NodeId>,
}

impl Freshness {
    pub fn all_stale(g: &DataflowGraph) -> Freshness {
        Freshness {
            stale: (0..g.len()).collect(),
            fresh_extents: BTreeSet::new(),
        }
    }

    pub fn invalidate(&mut self, g: &DataflowGraph, signal: &str) {
        let closure = g.signal_closure(signal).unwrap_or_default();
        for n in closure {
            self.stale.insert(n);
            self.fresh_extents.remove(&n);
        }
    }

    pub fn needs(&self, id: NodeId, is_extent: bool) -> bool {
        if is_extent {
            !self.fresh_extents.contains(&id)
        } else {
            self.stale.contains(&id)
        }
    }
}

/// Probes `candidate` then `fallback` against the cache; on a double miss
/// picks the cheaper by estimate. Returns the plan to run, its mode, and the
/// probe results when a probe hit.
pub(crate) fn choose_step<'p>(
    g: &DataflowGraph,
    signals: &Signals,
    fresh: &Freshness,
    candidate: Option<&'p PartitionPlan>,
    fallback: &'p PartitionPlan,
    backend: &Backend,
    cache: &ResultCache,
) -> Result<(PlanChoice, &'p PartitionPlan, Option<ServerResults>), RuntimeError> {
    let need = |id: NodeId, e: bool| fresh.needs(id, e);
    if let Some(c) = candidate {
        let mut s = signals.clone();
        if let Some(r) = fetch_server_results(c, g, &mut s, backend, Some(cache), FetchMode::Probe, &need)? {
            return Ok((PlanChoice::Candidate, c, Some(r)));
        }
    }
    let mut s = signals.clone();
    if let Some(r) = fetch_server_results(fallback, g, &mut s, backend, Some(cache), FetchMode::Probe, &need)? {
        return Ok((PlanChoice::Static, fallback, Some(r)));
    }
    Ok(match candidate {
        Some(c) if c.est.total_ms <= fallback.est.total_ms => (PlanChoice::Candidate, c, None),
        _ => (PlanChoice::Static, fallback, None),
    })
}

/// Interactive state for one spec: the graph, its plans, signal values,
/// cache, predictor and timing history. Requests on one session must be
/// serialized by the owner.
pub struct Session {
    graph: DataflowGraph,
    backend: Backend,
    cache: Arc<ResultCache>,
    stats: Stats,
    params: CostParams,
    recommended: PartitionPlan,
    active: PartitionPlan,
    label: PlanLabel,
    candidates: BTreeMap<String, PartitionPlan>,
    fresh: Freshness,
    predictor: InteractionPredictor,
    timings: Vec<TimingRow>,
    seq: u64,
    generation: Arc<AtomicU64>,
}

impl Session {
    /// Builds the graph, gathers table statistics and plans. Nothing runs
    /// until [`execute_active`](Self::execute_active).
    pub fn new(
        spec: &VizSpec,
        backend: Backend,
        cache: Arc<ResultCache>,
        params: CostParams,
    ) -> Result<Session, RuntimeError> {
        let graph = build_dataflow(spec).map_err(|e| RuntimeError::InvalidValue(e.to_string()))?;
        let mut stats = Stats::default();
        for src in &spec.sources {
            let table = backend.bindings.table(&src.name);
            stats
                .tables
                .insert(src.name.clone(), backend.network.driver.table_stats(&table)?);
        }
        let ctx = CostContext {
            stats: &stats,
            net: backend.network.profile,
            params: &params,
        };
        let dialect = backend.network.dialect();
        let recommended = choose_partition(&graph, &ctx, dialect);
        let candidates = candidate_plans_for_interactions(&graph, &ctx, dialect);
        let fresh = Freshness::all_stale(&graph);
        Ok(Session {
            graph,
            backend,
            cache,
            stats,
            params,
            active: recommended.clone(),
            recommended,
            label: PlanLabel::Recommended,
            candidates,
            fresh,
            predictor: InteractionPredictor::default(),
            timings: Vec::new(),
            seq: 0,
            generation: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn with_predictor(mut self, predictor: InteractionPredictor) -> Session {
        self.predictor = predictor;
        self
    }

    pub fn graph(&self) -> &DataflowGraph {
        &self.graph
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn cache(&self) -> &Arc<ResultCache> {
        &self.cache
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    pub fn cost_context(&self) -> CostContext<'_> {
        CostContext {
            stats: &self.stats,
            net: self.backend.network.profile,
            params: &self.params,
        }
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.active
    }

    pub fn plan_label(&self) -> PlanLabel {
        self.label
    }

    pub fn recommended(&self) -> &PartitionPlan {
        &self.recommended
    }

    pub fn candidates(&self) -> &BTreeMap<String, PartitionPlan> {
        &self.candidates
    }

    pub fn timings(&self) -> &[TimingRow] {
        &self.timings
    }

    pub fn predictor(&self) -> &InteractionPredictor {
        &self.predictor
    }

    /// Current scalar signal values.
    pub fn signal_values(&self) -> HashMap<String, Value> {
        self.graph
            .signal_defs()
            .iter()
            .filter_map(|d| match self.graph.signal_value(&d.name) {
                Some(SignalValue::Scalar(v)) => Some((d.name.clone(), v.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn plan_json(&self) -> serde_json::Value {
        let base = |s: &str| self.backend.bindings.table(s);
        self.active
            .to_json(&self.graph, self.backend.network.dialect(), &base)
    }

    /// Runs the active plan from scratch and records its timing.
    pub fn execute_active(&mut self) -> Result<Outcome, RuntimeError> {
        let plan = self.active.clone();
        self.execute(&plan, self.label)
    }

    /// Runs the all-client plan from scratch and records its timing; the
    /// active plan is unchanged.
    pub fn execute_baseline(&mut self) -> Result<Outcome, RuntimeError> {
        let plan = baseline_plan(&self.graph, &self.cost_context());
        self.execute(&plan, PlanLabel::Baseline)
    }

    /// Moves `node` to `side`, makes the repaired plan active under the
    /// `custom` label and runs it.
    pub fn override_node(&mut self, node: NodeId, side: Side) -> Result<Outcome, OverrideError> {
        let plan = apply_override(
            &self.active,
            &self.graph,
            node,
            side,
            &self.cost_context(),
            self.backend.network.dialect(),
        )?;
        self.active = plan.clone();
        self.label = PlanLabel::Custom;
        Ok(self.execute(&plan, PlanLabel::Custom)?)
    }

    /// Makes `plan` active and runs it.
    pub fn set_plan(&mut self, plan: PartitionPlan, label: PlanLabel) -> Result<Outcome, RuntimeError> {
        self.active = plan.clone();
        self.label = label;
        self.execute(&plan, label)
    }

    fn execute(&mut self, plan: &PartitionPlan, label: PlanLabel) -> Result<Outcome, RuntimeError> {
        self.generation.fetch_add(1, Ordering::SeqCst);
        self.fresh = Freshness::all_stale(&self.graph);
        self.graph.clear_outputs();
        let out = self.step(plan, FetchMode::Execute, None, PlanChoice::Static, label)?;
        self.seq += 1;
        self.timings.push(TimingRow {
            seq: self.seq,
            timing: out.timing,
            total_ms: out.timing.total_ms(),
        });
        Ok(out)
    }

    /// Applies a signal change. Tries, in order: the signal's candidate plan
    /// from cache, the active plan from cache, then whichever of the two is
    /// estimated cheaper against the DBMS.
    pub fn handle_interaction(&mut self, signal: &str, value: Value) -> Result<Outcome, RuntimeError> {
        let def = self
            .graph
            .signal_def(signal)
            .ok_or_else(|| RuntimeError::UnknownSignal(signal.to_string()))?;
        def.validate(&value).map_err(RuntimeError::InvalidValue)?;
        self.generation.fetch_add(1, Ordering::SeqCst);
        self.graph.set_signal(signal, value.clone())?;
        self.fresh.invalidate(&self.graph, signal);
        self.predictor.record(signal, value);

        let (choice, plan, probed) = {
            let (c, p, r) = choose_step(
                &self.graph,
                self.graph.signal_values(),
                &self.fresh,
                self.candidates.get(signal),
                &self.active,
                &self.backend,
                &self.cache,
            )?;
            (c, p.clone(), r)
        };
        let mode = if probed.is_some() {
            FetchMode::Probe
        } else {
            FetchMode::Execute
        };
        self.step(&plan, mode, probed, choice, self.label)
    }

    /// Fetches what `plan` needs from the server (unless `fetched` already
    /// holds it), injects it and evaluates the stale client nodes.
    fn step(
        &mut self,
        plan: &PartitionPlan,
        mode: FetchMode,
        fetched: Option<ServerResults>,
        choice: PlanChoice,
        label: PlanLabel,
    ) -> Result<Outcome, RuntimeError> {
        let res = match fetched {
            Some(r) => {
                // probes leave recency alone; count the hits now
                for k in &r.keys {
                    self.cache.get(k);
                }
                r
            }
            None => {
                let fresh = &self.fresh;
                let need = |id: NodeId, e: bool| fresh.needs(id, e);
                let mut sigs = self.graph.signal_values().clone();
                fetch_server_results(
                    plan,
                    &self.graph,
                    &mut sigs,
                    &self.backend,
                    Some(&self.cache),
                    mode,
                    &need,
                )?
                .ok_or_else(|| RuntimeError::InvalidValue("probe missed after a hit".into()))?
            }
        };
        let mut refreshed: BTreeSet<NodeId> = BTreeSet::new();
        for (id, signal, lo, hi) in &res.extents {
            self.graph.set_extent(signal, lo.clone(), hi.clone());
            self.fresh.fresh_extents.insert(*id);
        }
        for (id, t, _) in &res.producers {
            self.graph.inject(*id, t.clone());
            self.fresh.stale.remove(id);
            refreshed.insert(*id);
        }
        let eval: BTreeSet<NodeId> = client_set(plan, &self.graph)
            .intersection(&self.fresh.stale)
            .copied()
            .collect();
        let mut client_ms = 0.0;
        if !eval.is_empty() {
            let start = Instant::now();
            self.graph.evaluate(&eval)?;
            client_ms = ms_since(start);
        }
        for &n in &eval {
            self.fresh.stale.remove(&n);
            if self.graph.node(n).transform().and_then(|t| t.published_signal()).is_some() {
                self.fresh.fresh_extents.insert(n);
            }
        }
        refreshed.extend(eval);
        let changed = self
            .graph
            .datasets()
            .filter(|(_, id)| refreshed.contains(id))
            .map(|(n, _)| n.to_string())
            .collect();
        Ok(Outcome {
            changed,
            sinks: self.graph.sink_outputs(),
            timing: TimingBreakdown {
                label,
                server_ms: res.server_ms,
                network_ms: res.network_ms,
                client_ms,
            },
            plan: choice,
            driver_calls: res.driver_calls,
            cache_hits: res.cache_hits,
        })
    }

    /// Rows of any dataset under the current signal values. Datasets that
    /// live entirely on the server are queried on demand.
    pub fn dataset_table(&self, name: &str) -> Result<Arc<Table>, RuntimeError> {
        let id = self
            .graph
            .dataset_node(name)
            .ok_or_else(|| RuntimeError::UnknownDataset(name.to_string()))?;
        if !self.fresh.stale.contains(&id) {
            if let Some(t) = self.graph.output(id) {
                return Ok(t.clone());
            }
        }
        Ok(fetch_node_data(&self.graph, id, &self.backend, Some(&self.cache))?.0)
    }

    /// Snapshot of the prefetch work predicted from the current state. The
    /// job is dropped at its next task boundary once this session handles
    /// another request.
    pub fn prefetch_job(&self) -> PrefetchJob {
        let current = self.signal_values();
        let tasks = self
            .predictor
            .predict(self.graph.signal_defs(), &current)
            .into_iter()
            .map(|p| PrefetchTask {
                signal: p.signal,
                value: p.value,
                priority: p.probability,
            })
            .collect();
        PrefetchJob {
            graph: self.graph.clone(),
            fresh: self.fresh.clone(),
            active: self.active.clone(),
            candidates: self.candidates.clone(),
            backend: self.backend.clone(),
            cache: self.cache.clone(),
            tasks,
            generation: self.generation.clone(),
            started_at: self.generation.load(Ordering::SeqCst),
        }
    }

    /// Counter bumped by every request; prefetch jobs from older values stop.
    pub fn generation(&self) -> &Arc<AtomicU64> {
        &self.generation
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OverrideError {
    #[error(transparent)]
    Rejected(#[from] PartitionError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}
