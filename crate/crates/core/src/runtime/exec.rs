use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::driver::{ms_since, DriverError, SimulatedNetwork};
use crate::cache::{CanonicalKey, ResultCache};
use crate::dataflow::{DataflowGraph, EvalError, NodeId, NodeKind, SignalValue, Signals};
use crate::partition::{PartitionPlan, Side};
use crate::spec::TransformDef;
use crate::sql::{merge_region, node_query_with, render_sql, rewrite, SqlDialect, SqlError, SqlQuery};
use crate::table::Table;
use crate::value::{Field, Schema, Value};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("result of {label} does not match its schema: {message}")]
    Schema { node: NodeId, label: String, message: String },
    #[error("unknown signal '{0}'")]
    UnknownSignal(String),
    #[error("{0}")]
    InvalidValue(String),
    #[error("data source: {0}")]
    Source(String),
    #[error("no dataset '{0}'")]
    UnknownDataset(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanLabel {
    Baseline,
    Recommended,
    Custom,
}

impl PlanLabel {
    pub fn name(self) -> &'static str {
        match self {
            PlanLabel::Baseline => "baseline",
            PlanLabel::Recommended => "recommended",
            PlanLabel::Custom => "custom",
        }
    }
}

/// Measured wall-clock split of one execution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimingBreakdown {
    pub label: PlanLabel,
    pub server_ms: f64,
    pub network_ms: f64,
    pub client_ms: f64,
}

impl TimingBreakdown {
    pub fn total_ms(&self) -> f64 {
        self.server_ms + self.network_ms + self.client_ms
    }
}

/// Where each data source lives in the DBMS and the hash of its content.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    /// Source name -> table name.
    pub tables: BTreeMap<String, String>,
    /// Table name -> content hash.
    pub hashes: BTreeMap<String, String>,
}

impl Bindings {
    pub fn table(&self, source: &str) -> String {
        self.tables
            .get(source)
            .cloned()
            .unwrap_or_else(|| source.to_string())
    }

    /// Cache key of `sql` reading `tables`.
    pub fn key(&self, tables: &[&str], sql: &str) -> CanonicalKey {
        let mut names: Vec<&str> = tables.to_vec();
        names.sort_unstable();
        names.dedup();
        let content: Vec<String> = names
            .iter()
            .map(|t| format!("{t}={}", self.hashes.get(*t).map_or("?", String::as_str)))
            .collect();
        CanonicalKey::new(content.join(","), sql)
    }
}

/// A driver behind a simulated network, plus the table bindings.
#[derive(Clone)]
pub struct Backend {
    pub network: SimulatedNetwork,
    pub bindings: Bindings,
}

/// Server-side results a plan needs before the client can run.
#[derive(Clone, Debug, Default)]
pub struct ServerResults {
    /// `(extent node, signal, min, max)`.
    pub extents: Vec<(NodeId, String, Value, Value)>,
    /// Cut producer tables with their cache keys.
    pub producers: Vec<(NodeId, Arc<Table>, CanonicalKey)>,
    pub server_ms: f64,
    pub network_ms: f64,
    pub driver_calls: u64,
    pub cache_hits: u64,
    /// Keys of every table served, in fetch order.
    pub keys: Vec<CanonicalKey>,
}

/// How [`fetch_server_results`] may obtain tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FetchMode {
    /// Cache first, then the driver.
    Execute,
    /// Cache only, without touching recency or counters; `None` on a miss.
    Probe,
}

fn extent_schema(g: &DataflowGraph, id: NodeId) -> Schema {
    let node = g.node(id);
    let ty = match node.transform() {
        Some(TransformDef::Extent { field, .. }) => node
            .input
            .and_then(|i| g.node(i).output_schema.field(field).map(|f| f.ty)),
        _ => None,
    }
    .unwrap_or(crate::value::ScalarType::Number);
    Schema(vec![Field::new("min", ty), Field::new("max", ty)])
}

/// Which server results a fetch must produce: `(node, is_extent)`.
pub type Need<'a> = &'a dyn Fn(NodeId, bool) -> bool;

/// Every server extent and every cut producer.
pub fn need_all(_: NodeId, _: bool) -> bool {
    true
}

/// Runs (or looks up) the server queries of `plan` selected by `need` in
/// topological order: one per server extent and one per cut producer.
/// Extent values are written into `signals` so later queries see them.
pub fn fetch_server_results(
    plan: &PartitionPlan,
    g: &DataflowGraph,
    signals: &mut Signals,
    backend: &Backend,
    cache: Option<&ResultCache>,
    mode: FetchMode,
    need: Need<'_>,
) -> Result<Option<ServerResults>, RuntimeError> {
    let producers: BTreeSet<NodeId> = plan.cut_producers().into_iter().collect();
    let dialect = backend.network.dialect().clone();
    let base = |s: &str| backend.bindings.table(s);
    let mut out = ServerResults::default();
    for &id in g.topo_order() {
        if plan.side(id) != Some(Side::Server) {
            continue;
        }
        let node = g.node(id);
        let extent_signal = node
            .transform()
            .and_then(|t| t.published_signal())
            .map(str::to_string);
        let jobs: Vec<(bool, Schema)> = {
            let mut v = Vec::new();
            if extent_signal.is_some() && need(id, true) {
                v.push((true, extent_schema(g, id)));
            }
            if producers.contains(&id) && need(id, false) {
                v.push((false, node.output_schema.clone()));
            }
            v
        };
        for (is_extent, schema) in jobs {
            let q = if is_extent {
                node_query_with(g, id, &base, &dialect, signals)?
            } else {
                data_query(g, id, &base, &dialect, signals)?
            };
            let Some((table, key)) = fetch_table(g, id, &q, &schema, backend, cache, mode, &mut out)? else {
                return Ok(None);
            };
            out.keys.push(key.clone());
            if is_extent {
                let signal = extent_signal.clone().expect("extent publishes a signal");
                let (lo, hi) = if table.num_rows() == 0 {
                    (Value::Null, Value::Null)
                } else {
                    (table.value(0, 0), table.value(0, 1))
                };
                signals.insert(signal.clone(), SignalValue::Extent(lo.clone(), hi.clone()));
                out.extents.push((id, signal, lo, hi));
            } else {
                out.producers.push((id, table, key));
            }
        }
    }
    Ok(Some(out))
}

/// The query producing the data output of `id`; an extent passes its input
/// through.
pub fn data_query(
    g: &DataflowGraph,
    id: NodeId,
    base: &dyn Fn(&str) -> String,
    dialect: &SqlDialect,
    signals: &Signals,
) -> Result<SqlQuery, SqlError> {
    let mut chain = g.upstream(id);
    chain.reverse();
    chain.push(id);
    let NodeKind::Scan { source } = &g.node(chain[0]).kind else {
        return Err(SqlError::Chain(format!("{} has no scan", g.node(id).label())));
    };
    merge_region(g, &chain, &base(source), signals, dialect)
}

/// Rewrites and renders `q`, then serves it from the cache or the driver.
/// In probe mode a miss yields `None`.
#[allow(clippy::too_many_arguments)]
fn fetch_table(
    g: &DataflowGraph,
    id: NodeId,
    q: &SqlQuery,
    schema: &Schema,
    backend: &Backend,
    cache: Option<&ResultCache>,
    mode: FetchMode,
    out: &mut ServerResults,
) -> Result<Option<(Arc<Table>, CanonicalKey)>, RuntimeError> {
    let q = rewrite(q);
    let sql = render_sql(&q, backend.network.dialect())?;
    let key = backend.bindings.key(&q.tables(), &sql);
    let cached = match (cache, mode) {
        (Some(c), FetchMode::Probe) => c.peek(&key),
        (Some(c), FetchMode::Execute) => c.get(&key),
        (None, _) => None,
    };
    if let Some(t) = cached {
        out.cache_hits += 1;
        return Ok(Some((t, key)));
    }
    if mode == FetchMode::Probe {
        return Ok(None);
    }
    let fetched = backend.network.fetch(&sql)?;
    out.server_ms += fetched.server_ms;
    out.network_ms += fetched.network_ms;
    out.driver_calls += 1;
    let t = fetched.table.conform(schema).map_err(|e| RuntimeError::Schema {
        node: id,
        label: g.node(id).label(),
        message: format!("{e}; sql: {sql}"),
    })?;
    let t = Arc::new(t);
    if let Some(c) = cache {
        c.put(key.clone(), t.clone());
    }
    Ok(Some((t, key)))
}

/// Fetches the data output of one node through the cache.
pub fn fetch_node_data(
    g: &DataflowGraph,
    id: NodeId,
    backend: &Backend,
    cache: Option<&ResultCache>,
) -> Result<(Arc<Table>, ServerResults), RuntimeError> {
    let base = |s: &str| backend.bindings.table(s);
    let q = data_query(g, id, &base, backend.network.dialect(), g.signal_values())?;
    let mut out = ServerResults::default();
    let schema = g.node(id).output_schema.clone();
    let (t, _) = fetch_table(g, id, &q, &schema, backend, cache, FetchMode::Execute, &mut out)?
        .expect("execute mode always yields a table");
    Ok((t, out))
}

/// Client-side nodes of `plan` plus every signal node.
pub fn client_set(plan: &PartitionPlan, g: &DataflowGraph) -> BTreeSet<NodeId> {
    g.nodes
        .iter()
        .filter(|n| n.is_signal() || plan.side(n.id) == Some(Side::Client))
        .map(|n| n.id)
        .collect()
}

/// Result of one full plan execution.
#[derive(Clone, Debug)]
pub struct Execution {
    pub sinks: BTreeMap<String, Arc<Table>>,
    pub timing: TimingBreakdown,
    pub driver_calls: u64,
}

/// Executes `plan` from scratch with `signals` overriding initial values:
/// server queries first, their tables injected at the cut, then the client
/// remainder.
pub fn execute_plan(
    plan: &PartitionPlan,
    g: &mut DataflowGraph,
    backend: &Backend,
    cache: Option<&ResultCache>,
    signals: &HashMap<String, Value>,
    label: PlanLabel,
) -> Result<Execution, RuntimeError> {
    g.reset_signals();
    for (name, v) in signals {
        g.set_signal(name, v.clone())?;
    }
    g.clear_outputs();
    let mut sigs = g.signal_values().clone();
    let res = fetch_server_results(plan, g, &mut sigs, backend, cache, FetchMode::Execute, &need_all)?
        .expect("execute mode always yields results");
    for (_, signal, lo, hi) in &res.extents {
        g.set_extent(signal, lo.clone(), hi.clone());
    }
    for (id, t, _) in &res.producers {
        g.inject(*id, t.clone());
    }
    let start = Instant::now();
    g.evaluate(&client_set(plan, g))?;
    let client_ms = ms_since(start);
    Ok(Execution {
        sinks: g.sink_outputs(),
        timing: TimingBreakdown {
            label,
            server_ms: res.server_ms,
            network_ms: res.network_ms,
            client_ms,
        },
        driver_calls: res.driver_calls,
    })
}
