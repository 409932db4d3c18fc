use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::stats::{default_width, CostParams, NetworkProfile, Stats};
use crate::dataflow::transforms::{resolve_extent, resolve_maxbins};
use crate::dataflow::{BinLayout, DataflowGraph, NodeId, NodeKind, OperatorNode, Signals};
use crate::spec::TransformDef;
use crate::sql::{check_supported, node_query, render_sql, rewrite, SqlDialect};

/// Above this many joint candidates, trees are optimized one at a time.
const EXHAUSTIVE_LIMIT: usize = 65_536;

/// Bytes assumed for one `(min, max)` extent result.
const EXTENT_RESULT_BYTES: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Server,
    Client,
}

impl Side {
    pub fn parse(s: &str) -> Option<Side> {
        match s.to_ascii_lowercase().as_str() {
            "server" => Some(Side::Server),
            "client" => Some(Side::Client),
            _ => None,
        }
    }
}

/// Side of every scan and transform node.
pub type Assignment = BTreeMap<NodeId, Side>;

/// A Server to Client data edge. `to == None` is a sink dataset whose last
/// operator runs on the server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CutEdge {
    pub from: NodeId,
    pub to: Option<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeEstimate {
    pub from: NodeId,
    pub to: Option<NodeId>,
    pub rows: f64,
    pub bytes: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CostEstimate {
    pub server_ms: f64,
    pub transfer_ms: f64,
    pub client_ms: f64,
    pub total_ms: f64,
    /// Estimated rows and bytes per data edge and per server extent result.
    pub edges: Vec<EdgeEstimate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    pub assignment: Assignment,
    pub cut_edges: Vec<CutEdge>,
    pub est: CostEstimate,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PartitionError {
    #[error("override rejected for node {node}: {reason}")]
    OverrideRejected { node: NodeId, reason: String },
    #[error("no node {0}")]
    UnknownNode(NodeId),
}

/// Inputs of the cost model.
#[derive(Clone, Copy, Debug)]
pub struct CostContext<'a> {
    pub stats: &'a Stats,
    pub net: NetworkProfile,
    pub params: &'a CostParams,
}

impl PartitionPlan {
    pub fn side(&self, id: NodeId) -> Option<Side> {
        self.assignment.get(&id).copied()
    }

    pub fn server_nodes(&self) -> Vec<NodeId> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == Side::Server)
            .map(|(n, _)| *n)
            .collect()
    }

    /// Server nodes whose output crosses to the client, each once.
    pub fn cut_producers(&self) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self.cut_edges.iter().map(|e| e.from).collect();
        set.into_iter().collect()
    }

    /// True when every transform runs on the client.
    pub fn is_baseline(&self, g: &DataflowGraph) -> bool {
        self.assignment
            .iter()
            .all(|(n, s)| g.node(*n).is_scan() || *s == Side::Client)
    }

    /// JSON form: `{nodes, edges, cut_edges, estimate}`; server nodes carry
    /// their rendered SQL over base tables named by `base`.
    pub fn to_json(
        &self,
        g: &DataflowGraph,
        dialect: &SqlDialect,
        base: &dyn Fn(&str) -> String,
    ) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .assignment
            .iter()
            .map(|(&id, side)| {
                let n = g.node(id);
                let mut o = json!({
                    "id": id,
                    "kind": n.kind_name(),
                    "label": n.label(),
                    "dataset": n.dataset,
                    "side": side,
                });
                if *side == Side::Server {
                    let sql = node_query(g, id, base, dialect)
                        .and_then(|q| render_sql(&rewrite(&q), dialect));
                    if let Ok(sql) = sql {
                        o["sql"] = json!(sql);
                    }
                }
                o
            })
            .collect();
        let edges: Vec<serde_json::Value> = g.edges.iter().map(|(a, b)| json!([a, b])).collect();
        json!({
            "nodes": nodes,
            "edges": edges,
            "cut_edges": self.cut_edges,
            "estimate": {
                "server_ms": self.est.server_ms,
                "transfer_ms": self.est.transfer_ms,
                "client_ms": self.est.client_ms,
                "total_ms": self.est.total_ms,
            },
        })
    }
}

fn data_nodes(g: &DataflowGraph) -> impl Iterator<Item = &OperatorNode> {
    g.nodes.iter().filter(|n| n.is_data())
}

/// Nodes whose output some client consumer or sink reads from the server.
pub fn cut_edges(g: &DataflowGraph, assign: &Assignment) -> Vec<CutEdge> {
    let server = |n: NodeId| assign.get(&n) == Some(&Side::Server);
    let mut out: Vec<CutEdge> = g
        .edges
        .iter()
        .filter(|(a, b)| server(*a) && !server(*b))
        .map(|&(a, b)| CutEdge { from: a, to: Some(b) })
        .collect();
    for name in g.sink_datasets() {
        if let Some(t) = g.dataset_node(name) {
            if server(t) {
                out.push(CutEdge { from: t, to: None });
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Extent nodes publishing signals read by `id`.
fn extent_providers(g: &DataflowGraph, id: NodeId) -> Vec<NodeId> {
    match g.node(id).transform() {
        Some(t) => t
            .signal_refs()
            .iter()
            .filter_map(|s| g.signal_publisher(s))
            .collect(),
        None => Vec::new(),
    }
}

/// Data descendants of `id` over data edges, excluding `id`.
fn data_descendants(g: &DataflowGraph, id: NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut stack = vec![id];
    while let Some(n) = stack.pop() {
        for c in g.data_children(n) {
            if out.insert(c) {
                stack.push(c);
            }
        }
    }
    out
}

/// Checks the plan invariants: scans on the server, the server set closed
/// under data predecessors and extent providers, unsupported kinds on the
/// client.
pub fn validate_assignment(
    g: &DataflowGraph,
    assign: &Assignment,
    dialect: &SqlDialect,
) -> Result<(), String> {
    for n in data_nodes(g) {
        let side = assign
            .get(&n.id)
            .ok_or_else(|| format!("{} has no side", n.label()))?;
        if n.is_scan() {
            if *side != Side::Server {
                return Err(format!("{} must run on the server", n.label()));
            }
            continue;
        }
        if *side == Side::Client {
            continue;
        }
        let t = n.transform().expect("data node is scan or transform");
        if check_supported(t, dialect).is_err() {
            return Err(format!("{} is unsupported on {}", n.label(), dialect.name));
        }
        if let Some(i) = n.input {
            if assign.get(&i) != Some(&Side::Server) {
                return Err(format!("{} runs on the server but its input does not", n.label()));
            }
        }
        for p in extent_providers(g, n.id) {
            if assign.get(&p) != Some(&Side::Server) {
                return Err(format!(
                    "{} runs on the server but the extent it reads does not",
                    n.label()
                ));
            }
        }
    }
    Ok(())
}

// ---- cardinality

/// Row and column estimates flowing along one data edge.
#[derive(Clone, Debug, Default)]
struct Flow {
    rows: f64,
    distinct: BTreeMap<String, f64>,
    widths: BTreeMap<String, f64>,
    /// Second bin output -> first bin output, for functional dependence.
    bin_pairs: BTreeMap<String, String>,
}

impl Flow {
    fn width(&self, node: &OperatorNode) -> f64 {
        node.output_schema
            .fields()
            .iter()
            .map(|f| self.widths.get(&f.name).copied().unwrap_or(default_width(f.ty)))
            .sum::<f64>()
            .max(1.0)
    }

    fn with_rows(mut self, rows: f64) -> Flow {
        self.rows = rows;
        for d in self.distinct.values_mut() {
            *d = d.min(rows);
        }
        self
    }
}

fn bin_count(def: &TransformDef, signals: &Signals) -> Option<f64> {
    let TransformDef::Bin {
        extent, maxbins, ..
    } = def
    else {
        return None;
    };
    let m = resolve_maxbins(maxbins, signals).ok()?;
    match resolve_extent(extent, signals) {
        Ok((Some(lo), Some(hi))) => Some(BinLayout::new(lo, hi, m).nbins as f64),
        _ => Some(m.max(1.0).floor()),
    }
}

/// Output flow of `node` given its input flow. Extents pass rows through.
fn apply_flow(node: &OperatorNode, input: Flow, stats: &Stats, signals: &Signals) -> Flow {
    let Some(t) = node.transform() else {
        return input;
    };
    let rows = input.rows;
    match t {
        TransformDef::Filter { .. } => {
            let r = rows * stats.selectivity;
            input.with_rows(r)
        }
        TransformDef::Formula { output, .. } => {
            let mut f = input;
            f.distinct.remove(output);
            f.widths.remove(output);
            f.bin_pairs.remove(output);
            f
        }
        TransformDef::Bin { outputs, .. } => {
            let mut f = input;
            let n = bin_count(t, signals).unwrap_or(rows).min(rows);
            for o in outputs.iter() {
                f.distinct.insert(o.clone(), n);
                f.widths.remove(o);
            }
            f.bin_pairs.insert(outputs[1].clone(), outputs[0].clone());
            f
        }
        TransformDef::Aggregate { groupby, measures } => {
            let r = aggregate_rows(&input, groupby);
            let mut f = Flow {
                rows: r,
                ..Flow::default()
            };
            for k in groupby {
                if let Some(d) = input.distinct.get(k) {
                    f.distinct.insert(k.clone(), d.min(r));
                }
                if let Some(w) = input.widths.get(k) {
                    f.widths.insert(k.clone(), *w);
                }
                if let Some(b0) = input.bin_pairs.get(k) {
                    if groupby.contains(b0) {
                        f.bin_pairs.insert(k.clone(), b0.clone());
                    }
                }
            }
            for m in measures {
                f.distinct.remove(&m.output);
            }
            f
        }
        TransformDef::Stack { outputs, .. } => {
            let mut f = input;
            for o in outputs.iter() {
                f.distinct.remove(o);
                f.widths.remove(o);
                f.bin_pairs.remove(o);
            }
            f
        }
        TransformDef::Project { fields } => {
            let mut f = input;
            f.distinct.retain(|k, _| fields.contains(k));
            f.widths.retain(|k, _| fields.contains(k));
            f.bin_pairs.retain(|k, v| fields.contains(k) && fields.contains(v));
            f
        }
        TransformDef::Collect { .. } | TransformDef::Extent { .. } => input,
    }
}

fn aggregate_rows(input: &Flow, groupby: &[String]) -> f64 {
    if input.rows <= 0.0 {
        return 0.0;
    }
    if groupby.is_empty() {
        return 1.0;
    }
    let mut product = 1.0f64;
    for k in groupby {
        let dependent = input
            .bin_pairs
            .get(k)
            .is_some_and(|b0| groupby.contains(b0));
        if dependent {
            continue;
        }
        product *= input.distinct.get(k).copied().unwrap_or(input.rows).max(1.0);
    }
    input.rows.min(product)
}

fn scan_flow(g: &DataflowGraph, node: &OperatorNode, stats: &Stats) -> Flow {
    let NodeKind::Scan { source } = &node.kind else {
        return Flow::default();
    };
    let _ = g;
    match stats.tables.get(source) {
        Some(ts) => Flow {
            rows: ts.rows as f64,
            distinct: ts
                .fields
                .iter()
                .map(|(k, f)| (k.clone(), f.distinct as f64))
                .collect(),
            widths: ts.fields.iter().map(|(k, f)| (k.clone(), f.width)).collect(),
            bin_pairs: BTreeMap::new(),
        },
        None => {
            tracing::warn!(source = %source, "no stats for source; assuming 0 rows");
            Flow::default()
        }
    }
}

/// Output flow of every data node (pass-through rows for extents).
fn flows(g: &DataflowGraph, stats: &Stats) -> Vec<Option<Flow>> {
    let mut out: Vec<Option<Flow>> = vec![None; g.len()];
    for &id in g.topo_order() {
        let node = g.node(id);
        if node.is_scan() {
            out[id] = Some(scan_flow(g, node, stats));
        } else if node.transform().is_some() {
            let input = node
                .input
                .and_then(|i| out[i].clone())
                .unwrap_or_default();
            out[id] = Some(apply_flow(node, input, stats, g.signal_values()));
        }
    }
    out
}

/// Estimated output rows of `id` for `input_rows` input rows. An extent
/// yields its single `(min, max)` row.
pub fn estimate_cardinality(g: &DataflowGraph, id: NodeId, input_rows: f64, stats: &Stats) -> f64 {
    let node = g.node(id);
    if node.is_scan() {
        return input_rows;
    }
    if matches!(node.transform(), Some(TransformDef::Extent { .. })) {
        return 1.0;
    }
    let all = flows(g, stats);
    let input = node
        .input
        .and_then(|i| all[i].clone())
        .unwrap_or_default()
        .with_rows(input_rows.max(0.0));
    apply_flow(node, input, stats, g.signal_values()).rows
}

// ---- cost

/// Estimated cost of `assign`. Each cut producer is transferred once; each
/// server extent adds one round trip for its result.
pub fn estimate_cost(g: &DataflowGraph, assign: &Assignment, ctx: &CostContext) -> CostEstimate {
    let flows = flows(g, ctx.stats);
    let mut est = CostEstimate::default();
    for n in data_nodes(g) {
        let Some(kind) = n.transform_kind() else {
            continue;
        };
        let input_rows = n.input.and_then(|i| flows[i].as_ref()).map_or(0.0, |f| f.rows);
        match assign.get(&n.id) {
            Some(Side::Server) => {
                est.server_ms += ctx.params.server(kind) * input_rows;
                if kind == crate::spec::TransformKind::Extent {
                    est.transfer_ms += ctx.net.transfer_ms(EXTENT_RESULT_BYTES);
                    est.edges.push(EdgeEstimate {
                        from: n.id,
                        to: None,
                        rows: 1.0,
                        bytes: EXTENT_RESULT_BYTES,
                    });
                }
            }
            _ => est.client_ms += ctx.params.client(kind) * input_rows,
        }
    }
    let cuts = cut_edges(g, assign);
    let mut seen = BTreeSet::new();
    for c in &cuts {
        let node = g.node(c.from);
        let flow = flows[c.from].clone().unwrap_or_default();
        let bytes = flow.rows * flow.width(node);
        if seen.insert(c.from) {
            est.transfer_ms += ctx.net.transfer_ms(bytes);
        }
        est.edges.push(EdgeEstimate {
            from: c.from,
            to: c.to,
            rows: flow.rows,
            bytes,
        });
    }
    est.total_ms = est.server_ms + est.transfer_ms + est.client_ms;
    est
}

pub fn make_plan(g: &DataflowGraph, assign: Assignment, ctx: &CostContext) -> PartitionPlan {
    let est = estimate_cost(g, &assign, ctx);
    PartitionPlan {
        cut_edges: cut_edges(g, &assign),
        assignment: assign,
        est,
    }
}

/// The all-client plan: scans on the server, every transform on the client.
pub fn baseline_plan(g: &DataflowGraph, ctx: &CostContext) -> PartitionPlan {
    let assign = data_nodes(g)
        .map(|n| (n.id, if n.is_scan() { Side::Server } else { Side::Client }))
        .collect();
    make_plan(g, assign, ctx)
}

// ---- enumeration

/// Nodes that must run on the client: unsupported kinds, their descendants,
/// and readers of extents that must run on the client.
fn forced_client(g: &DataflowGraph, dialect: &SqlDialect, extra: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    let mut forced: BTreeSet<NodeId> = extra.clone();
    for n in data_nodes(g) {
        if let Some(t) = n.transform() {
            if check_supported(t, dialect).is_err() {
                forced.insert(n.id);
            }
        }
    }
    loop {
        let mut next = forced.clone();
        for &f in &forced {
            next.extend(data_descendants(g, f));
        }
        for n in data_nodes(g) {
            if extent_providers(g, n.id).iter().any(|p| next.contains(p)) {
                next.insert(n.id);
            }
        }
        if next == forced {
            return forced;
        }
        forced = next;
    }
}

/// Server sets of the tree under `root` (root included), honoring
/// required-server and forbidden nodes.
fn tree_options(
    g: &DataflowGraph,
    root: NodeId,
    required: &BTreeSet<NodeId>,
    forbidden: &BTreeSet<NodeId>,
    limit: usize,
) -> Vec<Vec<NodeId>> {
    let mut options: Vec<Vec<NodeId>> = vec![vec![root]];
    for c in g.data_children(root) {
        let subtree_required = required.contains(&c)
            || data_descendants(g, c).iter().any(|d| required.contains(d));
        let mut child_opts: Vec<Vec<NodeId>> = Vec::new();
        if !subtree_required {
            child_opts.push(Vec::new());
        }
        if !forbidden.contains(&c) {
            child_opts.extend(tree_options(g, c, required, forbidden, limit));
        }
        let mut next = Vec::with_capacity(options.len() * child_opts.len());
        'outer: for o in &options {
            for co in &child_opts {
                let mut v = o.clone();
                v.extend(co.iter().copied());
                next.push(v);
                if next.len() > limit {
                    break 'outer;
                }
            }
        }
        options = next;
    }
    options
}

fn assignment_from(g: &DataflowGraph, server: &BTreeSet<NodeId>) -> Assignment {
    data_nodes(g)
        .map(|n| {
            let side = if server.contains(&n.id) {
                Side::Server
            } else {
                Side::Client
            };
            (n.id, side)
        })
        .collect()
}

fn extent_closed(g: &DataflowGraph, server: &BTreeSet<NodeId>) -> bool {
    server
        .iter()
        .all(|&n| extent_providers(g, n).iter().all(|p| server.contains(p)))
}

/// Better of two costed plans: lower total, then more server nodes.
fn better(a: &(f64, usize), b: &(f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 > b.1)
}

/// Cheapest valid plan subject to `required` server nodes and `forbidden`
/// (client) nodes; `None` if no valid plan satisfies them.
fn optimize(
    g: &DataflowGraph,
    ctx: &CostContext,
    dialect: &SqlDialect,
    required: &BTreeSet<NodeId>,
    forbidden: &BTreeSet<NodeId>,
) -> Option<PartitionPlan> {
    let forced = forced_client(g, dialect, forbidden);
    if required.iter().any(|r| forced.contains(r)) {
        return None;
    }
    let trees: Vec<Vec<Vec<NodeId>>> = g
        .sources
        .iter()
        .map(|&s| tree_options(g, s, required, &forced, EXHAUSTIVE_LIMIT))
        .collect();
    let total = trees
        .iter()
        .try_fold(1usize, |acc, t| acc.checked_mul(t.len()))
        .unwrap_or(usize::MAX);
    let over = trees.iter().any(|t| t.len() > EXHAUSTIVE_LIMIT);
    if total <= EXHAUSTIVE_LIMIT && !over {
        let mut best: Option<((f64, usize), Assignment)> = None;
        let mut idx = vec![0usize; trees.len()];
        loop {
            let server: BTreeSet<NodeId> = trees
                .iter()
                .zip(&idx)
                .flat_map(|(t, &i)| t[i].iter().copied())
                .collect();
            if extent_closed(g, &server) {
                let assign = assignment_from(g, &server);
                let cost = estimate_cost(g, &assign, ctx).total_ms;
                let key = (cost, server.len());
                if best.as_ref().is_none_or(|(b, _)| better(&key, b)) {
                    best = Some((key, assign));
                }
            }
            // odometer increment
            let mut k = 0;
            loop {
                if k == idx.len() {
                    return best.map(|(_, a)| make_plan(g, a, ctx));
                }
                idx[k] += 1;
                if idx[k] < trees[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
    // Large graphs: the cost separates by tree, so pick each tree's best
    // alone, then forbid nodes that read a client-side extent and retry.
    let mut forbidden = forced;
    for _ in 0..g.len() + 1 {
        let mut server = BTreeSet::new();
        for &s in &g.sources {
            let opts = tree_options(g, s, required, &forbidden, EXHAUSTIVE_LIMIT);
            let mut best: Option<((f64, usize), Vec<NodeId>)> = None;
            for o in opts {
                let set: BTreeSet<NodeId> = o.iter().copied().collect();
                let cost = estimate_cost(g, &assignment_from(g, &set), ctx).total_ms;
                let key = (cost, set.len());
                if best.as_ref().is_none_or(|(b, _)| better(&key, b)) {
                    best = Some((key, o));
                }
            }
            server.extend(best.map(|(_, o)| o).unwrap_or_default());
        }
        let violators: Vec<NodeId> = server
            .iter()
            .copied()
            .filter(|&n| extent_providers(g, n).iter().any(|p| !server.contains(p)))
            .collect();
        if violators.is_empty() {
            return Some(make_plan(g, assignment_from(g, &server), ctx));
        }
        if violators.iter().any(|v| required.contains(v)) {
            return None;
        }
        forbidden.extend(violators);
        forbidden = forced_client(g, dialect, &forbidden);
    }
    None
}

/// Minimum-cost valid plan; ties go to the plan with more server nodes.
pub fn choose_partition(g: &DataflowGraph, ctx: &CostContext, dialect: &SqlDialect) -> PartitionPlan {
    optimize(g, ctx, dialect, &BTreeSet::new(), &BTreeSet::new())
        .unwrap_or_else(|| baseline_plan(g, ctx))
}

/// Data nodes re-evaluated when `signal` changes.
fn signal_data_closure(g: &DataflowGraph, signal: &str) -> BTreeSet<NodeId> {
    g.signal_closure(signal)
        .unwrap_or_default()
        .into_iter()
        .filter(|&n| g.node(n).is_data())
        .collect()
}

/// Plan for interactions on `signal`: everything the signal affects runs on
/// the client and everything above its first readers on the server. `None`
/// when the signal has no readers or no valid plan fits.
pub fn candidate_plan(
    g: &DataflowGraph,
    ctx: &CostContext,
    dialect: &SqlDialect,
    signal: &str,
) -> Option<PartitionPlan> {
    let consumers = g.signal_consumers(signal);
    if consumers.is_empty() {
        return None;
    }
    let closure = signal_data_closure(g, signal);
    let unsupported = forced_client(g, dialect, &BTreeSet::new());
    let mut required = BTreeSet::new();
    for &c in &consumers {
        for a in g.upstream(c) {
            if !closure.contains(&a) && !unsupported.contains(&a) {
                required.insert(a);
            }
        }
    }
    // keep required upstream-closed after dropping unsupported nodes
    let required: BTreeSet<NodeId> = required
        .iter()
        .copied()
        .filter(|&r| g.upstream(r).iter().all(|a| required.contains(a)))
        .collect();
    optimize(g, ctx, dialect, &required, &closure)
}

/// Candidate plan per declared signal; signals without readers map to the
/// static optimum.
pub fn candidate_plans_for_interactions(
    g: &DataflowGraph,
    ctx: &CostContext,
    dialect: &SqlDialect,
) -> BTreeMap<String, PartitionPlan> {
    let mut static_plan: Option<PartitionPlan> = None;
    let mut out = BTreeMap::new();
    for s in g.signal_defs() {
        let plan = match candidate_plan(g, ctx, dialect, &s.name) {
            Some(p) => p,
            None => static_plan
                .get_or_insert_with(|| choose_partition(g, ctx, dialect))
                .clone(),
        };
        out.insert(s.name.clone(), plan);
    }
    out
}

/// Moves `node` to `side` and repairs validity: Client drags descendants
/// (and readers of client extents) along, Server drags ancestors (and the
/// extents it reads).
pub fn apply_override(
    plan: &PartitionPlan,
    g: &DataflowGraph,
    node: NodeId,
    side: Side,
    ctx: &CostContext,
    dialect: &SqlDialect,
) -> Result<PartitionPlan, PartitionError> {
    if node >= g.len() || !g.node(node).is_data() {
        return Err(PartitionError::UnknownNode(node));
    }
    let reject = |reason: String| PartitionError::OverrideRejected { node, reason };
    let mut assign = plan.assignment.clone();
    match side {
        Side::Client => {
            if g.node(node).is_scan() {
                return Err(reject("scans always run on the server".into()));
            }
            let mut client: BTreeSet<NodeId> = [node].into();
            loop {
                let mut next = client.clone();
                for &c in &client {
                    next.extend(data_descendants(g, c));
                }
                for n in data_nodes(g) {
                    if assign.get(&n.id) == Some(&Side::Server)
                        && extent_providers(g, n.id).iter().any(|p| next.contains(p))
                    {
                        next.insert(n.id);
                    }
                }
                if next == client {
                    break;
                }
                client = next;
            }
            for c in client {
                assign.insert(c, Side::Client);
            }
        }
        Side::Server => {
            let mut todo = vec![node];
            let mut server = BTreeSet::new();
            while let Some(n) = todo.pop() {
                if !server.insert(n) {
                    continue;
                }
                if let Some(t) = g.node(n).transform() {
                    if let Err(e) = check_supported(t, dialect) {
                        return Err(reject(format!("{}: {e}", g.node(n).label())));
                    }
                }
                todo.extend(g.upstream(n));
                todo.extend(extent_providers(g, n));
            }
            for s in server {
                assign.insert(s, Side::Server);
            }
        }
    }
    Ok(make_plan(g, assign, ctx))
}
