use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use super::eval_expr::{SignalValue, Signals};
use super::transforms::{apply_transform, extent, TransformFailure};
use crate::spec::{DatasetInput, SignalDef, TransformDef, TransformKind, VizSpec};
use crate::table::Table;
use crate::value::{Schema, Value};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    /// Reads a data source; the runtime supplies its rows.
    Scan { source: String },
    Transform(TransformDef),
    Signal { name: String },
}

#[derive(Clone, Debug)]
pub struct OperatorNode {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Dataset the node belongs to (none for signals).
    pub dataset: Option<String>,
    /// Data predecessor.
    pub input: Option<NodeId>,
    pub output_schema: Schema,
    pub dirty: bool,
    pub eval_count: u64,
}

impl OperatorNode {
    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            NodeKind::Scan { .. } => "scan",
            NodeKind::Transform(t) => t.kind().name(),
            NodeKind::Signal { .. } => "signal",
        }
    }

    pub fn transform(&self) -> Option<&TransformDef> {
        match &self.kind {
            NodeKind::Transform(t) => Some(t),
            _ => None,
        }
    }

    pub fn transform_kind(&self) -> Option<TransformKind> {
        self.transform().map(TransformDef::kind)
    }

    pub fn is_scan(&self) -> bool {
        matches!(self.kind, NodeKind::Scan { .. })
    }

    pub fn is_signal(&self) -> bool {
        matches!(self.kind, NodeKind::Signal { .. })
    }

    /// Operators that take part in partitioning (scans and transforms).
    pub fn is_data(&self) -> bool {
        !self.is_signal()
    }

    pub fn label(&self) -> String {
        match &self.kind {
            NodeKind::Scan { source } => format!("scan({source})"),
            NodeKind::Transform(t) => {
                format!("{}.{}", self.dataset.as_deref().unwrap_or(""), t.kind().name())
            }
            NodeKind::Signal { name } => format!("signal({name})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("cycle through {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("dataset '{0}' is not defined")]
    UnknownDataset(String),
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unknown signal '{0}'")]
    UnknownSignal(String),
    #[error("signal '{signal}' expects a {expected} value, got {got}")]
    SignalType {
        signal: String,
        expected: String,
        got: String,
    },
    #[error("node {node} ({label}) has no input table")]
    MissingInput { node: NodeId, label: String },
    #[error("node {node} ({label}): {source}")]
    Transform {
        node: NodeId,
        label: String,
        source: TransformFailure,
    },
}

/// Outcome of one evaluation round.
#[derive(Clone, Debug, Default)]
pub struct Pulse {
    /// Evaluated nodes, in evaluation order.
    pub changed: Vec<NodeId>,
    /// Output of every dataset whose final node was evaluated.
    pub datasets: BTreeMap<String, Arc<Table>>,
    /// Rows dropped by `bin` for null values, per bin node.
    pub dropped_nulls: Vec<(NodeId, usize)>,
}

/// Operator DAG built from a spec, plus the evaluation state of the client
/// interpreter (node outputs, signal values, counters).
#[derive(Clone, Debug)]
pub struct DataflowGraph {
    pub nodes: Vec<OperatorNode>,
    /// Data edges `(producer, consumer)`.
    pub edges: Vec<(NodeId, NodeId)>,
    /// Parameter edges `(signal node, consumer)`.
    pub param_edges: Vec<(NodeId, NodeId)>,
    /// `(extent node, signal node)` for signals written by extent transforms.
    pub publish_edges: Vec<(NodeId, NodeId)>,
    pub sources: Vec<NodeId>,
    pub sinks: Vec<NodeId>,
    datasets: Vec<(String, NodeId)>,
    sink_datasets: Vec<String>,
    signal_nodes: HashMap<String, NodeId>,
    signal_defs: Vec<SignalDef>,
    topo: Vec<NodeId>,
    outputs: Vec<Option<Arc<Table>>>,
    published: HashMap<NodeId, (Value, Value)>,
    signals: Signals,
}

/// Builds the operator graph for a validated spec.
pub fn build_dataflow(spec: &VizSpec) -> Result<DataflowGraph, GraphError> {
    let mut nodes: Vec<OperatorNode> = Vec::new();
    let mut push = |kind: NodeKind, dataset: Option<String>, input: Option<NodeId>, schema: Schema| {
        let id = nodes.len();
        nodes.push(OperatorNode {
            id,
            kind,
            dataset,
            input,
            output_schema: schema,
            dirty: true,
            eval_count: 0,
        });
        id
    };

    let mut signal_nodes = HashMap::new();
    for s in &spec.signals {
        let id = push(NodeKind::Signal { name: s.name.clone() }, None, None, Schema::default());
        signal_nodes.insert(s.name.clone(), id);
    }

    let mut edges = Vec::new();
    let mut publish_edges = Vec::new();
    let mut sources = Vec::new();
    let mut datasets: Vec<(String, NodeId)> = Vec::new();
    for d in &spec.datasets {
        let mut current = match &d.input {
            DatasetInput::Source(src) => {
                let schema = spec
                    .source(src)
                    .map(|s| s.schema.clone())
                    .ok_or_else(|| GraphError::UnknownDataset(src.clone()))?;
                let id = push(
                    NodeKind::Scan { source: src.clone() },
                    Some(d.name.clone()),
                    None,
                    schema,
                );
                sources.push(id);
                id
            }
            DatasetInput::Dataset(parent) => datasets
                .iter()
                .find(|(n, _)| n == parent)
                .map(|(_, id)| *id)
                .ok_or_else(|| GraphError::UnknownDataset(parent.clone()))?,
        };
        for t in &d.transforms {
            // output schemas are filled in below
            let id = push(
                NodeKind::Transform(t.clone()),
                Some(d.name.clone()),
                Some(current),
                Schema::default(),
            );
            edges.push((current, id));
            if let Some(sig) = t.published_signal() {
                let sid = push(NodeKind::Signal { name: sig.to_string() }, None, None, Schema::default());
                signal_nodes.insert(sig.to_string(), sid);
                publish_edges.push((id, sid));
            }
            current = id;
        }
        datasets.push((d.name.clone(), current));
    }

    // fill output schemas in node order (inputs always precede consumers)
    let signal_types = |name: &str| {
        if let Some(s) = spec.signal(name) {
            return Some(crate::expr::SignalType::Scalar(s.scalar_type()));
        }
        signal_nodes
            .contains_key(name)
            .then_some(crate::expr::SignalType::Extent)
    };
    for i in 0..nodes.len() {
        if let (NodeKind::Transform(t), Some(input)) = (&nodes[i].kind, nodes[i].input) {
            let s = t
                .output_schema(&nodes[input].output_schema, &signal_types)
                .unwrap_or_default();
            nodes[i].output_schema = s;
        }
    }

    let mut param_edges = Vec::new();
    for n in &nodes {
        if let NodeKind::Transform(t) = &n.kind {
            for s in t.signal_refs() {
                if let Some(&sid) = signal_nodes.get(&s) {
                    param_edges.push((sid, n.id));
                }
            }
        }
    }

    let sink_datasets: Vec<String> = spec.sink_datasets().into_iter().map(str::to_string).collect();
    let mut sinks: Vec<NodeId> = Vec::new();
    for name in &sink_datasets {
        if let Some((_, id)) = datasets.iter().find(|(n, _)| n == name) {
            if !sinks.contains(id) {
                sinks.push(*id);
            }
        }
    }

    let n = nodes.len();
    let mut g = DataflowGraph {
        nodes,
        edges,
        param_edges,
        publish_edges,
        sources,
        sinks,
        datasets,
        sink_datasets,
        signal_nodes,
        signal_defs: spec.signals.clone(),
        topo: Vec::new(),
        outputs: vec![None; n],
        published: HashMap::new(),
        signals: Signals::new(),
    };
    g.topo = g.topological_order()?;
    g.reset_signals();
    Ok(g)
}

impl DataflowGraph {
    pub fn node(&self, id: NodeId) -> &OperatorNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in a fixed topological order over data, parameter and publish edges.
    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    fn all_edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges
            .iter()
            .chain(&self.param_edges)
            .chain(&self.publish_edges)
            .copied()
    }

    fn topological_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut out: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (a, b) in self.all_edges() {
            indegree[b] += 1;
            out[a].push(b);
        }
        let mut ready: BTreeSet<NodeId> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&next) = ready.iter().next() {
            ready.remove(&next);
            order.push(next);
            for &c in &out[next] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        // walk predecessors inside the stuck set until a node repeats
        let stuck: BTreeSet<NodeId> = (0..n).filter(|&i| indegree[i] > 0).collect();
        let mut preds: HashMap<NodeId, NodeId> = HashMap::new();
        for (a, b) in self.all_edges() {
            if stuck.contains(&a) && stuck.contains(&b) {
                preds.entry(b).or_insert(a);
            }
        }
        let mut path = vec![*stuck.iter().next().unwrap()];
        loop {
            let cur = *path.last().unwrap();
            let p = preds[&cur];
            if let Some(pos) = path.iter().position(|&x| x == p) {
                let mut cycle: Vec<NodeId> = path[pos..].to_vec();
                cycle.reverse();
                let mut labels: Vec<String> = cycle.iter().map(|&i| self.nodes[i].label()).collect();
                labels.push(self.nodes[cycle[0]].label());
                return Err(GraphError::Cycle(labels));
            }
            path.push(p);
        }
    }

    pub fn data_children(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges.iter().filter(move |e| e.0 == id).map(|e| e.1)
    }

    /// Nodes reachable from `seeds` over every edge kind, excluding the seeds
    /// themselves unless reachable from another seed.
    pub fn downstream(&self, seeds: &[NodeId]) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = seeds.to_vec();
        while let Some(n) = stack.pop() {
            for (a, b) in self.all_edges() {
                if a == n && seen.insert(b) {
                    stack.push(b);
                }
            }
        }
        seen
    }

    /// Data ancestors of `id`, nearest first, excluding `id`.
    pub fn upstream(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.nodes[id].input;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].input;
        }
        out
    }

    pub fn signal_node(&self, name: &str) -> Option<NodeId> {
        self.signal_nodes.get(name).copied()
    }

    /// Nodes re-evaluated when `signal` changes.
    pub fn signal_closure(&self, signal: &str) -> Option<BTreeSet<NodeId>> {
        self.signal_node(signal).map(|s| self.downstream(&[s]))
    }

    /// Transforms reading `signal` directly.
    pub fn signal_consumers(&self, signal: &str) -> Vec<NodeId> {
        match self.signal_node(signal) {
            Some(s) => self.param_edges.iter().filter(|e| e.0 == s).map(|e| e.1).collect(),
            None => Vec::new(),
        }
    }

    pub fn signal_defs(&self) -> &[SignalDef] {
        &self.signal_defs
    }

    pub fn signal_def(&self, name: &str) -> Option<&SignalDef> {
        self.signal_defs.iter().find(|s| s.name == name)
    }

    /// The extent node publishing `signal`, if it is an extent signal.
    pub fn signal_publisher(&self, signal: &str) -> Option<NodeId> {
        let s = self.signal_node(signal)?;
        self.publish_edges.iter().find(|e| e.1 == s).map(|e| e.0)
    }

    pub fn datasets(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.datasets.iter().map(|(n, id)| (n.as_str(), *id))
    }

    pub fn dataset_node(&self, name: &str) -> Option<NodeId> {
        self.datasets.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }

    pub fn sink_datasets(&self) -> &[String] {
        &self.sink_datasets
    }

    pub fn eval_counts(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.eval_count).collect()
    }

    // ---- evaluation state ----

    pub fn signal_values(&self) -> &Signals {
        &self.signals
    }

    pub fn signal_value(&self, name: &str) -> Option<&SignalValue> {
        self.signals.get(name)
    }

    /// Restores declared initial values and forgets extent values.
    pub fn reset_signals(&mut self) {
        self.signals = self
            .signal_defs
            .iter()
            .map(|s| (s.name.clone(), SignalValue::Scalar(s.value.clone())))
            .collect();
        self.published.clear();
    }

    /// Sets a declared signal after checking its type.
    pub fn set_signal(&mut self, name: &str, value: Value) -> Result<(), EvalError> {
        let def = self
            .signal_def(name)
            .ok_or_else(|| EvalError::UnknownSignal(name.to_string()))?;
        if !value.is_null() && value.scalar_type() != Some(def.scalar_type()) {
            return Err(EvalError::SignalType {
                signal: name.to_string(),
                expected: def.scalar_type().to_string(),
                got: format!("{value:?}"),
            });
        }
        self.signals.insert(name.to_string(), SignalValue::Scalar(value));
        Ok(())
    }

    /// Sets an extent signal computed elsewhere (e.g. by the server).
    pub fn set_extent(&mut self, name: &str, lo: Value, hi: Value) {
        if let Some(p) = self.signal_publisher(name) {
            self.published.insert(p, (lo.clone(), hi.clone()));
        }
        self.signals.insert(name.to_string(), SignalValue::Extent(lo, hi));
    }

    pub fn output(&self, id: NodeId) -> Option<&Arc<Table>> {
        self.outputs[id].as_ref()
    }

    pub fn dataset_output(&self, name: &str) -> Option<&Arc<Table>> {
        self.dataset_node(name).and_then(|id| self.output(id))
    }

    /// Current tables of the sink datasets that have one.
    pub fn sink_outputs(&self) -> BTreeMap<String, Arc<Table>> {
        self.sink_datasets
            .iter()
            .filter_map(|n| self.dataset_output(n).map(|t| (n.clone(), t.clone())))
            .collect()
    }

    /// Places a table computed elsewhere as the output of `id`.
    pub fn inject(&mut self, id: NodeId, table: Arc<Table>) {
        self.outputs[id] = Some(table);
        self.nodes[id].dirty = false;
    }

    pub fn clear_outputs(&mut self) {
        for (o, n) in self.outputs.iter_mut().zip(&mut self.nodes) {
            *o = None;
            n.dirty = true;
        }
    }

    /// Evaluates every node once with the given source tables and signal
    /// overrides (other signals keep their initial values).
    pub fn eval_full(
        &mut self,
        inputs: &HashMap<String, Table>,
        signals: &HashMap<String, Value>,
    ) -> Result<Pulse, EvalError> {
        self.reset_signals();
        for (name, v) in signals {
            self.set_signal(name, v.clone())?;
        }
        self.clear_outputs();
        for &s in &self.sources.clone() {
            let NodeKind::Scan { source } = &self.nodes[s].kind else {
                unreachable!()
            };
            if let Some(t) = inputs.get(source) {
                self.outputs[s] = Some(Arc::new(t.clone()));
            }
        }
        let all: BTreeSet<NodeId> = (0..self.nodes.len()).collect();
        self.evaluate(&all)
    }

    /// Updates one signal and re-evaluates exactly its downstream closure.
    pub fn eval_partial(&mut self, signal: &str, value: Value) -> Result<Pulse, EvalError> {
        self.set_signal(signal, value)?;
        let closure = self
            .signal_closure(signal)
            .ok_or_else(|| EvalError::UnknownSignal(signal.to_string()))?;
        self.evaluate(&closure)
    }

    /// Evaluates the nodes of `set` in topological order. Scans must have been
    /// given a table (by [`eval_full`](Self::eval_full) or [`inject`](Self::inject));
    /// every input outside `set` must already hold an output.
    pub fn evaluate(&mut self, set: &BTreeSet<NodeId>) -> Result<Pulse, EvalError> {
        let mut pulse = Pulse::default();
        let order: Vec<NodeId> = self.topo.iter().copied().filter(|n| set.contains(n)).collect();
        for id in order {
            self.eval_node(id, &mut pulse)?;
            pulse.changed.push(id);
        }
        for (name, id) in &self.datasets {
            if set.contains(id) {
                if let Some(t) = &self.outputs[*id] {
                    pulse.datasets.insert(name.clone(), t.clone());
                }
            }
        }
        Ok(pulse)
    }

    fn eval_node(&mut self, id: NodeId, pulse: &mut Pulse) -> Result<(), EvalError> {
        let missing = |g: &Self| EvalError::MissingInput {
            node: id,
            label: g.nodes[id].label(),
        };
        match &self.nodes[id].kind {
            NodeKind::Scan { .. } => {
                if self.outputs[id].is_none() {
                    return Err(missing(self));
                }
            }
            NodeKind::Signal { name } => {
                let publisher = self.publish_edges.iter().find(|e| e.1 == id).map(|e| e.0);
                if let Some(p) = publisher {
                    let (lo, hi) = self.published.get(&p).cloned().ok_or_else(|| missing(self))?;
                    let name = name.clone();
                    self.signals.insert(name, SignalValue::Extent(lo, hi));
                }
            }
            NodeKind::Transform(t) => {
                let input = self.nodes[id].input.and_then(|i| self.outputs[i].clone());
                let input = input.ok_or_else(|| missing(self))?;
                let fail = |source| EvalError::Transform {
                    node: id,
                    label: self.nodes[id].label(),
                    source,
                };
                let table = if let TransformDef::Extent { field, .. } = t {
                    // pass-through: share the input allocation
                    let pair = extent(&input, field).map_err(fail)?;
                    self.published.insert(id, (pair.value(0, 0), pair.value(0, 1)));
                    input
                } else {
                    let out = apply_transform(t, &input, &self.signals).map_err(fail)?;
                    if matches!(t, TransformDef::Bin { .. }) {
                        pulse.dropped_nulls.push((id, out.dropped_nulls));
                    }
                    Arc::new(out.table)
                };
                self.outputs[id] = Some(table);
            }
        }
        let node = &mut self.nodes[id];
        node.eval_count += 1;
        node.dirty = false;
        Ok(())
    }
}
