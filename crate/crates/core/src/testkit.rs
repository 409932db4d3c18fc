//! Oracles shared by the test suites: brute-force plan enumeration, the
//! all-client reference evaluation, a reference LRU, and randomized checks
//! built from them.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::{CanonicalKey, PutOutcome, ResultCache};
use crate::dataflow::{build_dataflow, DataflowGraph, EvalError, NodeId, SignalValue};
use crate::partition::{
    choose_partition, estimate_cost, make_plan, validate_assignment, Assignment, CostContext, CostParams,
    NetworkProfile, Side, Stats, TableStats,
};
use crate::runtime::{bind_sources, data_query, execute_plan, Backend, DbDriver, DriverCatalog, PlanLabel, SimulatedNetwork};
use crate::spec::{parse_spec, TransformDef, TransformKind};
use crate::sql::{node_query_with, render_sql, rewrite, SqlDialect, SqlQuery};
use crate::synth::{random_case, random_operator_case, random_pipeline_case, random_query, random_query_table};
use crate::table::{multiset_diff, numbers_close, Table};
use crate::value::Value;

/// Every valid assignment, by trying all 2^n sides of the transforms.
/// Panics above 16 transforms.
pub fn all_valid_assignments(g: &DataflowGraph, dialect: &SqlDialect) -> Vec<Assignment> {
    let transforms: Vec<usize> = g
        .nodes
        .iter()
        .filter(|n| n.transform().is_some())
        .map(|n| n.id)
        .collect();
    assert!(transforms.len() <= 16, "too many transforms to enumerate");
    let scans: Vec<usize> = g.nodes.iter().filter(|n| n.is_scan()).map(|n| n.id).collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << transforms.len()) {
        let mut a: Assignment = scans.iter().map(|&s| (s, Side::Server)).collect();
        for (i, &t) in transforms.iter().enumerate() {
            let side = if mask & (1 << i) != 0 { Side::Server } else { Side::Client };
            a.insert(t, side);
        }
        if validate_assignment(g, &a, dialect).is_ok() {
            out.push(a);
        }
    }
    out
}

/// Sinks of a full client-side evaluation over `inputs` (source name to
/// rows).
pub fn reference_sinks(
    g: &DataflowGraph,
    inputs: &HashMap<String, Table>,
    signals: &HashMap<String, Value>,
) -> Result<BTreeMap<String, Arc<Table>>, EvalError> {
    let mut g = g.clone();
    g.eval_full(inputs, signals)?;
    Ok(g.sink_outputs())
}

/// Multiset equality of two sink maps with numeric tolerance `tol`.
pub fn sinks_equal(
    got: &BTreeMap<String, Arc<Table>>,
    want: &BTreeMap<String, Arc<Table>>,
    tol: f64,
) -> Result<(), String> {
    let names = |m: &BTreeMap<String, Arc<Table>>| m.keys().cloned().collect::<Vec<_>>();
    if names(got) != names(want) {
        return Err(format!("sinks {:?} vs {:?}", names(got), names(want)));
    }
    for (name, t) in got {
        multiset_diff(t, &want[name], tol).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(())
}

fn values_close(a: &Value, b: &Value, tol: f64) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) if !matches!(a, Value::Boolean(_)) => numbers_close(x, y, tol),
        _ => a == b,
    }
}

// ---- plan equivalence

/// Runs every valid plan of random case `seed` against `driver` and compares
/// its sinks with the reference. Returns the number of plans checked.
pub fn check_plans_match_reference(seed: u64, max_rows: usize, driver: &Arc<dyn DbDriver>) -> Result<usize, String> {
    let case = random_case(seed, max_rows);
    let ctx_err = |e: &dyn std::fmt::Display| format!("seed {seed}: {e}\n{}", case.spec);
    let spec = parse_spec(&case.spec_text()).map_err(|e| ctx_err(&e))?;
    let g = build_dataflow(&spec).map_err(|e| ctx_err(&e))?;
    let inputs = HashMap::from([("t".to_string(), case.table.clone())]);
    let want = reference_sinks(&g, &inputs, &case.signals).map_err(|e| ctx_err(&e))?;
    driver.ingest("t", &case.table).map_err(|e| ctx_err(&e))?;
    let none = BTreeMap::new();
    let catalog = DriverCatalog {
        driver: &**driver,
        tables: &none,
        file_root: None,
    };
    let bindings = bind_sources(&spec, &catalog).map_err(|e| ctx_err(&e))?;
    let backend = Backend {
        network: SimulatedNetwork::new(driver.clone(), NetworkProfile::zero()),
        bindings,
    };
    let stats = Stats::default();
    let params = CostParams::default();
    let ctx = CostContext {
        stats: &stats,
        net: NetworkProfile::zero(),
        params: &params,
    };
    let mut checked = 0;
    for a in all_valid_assignments(&g, backend.network.dialect()) {
        let plan = make_plan(&g, a, &ctx);
        let mut g2 = g.clone();
        let got = execute_plan(&plan, &mut g2, &backend, None, &case.signals, PlanLabel::Custom)
            .map_err(|e| format!("{}\nplan {:?}", ctx_err(&e), plan.assignment))?;
        sinks_equal(&got.sinks, &want, 1e-9).map_err(|e| format!("{}\nplan {:?}", ctx_err(&e), plan.assignment))?;
        checked += 1;
    }
    Ok(checked)
}

// ---- SQL translation

/// Translates the single operator of a random `kind` case to SQL, runs it
/// (as translated and as rewritten) against `driver` and compares with the
/// interpreter's output of that operator.
pub fn check_operator_sql(kind: TransformKind, seed: u64, driver: &dyn DbDriver) -> Result<(), String> {
    let case = random_operator_case(kind, seed, 200);
    let fail = |e: &dyn std::fmt::Display| format!("{kind:?} seed {seed}: {e}\n{}", case.spec);
    let spec = parse_spec(&case.spec_text()).map_err(|e| fail(&e))?;
    let mut g = build_dataflow(&spec).map_err(|e| fail(&e))?;
    let inputs = HashMap::from([("t".to_string(), case.table.clone())]);
    g.eval_full(&inputs, &case.signals).map_err(|e| fail(&e))?;
    driver.ingest("t", &case.table).map_err(|e| fail(&e))?;
    let id = g.dataset_node("d1").ok_or_else(|| fail(&"no d1"))?;
    let node = g.node(id);
    if node.transform_kind() != Some(kind) {
        return Err(fail(&format!("last operator is {}", node.label())));
    }
    let dialect = driver.dialect().clone();
    let base = |s: &str| s.to_string();
    let signals = g.signal_values().clone();
    let run = |q: &SqlQuery| -> Result<Table, String> {
        q.validate().map_err(|e| fail(&e))?;
        let sql = render_sql(q, &dialect).map_err(|e| fail(&e))?;
        driver.execute(&sql).map_err(|e| fail(&format!("{e}; sql: {sql}")))
    };
    if let Some(TransformDef::Extent { signal, .. }) = node.transform() {
        let q = node_query_with(&g, id, &base, &dialect, &signals).map_err(|e| fail(&e))?;
        let Some(SignalValue::Extent(lo, hi)) = g.signal_value(signal) else {
            return Err(fail(&"extent signal unset"));
        };
        for q in [q.clone(), rewrite(&q)] {
            let t = run(&q)?;
            let (glo, ghi) = match t.num_rows() {
                0 => (Value::Null, Value::Null),
                _ => (t.value(0, 0), t.value(0, 1)),
            };
            if !values_close(&glo, lo, 1e-9) || !values_close(&ghi, hi, 1e-9) {
                return Err(fail(&format!("extent ({glo}, {ghi}) vs ({lo}, {hi})")));
            }
        }
        return Ok(());
    }
    let want = g.output(id).ok_or_else(|| fail(&"no reference output"))?;
    let q = data_query(&g, id, &base, &dialect, &signals).map_err(|e| fail(&e))?;
    for q in [q.clone(), rewrite(&q)] {
        let got = run(&q)?.conform(&node.output_schema).map_err(|e| fail(&e))?;
        multiset_diff(&got, want, 1e-9).map_err(|e| fail(&e))?;
        if let Some(TransformDef::Collect { sort }) = node.transform() {
            let keys: Vec<usize> = sort
                .iter()
                .map(|k| got.schema().index_of(&k.field).expect("sort field exists"))
                .collect();
            for r in 0..got.num_rows() {
                let same = keys.iter().all(|&c| values_close(&got.value(r, c), &want.value(r, c), 1e-9));
                if !same {
                    return Err(fail(&format!("row {r} out of order")));
                }
            }
        }
    }
    Ok(())
}

/// Runs random query `seed` before and after rewriting against `driver`.
pub fn check_rewrite(seed: u64, driver: &dyn DbDriver) -> Result<(), String> {
    let table = random_query_table(seed, 300);
    driver.ingest("t", &table).map_err(|e| e.to_string())?;
    let q = random_query(seed, 6);
    let r = rewrite(&q);
    let fail = |e: &dyn std::fmt::Display| format!("seed {seed}: {e}\nquery {q:?}\nrewritten {r:?}");
    q.validate().map_err(|e| fail(&e))?;
    r.validate().map_err(|e| fail(&e))?;
    if q.columns() != r.columns() {
        return Err(fail(&format!("columns {:?} vs {:?}", q.columns(), r.columns())));
    }
    let run = |q: &SqlQuery| -> Result<Table, String> {
        let sql = render_sql(q, driver.dialect()).map_err(|e| fail(&e))?;
        driver.execute(&sql).map_err(|e| fail(&format!("{e}; sql: {sql}")))
    };
    multiset_diff(&run(&r)?, &run(&q)?, 1e-9).map_err(|e| fail(&e))
}

// ---- partitioning

/// Random statistics and network for pipeline `seed`; compares the chosen
/// plan's cost with the minimum over every valid assignment.
pub fn check_partition_optimal(seed: u64, max_transforms: usize) -> Result<(), String> {
    let case = random_pipeline_case(seed, max_transforms, 300);
    let fail = |e: &dyn std::fmt::Display| format!("seed {seed}: {e}\n{}", case.spec);
    let spec = parse_spec(&case.spec_text()).map_err(|e| fail(&e))?;
    let mut g = build_dataflow(&spec).map_err(|e| fail(&e))?;
    for (name, v) in &case.signals {
        g.set_signal(name, v.clone()).map_err(|e| fail(&e))?;
    }
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x636f);
    let mut ts = TableStats::of_table(&case.table);
    ts.rows = 10f64.powf(r.gen_range(0.0..7.0)) as u64;
    for f in ts.fields.values_mut() {
        f.distinct = f.distinct.max(1) * r.gen_range(1..50);
    }
    let stats = Stats {
        tables: BTreeMap::from([("t".to_string(), ts)]),
        selectivity: r.gen_range(0.05..1.0),
    };
    let net = if r.gen_bool(0.1) {
        NetworkProfile::zero()
    } else {
        NetworkProfile::new(r.gen_range(0.0..200.0), 10f64.powf(r.gen_range(1.0..5.0)))
    };
    let params = CostParams {
        kappa: r.gen_range(1.0..6.0),
        ..CostParams::default()
    };
    let ctx = CostContext {
        stats: &stats,
        net,
        params: &params,
    };
    let dialect = if r.gen_bool(0.2) {
        SqlDialect::sqlite().with_window_functions(false)
    } else {
        SqlDialect::sqlite()
    };
    let chosen = choose_partition(&g, &ctx, &dialect);
    validate_assignment(&g, &chosen.assignment, &dialect).map_err(|e| fail(&format!("chosen plan invalid: {e}")))?;
    let best = all_valid_assignments(&g, &dialect)
        .iter()
        .map(|a| estimate_cost(&g, a, &ctx).total_ms)
        .fold(f64::INFINITY, f64::min);
    if chosen.est.total_ms != best {
        return Err(fail(&format!("chosen {} vs exhaustive minimum {best}", chosen.est.total_ms)));
    }
    Ok(())
}

// ---- partial re-evaluation

/// Nodes a change of `signal` must re-evaluate, by walking readers of the
/// signal, data consumers, and the signals extents publish.
pub fn closure_oracle(g: &DataflowGraph, signal: &str) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut stack: Vec<NodeId> = g.signal_consumers(signal);
    while let Some(n) = stack.pop() {
        if !out.insert(n) {
            continue;
        }
        let node = g.node(n);
        if node.is_signal() {
            if let crate::dataflow::NodeKind::Signal { name } = &node.kind {
                stack.extend(g.signal_consumers(name));
            }
            continue;
        }
        stack.extend(g.data_children(n));
        if let Some(s) = node.transform().and_then(TransformDef::published_signal) {
            stack.extend(g.signal_node(s));
        }
    }
    out
}

/// After a full evaluation of random case `seed`, changes one signal and
/// checks that exactly its closure was evaluated once more and that the
/// result equals a fresh full evaluation.
pub fn check_minimality(seed: u64) -> Result<(), String> {
    let case = random_case(seed, 200);
    let fail = |e: &dyn std::fmt::Display| format!("seed {seed}: {e}\n{}", case.spec);
    let spec = parse_spec(&case.spec_text()).map_err(|e| fail(&e))?;
    let mut g = build_dataflow(&spec).map_err(|e| fail(&e))?;
    let inputs = HashMap::from([("t".to_string(), case.table.clone())]);
    g.eval_full(&inputs, &case.signals).map_err(|e| fail(&e))?;
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69);
    let name = *["p", "q", "mb", "r"].choose(&mut r).unwrap();
    let other = random_case(seed.wrapping_add(1 << 32), 0);
    let value = other.signals[name].clone();
    let before = g.eval_counts();
    g.eval_partial(name, value.clone()).map_err(|e| fail(&e))?;
    let after = g.eval_counts();
    let closure = closure_oracle(&g, name);
    for id in 0..g.len() {
        let delta = after[id] - before[id];
        let want = u64::from(closure.contains(&id));
        if delta != want {
            return Err(fail(&format!("{name}: {} evaluated {delta} times, expected {want}", g.node(id).label())));
        }
    }
    let mut signals = case.signals.clone();
    signals.insert(name.to_string(), value);
    let want = reference_sinks(&g, &inputs, &signals).map_err(|e| fail(&e))?;
    sinks_equal(&g.sink_outputs(), &want, 1e-9).map_err(|e| fail(&e))
}

// ---- cache

/// Textbook byte-budgeted LRU: a recency list, oldest first.
#[derive(Debug, Default)]
pub struct LruModel {
    pub budget: u64,
    order: VecDeque<(CanonicalKey, u64)>,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

impl LruModel {
    pub fn new(budget: u64) -> LruModel {
        LruModel {
            budget,
            ..LruModel::default()
        }
    }

    pub fn bytes(&self) -> u64 {
        self.order.iter().map(|e| e.1).sum()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&mut self, key: &CanonicalKey) -> bool {
        match self.order.iter().position(|e| e.0 == *key) {
            Some(i) => {
                let e = self.order.remove(i).unwrap();
                self.order.push_back(e);
                self.hits += 1;
                true
            }
            None => {
                self.misses += 1;
                false
            }
        }
    }

    pub fn put(&mut self, key: CanonicalKey, size: u64) -> PutOutcome {
        if size > self.budget {
            return PutOutcome::Rejected;
        }
        self.order.retain(|e| e.0 != key);
        let mut evicted = Vec::new();
        while self.bytes() + size > self.budget {
            let (k, _) = self.order.pop_front().expect("budget covers size");
            self.evictions += 1;
            evicted.push(k);
        }
        self.order.push_back((key, size));
        PutOutcome::Stored { evicted }
    }
}

/// Replays `ops` random gets and puts on a [`ResultCache`] and an
/// [`LruModel`], comparing every outcome and the byte budget after each.
pub fn check_cache_trace(seed: u64, ops: usize) -> Result<(), String> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let budget = r.gen_range(50..500);
    let keys = r.gen_range(4..64);
    let cache = ResultCache::new(budget);
    let mut model = LruModel::new(budget);
    let table = Arc::new(Table::empty(crate::value::Schema::default()));
    for i in 0..ops {
        let key = CanonicalKey::new(format!("h{}", r.gen_range(0..3)), &format!("SELECT {}", r.gen_range(0..keys)));
        if r.gen_bool(0.5) {
            let got = cache.get(&key).is_some();
            let want = model.get(&key);
            if got != want {
                return Err(format!("seed {seed} op {i}: get {key:?} hit={got}, model hit={want}"));
            }
        } else {
            let size = if r.gen_bool(0.03) {
                budget + r.gen_range(1..10)
            } else {
                r.gen_range(1..=budget / 3)
            };
            let got = cache.put_sized(key.clone(), table.clone(), size);
            let want = model.put(key.clone(), size);
            if got != want {
                return Err(format!("seed {seed} op {i}: put {key:?} ({size} B) {got:?}, model {want:?}"));
            }
        }
        let m = cache.metrics();
        if m.bytes > budget {
            return Err(format!("seed {seed} op {i}: {} bytes over budget {budget}", m.bytes));
        }
        if m.bytes != model.bytes() || m.entries as usize != model.len() {
            return Err(format!(
                "seed {seed} op {i}: {} B / {} entries, model {} B / {}",
                m.bytes,
                m.entries,
                model.bytes(),
                model.len()
            ));
        }
    }
    let m = cache.metrics();
    if (m.hits, m.misses, m.evictions) != (model.hits, model.misses, model.evictions) {
        return Err(format!("seed {seed}: counters {m:?} vs model {model:?}"));
    }
    Ok(())
}
