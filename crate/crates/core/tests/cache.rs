use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use vegaplus_core::cache::{CanonicalKey, InteractionPredictor, PrefetchTask, ResultCache};
use vegaplus_core::partition::{CostParams, NetworkProfile, TableStats};
use vegaplus_core::runtime::{
    bind_sources, Backend, DbDriver, DriverCatalog, DriverError, EmbeddedDriver, InstrumentedDriver, Session,
    SimulatedNetwork,
};
use vegaplus_core::spec::{gallery, Bind, SignalDef};
use vegaplus_core::sql::SqlDialect;
use vegaplus_core::synth::flights;
use vegaplus_core::testkit::{check_cache_trace, LruModel};
use vegaplus_core::{parse_spec, Schema, Table, Value};

#[test]
fn random_traces_match_the_reference_lru() {
    for seed in 0..5 {
        check_cache_trace(seed, 2_000).unwrap();
    }
}

#[derive(Clone, Debug)]
enum Op {
    Get(u8),
    Put(u8, u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..12).prop_map(Op::Get),
        (0u8..12, 1u64..60).prop_map(|(k, s)| Op::Put(k, s)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cache_agrees_with_model(budget in 1u64..120, ops in prop::collection::vec(op(), 1..200)) {
        let cache = ResultCache::new(budget);
        let mut model = LruModel::new(budget);
        let t = Arc::new(Table::empty(Schema::default()));
        let key = |k: u8| CanonicalKey::new("h", &format!("SELECT {k}"));
        for op in ops {
            match op {
                Op::Get(k) => prop_assert_eq!(cache.get(&key(k)).is_some(), model.get(&key(k))),
                Op::Put(k, size) => prop_assert_eq!(cache.put_sized(key(k), t.clone(), size), model.put(key(k), size)),
            }
            let m = cache.metrics();
            prop_assert!(m.bytes <= budget);
            prop_assert_eq!(m.bytes, model.bytes());
        }
        let m = cache.metrics();
        prop_assert_eq!((m.hits, m.misses, m.evictions), (model.hits, model.misses, model.evictions));
    }
}

fn slider() -> SignalDef {
    SignalDef {
        name: "maxbins".into(),
        value: Value::number(20.0),
        bind: Bind::Slider {
            min: 5.0,
            max: 40.0,
            step: 5.0,
        },
    }
}

fn radio() -> SignalDef {
    SignalDef {
        name: "gender".into(),
        value: Value::string("all"),
        bind: Bind::Radio {
            options: ["all", "men", "women"].map(Value::string).to_vec(),
        },
    }
}

#[test]
fn recent_slider_moves_dominate_predictions() {
    let mut p = InteractionPredictor::new(0.5, 2, 8);
    p.record("gender", Value::string("men"));
    for v in [10.0, 15.0, 20.0] {
        p.record("maxbins", Value::number(v));
    }
    let current = HashMap::from([
        ("maxbins".to_string(), Value::number(20.0)),
        ("gender".to_string(), Value::string("men")),
    ]);
    let out = p.predict(&[slider(), radio()], &current);
    // weights: maxbins 1 + 0.5 + 0.25, gender 0.5^3
    let total = 1.75 + 0.125;
    assert_eq!(out.len(), 6);
    for pred in &out[..4] {
        assert_eq!(pred.signal, "maxbins");
        assert!((pred.probability - 1.75 / total / 4.0).abs() < 1e-12);
    }
    let values: Vec<f64> = out[..4].iter().map(|p| p.value.as_f64().unwrap()).collect();
    assert_eq!(values, [15.0, 25.0, 10.0, 30.0]);
    for pred in &out[4..] {
        assert_eq!(pred.signal, "gender");
        assert!((pred.probability - 0.125 / total / 2.0).abs() < 1e-12);
    }
}

/// Delegates to an embedded database; once armed, the next query bumps a
/// session's generation as a user event would.
struct Interrupting {
    inner: EmbeddedDriver,
    generation: OnceLock<Arc<AtomicU64>>,
    armed: AtomicBool,
    calls: AtomicU64,
}

impl DbDriver for Interrupting {
    fn dialect(&self) -> &SqlDialect {
        self.inner.dialect()
    }

    fn execute(&self, sql: &str) -> Result<Table, DriverError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let out = self.inner.execute(sql);
        if self.armed.swap(false, Ordering::SeqCst) {
            self.generation.get().unwrap().fetch_add(1, Ordering::SeqCst);
        }
        out
    }

    fn ingest(&self, name: &str, table: &Table) -> Result<u64, DriverError> {
        self.inner.ingest(name, table)
    }

    fn table_schema(&self, name: &str) -> Result<Schema, DriverError> {
        self.inner.table_schema(name)
    }

    fn table_stats(&self, name: &str) -> Result<TableStats, DriverError> {
        self.inner.table_stats(name)
    }

    fn content_hash(&self, name: &str) -> Result<String, DriverError> {
        self.inner.content_hash(name)
    }
}

fn flights_session(driver: Arc<dyn DbDriver>) -> Session {
    driver.ingest("flights", &flights(5_000, 4)).unwrap();
    let spec = parse_spec(gallery::FLIGHTS).unwrap();
    let none = BTreeMap::new();
    let catalog = DriverCatalog {
        driver: &*driver,
        tables: &none,
        file_root: None,
    };
    let backend = Backend {
        bindings: bind_sources(&spec, &catalog).unwrap(),
        network: SimulatedNetwork::new(driver, NetworkProfile::zero()),
    };
    Session::new(&spec, backend, Arc::new(ResultCache::new(64 << 20)), CostParams::default()).unwrap()
}

fn task(v: f64, priority: f64) -> PrefetchTask {
    PrefetchTask {
        signal: "maxbins".into(),
        value: Value::number(v),
        priority,
    }
}

#[test]
fn two_predictions_fill_two_entries_and_the_next_move_hits() {
    let driver = Arc::new(InstrumentedDriver::new(Arc::new(EmbeddedDriver::temporary().unwrap())));
    let mut s = flights_session(driver.clone());
    s.execute_active().unwrap();
    let before = s.cache().len();
    let mut job = s.prefetch_job();
    job.tasks = vec![task(5.0, 0.5), task(15.0, 0.5)];
    let report = job.run();
    assert_eq!((report.fetched, report.dropped, report.failed), (2, 0, 0));
    assert_eq!(s.cache().len(), before + 2);
    let calls = driver.calls();
    let out = s.handle_interaction("maxbins", Value::number(15.0)).unwrap();
    assert_eq!(driver.calls(), calls);
    assert_eq!(out.driver_calls, 0);
}

#[test]
fn a_user_event_drops_the_rest_of_the_queue() {
    let driver = Arc::new(Interrupting {
        inner: EmbeddedDriver::temporary().unwrap(),
        generation: OnceLock::new(),
        armed: AtomicBool::new(false),
        calls: AtomicU64::new(0),
    });
    let mut s = flights_session(driver.clone());
    s.execute_active().unwrap();
    driver.generation.set(s.generation().clone()).unwrap();
    let mut job = s.prefetch_job();
    job.tasks = vec![task(5.0, 0.4), task(15.0, 0.3), task(20.0, 0.2), task(25.0, 0.1)];
    driver.armed.store(true, Ordering::SeqCst);
    let calls = driver.calls.load(Ordering::SeqCst);
    let report = job.run();
    // the task in flight finishes; nothing after it starts
    assert_eq!(report.fetched, 1);
    assert_eq!(report.dropped, 3);
    assert_eq!(driver.calls.load(Ordering::SeqCst), calls + 1);
}

#[test]
fn a_stale_job_does_nothing() {
    let driver: Arc<dyn DbDriver> = Arc::new(EmbeddedDriver::temporary().unwrap());
    let mut s = flights_session(driver);
    s.execute_active().unwrap();
    let job = s.prefetch_job();
    s.handle_interaction("maxbins", Value::number(30.0)).unwrap();
    let report = job.run();
    assert_eq!(report.fetched + report.cached, 0);
}
