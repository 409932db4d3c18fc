use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use vegaplus_core::cache::ResultCache;
use vegaplus_core::dataflow::build_dataflow;
use vegaplus_core::partition::{make_plan, CostContext, CostParams, NetworkProfile, Side, Stats};
use vegaplus_core::runtime::{
    bind_sources, execute_plan, Backend, DbDriver, DriverCatalog, EmbeddedDriver, InstrumentedDriver,
    PlanChoice, PlanLabel, Session, SimulatedNetwork,
};
use vegaplus_core::spec::gallery;
use vegaplus_core::synth::{flights, random_case};
use vegaplus_core::testkit::{all_valid_assignments, reference_sinks, sinks_equal};
use vegaplus_core::{parse_spec, Table, Value};

fn backend_for(spec: &vegaplus_core::VizSpec, driver: Arc<dyn DbDriver>) -> Backend {
    let none = BTreeMap::new();
    let catalog = DriverCatalog {
        driver: &*driver,
        tables: &none,
        file_root: None,
    };
    let bindings = bind_sources(spec, &catalog).unwrap();
    Backend {
        network: SimulatedNetwork::new(driver, NetworkProfile::zero()),
        bindings,
    }
}

fn instrumented(tables: &[(&str, &Table)]) -> Arc<InstrumentedDriver> {
    let d = EmbeddedDriver::temporary().unwrap();
    for (name, t) in tables {
        d.ingest(name, t).unwrap();
    }
    Arc::new(InstrumentedDriver::new(Arc::new(d)))
}

#[test]
fn random_specs_match_reference_under_every_plan() {
    let mut checked = 0;
    for seed in 0..60u64 {
        let case = random_case(seed, 200);
        let spec = parse_spec(&case.spec_text())
            .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", case.spec));
        let g = build_dataflow(&spec).unwrap();
        let inputs = HashMap::from([("t".to_string(), case.table.clone())]);
        let want = match reference_sinks(&g, &inputs, &case.signals) {
            Ok(w) => w,
            Err(e) => panic!("seed {seed}: reference failed: {e}\n{}", case.spec),
        };
        let driver = instrumented(&[("t", &case.table)]);
        let backend = backend_for(&spec, driver);
        let stats = Stats::default();
        let params = CostParams::default();
        let ctx = CostContext {
            stats: &stats,
            net: NetworkProfile::zero(),
            params: &params,
        };
        for a in all_valid_assignments(&g, backend.network.dialect()) {
            let plan = make_plan(&g, a, &ctx);
            let mut g2 = g.clone();
            let got = execute_plan(&plan, &mut g2, &backend, None, &case.signals, PlanLabel::Custom)
                .unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}\nplan {:?}", case.spec, plan.assignment));
            if let Err(e) = sinks_equal(&got.sinks, &want, 1e-9) {
                panic!("seed {seed}: {e}\n{}\nplan {:?}", case.spec, plan.assignment);
            }
            checked += 1;
        }
    }
    assert!(checked > 60);
}

fn flights_session(rows: usize) -> (Session, Arc<InstrumentedDriver>, Table) {
    let data = flights(rows, 7);
    let spec = parse_spec(gallery::FLIGHTS).unwrap();
    let driver = instrumented(&[("flights", &data)]);
    let backend = backend_for(&spec, driver.clone());
    let cache = Arc::new(ResultCache::new(64 << 20));
    let s = Session::new(&spec, backend, cache, CostParams::default()).unwrap();
    (s, driver, data)
}

fn flights_reference(data: &Table, maxbins: f64) -> BTreeMap<String, Arc<Table>> {
    let spec = parse_spec(gallery::FLIGHTS).unwrap();
    let g = build_dataflow(&spec).unwrap();
    let inputs = HashMap::from([("flights".to_string(), data.clone())]);
    let signals = HashMap::from([("maxbins".to_string(), Value::number(maxbins))]);
    reference_sinks(&g, &inputs, &signals).unwrap()
}

#[test]
fn flights_recommended_plan_runs_extent_bin_aggregate_on_the_server() {
    let (mut s, _, data) = flights_session(20_000);
    for n in s.graph().nodes.iter().filter(|n| n.transform().is_some()) {
        assert_eq!(s.plan().side(n.id), Some(Side::Server), "{}", n.label());
    }
    let out = s.execute_active().unwrap();
    sinks_equal(&out.sinks, &flights_reference(&data, 10.0), 1e-9).unwrap();
    assert_eq!(out.driver_calls, 2, "extent and aggregate queries");
}

#[test]
fn warm_interactions_issue_no_driver_calls() {
    let (mut s, driver, data) = flights_session(5_000);
    s.execute_active().unwrap();
    let first = s.handle_interaction("maxbins", Value::number(20.0)).unwrap();
    assert!(first.driver_calls <= 1);
    sinks_equal(&first.sinks, &flights_reference(&data, 20.0), 1e-9).unwrap();
    s.handle_interaction("maxbins", Value::number(10.0)).unwrap();
    let before = driver.calls();
    let again = s.handle_interaction("maxbins", Value::number(20.0)).unwrap();
    assert_eq!(driver.calls(), before);
    assert_eq!(again.timing.server_ms, 0.0);
    assert_eq!(again.timing.network_ms, 0.0);
    sinks_equal(&again.sinks, &flights_reference(&data, 20.0), 1e-9).unwrap();
}

#[test]
fn prefetch_makes_a_slider_sweep_hit_the_cache() {
    let (mut s, driver, data) = flights_session(5_000);
    s.execute_active().unwrap();
    let mut hits = 0;
    for step in 1..=8 {
        let report = s.prefetch_job().run();
        assert_eq!(report.failed, 0);
        let mb = (step * 5) as f64;
        let before = driver.calls();
        let out = s.handle_interaction("maxbins", Value::number(mb)).unwrap();
        if driver.calls() == before {
            hits += 1;
        }
        sinks_equal(&out.sinks, &flights_reference(&data, mb), 1e-9).unwrap();
        let _ = out.plan == PlanChoice::Candidate;
    }
    assert!(hits >= 6, "{hits} hits");
}
