use std::collections::BTreeMap;

use proptest::prelude::*;
use vegaplus_core::dataflow::{build_dataflow, DataflowGraph};
use vegaplus_core::partition::{
    apply_override, candidate_plan, choose_partition, estimate_cost, validate_assignment, CostContext, CostParams,
    NetworkProfile, Side, Stats, TableStats,
};
use vegaplus_core::spec::{gallery, TransformKind};
use vegaplus_core::sql::SqlDialect;
use vegaplus_core::synth::{flights, jobs};
use vegaplus_core::testkit::{all_valid_assignments, check_partition_optimal};
use vegaplus_core::{parse_spec, Table, Value};

#[test]
fn chosen_cost_is_the_exhaustive_minimum() {
    for seed in 0..60 {
        check_partition_optimal(seed, 11).unwrap();
    }
}

fn graph(spec: &str) -> DataflowGraph {
    build_dataflow(&parse_spec(spec).unwrap()).unwrap()
}

fn stats_for(source: &str, t: &Table) -> Stats {
    Stats {
        tables: BTreeMap::from([(source.to_string(), TableStats::of_table(t))]),
        ..Stats::default()
    }
}

#[test]
fn small_table_without_latency_prefers_the_client_or_ties() {
    let mut g = graph(gallery::FLIGHTS);
    g.set_signal("maxbins", Value::number(10.0)).unwrap();
    let stats = stats_for("flights", &flights(100, 1));
    let params = CostParams::default();
    let ctx = CostContext {
        stats: &stats,
        net: NetworkProfile::new(0.0, 1e4),
        params: &params,
    };
    let dialect = SqlDialect::sqlite();
    let chosen = choose_partition(&g, &ctx, &dialect);
    let all_client = all_valid_assignments(&g, &dialect)
        .into_iter()
        .find(|a| a.iter().all(|(n, s)| g.node(*n).is_scan() || *s == Side::Client))
        .unwrap();
    assert!(chosen.est.total_ms <= estimate_cost(&g, &all_client, &ctx).total_ms);
}

#[test]
fn flights_recommends_the_server_for_extent_bin_and_aggregate() {
    let mut g = graph(gallery::FLIGHTS);
    g.set_signal("maxbins", Value::number(10.0)).unwrap();
    let mut ts = TableStats::of_table(&flights(10_000, 1));
    ts.rows = 5_000_000;
    let stats = Stats {
        tables: BTreeMap::from([("flights".to_string(), ts)]),
        ..Stats::default()
    };
    let params = CostParams::default();
    let ctx = CostContext {
        stats: &stats,
        net: NetworkProfile::from_mbps(50.0, 80.0),
        params: &params,
    };
    let plan = choose_partition(&g, &ctx, &SqlDialect::sqlite());
    for n in g.nodes.iter().filter(|n| n.transform().is_some()) {
        assert_eq!(plan.side(n.id), Some(Side::Server), "{}", n.label());
    }
    let all_server_edge = plan.est.edges.iter().find(|e| e.to.is_none() && e.rows > 1.0).unwrap();
    assert!(all_server_edge.rows <= 10.0, "aggregate of ≤ 10 bins");
}

#[test]
fn census_gender_candidate_cuts_after_the_scan() {
    let mut g = graph(gallery::CENSUS);
    g.set_signal("gender", Value::string("all")).unwrap();
    let stats = stats_for("jobs", &jobs(1));
    let params = CostParams::default();
    let ctx = CostContext {
        stats: &stats,
        net: NetworkProfile::from_mbps(50.0, 80.0),
        params: &params,
    };
    let dialect = SqlDialect::sqlite();
    let plan = candidate_plan(&g, &ctx, &dialect, "gender").unwrap();
    // brute force: valid plans with every reader of gender (and below) on the client
    let closure = g.signal_closure("gender").unwrap();
    let best = all_valid_assignments(&g, &dialect)
        .into_iter()
        .filter(|a| a.iter().all(|(n, s)| !closure.contains(n) || *s == Side::Client))
        .min_by(|a, b| estimate_cost(&g, a, &ctx).total_ms.total_cmp(&estimate_cost(&g, b, &ctx).total_ms))
        .unwrap();
    assert_eq!(plan.assignment, best);
    let scan = g.sources[0];
    assert_eq!(plan.cut_producers(), vec![scan]);
}

#[test]
fn client_bin_override_moves_more_bytes() {
    let mut g = graph(gallery::FLIGHTS);
    g.set_signal("maxbins", Value::number(10.0)).unwrap();
    let stats = stats_for("flights", &flights(50_000, 2));
    let params = CostParams::default();
    let ctx = CostContext {
        stats: &stats,
        net: NetworkProfile::from_mbps(50.0, 80.0),
        params: &params,
    };
    let dialect = SqlDialect::sqlite();
    let plan = choose_partition(&g, &ctx, &dialect);
    let bin = g.nodes.iter().find(|n| n.transform_kind() == Some(TransformKind::Bin)).unwrap().id;
    let custom = apply_override(&plan, &g, bin, Side::Client, &ctx, &dialect).unwrap();
    assert!(custom.est.transfer_ms > plan.est.transfer_ms);
    let back = apply_override(&custom, &g, bin, Side::Server, &ctx, &dialect).unwrap();
    let agg = g.nodes.iter().find(|n| n.transform_kind() == Some(TransformKind::Aggregate)).unwrap().id;
    let back = apply_override(&back, &g, agg, Side::Server, &ctx, &dialect).unwrap();
    assert_eq!(back.assignment, plan.assignment);
}

#[test]
fn stack_stays_on_the_client_without_window_functions() {
    let mut g = graph(gallery::CENSUS);
    g.set_signal("gender", Value::string("all")).unwrap();
    let stats = stats_for("jobs", &jobs(1));
    let params = CostParams::default();
    let ctx = CostContext {
        stats: &stats,
        net: NetworkProfile::from_mbps(50.0, 80.0),
        params: &params,
    };
    let dialect = SqlDialect::sqlite().with_window_functions(false);
    let plan = choose_partition(&g, &ctx, &dialect);
    let stack = g.nodes.iter().find(|n| n.transform_kind() == Some(TransformKind::Stack)).unwrap().id;
    assert_eq!(plan.side(stack), Some(Side::Client));
    validate_assignment(&g, &plan.assignment, &dialect).unwrap();
    assert!(apply_override(&plan, &g, stack, Side::Server, &ctx, &dialect).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_toggles_keep_plans_valid(
        seed in 0u64..1000,
        toggles in prop::collection::vec((0usize..16, any::<bool>()), 1..12),
    ) {
        let case = vegaplus_core::synth::random_pipeline_case(seed, 8, 50);
        let mut g = build_dataflow(&parse_spec(&case.spec_text()).unwrap()).unwrap();
        for (name, v) in &case.signals {
            g.set_signal(name, v.clone()).unwrap();
        }
        let stats = stats_for("t", &case.table);
        let params = CostParams::default();
        let ctx = CostContext { stats: &stats, net: NetworkProfile::from_mbps(20.0, 80.0), params: &params };
        let dialect = SqlDialect::sqlite();
        let data: Vec<usize> = g.nodes.iter().filter(|n| n.is_data()).map(|n| n.id).collect();
        let mut plan = choose_partition(&g, &ctx, &dialect);
        for (i, server) in toggles {
            let node = data[i % data.len()];
            let side = if server { Side::Server } else { Side::Client };
            if let Ok(next) = apply_override(&plan, &g, node, side, &ctx, &dialect) {
                prop_assert_eq!(next.side(node), Some(side));
                plan = next;
            }
            prop_assert!(validate_assignment(&g, &plan.assignment, &dialect).is_ok());
        }
    }
}
