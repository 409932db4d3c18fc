use std::collections::HashMap;

use proptest::prelude::*;
use vegaplus_core::dataflow::build_dataflow;
use vegaplus_core::spec::gallery;
use vegaplus_core::synth::{flights, jobs};
use vegaplus_core::testkit::{check_minimality, closure_oracle, reference_sinks, sinks_equal};
use vegaplus_core::{parse_spec, Value};

#[test]
fn partial_evaluation_touches_exactly_the_closure() {
    for seed in 0..40 {
        check_minimality(seed).unwrap();
    }
}

#[test]
fn census_gender_reruns_filter_aggregate_stack() {
    let mut g = build_dataflow(&parse_spec(gallery::CENSUS).unwrap()).unwrap();
    let data = jobs(3);
    let inputs = HashMap::from([("jobs".to_string(), data.clone())]);
    g.eval_full(&inputs, &HashMap::new()).unwrap();
    let pulse = g.eval_partial("gender", Value::string("men")).unwrap();
    let kinds: Vec<&str> = pulse
        .changed
        .iter()
        .filter(|&&n| g.node(n).is_data())
        .map(|&n| g.node(n).kind_name())
        .collect();
    assert_eq!(kinds, ["filter", "aggregate", "stack"]);
    assert_eq!(closure_oracle(&g, "gender"), g.signal_closure("gender").unwrap());
    let want = reference_sinks(&g, &inputs, &HashMap::from([("gender".to_string(), Value::string("men"))])).unwrap();
    sinks_equal(&g.sink_outputs(), &want, 1e-9).unwrap();
}

#[test]
fn stacked_segments_tile_each_year() {
    let mut g = build_dataflow(&parse_spec(gallery::CENSUS).unwrap()).unwrap();
    let data = jobs(5);
    g.eval_full(&HashMap::from([("jobs".to_string(), data.clone())]), &HashMap::new())
        .unwrap();
    let out = g.dataset_output("series").unwrap();
    let col = |name: &str| out.schema().index_of(name).unwrap();
    let mut by_year: HashMap<String, Vec<(f64, f64, f64)>> = HashMap::new();
    for r in out.rows() {
        let n = |c: usize| r[c].as_f64().unwrap();
        by_year
            .entry(r[col("year")].to_string())
            .or_default()
            .push((n(col("y0")), n(col("y1")), n(col("total"))));
    }
    for (year, mut segs) in by_year {
        segs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut at = 0.0;
        for (y0, y1, total) in &segs {
            assert_eq!(*y0, at, "{year}");
            assert!((y1 - y0 - total).abs() < 1e-9);
            at = *y1;
        }
        let sum: f64 = data
            .rows()
            .filter(|r| r[0].to_string() == year)
            .map(|r| r[3].as_f64().unwrap_or(0.0))
            .sum();
        assert!((at - sum).abs() < 1e-6, "{year}: {at} vs {sum}");
    }
}

#[test]
fn histogram_matches_a_direct_count() {
    let data = flights(2_000, 9);
    let mut g = build_dataflow(&parse_spec(gallery::FLIGHTS).unwrap()).unwrap();
    g.eval_full(&HashMap::from([("flights".to_string(), data.clone())]), &HashMap::new())
        .unwrap();
    let out = g.dataset_output("binned").unwrap();
    assert!(out.num_rows() <= 10);
    let total: f64 = out.rows().map(|r| r[2].as_f64().unwrap()).sum();
    let non_null = data.rows().filter(|r| !r[0].is_null()).count();
    assert_eq!(total as usize, non_null);
    // the last bin is closed on the right
    let top = out.rows().map(|r| r[1].as_f64().unwrap()).fold(f64::MIN, f64::max);
    for r in out.rows() {
        let (b0, b1) = (r[0].as_f64().unwrap(), r[1].as_f64().unwrap());
        let direct = data
            .rows()
            .filter_map(|row| row[0].as_f64())
            .filter(|&d| d >= b0 && (d < b1 || (d == b1 && b1 == top)))
            .count();
        assert_eq!(direct as f64, r[2].as_f64().unwrap(), "bin [{b0}, {b1})");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn repeated_partial_updates_equal_full_evaluation(
        seed in 0u64..10_000,
        updates in prop::collection::vec((0usize..4, 0u64..1000), 1..6),
    ) {
        let case = vegaplus_core::synth::random_case(seed, 100);
        let mut g = build_dataflow(&parse_spec(&case.spec_text()).unwrap()).unwrap();
        let inputs = HashMap::from([("t".to_string(), case.table.clone())]);
        g.eval_full(&inputs, &case.signals).unwrap();
        let mut signals = case.signals.clone();
        for (which, vseed) in updates {
            let name = ["p", "q", "mb", "r"][which];
            let v = vegaplus_core::synth::random_case(vseed, 0).signals[name].clone();
            g.eval_partial(name, v.clone()).unwrap();
            signals.insert(name.to_string(), v);
        }
        let want = reference_sinks(&g, &inputs, &signals).unwrap();
        prop_assert!(sinks_equal(&g.sink_outputs(), &want, 1e-9).is_ok());
    }
}
