mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use common::*;
use serde_json::{json, Value as Json};
use vegaplus_core::spec::gallery;
use vegaplus_core::Value;

#[tokio::test]
async fn health_reports_ok() {
    let r = get(&app(), "/api/health").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json(), json!({"status": "ok"}));
}

#[tokio::test]
async fn upload_returns_schema_and_is_idempotent() {
    let app = app();
    let csv = b"a,b,c\n1,x,true\n2,y,false\n3,,true\n";
    let r = upload(&app, "small", csv).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let j = r.json();
    validate("upload", &j);
    assert_eq!(j["rows"], 3);
    assert_eq!(j["schema"][0], json!({"name": "a", "type": "number", "nullable": true}));
    assert_eq!(j["schema"][1]["type"], "string");
    assert_eq!(j["schema"][2]["type"], "boolean");
    let again = upload(&app, "small", csv).await;
    assert_eq!(again.status, StatusCode::OK);
    assert_eq!(again.json(), j);
}

#[tokio::test]
async fn upload_errors_map_to_codes() {
    let app = app();
    let r = upload(&app, "bad", b"a,b\n1,2\n3\n").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error_code(), "malformed_csv");

    let r = upload(&app, "no spaces", b"a\n1\n").await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error_code(), "bad_request");

    let body = multipart(&[("file", Some("x.csv"), b"a\n1\n")]);
    let req = Request::builder()
        .method(Method::POST)
        .uri("/api/datasets")
        .header(header::CONTENT_TYPE, "multipart/form-data; boundary=vegaplus-test-boundary")
        .body(Body::from(body))
        .unwrap();
    let r = send(&app, req).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error_code(), "bad_request");
}

#[tokio::test]
async fn upload_over_the_cap_is_rejected() {
    let mut config = test_config();
    config.server.max_upload_bytes = 64;
    let (app, _) = app_with(config);
    let csv: String = std::iter::once("a\n".to_string())
        .chain((0..100).map(|i| format!("{i}\n")))
        .collect();
    let r = upload(&app, "big", csv.as_bytes()).await;
    assert_eq!(r.status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(r.error_code(), "payload_too_large");
}

#[tokio::test]
async fn flights_session_end_to_end() {
    let app = app();
    let (data, csv) = flights_csv(3_000, 11);
    assert_eq!(upload(&app, "flights", &csv).await.status, StatusCode::OK);

    let s = open_session(&app, gallery::FLIGHTS).await;
    validate("plan", &s["plan"]);
    assert_eq!(s["plan"]["label"], "recommended");
    validate("timing", &s["timing"]);
    validate("timings", &s["timings"]);
    assert_eq!(s["timings"].as_array().unwrap().len(), 1);
    for c in s["candidates"].as_object().unwrap().values() {
        validate("plan", c);
    }
    let tables = [("flights", &data)];
    assert_sinks(
        &s["sinks"],
        &reference(gallery::FLIGHTS, &tables, &[("maxbins", Value::number(10.0))]),
    );
    let id = s["session_id"].as_str().unwrap();

    let url = format!("/api/sessions/{id}/signals");
    let r = post_json(&app, &url, &json!({"name": "maxbins", "value": 20})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let j = r.json();
    validate("signal", &j);
    assert_eq!(j["changed"], json!(["binned"]));
    let want20 = reference(gallery::FLIGHTS, &tables, &[("maxbins", Value::number(20.0))]);
    assert_sinks(&j["sinks"], &want20);

    post_json(&app, &url, &json!({"name": "maxbins", "value": 10})).await;
    let warm = post_json(&app, &url, &json!({"name": "maxbins", "value": 20})).await.json();
    assert_eq!(warm["cache_hit"], true);
    assert_eq!(warm["driver_calls"], 0);
    assert_sinks(&warm["sinks"], &want20);

    let plan = get(&app, &format!("/api/sessions/{id}/plan")).await;
    assert_eq!(plan.status, StatusCode::OK);
    validate("plan", &plan.json());

    let ds = get(&app, &format!("/api/sessions/{id}/datasets/binned")).await;
    assert_eq!(ds.status, StatusCode::OK);
    assert_eq!(ds.content_type, "application/x-ndjson");
    let rows: Vec<Json> = ds.text().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_sinks(&json!({ "binned": rows }), &want20);

    let timings = get(&app, &format!("/api/sessions/{id}/timings")).await.json();
    validate("timings", &timings);

    let m = get(&app, "/api/metrics").await.json();
    validate("metrics", &m);
    assert!(m["hits"].as_u64().unwrap() >= 1);
    assert_eq!(m["sessions"], 1);
}

#[tokio::test]
async fn compare_baseline_records_both_plans() {
    let app = app();
    let (_, csv) = flights_csv(2_000, 3);
    upload(&app, "flights", &csv).await;
    let r = post_json(
        &app,
        "/api/specs?compare=baseline",
        &json!({"spec": gallery::FLIGHTS, "network": {"latency_ms": 1.0, "bandwidth_mbps": 800.0}}),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let j = r.json();
    validate("session", &j);
    let labels: Vec<&str> = j["timings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["baseline", "recommended"]);
    for t in j["timings"].as_array().unwrap() {
        let parts = t["server_ms"].as_f64().unwrap() + t["network_ms"].as_f64().unwrap() + t["client_ms"].as_f64().unwrap();
        assert!((parts - t["total_ms"].as_f64().unwrap()).abs() < 1e-9);
    }
    let base = &j["timings"][0];
    assert!(base["network_ms"].as_f64().unwrap() >= 1.0, "one round trip at 1 ms latency");
}

#[tokio::test]
async fn spec_errors_carry_codes_and_paths() {
    let app = app();
    let r = post_json(&app, "/api/specs", &json!({"spec": "{not json"})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error_code(), "spec_invalid");

    let bad = json!({
        "vegaplus_version": 1,
        "data": [{"name": "d", "values": [{"a": 1}], "transform": [{"type": "filter", "expr": "datum.nope > 1"}]}]
    });
    let r = post_json(&app, "/api/specs", &json!({"spec": bad})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let j = r.json();
    assert_eq!(j["error"]["code"], "spec_invalid");
    assert!(j["error"]["path"].as_str().unwrap().starts_with("$.data[0].transform[0]"), "{j}");

    let missing = json!({"vegaplus_version": 1, "data": [{"name": "d", "table": "nowhere"}]});
    let r = post_json(&app, "/api/specs", &json!({"spec": missing})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error_code(), "unknown_dataset");

    let r = post_json(&app, "/api/specs?compare=other", &json!({"spec": gallery::FLIGHTS})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = post_json(&app, "/api/specs", &json!({"specification": 1})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.error_code(), "bad_request");
}

#[tokio::test]
async fn bindings_rename_spec_tables() {
    let app = app();
    let (data, csv) = flights_csv(500, 5);
    upload(&app, "flights_2024", &csv).await;
    let r = post_json(
        &app,
        "/api/specs",
        &json!({"spec": gallery::FLIGHTS, "bindings": {"flights": "flights_2024"}}),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_sinks(
        &r.json()["sinks"],
        &reference(gallery::FLIGHTS, &[("flights", &data)], &[("maxbins", Value::number(10.0))]),
    );
}

#[tokio::test]
async fn signal_errors() {
    let app = app();
    let (_, csv) = flights_csv(500, 1);
    upload(&app, "flights", &csv).await;
    let id = open_session(&app, gallery::FLIGHTS).await["session_id"].as_str().unwrap().to_string();
    let url = format!("/api/sessions/{id}/signals");

    let r = post_json(&app, &url, &json!({"name": "nope", "value": 1})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error_code(), "invalid_signal");

    let r = post_json(&app, &url, &json!({"name": "maxbins", "value": "many"})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error_code(), "invalid_signal");

    let r = post_json(&app, &url, &json!({"name": "maxbins", "value": [1, 2]})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = post_json(&app, "/api/sessions/missing/signals", &json!({"name": "maxbins", "value": 5})).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.error_code(), "session_not_found");

    let r = get(&app, &format!("/api/sessions/{id}/datasets/nope")).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.error_code(), "dataset_not_found");

    // a rejected value leaves the session usable
    let r = post_json(&app, &url, &json!({"name": "maxbins", "value": 15})).await;
    assert_eq!(r.status, StatusCode::OK);
}

#[tokio::test]
async fn partition_overrides() {
    let app = app();
    let (data, csv) = flights_csv(1_000, 2);
    upload(&app, "flights", &csv).await;
    let s = open_session(&app, gallery::FLIGHTS).await;
    let id = s["session_id"].as_str().unwrap();
    let url = format!("/api/sessions/{id}/partition");
    let node_id = |kind: &str| {
        s["plan"]["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .find(|n| n["kind"] == kind)
            .unwrap()["id"]
            .as_u64()
            .unwrap()
    };

    let r = post_json(&app, &url, &json!({"node": node_id("bin"), "side": "client"})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let j = r.json();
    validate("partition", &j);
    assert_eq!(j["plan"]["label"], "custom");
    assert_eq!(j["timing"]["label"], "custom");
    let side = |plan: &Json, id: u64| {
        plan["nodes"].as_array().unwrap().iter().find(|n| n["id"] == id).unwrap()["side"].clone()
    };
    assert_eq!(side(&j["plan"], node_id("bin")), "Client");
    assert_eq!(side(&j["plan"], node_id("aggregate")), "Client", "descendants follow");
    let want = reference(gallery::FLIGHTS, &[("flights", &data)], &[("maxbins", Value::number(10.0))]);
    assert_sinks(&j["sinks"], &want);

    let r = post_json(&app, &url, &json!({"node": node_id("scan"), "side": "client"})).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let e = r.json();
    assert_eq!(e["error"]["code"], "override_rejected");
    assert_eq!(e["error"]["node"], node_id("scan"));

    let r = post_json(&app, &url, &json!({"node": 999, "side": "server"})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error_code(), "unknown_node");

    let r = post_json(&app, &url, &json!({"node": 1, "side": "middle"})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    // back to the server: the plan is custom but equal to the recommended one
    let r = post_json(&app, &url, &json!({"node": node_id("aggregate"), "side": "server"})).await;
    let j = r.json();
    for n in j["plan"]["nodes"].as_array().unwrap() {
        assert_eq!(n["side"], side(&s["plan"], n["id"].as_u64().unwrap()));
    }
    let timings = get(&app, &format!("/api/sessions/{id}/timings")).await.json();
    let labels: Vec<&str> = timings.as_array().unwrap().iter().map(|t| t["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["recommended", "custom", "custom"]);
}

#[tokio::test]
async fn census_text_and_radio_signals() {
    let app = app();
    let jobs = vegaplus_core::synth::jobs(4);
    upload(&app, "jobs", jobs.to_csv_string().as_bytes()).await;
    let s = open_session(&app, gallery::CENSUS).await;
    let id = s["session_id"].as_str().unwrap();
    let url = format!("/api/sessions/{id}/signals");
    let tables = [("jobs", &jobs)];
    let r = post_json(&app, &url, &json!({"name": "gender", "value": "women"})).await.json();
    assert_sinks(
        &r["sinks"],
        &reference(
            gallery::CENSUS,
            &tables,
            &[("gender", Value::string("women")), ("search", Value::string(""))],
        ),
    );
    let r = post_json(&app, &url, &json!({"name": "search", "value": "^[A-M]"})).await.json();
    assert_sinks(
        &r["sinks"],
        &reference(
            gallery::CENSUS,
            &tables,
            &[("gender", Value::string("women")), ("search", Value::string("^[A-M]"))],
        ),
    );
    let r = post_json(&app, &url, &json!({"name": "gender", "value": "other"})).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn deleted_and_expired_sessions_are_gone() {
    let app = app();
    let (_, csv) = flights_csv(200, 1);
    upload(&app, "flights", &csv).await;
    let id = open_session(&app, gallery::FLIGHTS).await["session_id"].as_str().unwrap().to_string();
    assert_eq!(delete(&app, &format!("/api/sessions/{id}")).await.status, StatusCode::OK);
    let r = get(&app, &format!("/api/sessions/{id}/plan")).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(delete(&app, &format!("/api/sessions/{id}")).await.status, StatusCode::NOT_FOUND);

    let mut config = test_config();
    config.server.session_ttl_secs = 0;
    let (app, state) = app_with(config);
    upload(&app, "flights", &csv).await;
    let id = open_session(&app, gallery::FLIGHTS).await["session_id"].as_str().unwrap().to_string();
    tokio::time::sleep(Duration::from_millis(20)).await;
    let r = get(&app, &format!("/api/sessions/{id}/timings")).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn cors_allows_configured_origins_only() {
    let app = app();
    let req = |origin: &str| {
        Request::builder()
            .method(Method::OPTIONS)
            .uri("/api/health")
            .header(header::ORIGIN, origin)
            .header(header::ACCESS_CONTROL_REQUEST_METHOD, "GET")
            .body(Body::empty())
            .unwrap()
    };
    let ok = send(&app, req("http://localhost:5173")).await;
    assert_eq!(
        ok.headers.get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
    let other = send(&app, req("http://evil.example")).await;
    assert!(other.headers.get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}

#[tokio::test]
async fn prefetch_runs_in_the_background() {
    let mut config = test_config();
    config.cache.prefetch = true;
    let (app, _) = app_with(config);
    let (_, csv) = flights_csv(2_000, 8);
    upload(&app, "flights", &csv).await;
    let id = open_session(&app, gallery::FLIGHTS).await["session_id"].as_str().unwrap().to_string();
    let url = format!("/api/sessions/{id}/signals");
    post_json(&app, &url, &json!({"name": "maxbins", "value": 15})).await;
    // the next slider step was predicted; wait for the job to land it
    let mut hit = false;
    for _ in 0..100 {
        tokio::time::sleep(Duration::from_millis(20)).await;
        let m = get(&app, "/api/metrics").await.json();
        if m["entries"].as_u64().unwrap() >= 4 {
            hit = true;
            break;
        }
    }
    assert!(hit, "prefetch filled the cache");
    let r = post_json(&app, &url, &json!({"name": "maxbins", "value": 20})).await.json();
    assert_eq!(r["cache_hit"], true);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sixteen_concurrent_sessions() {
    concurrent_sessions(&app(), 16).await;
}

#[tokio::test]
async fn every_endpoint_in_one_walk() {
    endpoint_walk(&app()).await;
}
