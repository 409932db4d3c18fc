#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value as Json};
use tower::ServiceExt;
use vegaplus_core::dataflow::build_dataflow;
use vegaplus_core::runtime::EmbeddedDriver;
use vegaplus_core::testkit::reference_sinks;
use vegaplus_core::{parse_spec, Table, Value};
use vegaplus_server::{router, AppState, Config};

pub fn test_config() -> Config {
    let mut c = Config::default();
    c.cache.prefetch = false;
    c
}

pub fn app_with(config: Config) -> (Router, Arc<AppState>) {
    let driver = Arc::new(EmbeddedDriver::temporary().unwrap());
    let state = Arc::new(AppState::with_driver(driver, config));
    (router(state.clone()), state)
}

pub fn app() -> Router {
    app_with(test_config()).0
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Json {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn error_code(&self) -> String {
        let j = self.json();
        validate("error", &j);
        j["error"]["code"].as_str().unwrap().to_string()
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        headers,
        body,
    }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_json(app: &Router, uri: &str, body: &Json) -> Reply {
    let req = Request::builder()
        .method(Method::POST)
        .uri(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

pub async fn delete(app: &Router, uri: &str) -> Reply {
    send(app, Request::delete(uri).body(Body::empty()).unwrap()).await
}

const BOUNDARY: &str = "vegaplus-test-boundary";

pub fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, filename, data) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match filename {
            Some(f) => body.extend_from_slice(
                format!(
                    "Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: text/csv\r\n\r\n"
                )
                .as_bytes(),
            ),
            None => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes(),
            ),
        }
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub async fn upload(app: &Router, name: &str, csv: &[u8]) -> Reply {
    let body = multipart(&[("name", None, name.as_bytes()), ("file", Some("data.csv"), csv)]);
    let req = Request::builder()
        .method(Method::POST)
        .uri("/api/datasets")
        .header(
            header::CONTENT_TYPE,
            format!("multipart/form-data; boundary={BOUNDARY}"),
        )
        .body(Body::from(body))
        .unwrap();
    send(app, req).await
}

pub async fn open_session(app: &Router, spec: &str) -> Json {
    let r = post_json(app, "/api/specs", &json!({ "spec": spec })).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let j = r.json();
    validate("session", &j);
    j
}

pub fn flights_csv(rows: usize, seed: u64) -> (Table, Vec<u8>) {
    let t = vegaplus_core::synth::flights(rows, seed);
    let csv = t.to_csv_string().into_bytes();
    (t, csv)
}

/// Sinks computed by the all-client interpreter.
pub fn reference(spec: &str, tables: &[(&str, &Table)], signals: &[(&str, Value)]) -> BTreeMap<String, Arc<Table>> {
    let spec = parse_spec(spec).unwrap();
    let g = build_dataflow(&spec).unwrap();
    let inputs: HashMap<String, Table> = tables.iter().map(|(n, t)| (n.to_string(), (*t).clone())).collect();
    let signals: HashMap<String, Value> = signals.iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
    reference_sinks(&g, &inputs, &signals).unwrap()
}

/// Compares JSON sink rows from a response with reference tables.
pub fn assert_sinks(got: &Json, want: &BTreeMap<String, Arc<Table>>) {
    for (name, table) in want {
        let rows = got[name.as_str()]
            .as_array()
            .unwrap_or_else(|| panic!("sink {name} missing from {got}"));
        let t = Table::from_json_rows(rows, Some(table.schema())).unwrap();
        vegaplus_core::table::multiset_diff(&t, table, 1e-9).unwrap_or_else(|e| panic!("sink {name}: {e}"));
    }
}

// ---- JSON schema checks

fn schema_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/schema")
}

pub fn load_schema(name: &str) -> Json {
    let path = schema_dir().join(format!("{name}.schema.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// Panics unless `value` satisfies schema `name` from docs/schema.
pub fn validate(name: &str, value: &Json) {
    let schema = load_schema(name);
    let mut errors = Vec::new();
    check(&schema, value, "$", &mut errors);
    assert!(errors.is_empty(), "{name}: {}\n{value}", errors.join("; "));
}

fn type_matches(t: &str, v: &Json) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.as_u64().is_some() || v.as_i64().is_some(),
        _ => panic!("unsupported type {t}"),
    }
}

/// The keywords used by the files in docs/schema: type, enum, required,
/// properties, additionalProperties, items, minItems, maxItems, minimum,
/// minLength.
fn check(s: &Json, v: &Json, at: &str, errors: &mut Vec<String>) {
    let obj = s.as_object().expect("schema object");
    for key in obj.keys() {
        assert!(
            matches!(
                key.as_str(),
                "$schema" | "title" | "type" | "enum" | "required" | "properties" | "additionalProperties"
                    | "items" | "minItems" | "maxItems" | "minimum" | "minLength"
            ),
            "unsupported schema keyword {key}"
        );
    }
    if let Some(t) = s.get("type") {
        let ok = match t {
            Json::String(t) => type_matches(t, v),
            Json::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => panic!("bad type keyword"),
        };
        if !ok {
            errors.push(format!("{at}: expected {t}, got {v}"));
            return;
        }
    }
    if let Some(e) = s.get("enum").and_then(Json::as_array) {
        if !e.contains(v) {
            errors.push(format!("{at}: {v} not in {}", Json::Array(e.clone())));
        }
    }
    if let (Some(min), Some(n)) = (s.get("minimum").and_then(Json::as_f64), v.as_f64()) {
        if n < min {
            errors.push(format!("{at}: {n} < {min}"));
        }
    }
    if let (Some(min), Some(text)) = (s.get("minLength").and_then(Json::as_u64), v.as_str()) {
        if (text.chars().count() as u64) < min {
            errors.push(format!("{at}: shorter than {min}"));
        }
    }
    if let Some(o) = v.as_object() {
        for r in s.get("required").and_then(Json::as_array).into_iter().flatten() {
            let r = r.as_str().unwrap();
            if !o.contains_key(r) {
                errors.push(format!("{at}: missing {r}"));
            }
        }
        let props = s.get("properties").and_then(Json::as_object);
        for (k, val) in o {
            let path = format!("{at}.{k}");
            match props.and_then(|p| p.get(k)) {
                Some(ps) => check(ps, val, &path, errors),
                None => match s.get("additionalProperties") {
                    Some(Json::Bool(false)) => errors.push(format!("{path}: not allowed")),
                    Some(extra @ Json::Object(_)) => check(extra, val, &path, errors),
                    _ => {}
                },
            }
        }
    }
    if let Some(a) = v.as_array() {
        if let Some(min) = s.get("minItems").and_then(Json::as_u64) {
            if (a.len() as u64) < min {
                errors.push(format!("{at}: fewer than {min} items"));
            }
        }
        if let Some(max) = s.get("maxItems").and_then(Json::as_u64) {
            if (a.len() as u64) > max {
                errors.push(format!("{at}: more than {max} items"));
            }
        }
        if let Some(items) = s.get("items") {
            for (i, x) in a.iter().enumerate() {
                check(items, x, &format!("{at}[{i}]"), errors);
            }
        }
    }
}

// ---- contract scenarios shared with the acceptance target

/// `n` sessions on one table, each moving the slider four times
/// concurrently; every response is checked against the reference.
pub async fn concurrent_sessions(app: &Router, n: u32) {
    let (data, csv) = flights_csv(2_000, 21);
    assert_eq!(upload(app, "flights", &csv).await.status, StatusCode::OK);
    let spec = vegaplus_core::spec::gallery::FLIGHTS;
    let mut tasks = Vec::new();
    for i in 0..n {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let s = open_session(&app, spec).await;
            let id = s["session_id"].as_str().unwrap().to_string();
            let mut seen = Vec::new();
            for step in 0..4u32 {
                let mb = 5 * (1 + (i + step) % 8);
                let r = post_json(
                    &app,
                    &format!("/api/sessions/{id}/signals"),
                    &json!({"name": "maxbins", "value": mb}),
                )
                .await;
                assert_eq!(r.status, StatusCode::OK, "{}", r.text());
                let j = r.json();
                validate("signal", &j);
                seen.push((mb, j["sinks"].clone()));
            }
            (id, seen)
        }));
    }
    let mut ids = std::collections::BTreeSet::new();
    for t in tasks {
        let (id, seen) = t.await.unwrap();
        assert!(ids.insert(id), "session ids are unique");
        for (mb, sinks) in seen {
            let want = reference(spec, &[("flights", &data)], &[("maxbins", Value::number(mb as f64))]);
            assert_sinks(&sinks, &want);
        }
    }
    let m = get(app, "/api/metrics").await.json();
    validate("metrics", &m);
    assert_eq!(m["sessions"], n as u64);
}

/// Every endpoint once, success and error forms, with schema checks.
pub async fn endpoint_walk(app: &Router) {
    let spec = vegaplus_core::spec::gallery::FLIGHTS;
    let h = get(app, "/api/health").await;
    assert_eq!((h.status, h.json()), (StatusCode::OK, json!({"status": "ok"})));

    let (data, csv) = flights_csv(3_000, 5);
    let up = upload(app, "flights", &csv).await;
    assert_eq!(up.status, StatusCode::OK, "{}", up.text());
    validate("upload", &up.json());
    assert_eq!(upload(app, "flights", b"a,b\n1\n").await.error_code(), "malformed_csv");

    let r = post_json(app, "/api/specs?compare=baseline", &json!({ "spec": spec })).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let s = r.json();
    validate("session", &s);
    let id = s["session_id"].as_str().unwrap().to_string();
    let tables = [("flights", &data)];
    let want = |mb: f64| reference(spec, &tables, &[("maxbins", Value::number(mb))]);
    assert_sinks(&s["sinks"], &want(10.0));
    let bad = post_json(app, "/api/specs", &json!({"spec": "{"})).await;
    assert_eq!((bad.status, bad.error_code()), (StatusCode::UNPROCESSABLE_ENTITY, "spec_invalid".into()));

    let sig = format!("/api/sessions/{id}/signals");
    let r = post_json(app, &sig, &json!({"name": "maxbins", "value": 20})).await;
    validate("signal", &r.json());
    assert_sinks(&r.json()["sinks"], &want(20.0));
    post_json(app, &sig, &json!({"name": "maxbins", "value": 10})).await;
    let again = post_json(app, &sig, &json!({"name": "maxbins", "value": 20})).await.json();
    assert_eq!(again["cache_hit"], true);
    assert_eq!(again["timing"]["server_ms"], 0.0);
    let r = post_json(app, &sig, &json!({"name": "nope", "value": 1})).await;
    assert_eq!((r.status, r.error_code()), (StatusCode::UNPROCESSABLE_ENTITY, "invalid_signal".into()));

    let node = |kind: &str| {
        s["plan"]["nodes"].as_array().unwrap().iter().find(|n| n["kind"] == kind).unwrap()["id"].clone()
    };
    let part = format!("/api/sessions/{id}/partition");
    let r = post_json(app, &part, &json!({"node": node("bin"), "side": "client"})).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    validate("partition", &r.json());
    assert_sinks(&r.json()["sinks"], &want(20.0));
    let r = post_json(app, &part, &json!({"node": node("scan"), "side": "client"})).await;
    assert_eq!((r.status, r.error_code()), (StatusCode::CONFLICT, "override_rejected".into()));

    let plan = get(app, &format!("/api/sessions/{id}/plan")).await;
    validate("plan", &plan.json());
    let timings = get(app, &format!("/api/sessions/{id}/timings")).await.json();
    validate("timings", &timings);
    let labels: Vec<&str> = timings.as_array().unwrap().iter().map(|t| t["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["baseline", "recommended", "custom"]);

    let ds = get(app, &format!("/api/sessions/{id}/datasets/binned")).await;
    assert_eq!(ds.content_type, "application/x-ndjson");
    let rows: Vec<Json> = ds.text().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_sinks(&json!({ "binned": rows }), &want(20.0));

    validate("metrics", &get(app, "/api/metrics").await.json());
    assert_eq!(delete(app, &format!("/api/sessions/{id}")).await.status, StatusCode::OK);
    let gone = get(app, &format!("/api/sessions/{id}/plan")).await;
    assert_eq!((gone.status, gone.error_code()), (StatusCode::NOT_FOUND, "session_not_found".into()));
}
