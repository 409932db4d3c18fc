use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use vegaplus_core::partition::{PartitionPlan, Side};
use vegaplus_core::runtime::{Outcome, Session};
use vegaplus_core::table::Table;
use vegaplus_core::Value;

use crate::config::network_profile;
use crate::error::{ApiError, ErrorCode};
use crate::state::{Access, AppState};

type AppResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let origins: Vec<_> = state
        .config
        .server
        .cors_origins
        .iter()
        .filter_map(|o| o.parse().ok())
        .collect();
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods(Any)
        .allow_headers(Any);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/metrics", get(metrics))
        .route(
            "/api/datasets",
            post(upload_dataset).layer(DefaultBodyLimit::disable()),
        )
        .route("/api/specs", post(create_session))
        .route("/api/sessions/{id}", axum::routing::delete(delete_session))
        .route("/api/sessions/{id}/signals", post(set_signal))
        .route("/api/sessions/{id}/partition", post(set_partition))
        .route("/api/sessions/{id}/plan", get(get_plan))
        .route("/api/sessions/{id}/timings", get(get_timings))
        .route("/api/sessions/{id}/datasets/{name}", get(get_dataset))
        .layer(cors)
        .with_state(state)
}

async fn health() -> Json<JsonValue> {
    Json(json!({"status": "ok"}))
}

async fn metrics(State(state): State<Arc<AppState>>) -> Json<JsonValue> {
    let m = state.cache_metrics();
    Json(json!({
        "hits": m.hits,
        "misses": m.misses,
        "evictions": m.evictions,
        "bytes": m.bytes,
        "entries": m.entries,
        "rejected": m.rejected,
        "sessions": state.session_count(),
    }))
}

fn internal(e: impl ToString) -> ApiError {
    ApiError::new(ErrorCode::Internal, e.to_string())
}

fn valid_table_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with("__")
        && name.len() <= 63
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

async fn upload_dataset(
    State(state): State<Arc<AppState>>,
    mut form: Multipart,
) -> AppResult<Json<JsonValue>> {
    let cap = state.config.server.max_upload_bytes;
    let bad = |e: axum::extract::multipart::MultipartError| {
        ApiError::new(ErrorCode::BadRequest, e.body_text())
    };
    let mut name: Option<String> = None;
    let mut bytes: Option<Vec<u8>> = None;
    while let Some(mut field) = form.next_field().await.map_err(bad)? {
        match field.name() {
            Some("name") => name = Some(field.text().await.map_err(bad)?.trim().to_string()),
            Some("file") => {
                let mut buf = Vec::new();
                while let Some(chunk) = field.chunk().await.map_err(bad)? {
                    if (buf.len() + chunk.len()) as u64 > cap {
                        return Err(ApiError::new(
                            ErrorCode::PayloadTooLarge,
                            format!("upload exceeds {cap} bytes"),
                        ));
                    }
                    buf.extend_from_slice(&chunk);
                }
                bytes = Some(buf);
            }
            _ => {}
        }
    }
    let name = name.ok_or_else(|| ApiError::new(ErrorCode::BadRequest, "missing field 'name'"))?;
    if !valid_table_name(&name) {
        return Err(ApiError::new(
            ErrorCode::BadRequest,
            format!("invalid dataset name '{name}'"),
        ));
    }
    let bytes = bytes.ok_or_else(|| ApiError::new(ErrorCode::BadRequest, "missing field 'file'"))?;
    let driver = state.driver.clone();
    let (rows, schema) = {
        let name = name.clone();
        tokio::task::spawn_blocking(move || {
            let table = Table::from_csv(&bytes, None)
                .map_err(|e| ApiError::new(ErrorCode::MalformedCsv, e.to_string()))?;
            let rows = driver
                .ingest(&name, &table)
                .map_err(|e| ApiError::new(ErrorCode::QueryFailed, e.to_string()))?;
            Ok::<_, ApiError>((rows, table.schema().clone()))
        })
        .await
        .map_err(internal)??
    };
    Ok(Json(json!({"name": name, "rows": rows, "schema": schema})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkBody {
    #[serde(default)]
    latency_ms: f64,
    bandwidth_mbps: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecBody {
    spec: JsonValue,
    #[serde(default)]
    bindings: BTreeMap<String, String>,
    network: Option<NetworkBody>,
}

#[derive(Deserialize)]
struct SpecQuery {
    compare: Option<String>,
}

fn plan_to_json(s: &Session, plan: &PartitionPlan) -> JsonValue {
    let base = |src: &str| s.backend().bindings.table(src);
    plan.to_json(s.graph(), s.backend().network.dialect(), &base)
}

fn active_plan_json(s: &Session) -> JsonValue {
    let mut plan = s.plan_json();
    plan["label"] = json!(s.plan_label());
    plan
}

fn sinks_json(sinks: &BTreeMap<String, Arc<Table>>) -> JsonValue {
    sinks
        .iter()
        .map(|(k, t)| (k.clone(), JsonValue::Array(t.to_json_rows())))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn timing_json(o: &Outcome) -> JsonValue {
    let mut t = serde_json::to_value(o.timing).unwrap_or_default();
    t["total_ms"] = json!(o.timing.total_ms());
    t
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Query(q): Query<SpecQuery>,
    body: Result<Json<SpecBody>, axum::extract::rejection::JsonRejection>,
) -> AppResult<Json<JsonValue>> {
    let Json(body) = body.map_err(|e| ApiError::new(ErrorCode::BadRequest, e.body_text()))?;
    let compare = match q.compare.as_deref() {
        None => false,
        Some("baseline") => true,
        Some(other) => {
            return Err(ApiError::new(
                ErrorCode::BadRequest,
                format!("unknown compare mode '{other}'"),
            ))
        }
    };
    let profile = match &body.network {
        Some(n) => network_profile(n.latency_ms, n.bandwidth_mbps),
        None => state.config.network.profile(),
    }
    .map_err(|m| ApiError::new(ErrorCode::BadRequest, m))?;
    let text = match &body.spec {
        JsonValue::String(s) => s.clone(),
        other => other.to_string(),
    };
    let st = state.clone();
    let (session, response, job) = tokio::task::spawn_blocking(move || {
        let config = &st.config;
        let mut session = st.open_session(&text, &body.bindings, profile)?;
        if compare {
            session.execute_baseline()?;
        }
        let out = session.execute_active()?;
        let candidates: serde_json::Map<String, JsonValue> = session
            .candidates()
            .iter()
            .map(|(sig, p)| (sig.clone(), plan_to_json(&session, p)))
            .collect();
        let response = json!({
            "plan": active_plan_json(&session),
            "candidates": candidates,
            "sinks": sinks_json(&out.sinks),
            "timing": timing_json(&out),
            "timings": session.timings(),
        });
        let job = config.cache.prefetch.then(|| session.prefetch_job());
        Ok::<_, ApiError>((session, response, job))
    })
    .await
    .map_err(internal)??;
    let id = state.insert(session);
    if let Some(job) = job.filter(|j| !j.tasks.is_empty()) {
        drop(job.spawn());
    }
    let mut response = response;
    response["session_id"] = json!(id);
    Ok(Json(response))
}

async fn delete_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> AppResult<Json<JsonValue>> {
    if state.remove(&id) {
        Ok(Json(json!({"deleted": id})))
    } else {
        Err(ApiError::session_not_found(&id))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalBody {
    name: String,
    value: JsonValue,
}

async fn set_signal(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<SignalBody>, axum::extract::rejection::JsonRejection>,
) -> AppResult<Json<JsonValue>> {
    state.slot(&id)?;
    let Json(body) = body.map_err(|e| ApiError::new(ErrorCode::BadRequest, e.body_text()))?;
    let value = Value::from_json(&body.value).ok_or_else(|| {
        ApiError::new(
            ErrorCode::InvalidSignal,
            format!("signal '{}' needs a scalar value", body.name),
        )
    })?;
    let resp = state
        .with_session(&id, Access::Interact, move |s| {
            let out = s.handle_interaction(&body.name, value)?;
            Ok(json!({
                "changed": out.changed,
                "timing": timing_json(&out),
                "plan_label": s.plan_label(),
                "plan_used": out.plan,
                "driver_calls": out.driver_calls,
                "cache_hits": out.cache_hits,
                "cache_hit": out.driver_calls == 0,
                "sinks": sinks_json(&out.sinks),
            }))
        })
        .await?;
    Ok(Json(resp))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionBody {
    node: usize,
    side: String,
}

async fn set_partition(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<PartitionBody>, axum::extract::rejection::JsonRejection>,
) -> AppResult<Json<JsonValue>> {
    state.slot(&id)?;
    let Json(body) = body.map_err(|e| ApiError::new(ErrorCode::BadRequest, e.body_text()))?;
    let side = Side::parse(&body.side).ok_or_else(|| {
        ApiError::new(
            ErrorCode::BadRequest,
            format!("side must be 'server' or 'client', got '{}'", body.side),
        )
    })?;
    let resp = state
        .with_session(&id, Access::Write, move |s| {
            let out = s.override_node(body.node, side)?;
            Ok(json!({
                "plan": active_plan_json(s),
                "timing": timing_json(&out),
                "sinks": sinks_json(&out.sinks),
            }))
        })
        .await?;
    Ok(Json(resp))
}

async fn get_plan(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> AppResult<Json<JsonValue>> {
    let resp = state
        .with_session(&id, Access::Read, |s| Ok(active_plan_json(s)))
        .await?;
    Ok(Json(resp))
}

async fn get_timings(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> AppResult<Json<JsonValue>> {
    let resp = state
        .with_session(&id, Access::Read, |s| {
            serde_json::to_value(s.timings()).map_err(internal)
        })
        .await?;
    Ok(Json(resp))
}

async fn get_dataset(
    State(state): State<Arc<AppState>>,
    Path((id, name)): Path<(String, String)>,
) -> AppResult<impl IntoResponse> {
    let body = state
        .with_session(&id, Access::Read, move |s| Ok(s.dataset_table(&name)?.to_jsonl()))
        .await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}
