use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::json;
use vegaplus_core::partition::PartitionError;
use vegaplus_core::runtime::{OverrideError, RuntimeError};
use vegaplus_core::spec::{SpecError, SpecErrorKind};

/// Machine-readable error codes; each maps to one HTTP status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    MalformedCsv,
    PayloadTooLarge,
    SpecInvalid,
    UnknownDataset,
    SessionNotFound,
    DatasetNotFound,
    InvalidSignal,
    UnknownNode,
    OverrideRejected,
    QueryFailed,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest | ErrorCode::MalformedCsv => StatusCode::BAD_REQUEST,
            ErrorCode::PayloadTooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            ErrorCode::SpecInvalid | ErrorCode::InvalidSignal | ErrorCode::UnknownNode => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ErrorCode::UnknownDataset | ErrorCode::OverrideRejected => StatusCode::CONFLICT,
            ErrorCode::SessionNotFound | ErrorCode::DatasetNotFound => StatusCode::NOT_FOUND,
            ErrorCode::QueryFailed | ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub path: Option<String>,
    pub node: Option<usize>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> ApiError {
        ApiError {
            code,
            message: message.into(),
            path: None,
            node: None,
        }
    }

    pub fn with_path(mut self, path: impl Into<String>) -> ApiError {
        self.path = Some(path.into());
        self
    }

    pub fn with_node(mut self, node: usize) -> ApiError {
        self.node = Some(node);
        self
    }

    pub fn session_not_found(id: &str) -> ApiError {
        ApiError::new(ErrorCode::SessionNotFound, format!("no session '{id}'"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": {"code": self.code, "message": self.message}});
        if let Some(p) = self.path {
            body["error"]["path"] = json!(p);
        }
        if let Some(n) = self.node {
            body["error"]["node"] = json!(n);
        }
        (self.code.status(), Json(body)).into_response()
    }
}

impl From<SpecError> for ApiError {
    fn from(e: SpecError) -> ApiError {
        let code = match e.kind {
            SpecErrorKind::UnknownTable(_) => ErrorCode::UnknownDataset,
            _ => ErrorCode::SpecInvalid,
        };
        ApiError::new(code, e.kind.to_string()).with_path(e.path)
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> ApiError {
        match &e {
            RuntimeError::UnknownSignal(_) | RuntimeError::InvalidValue(_) => {
                ApiError::new(ErrorCode::InvalidSignal, e.to_string())
            }
            RuntimeError::Eval(vegaplus_core::dataflow::EvalError::UnknownSignal(_))
            | RuntimeError::Eval(vegaplus_core::dataflow::EvalError::SignalType { .. }) => {
                ApiError::new(ErrorCode::InvalidSignal, e.to_string())
            }
            RuntimeError::UnknownDataset(_) => ApiError::new(ErrorCode::DatasetNotFound, e.to_string()),
            RuntimeError::Source(_) => ApiError::new(ErrorCode::UnknownDataset, e.to_string()),
            RuntimeError::Driver(_) | RuntimeError::Sql(_) => {
                ApiError::new(ErrorCode::QueryFailed, e.to_string())
            }
            RuntimeError::Schema { node, .. } => ApiError::new(ErrorCode::Internal, e.to_string()).with_node(*node),
            RuntimeError::Eval(_) => ApiError::new(ErrorCode::Internal, e.to_string()),
        }
    }
}

impl From<OverrideError> for ApiError {
    fn from(e: OverrideError) -> ApiError {
        match e {
            OverrideError::Rejected(PartitionError::OverrideRejected { node, reason }) => {
                ApiError::new(ErrorCode::OverrideRejected, reason).with_node(node)
            }
            OverrideError::Rejected(PartitionError::UnknownNode(n)) => {
                ApiError::new(ErrorCode::UnknownNode, format!("no data node {n}")).with_node(n)
            }
            OverrideError::Runtime(r) => r.into(),
        }
    }
}
