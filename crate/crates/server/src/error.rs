use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use hierion_core::retrospect::RetrospectError;
use hierion_core::scenario::ScenarioError;
use hierion_core::store::{BundleError, StoreError};
use serde::Serialize;
use serde_json::{json, Value};

/// Error body: `{code, message, report?}`.
#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            report: None,
        }
    }

    pub fn with_report(mut self, report: Value) -> Self {
        self.report = Some(report);
        self
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session `{id}`"))
    }

    pub fn unknown_run(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownRun", format!("no run `{id}`"))
    }

    pub fn invalid_body(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidBody", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<BundleError> for ApiError {
    fn from(e: BundleError) -> Self {
        let message = e.to_string();
        let (code, report) = match &e {
            BundleError::ParseError { line, column, .. } => ("ParseError", Some(json!({"line": line, "column": column}))),
            BundleError::UnknownFields(paths) => ("UnknownFields", Some(json!(paths))),
            BundleError::UnsupportedSchema(_) => ("UnsupportedSchema", None),
            BundleError::DanglingReference { id, site } => ("DanglingReference", Some(json!({"id": id, "site": site}))),
            BundleError::ValidationFailed(report) => ("ValidationFailed", Some(json!(report))),
            BundleError::NotFound { kind, id } => ("NotFound", Some(json!({"kind": kind, "id": id}))),
        };
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code,
            message,
            report,
        }
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        let message = e.to_string();
        match e {
            ScenarioError::MalformedScenario(report) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "MalformedScenario", message).with_report(json!(report))
            }
            ScenarioError::AmbiguousArc {
                tick,
                diagram,
                state,
                symbol,
            } => Self::new(StatusCode::CONFLICT, "AmbiguousArc", message).with_report(json!({
                "tick": tick, "diagram": diagram, "state": state, "symbol": symbol
            })),
            ScenarioError::HorizonBeforeSchedule { horizon, last } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "HorizonBeforeSchedule", message)
                    .with_report(json!({"horizon": horizon, "last": last}))
            }
        }
    }
}

impl From<RetrospectError> for ApiError {
    fn from(e: RetrospectError) -> Self {
        match e {
            RetrospectError::Bundle(b) => b.into(),
            other => {
                let report = other.stage().map(|s| json!({"stage": s}));
                let mut err = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "RetrospectFailed", other.to_string());
                err.report = report;
                err
            }
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "UnreadableInput", e.to_string())
    }
}
