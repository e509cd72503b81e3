use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use scopetree::hierarchy::{HierarchyError, Violation};
use scopetree::metrics::{MetricsError, MissingLabel};
use scopetree::run::{ExpandError, StoreError};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("tree document is invalid ({} violation(s))", .0.len())]
    InvalidTree(Vec<Violation>),
    #[error("{0}")]
    Conflict(String),
    #[error("annotation set is incomplete: {} label(s) missing", .0.len())]
    Incomplete(Vec<MissingLabel>),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) | ApiError::InvalidTree(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) | ApiError::Incomplete(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.to_string() });
        match &self {
            ApiError::InvalidTree(v) => body["violations"] = json!(v),
            ApiError::Incomplete(m) => body["missing"] = json!(m),
            ApiError::Internal(msg) => tracing::error!("{msg}"),
            _ => {}
        }
        (self.status(), Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => ApiError::NotFound(format!("unknown run {id}")),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<HierarchyError> for ApiError {
    fn from(e: HierarchyError) -> Self {
        match e {
            HierarchyError::UnknownTopic(_) => ApiError::NotFound(e.to_string()),
            HierarchyError::DepthExceeded { .. } | HierarchyError::PruneRoot => {
                ApiError::Conflict(e.to_string())
            }
            _ => ApiError::BadRequest(e.to_string()),
        }
    }
}

impl From<ExpandError> for ApiError {
    fn from(e: ExpandError) -> Self {
        match e {
            ExpandError::Hierarchy(h) => h.into(),
            ExpandError::Prompt(p) => ApiError::BadRequest(p.to_string()),
            ExpandError::Storage(s) => ApiError::Internal(s.to_string()),
        }
    }
}

impl From<MetricsError> for ApiError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::IncompleteAnnotation { missing } => ApiError::Incomplete(missing),
            MetricsError::NoAnnotators | MetricsError::NoItems(_) => {
                ApiError::Conflict(e.to_string())
            }
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}
