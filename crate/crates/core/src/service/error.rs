use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};

use crate::agents::AgentError;
use crate::api::{ErrorBody, ErrorDetail};
use crate::registry::RegistryError;
use crate::workflow::WorkflowError;

use super::Canon;

/// An API failure, rendered as `{"error":{"code","message"}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ApiError { status: status_for(code), code: code.to_owned(), message: message.into() }
    }

    pub fn unauthenticated(message: impl Into<String>) -> Self {
        Self::new("Unauthenticated", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new("Forbidden", message)
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new("MalformedRequest", message)
    }

    pub fn detail(&self) -> ErrorDetail {
        ErrorDetail { code: self.code.clone(), message: self.message.clone() }
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "Unauthenticated" => StatusCode::UNAUTHORIZED,
        "Forbidden" | "UnauthorizedAttester" | "UnauthorizedIssuer" => StatusCode::FORBIDDEN,
        "UnknownRequest" | "UnknownDid" | "UnknownTemplate" | "UnknownCredential" | "UnknownDraft"
        | "UnknownFlushSession" | "UnknownChain" | "NotFound" => StatusCode::NOT_FOUND,
        "DuplicateRequest" | "DuplicateDid" | "StaleDraft" | "SkippedStep" | "RequestNotActive"
        | "PhasesIncomplete" | "AlreadyFinalized" | "NotFinalized" | "AlreadyRevoked" => StatusCode::CONFLICT,
        "StorageError" | "Internal" | "Corrupt" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = %self.code, message = %self.message, "request failed");
        }
        (self.status, Canon(ErrorBody { error: self.detail() })).into_response()
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<AgentError> for ApiError {
    fn from(e: AgentError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}
