use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use pageguide_core::find::FindError;
use pageguide_core::gateway::GatewayError;
use pageguide_core::guide::GuideError;
use pageguide_core::hide::HideError;
use pageguide_core::router::RouterError;
use pageguide_core::snapshot::SnapshotError;

/// Every code the service can return, with its status.
pub const CODES: &[(&str, u16)] = &[
    ("BadRequest", 400),
    ("EmptyQuery", 400),
    ("UnparseableHtml", 400),
    ("InvalidSnapshot", 400),
    ("EmptySequence", 400),
    ("UnknownCandidate", 400),
    ("UnknownMutation", 400),
    ("InvalidCount", 400),
    ("Unauthorized", 401),
    ("UnknownSnapshot", 404),
    ("UnknownSession", 404),
    ("NotFound", 404),
    ("Busy", 409),
    ("InvalidState", 409),
    ("SequenceExhausted", 409),
    ("StepLimit", 409),
    ("AlreadyApplied", 409),
    ("NoProposal", 409),
    ("StaleIndex", 409),
    ("MissingNode", 409),
    ("TooLarge", 413),
    ("Internal", 500),
    ("TranscriptStore", 500),
    ("ReplayMiss", 502),
    ("TransportError", 502),
    ("UpstreamError", 502),
    ("MissingCredential", 502),
    ("MalformedStep", 502),
    ("MalformedHideResponse", 502),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        debug_assert!(CODES.iter().any(|(c, _)| *c == code), "undocumented code {code}");
        ApiError { code: code.to_string(), message: message.into(), detail: None }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    pub fn status(&self) -> StatusCode {
        let code = CODES.iter().find(|(c, _)| *c == self.code).map_or(500, |(_, s)| *s);
        StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }

    pub fn unknown_snapshot(id: &str) -> Self {
        ApiError::new("UnknownSnapshot", format!("no snapshot `{id}`")).with_detail(json!({ "snapshot_id": id }))
    }

    pub fn unknown_session(id: &str) -> Self {
        ApiError::new("UnknownSession", format!("no guide session `{id}`")).with_detail(json!({ "session_id": id }))
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let message = e.to_string();
        match e {
            GatewayError::ReplayMiss { key } => ApiError::new("ReplayMiss", message).with_detail(json!({ "key": key })),
            GatewayError::Transport(_) => ApiError::new("TransportError", message),
            GatewayError::Upstream { status, .. } => {
                ApiError::new("UpstreamError", message).with_detail(json!({ "status": status }))
            }
            GatewayError::MissingCredential => ApiError::new("MissingCredential", message),
            GatewayError::Store { .. } => ApiError::new("TranscriptStore", message),
        }
    }
}

impl From<SnapshotError> for ApiError {
    fn from(e: SnapshotError) -> Self {
        let message = e.to_string();
        match e {
            SnapshotError::UnparseableHtml(_) => ApiError::new("UnparseableHtml", message),
            SnapshotError::MissingFile(_)
            | SnapshotError::MalformedMeta(_)
            | SnapshotError::MalformedLayout(_)
            | SnapshotError::EmptySequence
            | SnapshotError::MalformedSequence(_)
            | SnapshotError::InSequence { .. }
            | SnapshotError::Io { .. } => ApiError::new("InvalidSnapshot", message),
        }
    }
}

impl From<RouterError> for ApiError {
    fn from(e: RouterError) -> Self {
        match e {
            RouterError::EmptyQuery => ApiError::new("EmptyQuery", e.to_string()),
            RouterError::Gateway(g) => g.into(),
        }
    }
}

impl From<FindError> for ApiError {
    fn from(e: FindError) -> Self {
        match e {
            FindError::EmptyQuery => ApiError::new("EmptyQuery", e.to_string()),
            FindError::Gateway(g) => g.into(),
        }
    }
}

impl From<GuideError> for ApiError {
    fn from(e: GuideError) -> Self {
        let message = e.to_string();
        match e {
            GuideError::EmptySequence => ApiError::new("EmptySequence", message),
            GuideError::EmptyQuery => ApiError::new("EmptyQuery", message),
            GuideError::InvalidState { op, state } => {
                ApiError::new("InvalidState", message).with_detail(json!({ "op": op, "state": state }))
            }
            GuideError::MalformedStep(_) => ApiError::new("MalformedStep", message),
            GuideError::SequenceExhausted { step } => {
                ApiError::new("SequenceExhausted", message).with_detail(json!({ "step": step }))
            }
            GuideError::StepLimit => ApiError::new("StepLimit", message),
            GuideError::Gateway(g) => g.into(),
        }
    }
}

impl From<HideError> for ApiError {
    fn from(e: HideError) -> Self {
        let message = e.to_string();
        match e {
            HideError::EmptyRequest => ApiError::new("EmptyQuery", message),
            HideError::MalformedHideResponse(_) => ApiError::new("MalformedHideResponse", message),
            HideError::UnknownCandidate(id) => {
                ApiError::new("UnknownCandidate", message).with_detail(json!({ "element_id": id }))
            }
            HideError::AlreadyApplied => ApiError::new("AlreadyApplied", message),
            HideError::StaleIndex => ApiError::new("StaleIndex", message),
            HideError::UnknownMutation(id) => {
                ApiError::new("UnknownMutation", message).with_detail(json!({ "element_id": id }))
            }
            HideError::MissingNode(_) => ApiError::new("MissingNode", message),
            HideError::InvalidCount => ApiError::new("InvalidCount", message),
            HideError::Gateway(g) => g.into(),
        }
    }
}
