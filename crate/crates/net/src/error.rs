use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use rbm_core::Error;
use serde::{Deserialize, Serialize};

/// JSON body of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

/// Kind tag clients use to tell a resync from other failures.
pub const RESYNC_REQUIRED: &str = "resync_required";

pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

fn classify(e: &Error) -> (StatusCode, &'static str) {
    match e {
        Error::ResyncRequired(_) => (StatusCode::NOT_FOUND, RESYNC_REQUIRED),
        Error::UnknownJob(_) => (StatusCode::NOT_FOUND, "unknown_job"),
        Error::InvalidParameter(_)
        | Error::InvalidQuality(_)
        | Error::InvalidTrainingSpec(_)
        | Error::EmptyTrainingSet
        | Error::DimensionMismatch { .. } => (StatusCode::BAD_REQUEST, "invalid_request"),
        Error::QualityUnreachable { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "quality_unreachable"),
        Error::NoBasis => (StatusCode::CONFLICT, "no_basis"),
        Error::IdentifierMismatch { .. } => (StatusCode::CONFLICT, "identifier_mismatch"),
        Error::Channel(_) => (StatusCode::BAD_GATEWAY, "channel"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = classify(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        let body = ErrorBody {
            kind: kind.to_owned(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

/// Runs blocking work off the async executor.
pub(crate) async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> rbm_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::Channel(format!("worker task failed: {e}"))))?
        .map_err(ApiError)
}
