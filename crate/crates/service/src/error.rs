use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use scrutable_core::eval::EvalError;
use scrutable_core::profilegen::ProfileError;
use scrutable_core::recsys::RecsysError;

/// JSON error body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("{0}")]
    InvalidProfile(String),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::UnknownUser(_) => StatusCode::NOT_FOUND,
            Self::InvalidProfile(_) | Self::UnknownFeature(_) | Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Precondition(_) => StatusCode::CONFLICT,
            Self::Backend(_) => StatusCode::BAD_GATEWAY,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownUser(_) => "unknown_user",
            Self::InvalidProfile(_) => "invalid_profile",
            Self::UnknownFeature(_) => "unknown_feature",
            Self::BadRequest(_) => "bad_request",
            Self::Precondition(_) => "precondition_failed",
            Self::Backend(_) => "backend_failure",
            Self::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if matches!(self, Self::Internal(_) | Self::Backend(_)) {
            tracing::error!(code = self.code(), "{self}");
        }
        let body = ErrorBody {
            code: self.code().to_string(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

impl From<ProfileError> for ApiError {
    fn from(e: ProfileError) -> Self {
        if e.is_backend_failure() {
            return Self::Backend(e.to_string());
        }
        match e {
            ProfileError::AlreadyMentioned(_) | ProfileError::NotLiked(_) => Self::Precondition(e.to_string()),
            ProfileError::Store { .. } => Self::Internal(e.to_string()),
            other => Self::BadRequest(other.to_string()),
        }
    }
}

impl From<RecsysError> for ApiError {
    fn from(e: RecsysError) -> Self {
        match e {
            RecsysError::Generator(_) | RecsysError::UnparsableRating(_) => Self::Backend(e.to_string()),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::TooFewRecommendations { .. } => Self::BadRequest(e.to_string()),
            EvalError::Recsys(inner) => inner.into(),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        Self::Internal(e.to_string())
    }
}
