//! Server endpoints: generation jobs, basis transfer, updates and full solves.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use rbm_core::server::JobStatus;
use rbm_core::{BasisRequest, BasisServer, Parameter, UpdateRequest};
use serde::{Deserialize, Serialize};

use crate::error::{blocking, ApiError};
use crate::wire::f64_bytes;

pub const OCTET_STREAM: &str = "application/octet-stream";
/// Header carrying the relative residual of a full solve.
pub const RELATIVE_RESIDUAL_HEADER: &str = "x-relative-residual";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobCreated {
    pub job: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateBody {
    pub mu: Parameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveBody {
    pub mu: Parameter,
    pub discretization: usize,
}

pub fn routes(server: Arc<BasisServer>) -> Router {
    Router::new()
        .route("/bases", post(create_basis))
        .route("/jobs/{id}", get(job_status))
        .route("/bases/{id}", get(basis_file))
        .route("/bases/{id}/update", post(basis_update))
        .route("/solve", post(full_solve))
        .with_state(server)
}

fn binary(bytes: Vec<u8>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, OCTET_STREAM)], bytes)
}

async fn create_basis(
    State(server): State<Arc<BasisServer>>,
    Json(request): Json<BasisRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let job = server.submit(request)?;
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job })))
}

async fn job_status(State(server): State<Arc<BasisServer>>, Path(id): Path<u64>) -> Result<Json<JobStatus>, ApiError> {
    Ok(Json(server.job(id)?))
}

async fn basis_file(
    State(server): State<Arc<BasisServer>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let bytes = blocking(move || server.basis_bytes(&id)).await?;
    Ok(binary(bytes))
}

async fn basis_update(
    State(server): State<Arc<BasisServer>>,
    Path(id): Path<String>,
    Json(body): Json<UpdateBody>,
) -> Result<impl IntoResponse, ApiError> {
    let request = UpdateRequest {
        mu: body.mu,
        basis_id: id,
    };
    let update = blocking(move || server.serve_update(&request)).await?;
    Ok(binary(update.encode()))
}

async fn full_solve(
    State(server): State<Arc<BasisServer>>,
    Json(body): Json<SolveBody>,
) -> Result<impl IntoResponse, ApiError> {
    let solution = blocking(move || server.solve(&body.mu, body.discretization)).await?;
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(OCTET_STREAM));
    if let Ok(v) = HeaderValue::from_str(&solution.relative_residual.to_string()) {
        headers.insert(RELATIVE_RESIDUAL_HEADER, v);
    }
    Ok((headers, Bytes::from(f64_bytes(solution.values.as_slice()))))
}
