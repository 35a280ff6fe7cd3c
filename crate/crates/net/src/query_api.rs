//! Client-side endpoints: `POST /query`, the event stream and ledger views.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::State;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::routing::{get, post};
use axum::{Json, Router};
use rbm_core::middleware::{LedgerEntry, LedgerTotals};
use rbm_core::strategies::QueryMetrics;
use rbm_core::{Event, Middleware, Parameter, Query, Strategy};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tokio_stream::wrappers::BroadcastStream;
use tokio_stream::{Stream, StreamExt};

use crate::error::{blocking, ApiError};
use crate::wire::encode_field;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryBody {
    pub mu: Parameter,
    #[serde(default)]
    pub max_res: Option<f64>,
    /// Per-query strategy; rejected unless the client allows overrides.
    #[serde(default)]
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub parameter: Parameter,
    pub residual_norm: f64,
    pub threshold: f64,
    pub quality_met: bool,
    pub looser_than_basis: bool,
    pub snapshots_used: usize,
    pub basis_size: usize,
    pub strategy: Strategy,
    pub served_remotely: bool,
    pub discretization: usize,
    /// Row-major grid values, little-endian f64, base64.
    pub field: String,
    pub metrics: QueryMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisInfo {
    pub identifier: Option<String>,
    pub n: usize,
    pub version: u64,
    pub discretization: Option<usize>,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerView {
    pub totals: LedgerTotals,
    pub entries: Vec<LedgerEntry>,
}

#[derive(Clone)]
struct QueryState {
    middleware: Arc<Middleware>,
    events: broadcast::Sender<Event>,
}

/// Forwards middleware events to every connected stream.
fn event_hub(middleware: &Middleware) -> broadcast::Sender<Event> {
    let (tx, _) = broadcast::channel(256);
    let rx = middleware.subscribe();
    let forward = tx.clone();
    std::thread::Builder::new()
        .name("rbm-events".into())
        .spawn(move || {
            for event in rx {
                // no subscribers is fine
                let _ = forward.send(event);
            }
        })
        .expect("spawn event forwarder");
    tx
}

pub fn routes(middleware: Arc<Middleware>) -> Router {
    let events = event_hub(&middleware);
    Router::new()
        .route("/query", post(query))
        .route("/events", get(events_stream))
        .route("/basis", get(basis_info))
        .route("/ledger", get(ledger))
        .with_state(QueryState { middleware, events })
}

async fn query(State(state): State<QueryState>, Json(body): Json<QueryBody>) -> Result<Json<QueryResponse>, ApiError> {
    let mw = Arc::clone(&state.middleware);
    let query = Query {
        parameter: body.mu,
        max_res: body.max_res,
    };
    let (answer, discretization) = blocking(move || {
        let answer = mw.handle_query_with(&query, body.strategy)?;
        Ok((answer, mw.discretization().unwrap_or(0)))
    })
    .await?;
    Ok(Json(QueryResponse {
        parameter: body.mu,
        residual_norm: answer.residual_norm,
        threshold: answer.threshold,
        quality_met: answer.quality_met,
        looser_than_basis: answer.looser_than_basis,
        snapshots_used: answer.snapshots_used,
        basis_size: answer.basis_size,
        strategy: answer.strategy,
        served_remotely: answer.served_remotely,
        discretization,
        field: encode_field(answer.solution.as_slice()),
        metrics: answer.metrics,
    }))
}

fn event_name(event: &Event) -> &'static str {
    match event {
        Event::QueryAnswered { .. } => "query-answered",
        Event::UpdateStarted { .. } => "update-started",
        Event::UpdateApplied { .. } => "update-applied",
    }
}

async fn events_stream(State(state): State<QueryState>) -> Sse<impl Stream<Item = Result<SseEvent, Infallible>>> {
    let stream = BroadcastStream::new(state.events.subscribe()).filter_map(|item| {
        // lagged receivers skip what they missed
        let event = item.ok()?;
        let sse = SseEvent::default().event(event_name(&event)).json_data(&event).ok()?;
        Some(Ok(sse))
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

async fn basis_info(State(state): State<QueryState>) -> Json<BasisInfo> {
    let mw = &state.middleware;
    let (identifier, n, version) = match mw.basis_info() {
        Some((id, n, v)) => (Some(id), n, v),
        None => (None, 0, 0),
    };
    Json(BasisInfo {
        identifier,
        n,
        version,
        discretization: mw.discretization(),
        strategy: mw.config().strategy,
    })
}

async fn ledger(State(state): State<QueryState>) -> Json<LedgerView> {
    Json(LedgerView {
        totals: state.middleware.ledger_totals(),
        entries: state.middleware.ledger(),
    })
}
