//! HTTP and SSE binding.
//!
//! | route | purpose |
//! |---|---|
//! | `POST /tools/{tool}` | tool call; body is a [`ToolRequest`] envelope |
//! | `GET /agents/{id}/events` | server-sent event stream of mentions and claims |
//! | `GET /threads/{id}` | thread as visible to the bearer |
//! | `GET /audit?session=` | ledger entries as CSV |
//! | `GET /health` | liveness, log length, coraliser status |
//! | `/test/*` | clock, mint and state dump; only with the test clock enabled |

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coral_core::{AgentId, Error, ErrorCode, MintId, StreamEvent, ThreadId, TokenAmount, WalletAddress};
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;

use crate::audit::write_csv;
use crate::coraliser::Coraliser;
use crate::node::{Node, ToolRequest, ToolResponse};

#[derive(Clone)]
pub struct AppState {
    pub node: Arc<Node>,
    pub test_mode: bool,
    pub heartbeat: Duration,
    pub coraliser: Arc<OnceLock<Coraliser>>,
}

pub fn router(state: AppState) -> Router {
    let mut r = Router::new()
        .route("/tools/{tool}", post(tool_call))
        .route("/agents/{id}/events", get(events))
        .route("/threads/{id}", get(thread))
        .route("/audit", get(audit))
        .route("/health", get(health));
    if state.test_mode {
        r = r
            .route("/test/clock", post(test_clock))
            .route("/test/mint", post(test_mint))
            .route("/test/state", get(test_state));
    }
    r.with_state(state)
}

fn json_response(resp: ToolResponse) -> Response {
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], resp.body).into_response()
}

fn error_response(err: Error) -> Response {
    json_response(ToolResponse::error(&err))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

async fn tool_call(
    State(state): State<AppState>,
    Path(tool): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let req: ToolRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ToolRequest::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return error_response(Error::new(ErrorCode::MalformedRequest, e.to_string())),
        }
    };
    json_response(state.node.route_tool_call(&tool, req, bearer(&headers)).await)
}

#[derive(Deserialize)]
struct EventsQuery {
    last_event_id: Option<u64>,
    token: Option<String>,
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Response {
    let agent = match AgentId::new(id) {
        Ok(a) => a,
        Err(e) => return error_response(e),
    };
    let token = bearer(&headers).map(str::to_owned).or(q.token);
    if let Err(e) = state.node.authorize_stream(&agent, token.as_deref()) {
        return error_response(e);
    }
    let header_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let cursor = header_id.or(q.last_event_id).unwrap_or(0);
    let stream = event_stream(state.node.clone(), agent, cursor, state.heartbeat);
    let mut resp = Sse::new(stream).into_response();
    resp.headers_mut()
        .insert(header::CACHE_CONTROL, HeaderValue::from_static("no-cache"));
    resp
}

struct Cursor {
    node: Arc<Node>,
    agent: AgentId,
    after: u64,
    buffered: VecDeque<StreamEvent>,
    heartbeat: Duration,
}

fn render(ev: &StreamEvent) -> Event {
    let data = match &ev.notification {
        coral_core::Notification::Mention(m) => serde_json::to_string(m),
        coral_core::Notification::Claimed(c) => serde_json::to_string(c),
    }
    .expect("events serialize");
    Event::default()
        .id(ev.id.to_string())
        .event(ev.notification.event_name())
        .data(data)
}

/// Streams every retained event with id greater than `after`, then waits on
/// the agent's signal for more. Reading does not consume mentions.
fn event_stream(
    node: Arc<Node>,
    agent: AgentId,
    after: u64,
    heartbeat: Duration,
) -> impl Stream<Item = Result<Event, Infallible>> {
    let cursor = Cursor {
        node,
        agent,
        after,
        buffered: VecDeque::new(),
        heartbeat,
    };
    stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(ev) = c.buffered.pop_front() {
                c.after = ev.id;
                return Some((Ok(render(&ev)), c));
            }
            let signal = c.node.signal(&c.agent).ok()?;
            let notified = signal.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            let fresh = c.node.stream_after(&c.agent, c.after).ok()?;
            if !fresh.is_empty() {
                c.buffered.extend(fresh);
                continue;
            }
            if tokio::time::timeout(c.heartbeat, notified).await.is_err() {
                let beat = Event::default().event("heartbeat").data("{}");
                return Some((Ok(beat), c));
            }
        }
    })
}

async fn thread(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    json_response(state.node.read_thread(&ThreadId::from_string(id), bearer(&headers)))
}

#[derive(Deserialize)]
struct AuditQuery {
    session: Option<String>,
}

async fn audit(State(state): State<AppState>, Query(q): Query<AuditQuery>) -> Response {
    let entries = state.node.audit_entries(q.session.as_deref());
    let mut buf = Vec::new();
    if let Err(e) = write_csv(&entries, &mut buf) {
        return error_response(Error::new(ErrorCode::Internal, e.to_string()));
    }
    ([(header::CONTENT_TYPE, "text/csv")], buf).into_response()
}

async fn health(State(state): State<AppState>) -> Response {
    let coraliser = state.coraliser.get().map(|c| c.statuses()).unwrap_or_default();
    Json(json!({
        "status": "ok",
        "log_len": state.node.log_len(),
        "now": state.node.clock().now(),
        "coraliser": coraliser,
    }))
    .into_response()
}

#[derive(Deserialize)]
struct ClockBody {
    seconds: u64,
}

async fn test_clock(State(state): State<AppState>, Json(b): Json<ClockBody>) -> Response {
    json_response(state.node.advance_clock(b.seconds))
}

#[derive(Deserialize)]
struct MintBody {
    to: WalletAddress,
    mint: MintId,
    amount: TokenAmount,
}

async fn test_mint(State(state): State<AppState>, Json(b): Json<MintBody>) -> Response {
    json_response(state.node.mint(b.to, b.mint, b.amount))
}

async fn test_state(State(state): State<AppState>) -> Response {
    Json(state.node.state_dump()).into_response()
}
