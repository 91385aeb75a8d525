//! Axum router. Handlers parse the request, call the matching [`Workspace`]
//! method on the blocking pool, and wrap the result in an [`ApiEnvelope`].

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use oxy_core::bank::{ExportFilter, Priority};
use oxy_core::tracer::StreamItem;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio_stream::wrappers::ReceiverStream;
use tokio_stream::StreamExt;

use crate::{ApiEnvelope, ApiError, Workspace};

type Shared = State<Arc<Workspace>>;

pub const DEFAULT_BIND: &str = "127.0.0.1:8400";

/// How long the SSE pump blocks before checking for a closed client.
const STREAM_POLL: Duration = Duration::from_millis(250);

pub fn router(workspace: Arc<Workspace>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/chat", post(chat))
        .route("/traces", get(list_traces))
        .route("/traces/:id/graph", get(graph))
        .route("/traces/:id/dot", get(dot))
        .route("/traces/:id/events", get(events))
        .route("/traces/:id/timing", get(timing))
        .route("/traces/:id/versions", get(versions))
        .route("/traces/:id/nodes/:call_id/regenerate", post(regenerate))
        .route("/runtime/breakpoints", get(list_breakpoints).post(set_breakpoint))
        .route("/runtime/resume", post(resume))
        .route("/runtime/paused", get(paused))
        .route("/bank/records", get(list_records).post(deposit))
        .route("/bank/records/:id", get(record))
        .route("/bank/records/:id/annotate", post(annotate))
        .route("/bank/records/:id/audit", post(audit))
        .route("/bank/records/:id/reopen", post(reopen))
        .route("/bank/export", get(export))
        .route("/bank/templates", get(templates))
        .route("/agents/:name/prompts", get(prompt_versions))
        .route("/agents/:name/optimize-prompt", post(optimize_prompt))
        .route("/agents/:name/apply-prompt", post(apply_prompt))
        .route("/mas/topology", get(topology))
        .route("/requests/:id/scopes", get(scopes))
        .with_state(workspace)
}

/// Serves until the process is stopped.
pub async fn serve(workspace: Arc<Workspace>, bind: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(workspace)).await
}

pub fn respond<T: Serialize>(result: Result<T, ApiError>) -> Response {
    let status = match &result {
        Ok(_) => StatusCode::OK,
        Err(e) => StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
    };
    (status, Json(ApiEnvelope::from_result(&result))).into_response()
}

async fn blocking<T, F>(f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    let result = tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(500, "Internal", e.to_string())));
    respond(result)
}

/// Parses a JSON body; an empty body reads as `{}`.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let bytes: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
struct VersionQuery {
    version: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct GraphQuery {
    version: Option<String>,
    /// `path` selects the collapsed per-route view.
    view: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    version: Option<String>,
    from_seq: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
struct StateQuery {
    state: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct ExportQuery {
    priority: Option<String>,
    template: Option<String>,
    since: Option<u64>,
}

impl ExportQuery {
    fn filter(self) -> Result<ExportFilter, ApiError> {
        let priority = match self.priority {
            Some(p) => Some(Priority::parse(&p).ok_or_else(|| ApiError::bad_request(format!("unknown priority `{p}`")))?),
            None => None,
        };
        Ok(ExportFilter { priority, template: self.template, since: self.since })
    }
}

async fn index(State(ws): Shared) -> Response {
    respond::<_>(Ok(json!({
        "service": "oxy",
        "version": env!("CARGO_PKG_VERSION"),
        "entrypoint": ws.runtime().entrypoint(),
        "traces": ws.traces().list().len(),
        "bank_records": ws.bank().list(None).len(),
    })))
}

async fn chat(State(ws): Shared, bytes: Bytes) -> Response {
    blocking(move || ws.chat(&body(&bytes)?)).await
}

async fn list_traces(State(ws): Shared) -> Response {
    blocking(move || Ok(ws.list_traces())).await
}

async fn graph(State(ws): Shared, Path(id): Path<String>, Query(q): Query<GraphQuery>) -> Response {
    match q.view.as_deref() {
        None | Some("calls") => blocking(move || ws.graph(&id, q.version.as_deref())).await,
        Some("path") => blocking(move || ws.path_graph(&id, q.version.as_deref())).await,
        Some(other) => respond::<()>(Err(ApiError::bad_request(format!("unknown view `{other}`")))),
    }
}

async fn dot(State(ws): Shared, Path(id): Path<String>, Query(q): Query<VersionQuery>) -> Response {
    match ws.dot(&id, q.version.as_deref()) {
        Ok(text) => ([(header::CONTENT_TYPE, "text/vnd.graphviz; charset=utf-8")], text).into_response(),
        Err(e) => respond::<()>(Err(e)),
    }
}

async fn timing(State(ws): Shared, Path(id): Path<String>, Query(q): Query<VersionQuery>) -> Response {
    blocking(move || ws.timing(&id, q.version.as_deref())).await
}

async fn versions(State(ws): Shared, Path(id): Path<String>) -> Response {
    blocking(move || ws.versions(&id)).await
}

/// `event: trace` per event (id = seq), then one `event: sealed`. Resumes from
/// `from_seq`, or after the `Last-Event-ID` header when that is present.
async fn events(State(ws): Shared, Path(id): Path<String>, Query(q): Query<EventsQuery>, headers: HeaderMap) -> Response {
    let resume_after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|seq| seq + 1);
    let from_seq = resume_after.or(q.from_seq).unwrap_or(0);
    let mut stream = match ws.traces().stream_events(&id, q.version.as_deref(), from_seq) {
        Ok(s) => s,
        Err(e) => return respond::<()>(Err(e.into())),
    };
    let (tx, rx) = tokio::sync::mpsc::channel::<Event>(64);
    let trace_id = id.clone();
    tokio::task::spawn_blocking(move || loop {
        let item = match stream.next_timeout(STREAM_POLL) {
            Ok(item) => item,
            Err(e) => {
                let _ = tx.blocking_send(Event::default().event("error").data(e.to_string()));
                return;
            }
        };
        match item {
            StreamItem::Event(ev) => {
                let Ok(frame) = Event::default().event("trace").id(ev.seq.to_string()).json_data(&ev) else {
                    return;
                };
                if tx.blocking_send(frame).is_err() {
                    return;
                }
            }
            StreamItem::Sealed => {
                let done = json!({ "trace_id": trace_id, "next_seq": stream.cursor() });
                let _ = tx.blocking_send(Event::default().event("sealed").data(done.to_string()));
                return;
            }
            StreamItem::Timeout if tx.is_closed() => return,
            StreamItem::Timeout => {}
        }
    });
    Sse::new(ReceiverStream::new(rx).map(Ok::<_, Infallible>)).keep_alive(KeepAlive::default()).into_response()
}

async fn regenerate(State(ws): Shared, Path((id, call_id)): Path<(String, String)>, bytes: Bytes) -> Response {
    blocking(move || ws.regenerate(&id, &call_id, &body(&bytes)?)).await
}

async fn list_breakpoints(State(ws): Shared) -> Response {
    respond(Ok(ws.breakpoints()))
}

async fn set_breakpoint(State(ws): Shared, bytes: Bytes) -> Response {
    blocking(move || ws.set_breakpoint(&body(&bytes)?)).await
}

async fn resume(State(ws): Shared, bytes: Bytes) -> Response {
    blocking(move || ws.resume(&body(&bytes)?)).await
}

async fn paused(State(ws): Shared) -> Response {
    respond(Ok(ws.paused()))
}

async fn list_records(State(ws): Shared, Query(q): Query<StateQuery>) -> Response {
    blocking(move || ws.records(q.state.as_deref())).await
}

async fn deposit(State(ws): Shared, bytes: Bytes) -> Response {
    blocking(move || ws.deposit(&body(&bytes)?)).await
}

async fn record(State(ws): Shared, Path(id): Path<String>) -> Response {
    blocking(move || ws.record(&id)).await
}

async fn annotate(State(ws): Shared, Path(id): Path<String>, bytes: Bytes) -> Response {
    blocking(move || ws.annotate(&id, &body(&bytes)?)).await
}

async fn audit(State(ws): Shared, Path(id): Path<String>, bytes: Bytes) -> Response {
    blocking(move || ws.audit(&id, &body(&bytes)?)).await
}

async fn reopen(State(ws): Shared, Path(id): Path<String>) -> Response {
    blocking(move || ws.reopen(&id)).await
}

async fn export(State(ws): Shared, Query(q): Query<ExportQuery>) -> Response {
    blocking(move || Ok(ws.export(&q.filter()?))).await
}

async fn templates(State(ws): Shared) -> Response {
    respond(Ok(ws.bank().templates()))
}

async fn prompt_versions(State(ws): Shared, Path(name): Path<String>) -> Response {
    blocking(move || ws.prompt_versions(&name)).await
}

async fn optimize_prompt(State(ws): Shared, Path(name): Path<String>, bytes: Bytes) -> Response {
    blocking(move || ws.optimize_prompt(&name, &body(&bytes)?)).await
}

async fn apply_prompt(State(ws): Shared, Path(name): Path<String>, bytes: Bytes) -> Response {
    blocking(move || ws.apply_prompt(&name, &body(&bytes)?)).await
}

async fn topology(State(ws): Shared) -> Response {
    respond(Ok(ws.topology()))
}

async fn scopes(State(ws): Shared, Path(id): Path<String>) -> Response {
    respond(ws.scopes(&id))
}
