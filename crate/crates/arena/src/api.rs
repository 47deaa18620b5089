//! HTTP routes. Bodies are JSON; the export is newline-delimited JSON and
//! each session has a server-sent event stream.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | GET | `/agents` | | `[AgentInfo]` |
//! | POST | `/sessions` | `CreateSession` | `SessionView` |
//! | GET | `/sessions/{id}` | | `SessionView` |
//! | POST | `/sessions/{id}/turns` | `{"act": ..}` or `{"text": ..}` | `TurnResponse` |
//! | POST | `/sessions/{id}/deal` | `{"take": [b, h, b]}` | `OutcomeResponse` |
//! | POST | `/sessions/{id}/walkaway` | | `OutcomeResponse` |
//! | POST | `/sessions/{id}/survey` | `SurveyResponse` | `SessionView` |
//! | GET | `/sessions/{id}/events` | | SSE of `StreamEvent` |
//! | GET | `/export?agent=id` | | NDJSON of `TranscriptRecord` |

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use haggle_core::bargain::ISSUES;
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ArenaError;
use crate::service::{Arena, CreateSession};
use crate::session::{SurveyResponse, TurnInput};

impl IntoResponse for ArenaError {
    fn into_response(self) -> Response {
        let status = match &self {
            ArenaError::NotFound(_) => StatusCode::NOT_FOUND,
            ArenaError::TurnOrder(_) | ArenaError::State(_) | ArenaError::Conflict(_) => StatusCode::CONFLICT,
            ArenaError::Precondition(_) => StatusCode::PRECONDITION_FAILED,
            ArenaError::Validation(_) | ArenaError::InfeasibleDivision(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ArenaError::Core(_) | ArenaError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let ArenaError::InfeasibleDivision(issues) = &self {
            body["issues"] = serde_json::to_value(issues).unwrap_or_default();
        }
        (status, Json(body)).into_response()
    }
}

type Shared = State<Arc<Arena>>;

#[derive(Deserialize)]
struct Deal {
    take: [u32; ISSUES],
}

#[derive(Deserialize)]
struct ExportFilter {
    agent: Option<String>,
}

pub fn router(arena: Arc<Arena>) -> Router {
    Router::new()
        .route("/agents", get(agents))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/turns", post(turn))
        .route("/sessions/{id}/deal", post(deal))
        .route("/sessions/{id}/walkaway", post(walkaway))
        .route("/sessions/{id}/survey", post(survey))
        .route("/sessions/{id}/events", get(events))
        .route("/export", get(export))
        .with_state(arena)
}

async fn agents(State(a): Shared) -> Response {
    Json(a.agents()).into_response()
}

async fn create(State(a): Shared, body: Option<Json<CreateSession>>) -> Result<Response, ArenaError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    Ok((StatusCode::CREATED, Json(a.create(req)?)).into_response())
}

async fn session(State(a): Shared, Path(id): Path<String>) -> Result<Response, ArenaError> {
    Ok(Json(a.get(&id)?).into_response())
}

async fn turn(State(a): Shared, Path(id): Path<String>, Json(input): Json<TurnInput>) -> Result<Response, ArenaError> {
    Ok(Json(a.turn(&id, input)?).into_response())
}

async fn deal(State(a): Shared, Path(id): Path<String>, Json(d): Json<Deal>) -> Result<Response, ArenaError> {
    Ok(Json(a.submit_deal(&id, d.take)?).into_response())
}

async fn walkaway(State(a): Shared, Path(id): Path<String>) -> Result<Response, ArenaError> {
    Ok(Json(a.walkaway(&id)?).into_response())
}

async fn survey(State(a): Shared, Path(id): Path<String>, Json(s): Json<SurveyResponse>) -> Result<Response, ArenaError> {
    Ok(Json(a.submit_survey(&id, s)?).into_response())
}

async fn events(
    State(a): Shared,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ArenaError> {
    let rx = a.subscribe(&id)?;
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default().json_data(&ev).unwrap_or_else(|_| Event::default());
                    return Some((Ok(event), rx));
                }
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn export(State(a): Shared, Query(f): Query<ExportFilter>) -> Result<Response, ArenaError> {
    let mut body = String::new();
    for r in a.export(f.agent.as_deref())? {
        body.push_str(&serde_json::to_string(&r).map_err(haggle_core::Error::from)?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
