//! HTTP API for live assignment sessions.
//!
//! Sessions live in memory behind one lock each. Every accepted mutation is
//! appended to the session's journal before it becomes visible, and
//! [`AppState::recover`] replays all journals on startup. What-if
//! recommendations take a read lock, so they run concurrently with each other
//! while commits and recorded recommendations are serialized per session.

pub mod api;
pub mod journal;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use dynassign::session::{Session, SessionView};
use dynassign::{Error, Result};

use api::{ApiError, CommitRequest, CommitResponse, CreateRequest, RecommendRequest, RecommendResponse, TraceResponse, SCHEMA};
use journal::JournalDir;

type SharedSession = Arc<RwLock<Session>>;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, SharedSession>>>,
    journal: Option<JournalDir>,
}

impl AppState {
    /// Sessions are kept in memory only.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Journals under `dir`, replaying any sessions already recorded there.
    pub fn recover(dir: impl Into<PathBuf>) -> Result<Self> {
        let journal = JournalDir::open(dir)?;
        let sessions = journal
            .recover()?
            .into_iter()
            .map(|s| (s.id().to_string(), Arc::new(RwLock::new(s))))
            .collect();
        Ok(Self {
            sessions: Arc::new(RwLock::new(sessions)),
            journal: Some(journal),
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    fn get(&self, id: &str) -> Result<SharedSession, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/recommend", post(recommend))
        .route("/sessions/{id}/commit", post(commit))
        .route("/sessions/{id}/trace", get(trace))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, sessions = state.session_count(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn create_session(
    State(app): State<AppState>,
    payload: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(req) = payload?;
    let id = req.id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    if !valid_id(&id) {
        return Err(Error::InvalidInput(format!("session id `{id}` must be 1-64 characters of [A-Za-z0-9_-]")).into());
    }
    let view = blocking(move || {
        let (session, genesis) = Session::create(id.clone(), req.spec)?;
        let mut sessions = app.sessions.write().expect("session map lock");
        if sessions.contains_key(&id) {
            return Err(Error::Conflict(format!("session `{id}` already exists")).into());
        }
        if let Some(j) = &app.journal {
            j.create(&genesis, &id)?;
        }
        let view = session.view();
        sessions.insert(id, Arc::new(RwLock::new(session)));
        tracing::info!(session = %view.id, n = view.n, "session created");
        Ok(view)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let session = app.get(&id)?;
    let view = session.read().expect("session lock").view();
    Ok(Json(view))
}

async fn recommend(
    State(app): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<Json<RecommendResponse>, ApiError> {
    let Json(req) = payload?;
    let vectors = match (req.vector, req.vectors) {
        (Some(v), None) => vec![v],
        (None, Some(vs)) => vs,
        _ => return Err(Error::InvalidInput("give exactly one of `vector` or `vectors`".into()).into()),
    };
    let session = app.get(&id)?;
    let response = blocking(move || {
        if req.what_if {
            let s = session.read().expect("session lock");
            let recommendations = s.what_if(&vectors, &req.exclude)?;
            return Ok(RecommendResponse {
                schema: SCHEMA.into(),
                session_id: id,
                ordinal: s.state().next_ordinal(),
                what_if: true,
                recommendations,
            });
        }
        let mut guard = session.write().expect("session lock");
        let ordinal = guard.state().next_ordinal();
        let mut next = guard.clone();
        let (recommendations, event) = next.recommend(&vectors, false, &req.exclude)?;
        if let (Some(j), Some(event)) = (&app.journal, &event) {
            j.append(&id, event)?;
        }
        *guard = next;
        Ok(RecommendResponse {
            schema: SCHEMA.into(),
            session_id: id,
            ordinal,
            what_if: false,
            recommendations,
        })
    })
    .await?;
    Ok(Json(response))
}

async fn commit(
    State(app): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<CommitRequest>, JsonRejection>,
) -> Result<Json<CommitResponse>, ApiError> {
    let Json(req) = payload?;
    let session = app.get(&id)?;
    let response = blocking(move || {
        let mut guard = session.write().expect("session lock");
        let mut next = guard.clone();
        let event = next.commit(req.ordinal, &req.agent, req.item_id)?;
        if let Some(j) = &app.journal {
            j.append(&id, &event)?;
        }
        *guard = next;
        let entry = guard.trace().pop().expect("commit recorded");
        tracing::info!(session = %id, ordinal = entry.ordinal, agent = %entry.agent_id, is_override = entry.is_override, "commit");
        Ok(CommitResponse {
            schema: SCHEMA.into(),
            session_id: id,
            ordinal: entry.ordinal,
            agent: entry.agent_id,
            recommended_agent: entry.recommended_agent,
            is_override: entry.is_override,
            seq: guard.seq(),
            remaining: guard.state().remaining().to_vec(),
            closed: guard.state().is_closed(),
        })
    })
    .await?;
    Ok(Json(response))
}

async fn trace(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<TraceResponse>, ApiError> {
    let session = app.get(&id)?;
    let entries = session.read().expect("session lock").trace();
    Ok(Json(TraceResponse {
        schema: SCHEMA.into(),
        session_id: id,
        entries,
    }))
}
