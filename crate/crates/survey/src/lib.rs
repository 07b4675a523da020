//! Survey service: hands out images to participants and stores their click
//! annotations in a corpus.
//!
//! Endpoints:
//!
//! * `GET /api/session?participant_id=…` creates or resumes a session.
//! * `GET /api/tasks/next?participant_id=…` returns the next unanswered image
//!   (204 when done).
//! * `POST /api/responses` stores one response.
//! * `GET /api/images/{id}` returns the image bytes.
//! * `GET /healthz`.

mod config;

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use xalign_core::corpus::{
    AnnotationResponse, CategorySource, Corpus, CorpusError, CorpusStore, FieldError, TextCategory,
};
use xalign_core::human::ClickPoint;

pub use config::{SurveyConfig, CONFIG_ENV, PORT_ENV};

pub const INSTRUCTIONS: &str = "Click one or two points in the image where you notice traces of AI \
generation, then describe in a few words what looks wrong. Traces can be anything perceived as \
artificial, from textures or visual inconsistencies to elements that seem out of place in the \
scene.";

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("server: {0}")]
    Server(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Eligibility {
    pub age_band_ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SurveySession {
    pub participant_id: String,
    pub assigned_image_ids: Vec<String>,
    pub completed: BTreeSet<String>,
    pub eligibility: Eligibility,
}

/// Shared state behind the router.
pub struct AppState {
    store: RwLock<Option<Arc<CorpusStore>>>,
    seed: u64,
    eligibility: Mutex<HashMap<String, bool>>,
}

impl AppState {
    pub fn new(store: Option<CorpusStore>, seed: u64) -> Arc<Self> {
        Arc::new(AppState {
            store: RwLock::new(store.map(Arc::new)),
            seed,
            eligibility: Mutex::new(HashMap::new()),
        })
    }

    /// Swaps in a corpus at runtime.
    pub fn load(&self, store: CorpusStore) {
        *self.store.write().expect("state lock poisoned") = Some(Arc::new(store));
    }

    pub fn store(&self) -> Option<Arc<CorpusStore>> {
        self.store.read().expect("state lock poisoned").clone()
    }
}

/// Presentation order for one participant: a shuffle of all image ids seeded
/// by SHA-256 of the service seed and the participant id.
pub fn assignment_order(corpus: &Corpus, seed: u64, participant_id: &str) -> Vec<String> {
    let mut ids: Vec<String> = corpus.images().iter().map(|i| i.image_id.clone()).collect();
    ids.sort();
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(participant_id.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ids.shuffle(&mut ChaCha8Rng::from_seed(key));
    ids
}

fn session_for(state: &AppState, corpus: &Corpus, participant_id: &str) -> SurveySession {
    let assigned = assignment_order(corpus, state.seed, participant_id);
    let completed = assigned
        .iter()
        .filter(|id| corpus.has_response(participant_id, id))
        .cloned()
        .collect();
    let ok = *state
        .eligibility
        .lock()
        .expect("eligibility lock poisoned")
        .get(participant_id)
        .unwrap_or(&true);
    SurveySession {
        participant_id: participant_id.to_string(),
        assigned_image_ids: assigned,
        completed,
        eligibility: Eligibility { age_band_ok: ok },
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn field_errors(errors: Vec<FieldError>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "errors": errors }))).into_response()
}

fn unavailable() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "no corpus loaded")
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    participant_id: Option<String>,
    age_band_ok: Option<bool>,
}

fn participant(q: Option<String>) -> Result<String, Response> {
    match q {
        Some(p) if !p.trim().is_empty() => Ok(p),
        _ => Err(field_errors(vec![FieldError::new(
            "participant_id",
            "query parameter is required",
        )])),
    }
}

async fn get_session(State(state): State<Arc<AppState>>, Query(q): Query<SessionQuery>) -> Response {
    let Some(store) = state.store() else {
        return unavailable();
    };
    let pid = match participant(q.participant_id) {
        Ok(p) => p,
        Err(r) => return r,
    };
    if let Some(ok) = q.age_band_ok {
        state
            .eligibility
            .lock()
            .expect("eligibility lock poisoned")
            .insert(pid.clone(), ok);
    }
    Json(session_for(&state, &store.snapshot(), &pid)).into_response()
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    participant_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Task {
    pub image_id: String,
    /// Base64 image bytes.
    pub image: String,
    pub mime: String,
    /// Clicks must be given in this pixel space.
    pub served_width: u32,
    pub served_height: u32,
    pub instructions: String,
    /// Zero-based position in the participant's order.
    pub position: usize,
    pub total: usize,
}

fn mime_for(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(e) if e == "jpg" || e == "jpeg" => "image/jpeg",
        _ => "image/png",
    }
}

async fn next_task(State(state): State<Arc<AppState>>, Query(q): Query<TaskQuery>) -> Response {
    let Some(store) = state.store() else {
        return unavailable();
    };
    let pid = match participant(q.participant_id) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let corpus = store.snapshot();
    let session = session_for(&state, &corpus, &pid);
    if !session.eligibility.age_band_ok {
        return error(StatusCode::FORBIDDEN, "participant is not eligible");
    }
    let Some((position, image_id)) = session
        .assigned_image_ids
        .iter()
        .enumerate()
        .find(|(_, id)| !session.completed.contains(*id))
    else {
        return StatusCode::NO_CONTENT.into_response();
    };
    let rec = corpus.image(image_id).expect("assigned ids come from the corpus");
    let path = corpus.image_path(rec);
    let bytes = match tokio::fs::read(&path).await {
        Ok(b) => b,
        Err(e) => {
            log::error!("reading {}: {e}", path.display());
            return error(StatusCode::INTERNAL_SERVER_ERROR, "image unavailable");
        }
    };
    Json(Task {
        image_id: image_id.clone(),
        image: STANDARD.encode(bytes),
        mime: mime_for(&path).to_string(),
        served_width: rec.width,
        served_height: rec.height,
        instructions: INSTRUCTIONS.to_string(),
        position,
        total: session.assigned_image_ids.len(),
    })
    .into_response()
}

async fn get_image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(store) = state.store() else {
        return unavailable();
    };
    let corpus = store.snapshot();
    let Some(rec) = corpus.image(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown image {id:?}"));
    };
    let path = corpus.image_path(rec);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime_for(&path))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "image file missing"),
    }
}

/// Body of `POST /api/responses`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSubmission {
    pub participant_id: String,
    pub image_id: String,
    pub clicks: Vec<ClickPoint>,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub click_item_tags: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmissionAck {
    pub response_id: String,
    pub text_categories: BTreeSet<TextCategory>,
    pub needs_review: bool,
}

/// Stable id for the (participant, image) pair.
pub fn response_id(participant_id: &str, image_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(participant_id.as_bytes());
    h.update([0]);
    h.update(image_id.as_bytes());
    let d = h.finalize();
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

async fn post_response(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(store) = state.store() else {
        return unavailable();
    };
    let sub: ResponseSubmission = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => return field_errors(vec![FieldError::new("body", e.to_string())]),
    };
    let corpus = store.snapshot();
    let Some(image) = corpus.image(&sub.image_id) else {
        return field_errors(vec![FieldError::new(
            "image_id",
            format!("unknown image {:?}", sub.image_id),
        )]);
    };
    let response = AnnotationResponse {
        response_id: response_id(&sub.participant_id, &sub.image_id),
        participant_id: sub.participant_id,
        image_id: sub.image_id,
        clicks: sub.clicks,
        click_item_tags: sub.click_item_tags,
        text: sub.text,
        text_categories: BTreeSet::new(),
        category_source: CategorySource::Rules,
        needs_review: false,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let errors = response.validate(image);
    if !errors.is_empty() {
        return field_errors(errors);
    }
    drop(corpus);
    let result = tokio::task::spawn_blocking(move || store.submit(response)).await;
    match result {
        Ok(Ok(saved)) => Json(SubmissionAck {
            response_id: saved.response_id,
            text_categories: saved.text_categories,
            needs_review: saved.needs_review,
        })
        .into_response(),
        Ok(Err(CorpusError::DuplicateResponse { .. })) | Ok(Err(CorpusError::DuplicateId { .. })) => {
            error(StatusCode::CONFLICT, "a response for this image was already recorded")
        }
        Ok(Err(CorpusError::InvalidResponse { errors, .. })) => field_errors(errors),
        Ok(Err(e)) => {
            log::error!("storing response: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "could not store response")
        }
        Err(e) => {
            log::error!("storing response: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "could not store response")
        }
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({ "status": "ok", "corpus_loaded": state.store().is_some() })).into_response()
}

pub fn router(state: Arc<AppState>, static_dir: Option<&std::path::Path>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/session", get(get_session))
        .route("/api/tasks/next", get(next_task))
        .route("/api/responses", post(post_response))
        .route("/api/images/{id}", get(get_image))
        .with_state(state);
    match static_dir {
        Some(dir) => {
            let dir = Arc::new(dir.to_path_buf());
            api.fallback(move |uri: axum::http::Uri| static_file(dir.clone(), uri))
        }
        None => api,
    }
}

/// Serves a file from the UI directory, `index.html` for directories.
async fn static_file(dir: Arc<std::path::PathBuf>, uri: axum::http::Uri) -> Response {
    let mut path = dir.as_ref().clone();
    for part in uri.path().split('/').filter(|p| !p.is_empty()) {
        if part == ".." || part == "." || part.contains('\\') {
            return error(StatusCode::NOT_FOUND, "not found");
        }
        path.push(part);
    }
    if path.is_dir() {
        path.push("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, static_mime(&path))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "not found"),
    }
}

fn static_mime(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        _ => "application/octet-stream",
    }
}

/// Opens the configured corpus (if any) and builds the router.
pub fn build_app(config: &SurveyConfig) -> Result<(Router, Arc<AppState>), SurveyError> {
    let store = match &config.corpus {
        Some(dir) => Some(CorpusStore::open(dir)?),
        None => None,
    };
    let state = AppState::new(store, config.seed);
    Ok((router(state.clone(), config.static_dir.as_deref()), state))
}

/// Serves until Ctrl-C.
pub async fn serve(config: SurveyConfig) -> Result<(), SurveyError> {
    let (app, _) = build_app(&config)?;
    let listener = tokio::net::TcpListener::bind(config.address()).await?;
    let addr: SocketAddr = listener.local_addr()?;
    log::info!("survey service listening on http://{addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Blocking entry point for the command line.
pub fn run(config: SurveyConfig) -> Result<(), SurveyError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(config))
}
