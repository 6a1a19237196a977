use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ctdiff_core::volume::{read_meta, read_volume, HuVolume};
use serde::Deserialize;
use serde_json::json;
use uuid::Uuid;

use crate::agreement::{compute_agreement, AgreementReport};
use crate::definition::{Questionnaire, StudyDefinition};
use crate::error::{StudyError, StudyResult};
use crate::session::{Assignment, AssignmentPayload, SessionPayload};
use crate::store::{Acknowledgment, RatingSubmission, StudyStore};
use crate::tiles::render_tile;

pub const ANALYST_HEADER: &str = "x-analyst-token";

/// Study state plus volume access under a data root.
pub struct StudyService {
    store: StudyStore,
    data_root: PathBuf,
    volumes: Mutex<HashMap<PathBuf, Arc<HuVolume>>>,
    depths: Mutex<HashMap<PathBuf, usize>>,
}

impl StudyService {
    pub fn new(store: StudyStore, data_root: &Path) -> StudyService {
        StudyService {
            store,
            data_root: data_root.to_path_buf(),
            volumes: Mutex::new(HashMap::new()),
            depths: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &StudyStore {
        &self.store
    }

    pub fn study(&self) -> &StudyDefinition {
        self.store.study()
    }

    fn volume_dir(&self, a: &Assignment) -> StudyResult<PathBuf> {
        let case = self
            .study()
            .case(&a.case_id)
            .ok_or_else(|| StudyError::Storage(format!("case {} missing from study", a.case_id)))?;
        let rel = case
            .volumes
            .get(&a.modality)
            .ok_or_else(|| StudyError::Storage(format!("case {} lacks a volume", a.case_id)))?;
        Ok(self.data_root.join(rel))
    }

    fn slice_count(&self, a: &Assignment) -> StudyResult<usize> {
        let dir = self.volume_dir(a)?;
        if let Some(&d) = self.depths.lock().expect("depth cache").get(&dir) {
            return Ok(d);
        }
        let depth = read_meta(&dir)?.dims[0];
        self.depths.lock().expect("depth cache").insert(dir, depth);
        Ok(depth)
    }

    fn volume(&self, a: &Assignment) -> StudyResult<Arc<HuVolume>> {
        let dir = self.volume_dir(a)?;
        if let Some(v) = self.volumes.lock().expect("volume cache").get(&dir) {
            return Ok(v.clone());
        }
        let (vol, _) = read_volume(&dir)?;
        let vol = Arc::new(vol);
        self.volumes.lock().expect("volume cache").insert(dir, vol.clone());
        Ok(vol)
    }

    pub fn session(&self, rater_id: &str) -> StudyResult<SessionPayload> {
        let assignments = self.store.create_session(rater_id)?;
        let state = self.store.snapshot();
        let mut items = Vec::with_capacity(assignments.len());
        for a in &assignments {
            items.push(AssignmentPayload {
                assignment_id: a.assignment_id,
                order: a.display_order,
                slice_count: self.slice_count(a)?,
                answered: state.ratings.contains_key(&a.assignment_id),
            });
        }
        Ok(SessionPayload {
            rater_id: rater_id.to_string(),
            total: items.len(),
            answered: items.iter().filter(|i| i.answered).count(),
            assignments: items,
        })
    }

    pub fn tile(&self, id: Uuid, z: usize) -> StudyResult<Vec<u8>> {
        let a = self
            .store
            .assignment(id)
            .ok_or_else(|| StudyError::NotFound(format!("unknown assignment {id}")))?;
        let vol = self.volume(&a)?;
        render_tile(&vol, z, &self.study().window)
    }

    pub fn agreement(&self, question_id: &str) -> StudyResult<AgreementReport> {
        let ids: Vec<String> = self.study().questionnaire.questions.iter().map(|q| q.id.clone()).collect();
        compute_agreement(&self.store.snapshot(), &self.study().raters, &ids, question_id)
    }
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        let status = match &self {
            StudyError::Validation(_) => StatusCode::BAD_REQUEST,
            StudyError::Forbidden(_) => StatusCode::FORBIDDEN,
            StudyError::NotFound(_) => StatusCode::NOT_FOUND,
            StudyError::Conflict(_) => StatusCode::CONFLICT,
            StudyError::Storage(_) | StudyError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        // Internal details can name volume paths, which would unblind the rater.
        let message = if status == StatusCode::INTERNAL_SERVER_ERROR {
            eprintln!("study service error: {self}");
            "internal error".to_string()
        } else {
            self.to_string()
        };
        (status, Json(json!({ "error": self.code(), "message": message }))).into_response()
    }
}

type Shared = Arc<StudyService>;

#[derive(Deserialize)]
struct SessionRequest {
    rater_id: String,
}

#[derive(Deserialize)]
struct AgreementQuery {
    question: String,
}

async fn create_session(State(s): State<Shared>, Json(req): Json<SessionRequest>) -> StudyResult<Json<SessionPayload>> {
    tokio::task::spawn_blocking(move || s.session(&req.rater_id))
        .await
        .map_err(|e| StudyError::Storage(e.to_string()))?
        .map(Json)
}

async fn questionnaire(State(s): State<Shared>) -> Json<Questionnaire> {
    Json(s.study().questionnaire.clone())
}

async fn slice_tile(State(s): State<Shared>, UrlPath((id, z)): UrlPath<(String, usize)>) -> StudyResult<Response> {
    let id = Uuid::parse_str(&id).map_err(|_| StudyError::NotFound(format!("unknown assignment {id}")))?;
    let png = tokio::task::spawn_blocking(move || s.tile(id, z))
        .await
        .map_err(|e| StudyError::Storage(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")], png).into_response())
}

async fn record_rating(State(s): State<Shared>, Json(sub): Json<RatingSubmission>) -> StudyResult<Json<Acknowledgment>> {
    tokio::task::spawn_blocking(move || s.store().record_rating(sub))
        .await
        .map_err(|e| StudyError::Storage(e.to_string()))?
        .map(Json)
}

async fn agreement(
    State(s): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<AgreementQuery>,
) -> StudyResult<Json<AgreementReport>> {
    if let Some(token) = &s.study().analyst_token {
        let given = headers.get(ANALYST_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(token.as_str()) {
            return Err(StudyError::Forbidden("analyst token required".into()));
        }
    }
    s.agreement(&q.question).map(Json)
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/questionnaire", get(questionnaire))
        .route("/api/assignments/{id}/slices/{z}", get(slice_tile))
        .route("/api/ratings", post(record_rating))
        .route("/api/stats/agreement", get(agreement))
        .with_state(service)
}

/// Serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, service: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("study service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
