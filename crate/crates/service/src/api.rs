//! `/api/v1` routes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::header::{HeaderMap, HeaderValue, ETAG, IF_MATCH};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uslink_core::abstraction::abstract_gui;
use uslink_core::detection::{rank_stories, Verdict};
use uslink_core::gateway::GatewayError;
use uslink_core::markup::recommendation_group;
use uslink_core::matching::MatchResult;
use uslink_core::model::{parse_prototype, Bounds, GuiPrototype, LayoutGroup, UserStory};
use uslink_core::pipeline::{run_parallel, Pipeline, PipelineError};
use uslink_core::prompt::{PromptKind, Task};
use uslink_core::recommendation::{Recommendation, DEFAULT_K, DEFAULT_TEMPERATURE};

use crate::project::{Event, FeedbackEntry, Judgment, Project};
use crate::store::{ProjectStore, StoreError};

pub const EXPECTED_REVISION: &str = "x-expected-revision";
const MAX_K: usize = 10;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ProjectStore>,
    pub pipeline: Arc<Pipeline>,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    Schema(String),
    #[error("project {0} not found")]
    ProjectNotFound(String),
    #[error("story {0} not found")]
    StoryNotFound(String),
    #[error("no recommendation ranked {rank} for story {us_id}")]
    UnknownRecommendation { us_id: String, rank: u32 },
    #[error("expected revision {expected}, project is at {current}")]
    RevisionConflict { expected: u64, current: u64 },
    #[error("an If-Match or X-Expected-Revision header is required")]
    RevisionRequired,
    #[error("story {0} has no verdict yet; validate the project first")]
    NoVerdict(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("worker failed: {0}")]
    Worker(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::Schema(_) => StatusCode::BAD_REQUEST,
            ApiError::ProjectNotFound(_)
            | ApiError::StoryNotFound(_)
            | ApiError::UnknownRecommendation { .. } => StatusCode::NOT_FOUND,
            ApiError::RevisionConflict { .. } | ApiError::NoVerdict(_) => StatusCode::CONFLICT,
            ApiError::Store(StoreError::Exists(_)) => StatusCode::CONFLICT,
            ApiError::RevisionRequired => StatusCode::PRECONDITION_REQUIRED,
            ApiError::Pipeline(PipelineError::Gateway(GatewayError::Config(_)))
            | ApiError::Pipeline(PipelineError::Prompt(_))
            | ApiError::Pipeline(PipelineError::Leakage(_))
            | ApiError::Store(_)
            | ApiError::Worker(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::Pipeline(PipelineError::InvalidCount) => StatusCode::BAD_REQUEST,
            ApiError::Pipeline(_) => StatusCode::BAD_GATEWAY,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ApiError::Schema(_) => "schema",
            ApiError::ProjectNotFound(_) => "project_not_found",
            ApiError::StoryNotFound(_) => "story_not_found",
            ApiError::UnknownRecommendation { .. } => "unknown_recommendation",
            ApiError::RevisionConflict { .. } => "revision_conflict",
            ApiError::RevisionRequired => "revision_required",
            ApiError::NoVerdict(_) => "no_verdict",
            ApiError::Pipeline(_) => "backend",
            ApiError::Store(StoreError::Exists(_)) => "project_exists",
            ApiError::Store(_) | ApiError::Worker(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        if let ApiError::RevisionConflict { current, .. } = &self {
            body["current_revision"] = json!(current);
        }
        (status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::Schema(e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/projects", post(create_project))
        .route("/api/v1/projects/{id}", get(get_project))
        .route("/api/v1/projects/{id}/validate", post(validate_project))
        .route("/api/v1/projects/{id}/feedback", post(post_feedback).get(list_feedback))
        .route("/api/v1/projects/{id}/stories/{us}/highlights", get(get_highlights))
        .route("/api/v1/projects/{id}/stories/{us}/recommendations", get(get_recommendations))
        .route(
            "/api/v1/projects/{id}/stories/{us}/recommendations/{rank}/apply",
            post(apply_recommendation),
        )
        .with_state(state)
}

fn etag(revision: u64) -> [(axum::http::HeaderName, HeaderValue); 1] {
    [(ETAG, HeaderValue::from_str(&format!("\"{revision}\"")).expect("digits are valid"))]
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Worker(e.to_string()))
}

async fn project(state: &AppState, id: &str) -> ApiResult<crate::store::SharedProject> {
    state
        .store
        .get(id)
        .await
        .ok_or_else(|| ApiError::ProjectNotFound(id.to_string()))
}

fn prompt_kind(task: Task, raw: Option<&str>, default: PromptKind) -> ApiResult<PromptKind> {
    match raw {
        None => Ok(default),
        Some(s) => PromptKind::parse_for(task, s).map_err(|e| ApiError::Schema(e.to_string())),
    }
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "projects": state.store.len().await,
        "backend": state.pipeline.gateway.backend_name(),
        "model": state.pipeline.gateway.model_name(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryInput {
    #[serde(default)]
    pub us_id: Option<String>,
    pub text: String,
    /// Annotated stable component IDs, if known.
    #[serde(default)]
    pub gold_component_ids: Option<BTreeSet<u32>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateProject {
    #[serde(default)]
    pub project_id: Option<String>,
    pub prototype: Value,
    pub stories: Vec<StoryInput>,
}

#[derive(Debug, Serialize)]
pub struct ProjectView {
    pub project_id: String,
    pub revision: u64,
    pub prototype: GuiPrototype,
    pub abstraction: String,
    pub stories: Vec<UserStory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationView>,
    pub feedback_count: usize,
}

#[derive(Debug, Serialize)]
pub struct ValidationView {
    pub revision: u64,
    pub prompt_kind: PromptKind,
    pub cached: bool,
    /// Implemented stories first, each class by descending probability.
    pub verdicts: Vec<Verdict>,
}

fn view(p: &Project) -> ProjectView {
    ProjectView {
        project_id: p.project_id.clone(),
        revision: p.revision,
        prototype: p.prototype.clone(),
        abstraction: abstract_gui(&p.prototype, true).rendered,
        stories: p.stories.clone(),
        validation: p.current_verdicts().map(|c| ValidationView {
            revision: p.revision,
            prompt_kind: c.prompt_kind,
            cached: true,
            verdicts: rank_stories(c.value.values().cloned().collect()),
        }),
        feedback_count: p.feedback.len(),
    }
}

fn valid_project_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn build_created(req: CreateProject) -> ApiResult<Event> {
    let project_id = match req.project_id {
        Some(id) if valid_project_id(&id) => id,
        Some(id) => return Err(ApiError::Schema(format!("invalid project_id {id:?}"))),
        None => uuid::Uuid::new_v4().simple().to_string(),
    };
    let mut prototype = parse_prototype(&req.prototype.to_string())
        .map_err(|e| ApiError::Schema(format!("prototype: {e}")))?;
    prototype.assign_ids();
    let known: BTreeSet<u32> = prototype.components().map(|c| c.id).collect();
    if known.len() != prototype.component_count() {
        return Err(ApiError::Schema("prototype: component ids must be unique".into()));
    }
    if req.stories.is_empty() {
        return Err(ApiError::Schema("stories: at least one story is required".into()));
    }
    let mut stories = Vec::with_capacity(req.stories.len());
    let mut annotations = BTreeMap::new();
    for (i, s) in req.stories.into_iter().enumerate() {
        let us_id = s.us_id.unwrap_or_else(|| format!("US{:03}", i + 1));
        if stories.iter().any(|x: &UserStory| x.us_id == us_id) {
            return Err(ApiError::Schema(format!("stories: duplicate us_id {us_id}")));
        }
        let story = UserStory::new(&us_id, &s.text, &prototype.gui_id);
        story.validate().map_err(|e| ApiError::Schema(e.to_string()))?;
        // ids absent from the prototype describe components still missing
        if let Some(ids) = s.gold_component_ids {
            if ids.contains(&0) {
                return Err(ApiError::Schema(format!("stories[{us_id}]: component id 0 is reserved")));
            }
            annotations.insert(us_id.clone(), ids);
        }
        stories.push(story);
    }
    Ok(Event::Created {
        project_id,
        prototype,
        stories,
        annotations,
        revision: 1,
    })
}

async fn create_project(
    State(state): State<AppState>,
    body: Result<Json<CreateProject>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let created = build_created(req)?;
    let shared = state.store.create(created).await?;
    let handle = shared.lock().await;
    let p = &handle.project;
    log::info!("created project {} with {} stories", p.project_id, p.stories.len());
    Ok((StatusCode::CREATED, etag(p.revision), Json(view(p))))
}

async fn get_project(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let shared = project(&state, &id).await?;
    let handle = shared.lock().await;
    Ok((etag(handle.project.revision), Json(view(&handle.project))))
}

#[derive(Debug, Default, Deserialize)]
pub struct KindQuery {
    #[serde(default)]
    pub prompt: Option<String>,
}

async fn validate_project(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<KindQuery>,
) -> ApiResult<impl IntoResponse> {
    let kind = prompt_kind(Task::Detect, q.prompt.as_deref(), PromptKind::DetectZs)?;
    let shared = project(&state, &id).await?;
    let mut handle = shared.lock().await;
    if let Some(cached) = handle.project.verdicts_for(kind) {
        let verdicts = rank_stories(cached.values().cloned().collect());
        let revision = handle.project.revision;
        return Ok((
            etag(revision),
            Json(ValidationView {
                revision,
                prompt_kind: kind,
                cached: true,
                verdicts,
            }),
        ));
    }
    let p = handle.project.clone();
    let pipeline = state.pipeline.clone();
    let verdicts = blocking(move || {
        let threads = pipeline.gateway.max_parallel();
        run_parallel(&p.stories, threads, |story| {
            pipeline
                .detect(story, &p.prototype, kind, p.annotations.get(&story.us_id))
                .or_else(|e| {
                    if e.is_fatal() {
                        Err(e)
                    } else {
                        log::warn!("{}: {e}", story.us_id);
                        Ok(Verdict::failed(story, &p.prototype.gui_id, kind, &e))
                    }
                })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
    })
    .await??;
    let content_revision = handle.project.content_revision;
    handle.commit(Event::Validated {
        content_revision,
        prompt_kind: kind,
        verdicts: verdicts.clone(),
    })?;
    let revision = handle.project.revision;
    Ok((
        etag(revision),
        Json(ValidationView {
            revision,
            prompt_kind: kind,
            cached: false,
            verdicts: rank_stories(verdicts),
        }),
    ))
}

#[derive(Debug, Serialize)]
pub struct Highlight {
    /// Stable component identifier.
    pub component_id: u32,
    /// Identifier in the current ID abstraction.
    pub abstraction_id: u32,
    pub bounds: Bounds,
    pub text: String,
    #[serde(rename = "type")]
    pub ctype: String,
}

#[derive(Debug, Serialize)]
pub struct HighlightsView {
    pub revision: u64,
    pub us_id: String,
    pub prompt_kind: PromptKind,
    pub cached: bool,
    pub components: Vec<Highlight>,
}

fn highlights(proto: &GuiPrototype, m: &MatchResult) -> Vec<Highlight> {
    let basis = abstract_gui(proto, true);
    m.predicted_ids
        .iter()
        .filter_map(|&id| {
            basis.component(proto, id).map(|c| Highlight {
                component_id: c.id,
                abstraction_id: id,
                bounds: c.bounds,
                text: c.text.clone(),
                ctype: c.ctype.to_string(),
            })
        })
        .collect()
}

async fn get_highlights(
    State(state): State<AppState>,
    Path((id, us_id)): Path<(String, String)>,
    Query(q): Query<KindQuery>,
) -> ApiResult<impl IntoResponse> {
    let kind = prompt_kind(Task::Match, q.prompt.as_deref(), PromptKind::MatchZsA)?;
    let shared = project(&state, &id).await?;
    let mut handle = shared.lock().await;
    let story = handle
        .project
        .story(&us_id)
        .cloned()
        .ok_or_else(|| ApiError::StoryNotFound(us_id.clone()))?;
    let (result, cached) = match handle.project.match_for(&us_id, kind) {
        Some(m) => (m.clone(), true),
        None => {
            let proto = handle.project.prototype.clone();
            let gold = handle.project.annotations.get(&us_id).cloned();
            let pipeline = state.pipeline.clone();
            let result = blocking(move || pipeline.match_components(&story, &proto, kind, gold.as_ref())).await??;
            let content_revision = handle.project.content_revision;
            handle.commit(Event::Matched {
                content_revision,
                prompt_kind: kind,
                result: result.clone(),
            })?;
            (result, false)
        }
    };
    let revision = handle.project.revision;
    Ok((
        etag(revision),
        Json(HighlightsView {
            revision,
            us_id,
            prompt_kind: kind,
            cached,
            components: highlights(&handle.project.prototype, &result),
        }),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackInput {
    pub us_id: String,
    pub verdict_shown: u8,
    pub user_judgment: Judgment,
    #[serde(default)]
    pub free_text: Option<String>,
}

async fn post_feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackInput>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(input) = body?;
    if input.verdict_shown > 1 {
        return Err(ApiError::Schema("verdict_shown must be 0 or 1".into()));
    }
    let shared = project(&state, &id).await?;
    let mut handle = shared.lock().await;
    if handle.project.story(&input.us_id).is_none() {
        return Err(ApiError::StoryNotFound(input.us_id));
    }
    let has_verdict = handle
        .project
        .current_verdicts()
        .is_some_and(|c| c.value.contains_key(&input.us_id));
    if !has_verdict {
        return Err(ApiError::NoVerdict(input.us_id));
    }
    let entry = FeedbackEntry {
        entry_id: handle.project.next_feedback_id(),
        us_id: input.us_id,
        verdict_shown: input.verdict_shown,
        user_judgment: input.user_judgment,
        timestamp: now_ms(),
        free_text: input.free_text,
    };
    let revision = handle.project.revision + 1;
    handle.commit(Event::Feedback {
        revision,
        entry: entry.clone(),
    })?;
    Ok((
        StatusCode::CREATED,
        etag(revision),
        Json(json!({ "entry_id": entry.entry_id, "revision": revision, "entry": entry })),
    ))
}

async fn list_feedback(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let shared = project(&state, &id).await?;
    let handle = shared.lock().await;
    Ok(Json(handle.project.feedback.clone()))
}

#[derive(Debug, Default, Deserialize)]
pub struct RecommendationQuery {
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RecommendationsView {
    pub revision: u64,
    pub us_id: String,
    pub prompt_kind: PromptKind,
    pub cached: bool,
    pub recommendations: Vec<Recommendation>,
}

async fn get_recommendations(
    State(state): State<AppState>,
    Path((id, us_id)): Path<(String, String)>,
    Query(q): Query<RecommendationQuery>,
) -> ApiResult<impl IntoResponse> {
    let kind = prompt_kind(Task::Recommend, q.prompt.as_deref(), PromptKind::RecFs)?;
    let k = q.k.unwrap_or(DEFAULT_K);
    if k == 0 || k > MAX_K {
        return Err(ApiError::Schema(format!("k must be between 1 and {MAX_K}")));
    }
    let temperature = q.temperature.unwrap_or(DEFAULT_TEMPERATURE);
    if !(0.0..=2.0).contains(&temperature) {
        return Err(ApiError::Schema("temperature must lie in [0, 2]".into()));
    }
    let shared = project(&state, &id).await?;
    let mut handle = shared.lock().await;
    let story = handle
        .project
        .story(&us_id)
        .cloned()
        .ok_or_else(|| ApiError::StoryNotFound(us_id.clone()))?;
    let cached = handle
        .project
        .recommendations_for(&us_id, kind)
        .filter(|recs| recs.len() >= k)
        .map(|recs| recs[..k].to_vec());
    let (recommendations, cached) = match cached {
        Some(recs) => (recs, true),
        None => {
            let proto = handle.project.prototype.clone();
            let pipeline = state.pipeline.clone();
            let recs = blocking(move || pipeline.recommend(&story, &proto, kind, k, temperature)).await??;
            let content_revision = handle.project.content_revision;
            handle.commit(Event::Recommended {
                content_revision,
                prompt_kind: kind,
                us_id: us_id.clone(),
                recommendations: recs.clone(),
            })?;
            (recs, false)
        }
    };
    let revision = handle.project.revision;
    Ok((
        etag(revision),
        Json(RecommendationsView {
            revision,
            us_id,
            prompt_kind: kind,
            cached,
            recommendations,
        }),
    ))
}

fn expected_revision(headers: &HeaderMap) -> ApiResult<u64> {
    let raw = headers
        .get(IF_MATCH)
        .or_else(|| headers.get(EXPECTED_REVISION))
        .ok_or(ApiError::RevisionRequired)?;
    let text = raw
        .to_str()
        .map_err(|_| ApiError::Schema("revision header is not text".into()))?;
    text.trim()
        .trim_start_matches("W/")
        .trim_matches('"')
        .parse()
        .map_err(|_| ApiError::Schema(format!("revision header {text:?} is not a number")))
}

#[derive(Debug, Serialize)]
pub struct ApplyView {
    pub project_id: String,
    pub revision: u64,
    pub group: LayoutGroup,
    pub prototype: GuiPrototype,
    pub abstraction: String,
}

async fn apply_recommendation(
    State(state): State<AppState>,
    Path((id, us_id, rank)): Path<(String, String, u32)>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    let expected = expected_revision(&headers)?;
    let shared = project(&state, &id).await?;
    let mut handle = shared.lock().await;
    let current = handle.project.revision;
    if expected != current {
        return Err(ApiError::RevisionConflict { expected, current });
    }
    if handle.project.story(&us_id).is_none() {
        return Err(ApiError::StoryNotFound(us_id));
    }
    let markup = handle
        .project
        .recommendations
        .get(&us_id)
        .and_then(|c| c.value.iter().find(|r| r.rank == rank))
        .map(|r| r.markup.clone())
        .ok_or_else(|| ApiError::UnknownRecommendation {
            us_id: us_id.clone(),
            rank,
        })?;
    let mut group = recommendation_group(&handle.project.prototype, &markup);
    let first = handle.project.next_component_id();
    for (i, c) in group.components.iter_mut().enumerate() {
        c.id = first + i as u32;
    }
    let revision = current + 1;
    handle.commit(Event::Applied {
        revision,
        us_id: us_id.clone(),
        rank,
        group: group.clone(),
    })?;
    let p = &handle.project;
    log::info!("{}: applied recommendation {rank} for {us_id}, revision {revision}", p.project_id);
    Ok((
        etag(revision),
        Json(ApplyView {
            project_id: p.project_id.clone(),
            revision,
            group,
            prototype: p.prototype.clone(),
            abstraction: abstract_gui(&p.prototype, true).rendered,
        }),
    ))
}
