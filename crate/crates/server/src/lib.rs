//! HTTP API over annotation campaigns.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/taxonomy` | categories and severities |
//! | GET | `/projects/{id}/tasks?rater=` | next unfinished document for a rater |
//! | GET | `/projects/{id}/documents/{doc}?rater=&alias=` | one aliased document |
//! | POST | `/projects/{id}/annotations` | submit a rating; 422 lists violated rules |
//! | GET | `/projects/{id}/progress` | per-rater counts |
//! | GET | `/projects/{id}/export` | corpus TSV, bearer token required |
//!
//! Each project lives in its own subdirectory of the data directory. Submissions
//! to one project are serialized by a write lock; reads share a read lock.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mqm_core::campaign::{parse_submission, Campaign, CampaignError, PROJECT_FILE};
use mqm_core::corpus::Violation;
use mqm_core::taxonomy::{ErrorCategory, Severity};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    /// Bearer token for `/export`; export is refused when unset.
    pub auth_token: Option<String>,
}

pub struct AppState {
    projects: BTreeMap<String, RwLock<Campaign>>,
    auth_token: Option<String>,
}

impl AppState {
    pub fn new(campaigns: impl IntoIterator<Item = Campaign>, auth_token: Option<String>) -> Self {
        AppState {
            projects: campaigns
                .into_iter()
                .map(|c| (c.project().id.clone(), RwLock::new(c)))
                .collect(),
            auth_token,
        }
    }

    /// Opens every project directory directly under `data_dir`.
    pub fn load(data_dir: &Path, auth_token: Option<String>) -> Result<Self, CampaignError> {
        let mut campaigns = Vec::new();
        for entry in std::fs::read_dir(data_dir)? {
            let path = entry?.path();
            if path.join(PROJECT_FILE).is_file() {
                campaigns.push(Campaign::open(&path)?);
            }
        }
        Ok(Self::new(campaigns, auth_token))
    }

    pub fn project_ids(&self) -> impl Iterator<Item = &str> {
        self.projects.keys().map(String::as_str)
    }
}

#[derive(Debug, Serialize)]
struct RuleReport {
    rule: mqm_core::corpus::Rule,
    description: &'static str,
    location: String,
    detail: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    rules: Vec<RuleReport>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    violations: Vec<Violation>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            violations: Vec::new(),
        }
    }

    fn rejected(violations: Vec<Violation>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: "submission rejected".into(),
            violations,
        }
    }
}

impl From<CampaignError> for ApiError {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::ValidationFailed(v) => ApiError::rejected(v),
            CampaignError::NotAssigned { .. } => ApiError::new(StatusCode::FORBIDDEN, e.to_string()),
            CampaignError::ProjectClosed | CampaignError::EmptyProject => {
                ApiError::new(StatusCode::CONFLICT, e.to_string())
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.message,
            rules: self
                .violations
                .into_iter()
                .map(|v| RuleReport {
                    rule: v.rule,
                    description: v.rule.describe(),
                    location: v.location,
                    detail: v.detail,
                })
                .collect(),
        };
        (self.status, Json(body)).into_response()
    }
}

type Shared = Arc<AppState>;

fn project<'a>(state: &'a AppState, id: &str) -> Result<&'a RwLock<Campaign>, ApiError> {
    state
        .projects
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no project {id}")))
}

fn poisoned<T>(_: T) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "project state lock poisoned")
}

#[derive(Debug, Deserialize)]
struct RaterQuery {
    rater: String,
}

#[derive(Debug, Deserialize)]
struct DocumentQuery {
    rater: String,
    alias: String,
}

#[derive(Debug, Serialize)]
struct Taxonomy {
    categories: Vec<String>,
    severities: Vec<&'static str>,
}

async fn taxonomy() -> Json<Taxonomy> {
    Json(Taxonomy {
        categories: ErrorCategory::all().iter().map(ErrorCategory::canonical).collect(),
        severities: Severity::ALL.iter().map(|s| s.label()).collect(),
    })
}

async fn next_task(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RaterQuery>,
) -> Result<Response, ApiError> {
    let campaign = project(&state, &id)?.read().map_err(poisoned)?;
    Ok(match campaign.next_task(&q.rater)? {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn document(
    State(state): State<Shared>,
    UrlPath((id, doc)): UrlPath<(String, String)>,
    Query(q): Query<DocumentQuery>,
) -> Result<Response, ApiError> {
    let campaign = project(&state, &id)?.read().map_err(poisoned)?;
    Ok(Json(campaign.document(&q.rater, &q.alias, &doc)?).into_response())
}

async fn submit(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let lock = project(&state, &id)?;
    let submission = parse_submission(&body).map_err(ApiError::rejected)?;
    let event = lock.write().map_err(poisoned)?.submit(submission)?;
    Ok(Json(event).into_response())
}

async fn progress(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let campaign = project(&state, &id)?.read().map_err(poisoned)?;
    Ok(Json(campaign.progress()).into_response())
}

fn authorized(state: &AppState, headers: &HeaderMap) -> bool {
    let Some(expected) = &state.auth_token else {
        return false;
    };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|token| token == expected)
}

async fn export(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let lock = project(&state, &id)?;
    if !authorized(&state, &headers) {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "export requires the bearer token"));
    }
    let tsv = lock.read().map_err(poisoned)?.export_tsv()?;
    Ok(([(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")], tsv).into_response())
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/taxonomy", get(taxonomy))
        .route("/projects/{id}/tasks", get(next_task))
        .route("/projects/{id}/documents/{doc}", get(document))
        .route("/projects/{id}/annotations", post(submit))
        .route("/projects/{id}/progress", get(progress))
        .route("/projects/{id}/export", get(export))
        .with_state(state)
}

/// Loads every project under the data directory and serves until Ctrl-C.
pub async fn serve(config: ServerConfig) -> std::io::Result<()> {
    let state = AppState::load(&config.data_dir, config.auth_token.clone()).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
