use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use maskaudit_core::study::{AgreementReport, Annotation, Phase, NONE, OTHER};
use serde::Deserialize;

use crate::bundle::StudyBundle;
use crate::error::{Result, StudyError};
use crate::store::{LogEntry, NextItem, PhaseStatus, Study};

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub bundle: PathBuf,
    /// Served images are resolved against this directory; defaults to the
    /// bundle's directory.
    pub image_root: Option<PathBuf>,
    /// Where the annotation log lives; defaults to the image root.
    pub data_root: Option<PathBuf>,
    pub addr: SocketAddr,
}

impl ServeConfig {
    pub fn open(&self) -> Result<Study> {
        let bundle = StudyBundle::load(&self.bundle)?;
        let image_root = self.image_root.clone().unwrap_or_else(|| {
            self.bundle.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
        });
        let data_root = self.data_root.clone().unwrap_or_else(|| image_root.clone());
        Study::open(bundle, &image_root, &data_root)
    }
}

pub fn router(study: Arc<Study>) -> Router {
    Router::new()
        .route("/api/conditions", get(conditions))
        .route("/api/study/{phase}/next", get(next))
        .route("/api/images/{item_id}", get(image))
        .route("/api/annotations", post(submit))
        .route("/api/results", get(results))
        .route("/api/progress", get(progress))
        .with_state(study)
}

/// Serves until ctrl-c.
pub async fn serve(config: &ServeConfig) -> Result<()> {
    let study = Arc::new(config.open()?);
    let listener = tokio::net::TcpListener::bind(config.addr)
        .await
        .map_err(|e| StudyError::io(config.addr.to_string(), e))?;
    log::info!(
        "reader study on http://{}, log at {}",
        config.addr,
        study.log_path().display()
    );
    axum::serve(listener, router(study))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| StudyError::io(config.addr.to_string(), e))
}

#[derive(Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

impl AnnotatorQuery {
    fn id(self) -> Result<String> {
        self.annotator
            .filter(|a| !a.trim().is_empty())
            .ok_or_else(|| StudyError::Invalid("missing `annotator` query parameter".into()))
    }
}

#[derive(Deserialize)]
struct PhaseQuery {
    phase: Option<String>,
}

fn parse_phase(s: &str) -> Result<Phase> {
    s.parse().map_err(|_| StudyError::NotFound(format!("phase `{s}`")))
}

async fn conditions(State(study): State<Arc<Study>>) -> Json<serde_json::Value> {
    let names = &study.bundle().class_names;
    Json(serde_json::json!({ "conditions": names, "extra": [OTHER, NONE] }))
}

async fn next(
    State(study): State<Arc<Study>>,
    Path(phase): Path<String>,
    Query(q): Query<AnnotatorQuery>,
) -> Result<Json<NextItem>> {
    Ok(Json(study.next(parse_phase(&phase)?, &q.id()?)?))
}

async fn image(State(study): State<Arc<Study>>, Path(item_id): Path<String>) -> Result<impl IntoResponse> {
    let bytes = study.image(&item_id)?;
    Ok((
        [(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")],
        bytes.to_vec(),
    ))
}

async fn submit(
    State(study): State<Arc<Study>>,
    Json(annotation): Json<Annotation>,
) -> Result<(StatusCode, Json<Annotation>)> {
    let LogEntry { annotation, .. } = study.submit(annotation).await?;
    Ok((StatusCode::CREATED, Json(annotation)))
}

async fn results(State(study): State<Arc<Study>>, Query(q): Query<PhaseQuery>) -> Result<Json<AgreementReport>> {
    let phase = parse_phase(q.phase.as_deref().unwrap_or("main"))?;
    Ok(Json(study.results(phase)?))
}

async fn progress(State(study): State<Arc<Study>>, Query(q): Query<AnnotatorQuery>) -> Result<Json<Vec<PhaseStatus>>> {
    Ok(Json(study.progress(&q.id()?)?))
}
