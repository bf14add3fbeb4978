use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use base64::Engine;
use chrono::{DateTime, Utc};
use cpdewarp_core::{common_valid_steps, AnnotationRecord, DewarpOptions, Method};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::StoreError;
use crate::store::{Init, PreviewKey, Project, Store};

/// Upload limit for project creation.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;
pub const DEFAULT_PREVIEW_SIDE: u32 = 992;

type ApiResult<T> = Result<T, StoreError>;

/// Runs blocking store work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| StoreError::Internal(e.to_string()))?
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/control-points", put(update_points))
        .route("/projects/{id}/image", get(get_image))
        .route("/projects/{id}/preview", get(get_preview))
        .route("/projects/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(store)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub revision: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectSummary {
    pub id: String,
    pub revision: u64,
    pub image: String,
    pub image_size: [u32; 2],
    pub rows: usize,
    pub cols: usize,
    pub created: DateTime<Utc>,
    pub modified: DateTime<Utc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProjectView {
    pub id: String,
    pub revision: u64,
    pub annotation: AnnotationRecord,
    pub valid_steps: Vec<usize>,
    pub created: DateTime<Utc>,
    pub modified: DateTime<Utc>,
}

impl From<&Project> for ProjectView {
    fn from(p: &Project) -> Self {
        Self {
            id: p.id.clone(),
            revision: p.revision,
            annotation: p.annotation.clone(),
            valid_steps: common_valid_steps(p.annotation.grid.rows, p.annotation.grid.cols),
            created: p.created,
            modified: p.modified,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PointsUpdate {
    pub points: Vec<[f64; 2]>,
    pub revision: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportView {
    pub id: String,
    pub revision: u64,
    pub annotation: AnnotationRecord,
    /// Base64 of the CPBM backward map, present when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backward_map_cpbm: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_size: Option<[u32; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_method: Option<String>,
}

fn bad(msg: impl Into<String>) -> StoreError {
    StoreError::BadRequest(msg.into())
}

async fn list_projects(State(store): State<Arc<Store>>) -> ApiResult<Json<Vec<ProjectSummary>>> {
    let list = blocking(move || Ok(store.list())).await?;
    Ok(Json(
        list.iter()
            .map(|p| ProjectSummary {
                id: p.id.clone(),
                revision: p.revision,
                image: p.annotation.image.clone(),
                image_size: p.annotation.image_size,
                rows: p.annotation.grid.rows,
                cols: p.annotation.grid.cols,
                created: p.created,
                modified: p.modified,
            })
            .collect(),
    ))
}

/// Multipart fields: `image` (file, required), `init` (`uniform` or
/// `from-annotation`, default `uniform`), `rows`/`cols` (uniform grid size, default
/// 31), `annotation` (AnnotationRecord JSON, required for `from-annotation`).
async fn create_project(State(store): State<Arc<Store>>, mut form: Multipart) -> ApiResult<Response> {
    let mut image: Option<(Vec<u8>, Option<String>)> = None;
    let mut rows: Option<usize> = None;
    let mut cols: Option<usize> = None;
    let mut init = String::from("uniform");
    let mut annotation: Option<String> = None;
    while let Some(field) = form.next_field().await.map_err(|e| bad(format!("multipart: {e}")))? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "image" => {
                let file_name = field.file_name().map(str::to_string);
                let bytes = field.bytes().await.map_err(|e| bad(format!("image field: {e}")))?;
                image = Some((bytes.to_vec(), file_name));
            }
            "rows" | "cols" | "init" | "annotation" => {
                let text = field.text().await.map_err(|e| bad(format!("{name} field: {e}")))?;
                let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| bad(format!("{name} must be an integer")));
                match name.as_str() {
                    "rows" => rows = Some(parse(&text)?),
                    "cols" => cols = Some(parse(&text)?),
                    "init" => init = text.trim().to_string(),
                    _ => annotation = Some(text),
                }
            }
            other => return Err(bad(format!("unexpected field {other:?}"))),
        }
    }
    let (bytes, file_name) = image.ok_or_else(|| bad("missing image field"))?;
    let init = match init.as_str() {
        "uniform" => Init::Uniform {
            rows: rows.unwrap_or(31),
            cols: cols.unwrap_or(31),
        },
        "from-annotation" => {
            let text = annotation.ok_or_else(|| bad("from-annotation needs an annotation field"))?;
            let record = AnnotationRecord::from_json(&text)?;
            for (given, actual, what) in [(rows, record.grid.rows, "rows"), (cols, record.grid.cols, "cols")] {
                if given.is_some_and(|g| g != actual) {
                    return Err(bad(format!("{what} does not match the annotation grid ({actual})")));
                }
            }
            Init::FromAnnotation(record)
        }
        other => return Err(bad(format!("unknown init {other:?}; expected uniform or from-annotation"))),
    };
    let project = blocking(move || store.create(&bytes, file_name.as_deref(), init)).await?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            id: project.id.clone(),
            revision: project.revision,
        }),
    )
        .into_response())
}

async fn get_project(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<ProjectView>> {
    let p = store.get(&id)?;
    Ok(Json(ProjectView::from(&*p)))
}

async fn update_points(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Result<Json<PointsUpdate>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(update) = body.map_err(|e| bad(e.body_text()))?;
    let p = blocking(move || store.update_points(&id, update.points, update.revision)).await?;
    Ok(Json(json!({ "id": p.id, "revision": p.revision })))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn get_image(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png(blocking(move || store.image_png(&id)).await?))
}

#[derive(Debug, Deserialize)]
struct PreviewQuery {
    method: Option<String>,
    step: Option<usize>,
    max_side: Option<u32>,
}

async fn get_preview(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    query: Result<Query<PreviewQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query.map_err(|e| bad(e.body_text()))?;
    let method = match q.method.as_deref() {
        None => Method::Linear,
        Some(m) => m.parse::<Method>()?,
    };
    let key = PreviewKey {
        method,
        step: q.step.unwrap_or(1),
        max_side: q.max_side.unwrap_or(DEFAULT_PREVIEW_SIDE),
    };
    Ok(png(blocking(move || store.preview(&id, key)).await?))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    include_map: Option<String>,
}

async fn export(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Json<ExportView>> {
    let include_map = match q.include_map.as_deref() {
        None | Some("false") | Some("0") => false,
        Some("true") | Some("1") | Some("") => true,
        Some(other) => return Err(bad(format!("include_map must be true or false, got {other:?}"))),
    };
    let e = blocking(move || store.export(&id, include_map)).await?;
    let map_size = e.map_cpbm.as_ref().map(|_| {
        let (w, h) = e.annotation.reference_spec().map(|s| s.output_size()).unwrap_or((0, 0));
        [w, h]
    });
    Ok(Json(ExportView {
        backward_map_cpbm: e
            .map_cpbm
            .as_ref()
            .map(|b| base64::engine::general_purpose::STANDARD.encode(b)),
        map_size,
        map_method: map_size.map(|_| DewarpOptions::default().method.to_string()),
        id: e.id,
        revision: e.revision,
        annotation: e.annotation,
    }))
}
