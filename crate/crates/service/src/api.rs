//! HTTP routes. Errors are JSON objects `{error, message, details}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::Multipart;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use burnscope::clinical::{ClinicalError, IntakeRecord};
use burnscope::image::ImageBuffer;
use burnscope::longitudinal::{compute_deltas, HealingSeries};
use burnscope::mapping::BurnMask;
use burnscope::mesh::parse_ply;
use burnscope::quality::{subsample_frames, summarize_verdicts, validate_image};
use burnscope::reconstruction::export::parse_camera_set;
use burnscope::reconstruction::ScaleReference;
use burnscope::report::{generate_report, ReportError};
use burnscope::store::{
    timeline_entries, AssessmentSession, Demographics, ImageRecord, MaskRecord, MeshInput, StoreError,
};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::jobs::{Engine, SubmitError};
use crate::pipeline::{next_manifest_version, AnalyzeOptions};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::NotFound { .. } => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            StoreError::Invalid(_) => ApiError::invalid(e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Store(s) => s.into(),
            ReportError::Integrity(m) => ApiError::new(StatusCode::CONFLICT, "integrity_error", m),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;
type App = State<Arc<Engine>>;

pub fn router(engine: Arc<Engine>) -> Router {
    let limit = engine.config.max_upload_mb * 1024 * 1024;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/config", get(config))
        .route("/patients", post(create_patient))
        .route("/patients/{id}", get(get_patient))
        .route("/patients/{id}/sessions", post(create_session))
        .route("/patients/{id}/timeline", get(timeline))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/images", post(upload_images))
        .route("/sessions/{id}/masks", post(upload_masks))
        .route("/sessions/{id}/scale", post(set_scale))
        .route("/sessions/{id}/mesh", post(upload_mesh))
        .route("/sessions/{id}/analyze", post(analyze))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/report", get(report))
        .route("/jobs/{id}", get(job_status))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(engine)
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn config(State(app): App) -> Json<Value> {
    Json(serde_json::to_value(&app.config).expect("config serializes"))
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// Runs blocking store or image work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

async fn create_patient(State(app): App, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let demographics: Demographics = if body.is_empty() {
        Demographics::default()
    } else {
        parse_json(&body)?
    };
    let patient = app.store.create_patient(demographics, app.clock.as_ref())?;
    Ok((StatusCode::CREATED, Json(json!(patient))))
}

async fn get_patient(State(app): App, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.store.load_patient(&id)?)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    intake: IntakeRecord,
    /// Capture time; the server clock when absent.
    captured_at: Option<DateTime<Utc>>,
}

async fn create_session(State(app): App, Path(id): Path<String>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: NewSession = parse_json(&body)?;
    app.store.load_patient(&id)?;
    if let Err(e) = req.intake.validate() {
        let fields = match &e {
            ClinicalError::Validation { fields } => fields.clone(),
            _ => Vec::new(),
        };
        return Err(ApiError::invalid(e.to_string()).with_details(json!({ "fields": fields })));
    }
    let mut session = app.store.create_session(&id, req.intake, app.clock.as_ref())?;
    if let Some(t) = req.captured_at {
        session.captured_at = t;
    }
    app.store.persist_session(&session)?;
    Ok((StatusCode::CREATED, Json(json!(session))))
}

async fn get_session(State(app): App, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(app.store.load_session(&id)?)))
}

fn ensure_idle(app: &Engine, session_id: &str) -> ApiResult<()> {
    match app.jobs.active_job(session_id) {
        Some(job_id) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "job_active",
            format!("analysis job {job_id} is still active for this session"),
        )
        .with_details(json!({ "job_id": job_id }))),
        None => Ok(()),
    }
}

struct Part {
    name: String,
    file_name: Option<String>,
    bytes: Vec<u8>,
}

async fn collect_parts(mut multipart: Multipart) -> ApiResult<Vec<Part>> {
    let mut parts = Vec::new();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("cannot read part '{name}': {e}")))?;
        parts.push(Part {
            name,
            file_name,
            bytes: bytes.to_vec(),
        });
    }
    Ok(parts)
}

fn image_extension(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG") {
        "png"
    } else if bytes.starts_with(&[0xff, 0xd8]) {
        "jpg"
    } else {
        "img"
    }
}

async fn upload_images(State(app): App, Path(id): Path<String>, multipart: Multipart) -> ApiResult<Json<Value>> {
    let parts = collect_parts(multipart).await?;
    if parts.is_empty() {
        return Err(ApiError::invalid("no image parts in the request"));
    }
    let _guard = app.lock_session(&id).await;
    ensure_idle(&app, &id)?;
    let engine = Arc::clone(&app);
    blocking(move || {
        let mut session = engine.store.load_session(&id)?;
        let policy = &engine.config.qc;
        let keep = subsample_frames(parts.len(), policy.max_frames);
        let version = next_manifest_version(&engine.store, &id)?;
        let mut records = Vec::new();
        for (slot, &i) in keep.iter().enumerate() {
            let part = &parts[i];
            let label = part.file_name.clone().unwrap_or_else(|| part.name.clone());
            let image = ImageBuffer::decode(&part.bytes).map_err(|e| {
                ApiError::invalid(format!("image '{label}': {e}")).with_details(json!({ "part": label }))
            })?;
            let verdict = validate_image(&image, policy);
            let name = format!("u{version}_image_{slot:02}.{}", image_extension(&part.bytes));
            let artifact = engine.store.write_artifact(&session, &name, &part.bytes)?;
            records.push(ImageRecord {
                artifact,
                original_name: label,
                verdict,
            });
        }
        let dropped: Vec<String> = (0..parts.len())
            .filter(|i| !keep.contains(i))
            .map(|i| parts[i].file_name.clone().unwrap_or_else(|| parts[i].name.clone()))
            .collect();
        let verdicts: Vec<_> = records.iter().map(|r| r.verdict.clone()).collect();
        let set = summarize_verdicts(&verdicts, policy);
        session.images = records;
        session.masks.clear();
        engine.store.persist_session(&session)?;
        let images: Vec<Value> = session
            .images
            .iter()
            .enumerate()
            .map(|(i, r)| json!({ "index": i, "original_name": r.original_name, "verdict": r.verdict }))
            .collect();
        Ok(Json(
            json!({ "images": images, "dropped": dropped, "set_verdict": set }),
        ))
    })
    .await
}

/// Camera views a mask or scale reference may refer to.
fn view_count(engine: &Engine, session: &AssessmentSession) -> ApiResult<usize> {
    if !session.images.is_empty() {
        return Ok(session.images.len());
    }
    if let Some(input) = &session.mesh_input {
        let bytes = engine.store.read_artifact(session, &input.cameras)?;
        let views =
            parse_camera_set(&String::from_utf8_lossy(&bytes)).map_err(|e| ApiError::internal(e.to_string()))?;
        return Ok(views.len());
    }
    Err(ApiError::invalid("upload images or a mesh before referring to views"))
}

async fn upload_masks(State(app): App, Path(id): Path<String>, multipart: Multipart) -> ApiResult<Json<Value>> {
    let parts = collect_parts(multipart).await?;
    if parts.is_empty() {
        return Err(ApiError::invalid("no mask parts in the request"));
    }
    let _guard = app.lock_session(&id).await;
    ensure_idle(&app, &id)?;
    let engine = Arc::clone(&app);
    blocking(move || {
        let mut session = engine.store.load_session(&id)?;
        let views = view_count(&engine, &session)?;
        let version = next_manifest_version(&engine.store, &id)?;
        for part in &parts {
            let view: usize = part.name.parse().map_err(|_| {
                ApiError::invalid(format!("mask part name '{}' must be a view index", part.name))
                    .with_details(json!({ "part": part.name }))
            })?;
            if view >= views {
                return Err(ApiError::invalid(format!("view {view} does not exist ({views} views)")));
            }
            let mask = BurnMask::decode(&part.bytes).map_err(|e| ApiError::invalid(format!("mask {view}: {e}")))?;
            if let Some(img) = session.images.get(view) {
                if (img.verdict.width, img.verdict.height) != (mask.width, mask.height) {
                    return Err(ApiError::invalid(format!(
                        "mask {view} is {}x{} but its image is {}x{}",
                        mask.width, mask.height, img.verdict.width, img.verdict.height
                    )));
                }
            }
            let artifact =
                engine
                    .store
                    .write_artifact(&session, &format!("u{version}_mask_{view:02}.png"), &part.bytes)?;
            session.masks.retain(|m| m.view != view);
            session.masks.push(MaskRecord { view, artifact });
        }
        session.masks.sort_by_key(|m| m.view);
        engine.store.persist_session(&session)?;
        let masks: Vec<usize> = session.masks.iter().map(|m| m.view).collect();
        Ok(Json(json!({ "mask_views": masks })))
    })
    .await
}

async fn set_scale(State(app): App, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let reference: ScaleReference = parse_json(&body)?;
    let finite = reference
        .endpoints_a
        .iter()
        .chain(&reference.endpoints_b)
        .all(|p| p.x.is_finite() && p.y.is_finite());
    if !(reference.known_distance_cm > 0.0 && reference.known_distance_cm.is_finite()) {
        return Err(ApiError::invalid("known_distance_cm must be positive"));
    }
    if reference.view_a == reference.view_b || !finite {
        return Err(ApiError::invalid(
            "the reference needs two distinct views and finite endpoints",
        ));
    }
    let _guard = app.lock_session(&id).await;
    ensure_idle(&app, &id)?;
    let mut session = app.store.load_session(&id)?;
    let views = view_count(&app, &session)?;
    if reference.view_a.max(reference.view_b) >= views {
        return Err(ApiError::invalid(format!(
            "scale reference names a view beyond the {views} available"
        )));
    }
    session.scale_reference = Some(reference);
    app.store.persist_session(&session)?;
    Ok(Json(json!({ "scale_reference": reference })))
}

async fn upload_mesh(State(app): App, Path(id): Path<String>, multipart: Multipart) -> ApiResult<Json<Value>> {
    let parts = collect_parts(multipart).await?;
    let find = |name: &str| {
        parts
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| ApiError::invalid(format!("missing multipart part '{name}'")))
    };
    let (mesh_part, camera_part) = (find("mesh")?, find("cameras")?);
    let ply =
        parse_ply(&String::from_utf8_lossy(&mesh_part.bytes)).map_err(|e| ApiError::invalid(format!("mesh: {e}")))?;
    let views = parse_camera_set(&String::from_utf8_lossy(&camera_part.bytes))
        .map_err(|e| ApiError::invalid(format!("cameras: {e}")))?;
    if views.is_empty() {
        return Err(ApiError::invalid("camera set is empty"));
    }
    let _guard = app.lock_session(&id).await;
    ensure_idle(&app, &id)?;
    let mut session = app.store.load_session(&id)?;
    if !session.images.is_empty() && session.images.len() != views.len() {
        return Err(ApiError::invalid(format!(
            "camera set has {} views but the session has {} images",
            views.len(),
            session.images.len()
        )));
    }
    let version = next_manifest_version(&app.store, &id)?;
    let mesh = app
        .store
        .write_artifact(&session, &format!("u{version}_input_mesh.ply"), &mesh_part.bytes)?;
    let cameras = app
        .store
        .write_artifact(&session, &format!("u{version}_input_cameras.txt"), &camera_part.bytes)?;
    session.mesh_input = Some(MeshInput { mesh, cameras });
    app.store.persist_session(&session)?;
    Ok(Json(json!({
        "vertices": ply.mesh.vertices.len(),
        "faces": ply.mesh.faces.len(),
        "units": ply.mesh.units,
        "views": views.len(),
    })))
}

async fn analyze(State(app): App, Path(id): Path<String>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let options: AnalyzeOptions = if body.is_empty() {
        AnalyzeOptions::default()
    } else {
        parse_json(&body)?
    };
    if let Some(k) = options.intrinsics {
        k.to_intrinsics().map_err(|e| ApiError::invalid(e.to_string()))?;
    }
    let _guard = app.lock_session(&id).await;
    let session = app.store.load_session(&id)?;
    ensure_idle(&app, &id)?;
    let policy = &app.config.qc;
    let verdicts: Vec<_> = session.images.iter().map(|r| r.verdict.clone()).collect();
    let set = summarize_verdicts(&verdicts, policy);
    if !set.passed && session.mesh_input.is_none() {
        let message = if set.reasons.is_empty() {
            format!("a minimum of {} accepted images is required", policy.min_images)
        } else {
            set.reasons.join("; ")
        };
        return Err(ApiError::invalid(message).with_details(json!({
            "accepted_count": set.accepted_count,
            "min_images": policy.min_images,
            "reasons": set.reasons,
        })));
    }
    match app.submit(&id, options) {
        Ok(job) => Ok((StatusCode::ACCEPTED, Json(json!(job)))),
        Err(SubmitError::Conflict(job_id)) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "job_active",
            format!("analysis job {job_id} is still active for this session"),
        )
        .with_details(json!({ "job_id": job_id }))),
        Err(SubmitError::QueueFull) => Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "queue_full",
            "the analysis queue is full; retry later",
        )),
    }
}

async fn job_status(State(app): App, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    match app.jobs.get(&id) {
        Some(job) => Ok(Json(json!(job))),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("job '{id}' not found"),
        )),
    }
}

async fn metrics(State(app): App, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = app.store.load_session(&id)?;
    let Some(m) = &session.metrics else {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_available",
            "no metrics have been computed for this session",
        ));
    };
    Ok(Json(json!({
        "session_id": session.session_id,
        "metrics": m,
        "confidence": session.confidence,
        "alignment": session.alignment,
    })))
}

fn patient_series(app: &Engine, patient_id: &str) -> ApiResult<Option<HealingSeries>> {
    let entries = timeline_entries(&app.store.list_sessions(patient_id)?);
    if entries.is_empty() {
        return Ok(None);
    }
    compute_deltas(&entries)
        .map(Some)
        .map_err(|e| ApiError::invalid(e.to_string()))
}

async fn timeline(State(app): App, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let series = patient_series(&app, &id)?.unwrap_or(HealingSeries {
        timepoints: Vec::new(),
        healing_rate_cm2_per_day: None,
        projected_recovery_day: None,
        warnings: Vec::new(),
    });
    Ok(Json(json!(series)))
}

#[derive(Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn report(State(app): App, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    let html = match q.format.as_deref() {
        None | Some("structured") | Some("json") => false,
        Some("html") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown report format '{other}'"))),
    };
    let session = app.store.load_session(&id)?;
    let (bytes, stored) = match session.reports.last() {
        Some(r) => (
            app.store
                .read_artifact(&session, if html { &r.html } else { &r.structured })?,
            true,
        ),
        None => {
            let patient = app.store.load_patient(&session.patient_id)?;
            let series = patient_series(&app, &session.patient_id).ok().flatten();
            let doc = generate_report(&patient, &session, series.as_ref(), app.clock.now())?;
            (
                if html {
                    doc.to_html().into_bytes()
                } else {
                    doc.to_json()
                },
                false,
            )
        }
    };
    let content_type = if html {
        "text/html; charset=utf-8"
    } else {
        "application/json"
    };
    Ok((
        [
            (header::CONTENT_TYPE, content_type),
            (
                header::HeaderName::from_static("x-report-stored"),
                if stored { "true" } else { "false" },
            ),
        ],
        bytes,
    )
        .into_response())
}
