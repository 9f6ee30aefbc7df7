use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use autoclima_core::profile::Profile;
use autoclima_core::sim::Scenario;

use crate::error::ApiError;
use crate::session::{Answer, DriverMode, Request};
use crate::{AppState, SessionSetup};

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/state", get(get_state))
        .route("/metrics", get(get_metrics))
        .route("/setpoint", post(post_setpoint))
        .route("/handover", post(post_handover))
        .route("/release", post(post_release))
        .route("/session", post(post_session).delete(delete_session))
        .route("/pause", post(post_pause))
        .route("/resume", post(post_resume))
        .fallback(api_not_found)
        .method_not_allowed_fallback(method_not_allowed);
    let app = Router::new().nest("/api", api);
    let app = match state.config().static_dir.clone() {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(placeholder_index),
    };
    app.with_state(state)
}

/// Strict JSON body parsing: the body must be one object, and errors name
/// the offending path.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::bad_body(e.to_string(), ""))?;
    if !value.is_object() {
        return Err(ApiError::bad_body("expected a JSON object", ""));
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ApiError::bad_body(e.into_inner().to_string(), if path == "." { "" } else { &path })
    })
}

fn respond(answer: Answer) -> Response {
    match answer {
        Answer::State(s) => Json(s).into_response(),
        Answer::Ack(a) => Json(a).into_response(),
        Answer::Csv(text) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], text).into_response(),
    }
}

async fn call(state: &AppState, request: Request) -> Result<Response, ApiError> {
    let handle = state.session()?;
    Ok(respond(handle.call(request).await?))
}

async fn get_state(State(state): State<AppState>) -> Result<Response, ApiError> {
    call(&state, Request::State).await
}

async fn get_metrics(State(state): State<AppState>) -> Result<Response, ApiError> {
    call(&state, Request::Metrics).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetpointBody {
    index: usize,
    value: f64,
}

async fn post_setpoint(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let b: SetpointBody = parse(&body)?;
    call(&state, Request::Setpoint { index: b.index, value: b.value }).await
}

#[derive(Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum Decision {
    Accept,
    Reject,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HandoverBody {
    index: usize,
    decision: Decision,
}

async fn post_handover(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let b: HandoverBody = parse(&body)?;
    let accept = matches!(b.decision, Decision::Accept);
    call(&state, Request::Handover { index: b.index, accept }).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexBody {
    index: usize,
}

async fn post_release(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let b: IndexBody = parse(&body)?;
    call(&state, Request::Release { index: b.index }).await
}

async fn post_pause(State(state): State<AppState>) -> Result<Response, ApiError> {
    call(&state, Request::Pause).await
}

async fn post_resume(State(state): State<AppState>) -> Result<Response, ApiError> {
    call(&state, Request::Resume).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionBody {
    mode: Option<DriverMode>,
    /// Inline scenario document; the reference day when absent.
    scenario: Option<Value>,
    /// Inline profile document to start from.
    profile: Option<Value>,
    /// Library archetype to start from, e.g. `cold_sensitive`.
    user_type: Option<String>,
    time_scale: Option<f64>,
}

async fn post_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let b: SessionBody = parse(&body)?;
    let mut setup = SessionSetup::reference(b.mode.unwrap_or(state.config().default_mode));
    if let Some(t) = b.time_scale {
        setup.time_scale = t;
    }
    if let Some(doc) = b.scenario {
        setup.scenario = Scenario::from_json(&doc.to_string()).map_err(|e| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scenario", e.to_string())
                .with_detail(json!({ "path": "scenario" }))
        })?;
    }
    setup.profile = match (b.profile, b.user_type) {
        (Some(_), Some(_)) => {
            return Err(ApiError::bad_body("give either `profile` or `user_type`, not both", "profile"));
        }
        (Some(doc), None) => Some(Profile::from_json(&doc.to_string()).map_err(|e| {
            let path = e.field().map(|f| if f.is_empty() { "profile".to_string() } else { format!("profile.{f}") });
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_profile", e.to_string())
                .with_detail(json!({ "path": path }))
        })?),
        (None, Some(t)) => Some(state.library_profile(&t)?),
        (None, None) => None,
    };
    let handle = state.start_session(setup)?;
    let mut response = respond(handle.call(Request::State).await?);
    *response.status_mut() = StatusCode::CREATED;
    Ok(response)
}

async fn delete_session(State(state): State<AppState>) -> Result<Response, ApiError> {
    let handle = state.end_session().filter(|h| h.is_alive()).ok_or_else(ApiError::no_session)?;
    respond(handle.call(Request::Stop).await?);
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn api_not_found(uri: Uri) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no endpoint at {}", uri.path()))
}

async fn method_not_allowed(uri: Uri) -> ApiError {
    ApiError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        "method_not_allowed",
        format!("method not supported on {}", uri.path()),
    )
}

async fn placeholder_index() -> Html<&'static str> {
    Html(
        "<!doctype html><title>autoclima</title>\
         <p>No panel bundle configured. The API is under <code>/api</code>, \
         e.g. <a href=\"/api/state\">/api/state</a>.</p>",
    )
}
