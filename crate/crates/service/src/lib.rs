//! HTTP+JSON front end for the setpoint automation loop.
//!
//! One session at a time runs a [`ClosedLoop`] in scaled real time. A
//! person at the panel (or the scenario's synthetic driver) is the driver;
//! the panel polls `GET /api/state` and posts setpoint changes and handover
//! decisions.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/api/state` | |
//! | GET | `/api/metrics` | (CSV response) |
//! | POST | `/api/setpoint` | `{index, value}` |
//! | POST | `/api/handover` | `{index, decision: "accept" \| "reject"}` |
//! | POST | `/api/release` | `{index}` |
//! | POST | `/api/session` | `{mode, scenario?, profile?, user_type?, time_scale?}` |
//! | DELETE | `/api/session` | |
//! | POST | `/api/pause`, `/api/resume` | |
//!
//! Failures always carry a `{error_code, message, detail}` document.

pub mod api;
pub mod error;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use autoclima_core::profile::{select_pretrained, Profile, UserType};
use autoclima_core::sim::run::{ClosedLoop, LoopOptions, TrainingMode};
use autoclima_core::sim::Scenario;
use axum::http::StatusCode;

pub use api::router;
pub use error::ApiError;
pub use session::{CommandAck, DriverMode, Request, RunStatus, SessionHandle, StateDocument};

pub const DEFAULT_PORT: u16 = 8732;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Mode for sessions whose request does not name one.
    pub default_mode: DriverMode,
    /// Directory of library profiles for `user_type` session requests.
    pub library_dir: Option<PathBuf>,
    /// Built panel bundle served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            default_mode: DriverMode::Human,
            library_dir: None,
            static_dir: None,
        }
    }
}

/// What a new session runs.
#[derive(Debug, Clone)]
pub struct SessionSetup {
    pub mode: DriverMode,
    pub scenario: Scenario,
    pub profile: Option<Profile>,
    pub time_scale: f64,
}

impl SessionSetup {
    /// A day of the reference weather in real time.
    pub fn reference(mode: DriverMode) -> Self {
        Self {
            mode,
            scenario: Scenario::reference(24.0 * 3600.0),
            profile: None,
            time_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    config: ServiceConfig,
    session: Mutex<Option<SessionHandle>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                session: Mutex::new(None),
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn session(&self) -> Result<SessionHandle, ApiError> {
        let guard = self.inner.session.lock().expect("session lock");
        guard.as_ref().filter(|h| h.is_alive()).cloned().ok_or_else(ApiError::no_session)
    }

    /// Library profile for a user type, from the configured library.
    pub fn library_profile(&self, name: &str) -> Result<Profile, ApiError> {
        let t: UserType = name.parse().map_err(|_| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_profile", format!("unknown user type `{name}`"))
                .with_detail(serde_json::json!({ "path": "user_type", "allowed": UserType::ALL.map(UserType::as_str) }))
        })?;
        let dir = self.config().library_dir.as_ref().ok_or_else(|| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no_library", "the service was started without a profile library")
        })?;
        select_pretrained(dir, t).map_err(|e| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_profile", e.to_string())
                .with_detail(serde_json::json!({ "path": e.field() }))
        })
    }

    /// Start the one session of this service. Must run inside a Tokio runtime.
    pub fn start_session(&self, setup: SessionSetup) -> Result<SessionHandle, ApiError> {
        if !(setup.time_scale.is_finite() && setup.time_scale > 0.0) {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_time_scale", "time_scale must be a positive number")
                .with_detail(serde_json::json!({ "path": "time_scale" })));
        }
        let mut guard = self.inner.session.lock().expect("session lock");
        if guard.as_ref().is_some_and(|h| h.is_alive()) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "session_exists",
                "a session is already running; DELETE /api/session to end it",
            ));
        }
        let options = LoopOptions {
            training: TrainingMode::External,
            synthetic_driver: setup.mode == DriverMode::Synthetic,
            start: setup.profile.as_ref().map(Profile::start_model),
            ..LoopOptions::default()
        };
        let lp = ClosedLoop::new(setup.scenario, options).map_err(|e| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_scenario", e.to_string())
        })?;
        let handle = session::spawn(lp, setup.mode, setup.time_scale);
        *guard = Some(handle.clone());
        Ok(handle)
    }

    pub fn end_session(&self) -> Option<SessionHandle> {
        self.inner.session.lock().expect("session lock").take()
    }
}

/// Serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
