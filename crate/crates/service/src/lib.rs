//! HTTP API over an [`InferenceSession`] and a shade catalog.
//!
//! | method | path          | body                                   | answer                          |
//! |--------|---------------|----------------------------------------|---------------------------------|
//! | POST   | `/estimate`   | `image`, `region`, `top_k`             | `color`, `recommendations`      |
//! | POST   | `/synthesize` | `image`, `target`, `region`            | `image`, `width`, `height`      |
//! | POST   | `/transfer`   | `source`, `reference`, `region`        | `image`, `estimated`            |
//! | GET    | `/shades`     | query `l`, `a`, `b`, `top_k` (optional) | catalog, ranked when queried    |
//! | GET    | `/health`     |                                        | `status`, `version`, `regions`  |
//!
//! Images travel as base64 8-bit PNG (any format the decoder knows is
//! accepted on input). Colors are `[L, a, b]` with four fractional digits.
//! Every body carries `schema_version`; requests may omit it.

mod api;
mod error;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use tint_core::inference::{GanModel, InferenceSession, ShadeCatalog};
use tint_core::weakcolor::RegionKind;
use tokio::sync::Semaphore;

pub use api::*;
pub use error::{ApiError, ServiceError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub lips_checkpoint: Option<PathBuf>,
    pub eyes_checkpoint: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    /// Largest accepted request body.
    pub max_body_bytes: usize,
    /// Requests processed at once; 0 uses the available parallelism.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            lips_checkpoint: None,
            eyes_checkpoint: None,
            catalog: None,
            max_body_bytes: 8 << 20,
            workers: 0,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

pub(crate) struct Shared {
    pub session: InferenceSession,
    pub catalog: ShadeCatalog,
    pub workers: Semaphore,
    pub requests: AtomicU64,
}

/// Immutable models and catalog shared by every request.
#[derive(Clone)]
pub struct AppState {
    pub(crate) shared: Arc<Shared>,
    max_body_bytes: usize,
}

impl AppState {
    pub fn new(session: InferenceSession, catalog: ShadeCatalog, workers: usize, max_body_bytes: usize) -> Self {
        Self {
            shared: Arc::new(Shared {
                session,
                catalog,
                workers: Semaphore::new(workers.max(1)),
                requests: AtomicU64::new(0),
            }),
            max_body_bytes,
        }
    }

    /// Loads the configured checkpoints and catalog.
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let mut session = InferenceSession::new();
        for (kind, path) in [(RegionKind::Lips, &cfg.lips_checkpoint), (RegionKind::Eyeshadow, &cfg.eyes_checkpoint)] {
            if let Some(p) = path {
                session = session.with_model(kind, Box::new(GanModel::load(p)?))?;
                log::info!("loaded {kind:?} model from {}", p.display());
            }
        }
        if session.regions().is_empty() {
            return Err(ServiceError::Config("no checkpoint configured".into()));
        }
        let catalog = match &cfg.catalog {
            Some(p) => ShadeCatalog::load(p)?,
            None => ShadeCatalog::new(Vec::new())?,
        };
        Ok(Self::new(session, catalog, cfg.worker_count(), cfg.max_body_bytes))
    }

    pub fn requests_served(&self) -> u64 {
        self.shared.requests.load(Ordering::Relaxed)
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.max_body_bytes;
    Router::new()
        .route("/estimate", post(api::estimate))
        .route("/synthesize", post(api::synthesize))
        .route("/transfer", post(api::transfer))
        .route("/shades", get(api::shades))
        .route("/health", get(api::health))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(cfg: &ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::from_config(cfg)?;
    let addr: SocketAddr = cfg
        .bind
        .parse()
        .map_err(|e| ServiceError::Config(format!("bind address {:?}: {e}", cfg.bind)))?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
        addr: cfg.bind.clone(),
        source,
    })?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}
