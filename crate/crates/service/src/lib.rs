//! HTTP inference service: sample catalog, attribute transfer, code mixing
//! and interpolation over one loaded checkpoint. Request and response bodies
//! are JSON; images travel as base64 PNG. The JSON schema of every body is
//! served under `/api/spec`.

mod error;
mod handlers;
mod state;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::routing::{get, post};
use axum::Router;

pub use error::ApiError;
pub use handlers::{
    InterpolateRequest, InterpolateResponse, MixComponent, MixRequest, MixResponse, Sample, SamplesPage, SchemaAttribute,
    SchemaResponse, TransferRequest, TransferResponse,
};
pub use state::{png_base64, CatalogEntry, CatalogSplit, ServiceState};

/// State slot shared by every handler. Empty while the checkpoint loads;
/// handlers answer 503 until it is filled.
pub type Shared = Arc<OnceLock<ServiceState>>;

/// Published body schemas, by name.
pub const SCHEMAS: [(&str, &str); 9] = [
    ("schema_response", include_str!("../schemas/schema_response.json")),
    ("samples_response", include_str!("../schemas/samples_response.json")),
    ("transfer_request", include_str!("../schemas/transfer_request.json")),
    ("transfer_response", include_str!("../schemas/transfer_response.json")),
    ("mix_request", include_str!("../schemas/mix_request.json")),
    ("mix_response", include_str!("../schemas/mix_response.json")),
    ("interpolate_request", include_str!("../schemas/interpolate_request.json")),
    ("interpolate_response", include_str!("../schemas/interpolate_response.json")),
    ("error", include_str!("../schemas/error.json")),
];

pub fn schemas() -> BTreeMap<&'static str, serde_json::Value> {
    SCHEMAS
        .iter()
        .map(|(name, text)| (*name, serde_json::from_str(text).expect("bundled schema is valid JSON")))
        .collect()
}

pub fn router(shared: Shared) -> Router {
    Router::new()
        .route("/api/schema", get(handlers::schema))
        .route("/api/samples", get(handlers::samples))
        .route("/api/transfer", post(handlers::transfer))
        .route("/api/mix", post(handlers::mix))
        .route("/api/interpolate", post(handlers::interpolate))
        .route("/api/spec", get(handlers::spec_index))
        .route("/api/spec/:name", get(handlers::spec_one))
        .route("/api/stats", get(handlers::stats))
        .with_state(shared)
}

/// Router over an already loaded state.
pub fn ready_router(state: ServiceState) -> Router {
    let shared: Shared = Arc::new(OnceLock::new());
    let _ = shared.set(state);
    router(shared)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub checkpoint: PathBuf,
    pub addr: SocketAddr,
    pub split: CatalogSplit,
}

/// Binds, then loads the checkpoint in the background while already
/// answering (503) so clients can poll for readiness. Runs until ctrl-c, or
/// returns the load error if the checkpoint cannot be read.
pub async fn serve(options: ServeOptions) -> std::io::Result<()> {
    let shared: Shared = Arc::new(OnceLock::new());
    let listener = tokio::net::TcpListener::bind(options.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let slot = shared.clone();
    let (failed_tx, failed_rx) = tokio::sync::oneshot::channel::<String>();
    tokio::task::spawn_blocking(move || match ServiceState::from_checkpoint(&options.checkpoint, options.split) {
        Ok(state) => {
            tracing::info!(samples = state.catalog.len(), "checkpoint loaded");
            let _ = slot.set(state);
        }
        Err(e) => {
            let _ = failed_tx.send(e.to_string());
        }
    });
    let failure = Arc::new(std::sync::Mutex::new(None));
    let record = failure.clone();
    axum::serve(listener, router(shared))
        .with_graceful_shutdown(async move {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                Ok(msg) = failed_rx => *record.lock().unwrap() = Some(msg),
            }
        })
        .await?;
    let failed = failure.lock().unwrap().take();
    match failed {
        Some(msg) => Err(std::io::Error::new(std::io::ErrorKind::InvalidData, msg)),
        None => Ok(()),
    }
}
