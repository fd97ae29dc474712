//! HTTP service exposing the simulation engine: corpora, prompts,
//! evaluations, simulations, and the response cache, all as JSON endpoints.
//!
//! State is in-memory; corpora are uploaded (or ingested from server-local
//! directories) and referenced by name afterwards. The CLI embeds this
//! router in-process, so the service is also the single code path for local
//! use.

mod handlers;
mod state;

pub use state::{ServiceConfig, ServiceState};

use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(handlers::health))
        .route("/v1/taxonomy", get(handlers::taxonomy))
        .route("/v1/taxonomy/explanations", get(handlers::explanations))
        .route("/v1/corpora", get(handlers::corpora_list).post(handlers::corpora_upload))
        .route("/v1/corpora/{name}", get(handlers::corpus_records))
        .route("/v1/corpora/{name}/stats", get(handlers::corpus_stats))
        .route(
            "/v1/corpora/{name}/sessions/{session_id}/transcript",
            get(handlers::session_transcript),
        )
        .route("/v1/ingest", post(handlers::ingest))
        .route("/v1/prompt", post(handlers::prompt))
        .route("/v1/evaluations", post(handlers::evaluate))
        .route("/v1/render", post(handlers::render))
        .route("/v1/render/comparison", post(handlers::render_comparison_handler))
        .route("/v1/simulations", post(handlers::simulate))
        .route("/v1/cache", get(handlers::cache_export).post(handlers::cache_import))
        .route("/v1/config", get(handlers::config))
        .with_state(state)
}

/// Serve until the listener closes. Bind with port 0 for an ephemeral port
/// (embedded mode) and read it back from the listener before calling this.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
