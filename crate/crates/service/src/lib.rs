//! HTTP service around the uslink pipeline: projects pairing one GUI
//! prototype with its user stories, validation with probabilities,
//! component highlights, feedback capture and recommendation insertion.

pub mod api;
pub mod config;
pub mod project;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::http::header::{HeaderName, HeaderValue, CONTENT_TYPE, ETAG, IF_MATCH};
use axum::http::Method;
use axum::Router;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use uslink_core::fewshot::builtin_pool;
use uslink_core::gateway::Gateway;
use uslink_core::pipeline::Pipeline;
use uslink_core::prompt::{PromptEngine, Templates};

pub use api::AppState;
pub use config::ServiceConfig;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error(transparent)]
    Gateway(#[from] uslink_core::gateway::GatewayError),
    #[error(transparent)]
    Prompt(#[from] uslink_core::prompt::PromptError),
    #[error("invalid CORS origin {0:?}")]
    Cors(String),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pipeline with the configured backend and the bundled example pool.
pub fn build_pipeline(cfg: &ServiceConfig) -> Result<Pipeline, ServiceError> {
    let backend = cfg.resolve_backend()?;
    let gateway = Gateway::from_config(&backend)?;
    let templates = match &cfg.templates_dir {
        Some(dir) => Templates::from_dir(dir)?,
        None => Templates::default(),
    };
    Ok(Pipeline::new(
        PromptEngine::new(templates, backend.model.clone()),
        gateway,
        builtin_pool(),
    ))
}

pub fn build_state(cfg: &ServiceConfig) -> Result<AppState, ServiceError> {
    Ok(AppState {
        store: Arc::new(store::ProjectStore::open(&cfg.data_dir)?),
        pipeline: Arc::new(build_pipeline(cfg)?),
    })
}

fn cors(origins: &[String]) -> Result<CorsLayer, ServiceError> {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([
            CONTENT_TYPE,
            IF_MATCH,
            HeaderName::from_static(api::EXPECTED_REVISION),
        ])
        .expose_headers([ETAG]);
    if origins.is_empty() {
        return Ok(layer.allow_origin(Any));
    }
    let list = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| ServiceError::Cors(o.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(list)))
}

pub fn app(state: AppState, cfg: &ServiceConfig) -> Result<Router, ServiceError> {
    Ok(api::router(state).layer(cors(&cfg.cors_origins)?))
}

/// Serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = build_state(&cfg)?;
    let router = app(state, &cfg)?;
    let addr: SocketAddr = format!("{}:{}", cfg.host, cfg.port)
        .parse()
        .map_err(|_| config::ConfigError::Invalid(format!("bad listen address {}:{}", cfg.host, cfg.port)))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
