//! Concept search and video ranking service.
//!
//! `GET /api/search?q=` finds concepts, `GET /api/videos?concept=&mode=`
//! lists a concept's videos by relevance or by the model's prediction for a
//! student, and `POST /api/watch` feeds watches back into that student's
//! history. Errors are JSON objects `{error, detail}`.

pub mod error;
mod http;
pub mod service;
pub mod session;

use std::net::SocketAddr;
use std::sync::Arc;

pub use error::{ServeError, ServeResult};
pub use http::router;
pub use service::{Mode, Service};

/// Serves on an already-bound listener until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<Service>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}
