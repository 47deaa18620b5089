//! Live negotiations between people and trained agents over HTTP.
//!
//! A person gets the item counts and their own values only. They chat with
//! structured acts or free text, enter the agreed deal once someone selects,
//! may walk away after their first turn, and fill in a short survey at the
//! end. Sessions are stored as JSON snapshots under the data directory.

pub mod api;
pub mod error;
pub mod service;
pub mod session;
pub mod store;
pub mod view;

pub use api::router;
pub use error::ArenaError;
pub use service::{Arena, ArenaConfig, CreateSession, LoadedAgent};

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(arena: std::sync::Arc<Arena>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(arena)).await
}
