//! HTTP transport for the reduced-basis middleware.
//!
//! [`basis_api::routes`] exposes a [`rbm_core::BasisServer`];
//! [`query_api::routes`] exposes a [`rbm_core::Middleware`] to front ends;
//! [`HttpChannel`] lets a middleware reach a remote basis server.

pub mod basis_api;
pub mod channel;
pub mod error;
pub mod query_api;
pub mod wire;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use rbm_core::{BasisServer, Middleware};

pub use channel::HttpChannel;
pub use error::{ApiError, ErrorBody};

/// One router for whichever roles this process plays.
pub fn app(server: Option<Arc<BasisServer>>, middleware: Option<Arc<Middleware>>) -> Router {
    let mut router = Router::new();
    if let Some(server) = server {
        router = router.merge(basis_api::routes(server));
    }
    if let Some(mw) = middleware {
        router = router.merge(query_api::routes(mw));
    }
    router
}

/// Serves `router` until the process ends.
pub async fn serve(addr: SocketAddr, router: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router).await
}
