//! Long-running node for the educational-records network: HTTP API,
//! append-only chain file, strict replay at startup.

pub mod api;
pub mod config;
mod error;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use config::{init_data_dir, issue_card, InitOptions, InitReport, NetworkFile, NodeConfig};
pub use error::{status_for, ApiError};
pub use state::{Node, NodeError};

/// A bound, not yet running, server.
pub struct Server {
    listener: tokio::net::TcpListener,
    node: Arc<Node>,
}

impl Server {
    /// Replays the chain and binds the listen address. Fails on a corrupt
    /// chain file or a taken port.
    pub async fn bind(config: NodeConfig) -> Result<Self, NodeError> {
        let addr = config.listen;
        let node = Arc::new(Node::open(config)?);
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| NodeError::Bind { addr, source })?;
        Ok(Server { listener, node })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn node(&self) -> Arc<Node> {
        self.node.clone()
    }

    pub async fn run(self) -> Result<(), NodeError> {
        tracing::info!(addr = %self.local_addr(), "listening");
        axum::serve(self.listener, api::router(self.node)).await.map_err(NodeError::Serve)
    }

    /// Runs until `shutdown` resolves.
    pub async fn run_until(
        self,
        shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    ) -> Result<(), NodeError> {
        axum::serve(self.listener, api::router(self.node))
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(NodeError::Serve)
    }
}

/// Binds and serves until interrupted.
pub async fn serve(config: NodeConfig) -> Result<(), NodeError> {
    let server = Server::bind(config).await?;
    server
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
