//! HTTP service backing the control-point editor.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/projects` | multipart `image`, `init`, `rows`, `cols`, `annotation` | 201 `{id, revision}` |
//! | GET | `/projects` | | `[{id, revision, image, image_size, rows, cols, created, modified}]` |
//! | GET | `/projects/{id}` | | `{id, revision, annotation, valid_steps, created, modified}` |
//! | PUT | `/projects/{id}/control-points` | `{points, revision}` | `{id, revision}`; 409 on a stale revision |
//! | GET | `/projects/{id}/image` | | PNG |
//! | GET | `/projects/{id}/preview` | `method`, `step`, `max_side` | PNG |
//! | GET | `/projects/{id}/export` | `include_map` | `{id, revision, annotation, backward_map_cpbm?, map_size?, map_method?}` |
//!
//! Errors are `{"error": code, "message": text}` with `current_revision` added for
//! conflicts and `valid_steps` for rejected steps.

mod api;
mod error;
mod store;

use std::future::Future;
use std::sync::Arc;

pub use api::{router, Created, ExportView, PointsUpdate, ProjectSummary, ProjectView, DEFAULT_PREVIEW_SIDE, MAX_BODY_BYTES};
pub use error::StoreError;
pub use store::{uniform_annotation, Export, Init, PreviewKey, Project, Store, UNIFORM_MARGIN};

pub const DEFAULT_PORT: u16 = 8080;

/// Serves `store` on `listener` until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<Store>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, root = %store.root().display(), "listening");
    }
    axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
