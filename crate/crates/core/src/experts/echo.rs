use std::net::SocketAddr;
use std::thread::JoinHandle;

use axum::extract::Path;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use tokio::sync::oneshot;

use super::mock::mock_payload;
use super::{ExpertResponse, Modality, WireRequest, WireResponse};

/// Loopback server speaking the expert wire schema, answering every batch
/// with mock-expert payloads. Stops when dropped.
pub struct EchoServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl EchoServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for EchoServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn handle(
    Path(spec): Path<String>,
    body: Result<Json<WireRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<WireResponse>, (StatusCode, String)> {
    let bad = |m: String| (StatusCode::BAD_REQUEST, m);
    let name = spec
        .strip_suffix(":batch")
        .ok_or_else(|| bad(format!("unknown operation {spec:?}")))?;
    let modality: Modality = name.parse().map_err(bad)?;
    let Json(req) = body.map_err(|e| bad(e.body_text()))?;
    if req.modality != modality || req.items.iter().any(|i| i.modality != modality) {
        return Err(bad("modality mismatch".into()));
    }
    let items = req
        .items
        .iter()
        .map(|r| match mock_payload(r) {
            Ok(p) => ExpertResponse::ok(&r.task_id, p),
            Err(e) => ExpertResponse::failed(&r.task_id, e),
        })
        .collect();
    Ok(Json(WireResponse { items }))
}

/// Binds `addr` (port 0 picks a free port) and serves on a background thread.
pub fn spawn_echo_server(addr: SocketAddr) -> std::io::Result<EchoServer> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_io()
        .build()?;
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("tokio listener");
            let app = Router::new().route("/v1/experts/{spec}", post(handle));
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(EchoServer {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
