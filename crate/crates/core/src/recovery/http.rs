//! HTTP transport: an axum recovery server and a blocking reqwest client.

use std::net::SocketAddr;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use tokio::sync::oneshot;

use super::{
    parse_recovery_path, parse_recovery_response, serialize_recovery_response, server_code_from_host, split_url,
    AssetFetcher, RecoveryClient, RecoveryError, RecoveryResponse, SharedRegistry, RECOVERY_PATH,
    REPLICA_MEDIA_TYPE,
};

#[derive(Clone)]
struct AppState {
    registry: SharedRegistry,
    base_domain: Option<String>,
}

impl AppState {
    fn server_code(&self, headers: &HeaderMap) -> Option<u32> {
        let host = headers.get(header::HOST)?.to_str().ok()?;
        server_code_from_host(host, self.base_domain.as_deref())
    }
}

fn status_for(e: &RecoveryError) -> StatusCode {
    match e {
        RecoveryError::NotFound => StatusCode::NOT_FOUND,
        RecoveryError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn recovery(
    State(state): State<AppState>,
    Path(binx): Path<String>,
    RawQuery(query): RawQuery,
    headers: HeaderMap,
) -> Response {
    let Some(code) = state.server_code(&headers) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let mut path = format!("{RECOVERY_PATH}{binx}");
    if let Some(q) = query {
        path.push('?');
        path.push_str(&q);
    }
    let served = parse_recovery_path(code, &path)
        .and_then(|req| state.registry.read().unwrap().serve_recovery(&req))
        .and_then(|resp| serialize_recovery_response(&resp));
    match served {
        Ok((content_type, body)) => ([(header::CONTENT_TYPE, content_type)], body).into_response(),
        Err(e) => {
            tracing::debug!(%e, %path, "recovery request refused");
            (status_for(&e), e.to_string()).into_response()
        }
    }
}

async fn asset(State(state): State<AppState>, Path(dhs_id): Path<String>, headers: HeaderMap) -> Response {
    if state.server_code(&headers).is_none() {
        return StatusCode::NOT_FOUND.into_response();
    }
    match state.registry.read().unwrap().asset(&dhs_id) {
        Some(bytes) => ([(header::CONTENT_TYPE, REPLICA_MEDIA_TYPE.to_string())], bytes).into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/a336/recovery/{binx}", get(recovery))
        .route("/assets/{dhs_id}", get(asset))
        .with_state(state)
}

/// A running recovery server on its own runtime thread. Dropping it shuts
/// the server down.
pub struct RecoveryServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl RecoveryServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RecoveryServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `listen` (port 0 picks a free port) and serves the registry. Hosts
/// must be watermark authorities under `base_domain` when one is given.
pub fn spawn_server(
    registry: SharedRegistry,
    base_domain: Option<String>,
    listen: SocketAddr,
) -> Result<RecoveryServer, RecoveryError> {
    let listener = std::net::TcpListener::bind(listen).map_err(|e| RecoveryError::Io(format!("bind {listen}: {e}")))?;
    listener.set_nonblocking(true).map_err(|e| RecoveryError::Io(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| RecoveryError::Io(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(AppState { registry, base_domain });
    let thread = std::thread::Builder::new()
        .name("recovery-server".into())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })
        .map_err(|e| RecoveryError::Io(e.to_string()))?;
    tracing::info!(%addr, "recovery server listening");
    Ok(RecoveryServer { addr, shutdown: Some(tx), thread: Some(thread) })
}

/// Blocking HTTP client. Hosts under an override domain are contacted over
/// plain HTTP at the mapped address with the original `Host` header.
pub struct HttpRecoveryClient {
    client: reqwest::blocking::Client,
    overrides: Vec<(String, SocketAddr)>,
}

impl HttpRecoveryClient {
    pub fn new() -> Result<Self, RecoveryError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| RecoveryError::Transport(e.to_string()))?;
        Ok(HttpRecoveryClient { client, overrides: Vec::new() })
    }

    /// Routes `domain` and its subdomains to `addr`.
    pub fn with_resolve(mut self, domain: &str, addr: SocketAddr) -> Self {
        self.overrides.push((domain.trim_end_matches('.').to_ascii_lowercase(), addr));
        self
    }

    fn get(&self, url: &str) -> Result<(Option<String>, Vec<u8>), RecoveryError> {
        let (host, path) = split_url(url)?;
        let host = host.to_ascii_lowercase();
        let target = self
            .overrides
            .iter()
            .find(|(d, _)| host == *d || host.strip_suffix(d.as_str()).is_some_and(|p| p.ends_with('.')))
            .map(|(_, addr)| format!("http://{addr}{path}"));
        let request = match &target {
            Some(t) => self.client.get(t).header(reqwest::header::HOST, host.as_str()),
            None => self.client.get(url),
        };
        let resp = request.send().map_err(|e| RecoveryError::Transport(e.to_string()))?;
        match resp.status() {
            s if s.is_success() => {}
            reqwest::StatusCode::NOT_FOUND => return Err(RecoveryError::NotFound),
            s => return Err(RecoveryError::Transport(format!("{url}: HTTP {s}"))),
        }
        let content_type =
            resp.headers().get(reqwest::header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).map(str::to_string);
        let body = resp.bytes().map_err(|e| RecoveryError::Transport(e.to_string()))?;
        Ok((content_type, body.to_vec()))
    }
}

impl RecoveryClient for HttpRecoveryClient {
    fn recover(&self, url: &str) -> Result<RecoveryResponse, RecoveryError> {
        let (content_type, body) = self.get(url)?;
        let content_type = content_type.ok_or_else(|| RecoveryError::MalformedMultipart("no content type".into()))?;
        parse_recovery_response(&body, &content_type)
    }
}

impl AssetFetcher for HttpRecoveryClient {
    fn fetch_asset(&self, uri: &str) -> Result<Vec<u8>, RecoveryError> {
        Ok(self.get(uri)?.1)
    }
}
