//! HTTP segment server over a baked container directory.
//!
//! Routes (GET and HEAD):
//!
//! - `/manifest.json`
//! - `/groups/{i}/{segment}.bin`
//! - `/group_NNNN/{segment}.bin`, the path recorded in the manifest
//!
//! Every file is loaded into an immutable index at startup. Responses carry a strong ETag
//! derived from the SHA-256 of the body and honour single `bytes=` ranges.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode, Uri};
use axum::response::Response;
use axum::Router;
use bytes::Bytes;
use sha2::{Digest, Sha256};

use crate::codec::container::{read_manifest, MANIFEST_FILE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ServeConfig {
    pub root: PathBuf,
    pub addr: SocketAddr,
    pub cache_control_secs: u32,
    /// Allowed origins; `*` allows any.
    pub cors: Vec<String>,
}

impl ServeConfig {
    pub fn new(root: impl Into<PathBuf>) -> ServeConfig {
        ServeConfig {
            root: root.into(),
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            cache_control_secs: 3600,
            cors: vec!["*".to_string()],
        }
    }
}

#[derive(Debug)]
struct Asset {
    body: Bytes,
    etag: String,
    content_type: &'static str,
}

/// Every servable file, keyed by request path without the leading slash.
#[derive(Debug, Default)]
pub struct ContentIndex {
    assets: HashMap<String, Arc<Asset>>,
}

impl ContentIndex {
    pub fn build(root: &Path) -> Result<ContentIndex> {
        let manifest_path = root.join(MANIFEST_FILE);
        let manifest = read_manifest(&manifest_path)?;
        let mut assets = HashMap::new();
        let load = |p: &Path, content_type| -> Result<Arc<Asset>> {
            let body = Bytes::from(std::fs::read(p)?);
            let etag = format!("\"{}\"", hex::encode(&Sha256::digest(&body)[..16]));
            Ok(Arc::new(Asset {
                body,
                etag,
                content_type,
            }))
        };
        assets.insert(MANIFEST_FILE.to_string(), load(&manifest_path, "application/json")?);
        for g in &manifest.groups {
            for s in &g.segments {
                let asset = load(&root.join(&s.path), "application/octet-stream")?;
                assets.insert(format!("groups/{}/{}.bin", g.index, s.name.name()), asset.clone());
                assets.insert(s.path.clone(), asset);
            }
        }
        Ok(ContentIndex { assets })
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.assets.get(path).map(|a| a.body.as_ref())
    }
}

struct AppState {
    index: ContentIndex,
    cache_control: HeaderValue,
    cors: Vec<String>,
}

enum RangeSpec {
    Full,
    Partial(u64, u64),
    Unsatisfiable,
}

/// Parses a single `bytes=` range against a body of `len` bytes. Anything else serves the full body.
fn parse_range(value: &str, len: u64) -> RangeSpec {
    let Some(spec) = value.trim().strip_prefix("bytes=") else {
        return RangeSpec::Full;
    };
    if spec.contains(',') {
        return RangeSpec::Full;
    }
    let Some((a, b)) = spec.split_once('-') else {
        return RangeSpec::Full;
    };
    let (a, b) = (a.trim(), b.trim());
    let parsed = match (a.is_empty(), b.is_empty()) {
        (true, false) => match b.parse::<u64>() {
            Ok(0) => return RangeSpec::Unsatisfiable,
            Ok(n) => Some((len.saturating_sub(n), len.saturating_sub(1))),
            Err(_) => None,
        },
        (false, true) => a.parse::<u64>().ok().map(|s| (s, len.saturating_sub(1))),
        (false, false) => match (a.parse::<u64>(), b.parse::<u64>()) {
            (Ok(s), Ok(e)) if s <= e => Some((s, e.min(len.saturating_sub(1)))),
            (Ok(_), Ok(_)) => return RangeSpec::Unsatisfiable,
            _ => None,
        },
        (true, true) => None,
    };
    match parsed {
        None => RangeSpec::Full,
        Some((s, _)) if s >= len => RangeSpec::Unsatisfiable,
        Some((s, e)) => RangeSpec::Partial(s, e),
    }
}

fn cors_origin(state: &AppState, headers: &HeaderMap) -> Option<HeaderValue> {
    if state.cors.iter().any(|o| o == "*") {
        return Some(HeaderValue::from_static("*"));
    }
    let origin = headers.get(header::ORIGIN)?.to_str().ok()?;
    state
        .cors
        .iter()
        .any(|o| o == origin)
        .then(|| HeaderValue::from_str(origin).ok())
        .flatten()
}

fn with_cors(mut resp: Response, origin: Option<HeaderValue>) -> Response {
    let h = resp.headers_mut();
    if let Some(o) = origin {
        h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, o);
        h.insert(
            header::ACCESS_CONTROL_EXPOSE_HEADERS,
            HeaderValue::from_static("Content-Length, Content-Range, ETag, Accept-Ranges"),
        );
    }
    h.insert(header::VARY, HeaderValue::from_static("Origin"));
    resp
}

fn status(code: StatusCode) -> Response {
    let mut r = Response::new(Body::empty());
    *r.status_mut() = code;
    r
}

async fn handle(State(state): State<Arc<AppState>>, method: Method, uri: Uri, headers: HeaderMap) -> Response {
    let origin = cors_origin(&state, &headers);
    if method == Method::OPTIONS {
        let mut r = status(StatusCode::NO_CONTENT);
        let h = r.headers_mut();
        h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, HEAD, OPTIONS"));
        h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("Range, If-None-Match"));
        return with_cors(r, origin);
    }
    if method != Method::GET && method != Method::HEAD {
        let mut r = status(StatusCode::METHOD_NOT_ALLOWED);
        r.headers_mut()
            .insert(header::ALLOW, HeaderValue::from_static("GET, HEAD, OPTIONS"));
        return with_cors(r, origin);
    }
    let path = uri.path().trim_start_matches('/');
    let Some(asset) = state.index.assets.get(path) else {
        return with_cors(status(StatusCode::NOT_FOUND), origin);
    };
    let etag = HeaderValue::from_str(&asset.etag).expect("hex etag is a valid header");
    let mut resp = if headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == asset.etag || t.trim() == "*"))
    {
        status(StatusCode::NOT_MODIFIED)
    } else {
        let len = asset.body.len() as u64;
        let range = headers
            .get(header::RANGE)
            .and_then(|v| v.to_str().ok())
            .map_or(RangeSpec::Full, |v| parse_range(v, len));
        let (code, body, content_range) = match range {
            RangeSpec::Full => (StatusCode::OK, asset.body.clone(), None),
            RangeSpec::Partial(s, e) => (
                StatusCode::PARTIAL_CONTENT,
                asset.body.slice(s as usize..=e as usize),
                Some(format!("bytes {s}-{e}/{len}")),
            ),
            RangeSpec::Unsatisfiable => {
                let mut r = status(StatusCode::RANGE_NOT_SATISFIABLE);
                r.headers_mut().insert(
                    header::CONTENT_RANGE,
                    HeaderValue::from_str(&format!("bytes */{len}")).unwrap(),
                );
                return with_cors(r, origin);
            }
        };
        let body_len = body.len();
        let mut r = Response::new(if method == Method::HEAD { Body::empty() } else { Body::from(body) });
        *r.status_mut() = code;
        let h = r.headers_mut();
        h.insert(header::CONTENT_TYPE, HeaderValue::from_static(asset.content_type));
        h.insert(header::CONTENT_LENGTH, HeaderValue::from(body_len));
        if let Some(cr) = content_range {
            h.insert(header::CONTENT_RANGE, HeaderValue::from_str(&cr).unwrap());
        }
        r
    };
    let h = resp.headers_mut();
    h.insert(header::ETAG, etag);
    h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    h.insert(header::CACHE_CONTROL, state.cache_control.clone());
    with_cors(resp, origin)
}

pub fn router(index: ContentIndex, cfg: &ServeConfig) -> Router {
    let state = Arc::new(AppState {
        index,
        cache_control: HeaderValue::from_str(&format!("public, max-age={}", cfg.cache_control_secs))
            .expect("numeric header"),
        cors: cfg.cors.clone(),
    });
    Router::new().fallback(handle).with_state(state)
}

/// A server running on its own thread; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL without a trailing slash.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?)
}

/// Indexes `cfg.root`, binds `cfg.addr` (port 0 picks a free port) and serves in the background.
pub fn spawn(cfg: &ServeConfig) -> Result<ServerHandle> {
    let index = ContentIndex::build(&cfg.root)?;
    let app = router(index, cfg);
    let rt = runtime()?;
    let listener = rt
        .block_on(tokio::net::TcpListener::bind(cfg.addr))
        .map_err(|e| Error::Network(format!("bind {}: {e}", cfg.addr)))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::Builder::new().name("gvv-server".into()).spawn(move || {
        rt.block_on(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serves in the foreground until the process is interrupted.
pub fn serve(cfg: &ServeConfig) -> Result<()> {
    let index = ContentIndex::build(&cfg.root)?;
    let files = index.len();
    let app = router(index, cfg);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(cfg.addr)
            .await
            .map_err(|e| Error::Network(format!("bind {}: {e}", cfg.addr)))?;
        eprintln!("serving {} ({files} paths) on http://{}", cfg.root.display(), listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        let p = |s| match parse_range(s, 1000) {
            RangeSpec::Full => "full".to_string(),
            RangeSpec::Partial(a, b) => format!("{a}-{b}"),
            RangeSpec::Unsatisfiable => "416".to_string(),
        };
        assert_eq!(p("bytes=0-99"), "0-99");
        assert_eq!(p("bytes=900-"), "900-999");
        assert_eq!(p("bytes=-100"), "900-999");
        assert_eq!(p("bytes=990-5000"), "990-999");
        assert_eq!(p("bytes=1000-"), "416");
        assert_eq!(p("bytes=5-2"), "416");
        assert_eq!(p("bytes=-0"), "416");
        assert_eq!(p("bytes=0-1,5-9"), "full");
        assert_eq!(p("items=0-1"), "full");
        assert_eq!(p("bytes=x-1"), "full");
    }
}
