#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::get;
use axum::Router;
use sdi_core::testing::FIGURE3_CAPABILITIES;
use sdi_portal::api::{self, AppState};
use sdi_portal::SharedStore;

pub const HUGE_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct Hit {
    pub at: Instant,
    pub host: String,
    pub path: String,
}

#[derive(Default)]
pub struct Observed {
    pub log: Mutex<Vec<Hit>>,
    in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
}

/// A provider serving capabilities documents and failure cases.
pub struct Provider {
    pub addr: SocketAddr,
    pub observed: Arc<Observed>,
}

impl Provider {
    pub async fn start() -> Provider {
        let observed = Arc::new(Observed::default());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let app = Router::new()
            .route("/caps", get(caps))
            .route("/caps/{name}", get(caps))
            .route("/slow/{ms}", get(slow))
            .route("/missing", get(|| async { StatusCode::NOT_FOUND }))
            .route("/bad", get(|| async { "<WMS_Capabilities><Capability>" }))
            .route("/huge", get(huge_sized))
            .route("/huge-chunked", get(huge_chunked))
            .route("/redirect/{n}", get(redirect))
            .route("/cross", get(move || async move { Redirect::to(&format!("http://localhost:{}/caps", addr.port())) }))
            .layer(middleware::from_fn_with_state(observed.clone(), observe))
            .with_state(observed.clone());
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        Provider { addr, observed }
    }

    pub fn url(&self, path: &str) -> url::Url {
        url::Url::parse(&format!("http://{}{}", self.addr, path)).unwrap()
    }

    pub fn hits(&self) -> Vec<Hit> {
        self.observed.log.lock().unwrap().clone()
    }

    pub fn max_in_flight(&self) -> usize {
        self.observed.max_in_flight.load(Ordering::SeqCst)
    }
}

async fn observe(State(o): State<Arc<Observed>>, headers: HeaderMap, req: Request, next: Next) -> Response {
    let host = headers
        .get(header::HOST)
        .and_then(|h| h.to_str().ok())
        .and_then(|h| h.rsplit_once(':').map(|(h, _)| h.to_string()))
        .unwrap_or_default();
    o.log.lock().unwrap().push(Hit {
        at: Instant::now(),
        host,
        path: req.uri().path().to_string(),
    });
    let now = o.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    o.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let resp = next.run(req).await;
    o.in_flight.fetch_sub(1, Ordering::SeqCst);
    resp
}

async fn caps() -> impl IntoResponse {
    tokio::time::sleep(Duration::from_millis(20)).await;
    ([(header::CONTENT_TYPE, "text/xml")], FIGURE3_CAPABILITIES)
}

async fn slow(Path(ms): Path<u64>) -> impl IntoResponse {
    tokio::time::sleep(Duration::from_millis(ms)).await;
    FIGURE3_CAPABILITIES
}

async fn huge_sized() -> Vec<u8> {
    vec![b' '; HUGE_BYTES]
}

async fn huge_chunked() -> Response {
    let chunk = axum::body::Bytes::from(vec![b' '; 1024 * 1024]);
    let stream = futures_util::stream::iter((0..HUGE_BYTES / chunk.len()).map(move |_| Ok::<_, std::io::Error>(chunk.clone())));
    Body::from_stream(stream).into_response()
}

async fn redirect(Path(n): Path<usize>) -> Redirect {
    if n == 0 {
        Redirect::to("/caps")
    } else {
        Redirect::to(&format!("/redirect/{}", n - 1))
    }
}

/// Runs the portal API on an ephemeral port and returns its base URL.
pub async fn spawn_api(state: AppState) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(api::serve(listener, state, std::future::pending()));
    format!("http://{addr}")
}

pub fn memory_store() -> SharedStore {
    sdi_portal::shared(sdi_core::CatalogStore::in_memory())
}

#[derive(Debug)]
pub struct Reply {
    pub status: u16,
    pub content_type: String,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.body))
    }
}

pub struct Api {
    pub base: String,
    client: reqwest::Client,
}

impl Api {
    pub async fn start(state: AppState) -> Api {
        Api {
            base: spawn_api(state).await,
            client: reqwest::Client::new(),
        }
    }

    async fn reply(resp: reqwest::Response) -> Reply {
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        Reply {
            status,
            content_type,
            body: resp.text().await.unwrap(),
        }
    }

    pub async fn get(&self, path: &str) -> Reply {
        Self::reply(self.client.get(format!("{}{path}", self.base)).send().await.unwrap()).await
    }

    /// GET /search with the given parameters, form-encoded.
    pub async fn search(&self, params: &[(&str, &str)]) -> Reply {
        let mut u = url::Url::parse(&format!("{}/search", self.base)).unwrap();
        u.query_pairs_mut().extend_pairs(params);
        Self::reply(self.client.get(u).send().await.unwrap()).await
    }

    pub async fn post(&self, path: &str, body: impl Into<String>) -> Reply {
        let req = self
            .client
            .post(format!("{}{path}", self.base))
            .header(header::CONTENT_TYPE, "application/json")
            .body(body.into());
        Self::reply(req.send().await.unwrap()).await
    }

    pub async fn send(&self, method: reqwest::Method, path: &str) -> Reply {
        Self::reply(self.client.request(method, format!("{}{path}", self.base)).send().await.unwrap()).await
    }

    /// Polls a harvest job until it is done and returns the final body.
    pub async fn wait_for_harvest(&self, job_id: &str) -> serde_json::Value {
        for _ in 0..600 {
            let r = self.get(&format!("/harvest/{job_id}")).await.json();
            if r["state"] == "done" || r["state"] == "failed" {
                return r;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        panic!("harvest {job_id} did not finish");
    }
}
