//! Fetches capabilities documents from provider endpoints and upserts one
//! record per layer into the catalog.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use reqwest::header::LOCATION;
use reqwest::redirect::Policy;
use reqwest::StatusCode;
use sdi_core::capabilities::{layer_to_record, parse_capabilities};
use sdi_core::{CatalogStore, Timestamp, UpsertOutcome};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard, Semaphore};
use tokio::task::JoinSet;
use tokio::time::Instant;
use url::Url;

use crate::SharedStore;

pub const MAX_CONCURRENT_FETCHES: usize = 64;
pub const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;
pub const MAX_REDIRECTS: usize = 5;
pub const LOCK_FILE: &str = "harvest.lock";

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestJob {
    pub seed_urls: Vec<Url>,
    pub max_concurrent_fetches: usize,
    pub per_host_delay: Duration,
    pub timeout: Duration,
    pub publisher_label: String,
}

impl HarvestJob {
    pub fn new(seed_urls: Vec<Url>, publisher_label: impl Into<String>) -> Self {
        HarvestJob {
            seed_urls,
            max_concurrent_fetches: 4,
            per_host_delay: Duration::from_millis(500),
            timeout: Duration::from_secs(30),
            publisher_label: publisher_label.into(),
        }
    }

    pub fn validate(&self) -> Result<(), HarvestError> {
        if self.seed_urls.is_empty() {
            return Err(HarvestError::InvalidJob("seed_urls is empty".into()));
        }
        if self.max_concurrent_fetches == 0 || self.max_concurrent_fetches > MAX_CONCURRENT_FETCHES {
            return Err(HarvestError::InvalidJob(format!(
                "max_concurrent_fetches must be between 1 and {MAX_CONCURRENT_FETCHES}, got {}",
                self.max_concurrent_fetches
            )));
        }
        if let Some(u) = self.seed_urls.iter().find(|u| !matches!(u.scheme(), "http" | "https")) {
            return Err(HarvestError::InvalidJob(format!("{u}: only http and https seeds are supported")));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error("invalid harvest job: {0}")]
    InvalidJob(String),
    #[error("another harvest is running on this catalog ({0})")]
    InProgress(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("response body exceeds {0} bytes")]
    Oversize(usize),
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("more than {0} redirects")]
    TooManyRedirects(usize),
    #[error("bad redirect: {0}")]
    BadRedirect(String),
    #[error("response body is not UTF-8")]
    NotUtf8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UrlOutcome {
    Ok {
        records_added: usize,
        records_updated: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        warnings: Vec<String>,
    },
    FetchError {
        detail: String,
    },
    ParseError {
        detail: String,
    },
    /// The document was parsed but the catalog could not be written.
    StoreError {
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrlReport {
    pub url: String,
    #[serde(flatten)]
    pub outcome: UrlOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub started: Timestamp,
    pub finished: Timestamp,
    pub outcomes: Vec<UrlReport>,
}

impl HarvestReport {
    pub fn added(&self) -> usize {
        self.outcomes
            .iter()
            .map(|o| match o.outcome {
                UrlOutcome::Ok { records_added, .. } => records_added,
                _ => 0,
            })
            .sum()
    }

    pub fn updated(&self) -> usize {
        self.outcomes
            .iter()
            .map(|o| match o.outcome {
                UrlOutcome::Ok { records_updated, .. } => records_updated,
                _ => 0,
            })
            .sum()
    }

    pub fn failures(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| !matches!(o.outcome, UrlOutcome::Ok { .. }))
            .count()
    }
}

/// Per-host request gate. With a non-zero delay, requests to one host run one
/// at a time and each starts at least `delay` after the previous one finished,
/// so the host sees arrivals spaced by at least `delay`.
#[derive(Debug, Default)]
pub struct Politeness {
    delay: Duration,
    hosts: Mutex<HashMap<String, Arc<AsyncMutex<Option<Instant>>>>>,
}

pub struct HostTurn(Option<OwnedMutexGuard<Option<Instant>>>);

impl Drop for HostTurn {
    fn drop(&mut self) {
        if let Some(g) = &mut self.0 {
            **g = Some(Instant::now());
        }
    }
}

impl Politeness {
    pub fn new(delay: Duration) -> Self {
        Politeness {
            delay,
            hosts: Mutex::default(),
        }
    }

    /// Waits for this host's turn. The turn ends when the returned value is dropped.
    pub async fn turn(&self, url: &Url) -> HostTurn {
        if self.delay.is_zero() {
            return HostTurn(None);
        }
        let host = url.host_str().unwrap_or_default().to_ascii_lowercase();
        let gate = self.hosts.lock().expect("politeness map poisoned").entry(host).or_default().clone();
        let guard = gate.lock_owned().await;
        if let Some(last) = *guard {
            tokio::time::sleep_until(last + self.delay).await;
        }
        HostTurn(Some(guard))
    }
}

#[derive(Debug)]
pub struct Fetcher {
    client: reqwest::Client,
    politeness: Politeness,
    timeout: Duration,
    max_body: usize,
}

impl Fetcher {
    pub fn new(timeout: Duration, per_host_delay: Duration) -> Self {
        let client = reqwest::Client::builder()
            .redirect(Policy::none())
            .user_agent(concat!("sdi-harvester/", env!("CARGO_PKG_VERSION")))
            .build()
            .expect("static client configuration");
        Fetcher {
            client,
            politeness: Politeness::new(per_host_delay),
            timeout,
            max_body: MAX_BODY_BYTES,
        }
    }

    pub fn with_max_body(mut self, bytes: usize) -> Self {
        self.max_body = bytes;
        self
    }

    /// GETs `url`, following up to [`MAX_REDIRECTS`] redirects. Each hop waits
    /// for its own host's turn and has its own timeout.
    pub async fn fetch(&self, url: &Url) -> Result<String, FetchError> {
        let mut current = url.clone();
        for _ in 0..=MAX_REDIRECTS {
            let turn = self.politeness.turn(&current).await;
            let hop = tokio::time::timeout(self.timeout, self.fetch_once(&current)).await;
            drop(turn);
            let hop = hop.map_err(|_| FetchError::Timeout(self.timeout))??;
            match hop {
                Hop::Body(bytes) => return String::from_utf8(bytes).map_err(|_| FetchError::NotUtf8),
                Hop::Redirect(next) => current = next,
            }
        }
        Err(FetchError::TooManyRedirects(MAX_REDIRECTS))
    }

    async fn fetch_once(&self, url: &Url) -> Result<Hop, FetchError> {
        let mut resp = self.client.get(url.clone()).send().await.map_err(request_error)?;
        let status = resp.status();
        if status.is_redirection() && status != StatusCode::NOT_MODIFIED {
            let location = resp
                .headers()
                .get(LOCATION)
                .and_then(|v| v.to_str().ok())
                .ok_or_else(|| FetchError::BadRedirect(format!("status {} without Location", status.as_u16())))?;
            let next = url
                .join(location)
                .map_err(|e| FetchError::BadRedirect(format!("{location}: {e}")))?;
            if !matches!(next.scheme(), "http" | "https") {
                return Err(FetchError::BadRedirect(format!("{next}: unsupported scheme")));
            }
            return Ok(Hop::Redirect(next));
        }
        if status != StatusCode::OK {
            return Err(FetchError::Status(status.as_u16()));
        }
        if resp.content_length().is_some_and(|n| n > self.max_body as u64) {
            return Err(FetchError::Oversize(self.max_body));
        }
        let mut body = Vec::new();
        while let Some(chunk) = resp.chunk().await.map_err(request_error)? {
            if body.len() + chunk.len() > self.max_body {
                return Err(FetchError::Oversize(self.max_body));
            }
            body.extend_from_slice(&chunk);
        }
        Ok(Hop::Body(body))
    }
}

enum Hop {
    Body(Vec<u8>),
    Redirect(Url),
}

fn request_error(e: reqwest::Error) -> FetchError {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(&e);
    while let Some(s) = src {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        src = s.source();
    }
    FetchError::Connection(msg)
}

/// Marks a catalog directory as having an active harvest. Removed on drop.
#[derive(Debug)]
pub struct HarvestLock {
    path: PathBuf,
}

impl HarvestLock {
    pub fn acquire(dir: &Path) -> Result<Self, HarvestError> {
        let path = dir.join(LOCK_FILE);
        let io = |source| HarvestError::Io {
            path: path.clone(),
            source,
        };
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "pid={}\nstarted={}", std::process::id(), Timestamp::now()).map_err(io)?;
                f.sync_all().map_err(io)?;
                Ok(HarvestLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                let holder = holder.split_whitespace().collect::<Vec<_>>().join(" ");
                Err(HarvestError::InProgress(format!(
                    "{holder}; delete {} if no harvest is running",
                    path.display()
                )))
            }
            Err(e) => Err(io(e)),
        }
    }
}

impl Drop for HarvestLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub async fn harvest(store: &SharedStore, job: &HarvestJob) -> Result<HarvestReport, HarvestError> {
    harvest_observed(store, job, |_, _| {}).await
}

/// Like [`harvest`], calling `on_outcome(done, total)` each time a seed finishes.
pub async fn harvest_observed(
    store: &SharedStore,
    job: &HarvestJob,
    mut on_outcome: impl FnMut(usize, usize),
) -> Result<HarvestReport, HarvestError> {
    job.validate()?;
    let dir = store.read().expect("store lock poisoned").dir().map(Path::to_path_buf);
    let _lock = dir.as_deref().map(HarvestLock::acquire).transpose()?;

    let started = Timestamp::now();
    let fetcher = Arc::new(Fetcher::new(job.timeout, job.per_host_delay));
    let permits = Arc::new(Semaphore::new(job.max_concurrent_fetches));
    let mut tasks = JoinSet::new();
    for (i, url) in job.seed_urls.iter().enumerate() {
        let (fetcher, permits, store) = (fetcher.clone(), permits.clone(), store.clone());
        let (url, publisher) = (url.clone(), job.publisher_label.clone());
        tasks.spawn(async move {
            let fetched = {
                let _permit = permits.acquire_owned().await.expect("semaphore never closed");
                fetcher.fetch(&url).await
            };
            let outcome = match fetched {
                Ok(xml) => ingest(&store, &xml, &url, &publisher),
                Err(e) => UrlOutcome::FetchError { detail: e.to_string() },
            };
            (i, outcome)
        });
    }

    let total = job.seed_urls.len();
    let mut outcomes: Vec<Option<UrlOutcome>> = vec![None; total];
    let mut done = 0;
    while let Some(joined) = tasks.join_next().await {
        let (i, outcome) = joined.expect("harvest task panicked");
        outcomes[i] = Some(outcome);
        done += 1;
        on_outcome(done, total);
    }
    Ok(HarvestReport {
        started,
        finished: Timestamp::now(),
        outcomes: job
            .seed_urls
            .iter()
            .zip(outcomes)
            .map(|(u, o)| UrlReport {
                url: u.to_string(),
                outcome: o.expect("every task reports"),
            })
            .collect(),
    })
}

fn ingest(store: &SharedStore, xml: &str, url: &Url, publisher: &str) -> UrlOutcome {
    let parsed = match parse_capabilities(xml, url) {
        Ok(p) => p,
        Err(e) => return UrlOutcome::ParseError { detail: e.to_string() },
    };
    let mut warnings = parsed.warnings;
    let mut records = Vec::new();
    for layer in &parsed.service.layers {
        match layer_to_record(&parsed.service, layer, publisher) {
            Ok(r) => records.push(r),
            Err(e) => warnings.push(e.to_string()),
        }
    }
    let (mut added, mut updated) = (0, 0);
    let mut store = store.write().expect("store lock poisoned");
    for r in records {
        match CatalogStore::upsert(&mut store, r) {
            Ok(UpsertOutcome::Added) => added += 1,
            Ok(UpsertOutcome::Updated) => updated += 1,
            Err(e) => {
                return UrlOutcome::StoreError {
                    detail: format!("{e} (after {added} added, {updated} updated)"),
                }
            }
        }
    }
    UrlOutcome::Ok {
        records_added: added,
        records_updated: updated,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct SeedError {
    pub line: usize,
    pub message: String,
}

/// One URL per line; blank lines and lines starting with `#` are ignored.
pub fn parse_seed_file(text: &str) -> Result<Vec<Url>, SeedError> {
    let mut seeds = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| SeedError { line: i + 1, message };
        let url = Url::parse(line).map_err(|e| err(format!("{line}: {e}")))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(err(format!("{line}: only http and https seeds are supported")));
        }
        seeds.push(url);
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_file_skips_comments() {
        let seeds = parse_seed_file("# providers\n\nhttp://a.example/wms\n  https://b.example/x?y=1  \n").unwrap();
        assert_eq!(seeds.len(), 2);
        assert_eq!(seeds[1].as_str(), "https://b.example/x?y=1");
        assert_eq!(parse_seed_file("ftp://a/b").unwrap_err().line, 1);
        assert_eq!(parse_seed_file("#\nnot a url").unwrap_err().line, 2);
    }

    #[test]
    fn job_invariants() {
        let u = Url::parse("http://a.example/").unwrap();
        assert!(HarvestJob::new(vec![], "p").validate().is_err());
        let mut j = HarvestJob::new(vec![u], "p");
        j.validate().unwrap();
        j.max_concurrent_fetches = 65;
        assert!(j.validate().is_err());
        j.max_concurrent_fetches = 0;
        assert!(j.validate().is_err());
    }

    #[test]
    fn outcome_json_shape() {
        let r = UrlReport {
            url: "http://a/".into(),
            outcome: UrlOutcome::Ok {
                records_added: 1,
                records_updated: 0,
                warnings: vec![],
            },
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"url":"http://a/","status":"ok","records_added":1,"records_updated":0}"#
        );
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let held = HarvestLock::acquire(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(LOCK_FILE)).unwrap();
        assert!(text.starts_with(&format!("pid={}\nstarted=", std::process::id())));
        assert!(matches!(HarvestLock::acquire(dir.path()), Err(HarvestError::InProgress(_))));
        drop(held);
        HarvestLock::acquire(dir.path()).unwrap();
    }

    #[tokio::test(start_paused = true)]
    async fn politeness_spaces_turns_per_host() {
        let p = Politeness::new(Duration::from_secs(2));
        let u = Url::parse("http://a.example/").unwrap();
        let other = Url::parse("http://B.example/").unwrap();
        let t0 = Instant::now();
        drop(p.turn(&u).await);
        drop(p.turn(&other).await);
        assert_eq!(t0.elapsed(), Duration::ZERO);
        let held = p.turn(&u).await;
        assert_eq!(t0.elapsed(), Duration::from_secs(2));
        tokio::time::sleep(Duration::from_secs(1)).await;
        drop(held);
        drop(p.turn(&Url::parse("http://A.EXAMPLE/x").unwrap()).await);
        assert_eq!(t0.elapsed(), Duration::from_secs(5));
        drop(Politeness::new(Duration::ZERO).turn(&u).await);
    }
}
