//! The `sdi` operator tool. Exit codes: 0 success, 1 domain failure
//! (invalid records, rejected ingests, failed harvest URLs), 2 I/O or usage error.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use sdi_core::metadata::{from_canonical, validate_record, Decoded, ValidationReport};
use sdi_core::search::{search_envelope, SearchConfig, SearchEnvelope};
use sdi_core::{CatalogStore, SearchQuery, Thesaurus, UpsertOutcome};
use sdi_portal::api::{self, AppState, HarvestSettings};
use sdi_portal::harvester::{self, HarvestError, HarvestJob, HarvestReport, UrlOutcome};

pub use config::{CliConfig, Overrides};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::usage(message)
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sdi", version, about = "Spatial metadata catalog: validate, ingest, harvest, search and serve")]
pub struct Cli {
    /// Catalog directory [env: SDI_CATALOG_DIR] [default: sdi-catalog]
    #[arg(long, global = true)]
    pub catalog_dir: Option<PathBuf>,
    /// Metadata profile name or profile JSON file [env: SDI_PROFILE] [default: sdi-basic]
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Thesaurus file for semantic search [env: SDI_THESAURUS]
    #[arg(long, global = true)]
    pub thesaurus: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check metadata documents against the profile
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Validate and store metadata documents in the catalog
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Fetch capabilities documents and store one record per layer
    Harvest {
        /// File with one capabilities URL per line; '#' starts a comment line
        #[arg(long)]
        seeds: PathBuf,
        /// Publisher recorded on harvested records
        #[arg(long)]
        publisher: String,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Minimum gap between requests to one host
        #[arg(long, default_value_t = 500)]
        delay_ms: u64,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        /// Print the report as JSON
        #[arg(long)]
        json: bool,
    },
    /// Search the catalog
    Search {
        query: Option<String>,
        /// keyword or semantic
        #[arg(long)]
        mode: Option<String>,
        /// west,south,east,north in degrees
        #[arg(long, allow_hyphen_values = true)]
        bbox: Option<String>,
        /// intersects or within
        #[arg(long)]
        relation: Option<String>,
        #[arg(long)]
        time_start: Option<String>,
        #[arg(long)]
        time_end: Option<String>,
        /// FIELD=VALUE, repeatable
        #[arg(long)]
        facet: Vec<String>,
        #[arg(long)]
        page: Option<String>,
        #[arg(long)]
        page_size: Option<String>,
        /// Print the same JSON envelope as GET /search
        #[arg(long)]
        json: bool,
    },
    /// Run the portal HTTP API until interrupted
    Serve {
        /// host:port [env: SDI_ADDR] [default: 127.0.0.1:8080]
        #[arg(long)]
        addr: Option<String>,
        /// Static files served under /ui/ [env: SDI_UI_DIR]
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

/// Runs `cli`, writing results to `out`, and returns the exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<u8, Failure> {
    let mut flags = Overrides {
        catalog_dir: cli.catalog_dir,
        profile: cli.profile,
        thesaurus: cli.thesaurus,
        ..Default::default()
    };
    if let Command::Serve { addr, ui_dir } = &cli.command {
        flags.addr = addr.clone();
        flags.ui_dir = ui_dir.clone();
    }
    let cfg = CliConfig::resolve(&flags, |k| std::env::var(k).ok())?;
    match cli.command {
        Command::Validate { files } => validate(&cfg, &files, out),
        Command::Ingest { files } => ingest(&cfg, &files, out),
        Command::Harvest {
            seeds,
            publisher,
            concurrency,
            delay_ms,
            timeout_secs,
            json,
        } => {
            let text = fs::read_to_string(&seeds).map_err(|e| Failure::io(format!("{}: {e}", seeds.display())))?;
            let urls = harvester::parse_seed_file(&text).map_err(|e| Failure::usage(format!("{}: {e}", seeds.display())))?;
            let job = HarvestJob {
                seed_urls: urls,
                max_concurrent_fetches: concurrency,
                per_host_delay: Duration::from_millis(delay_ms),
                timeout: Duration::from_secs(timeout_secs),
                publisher_label: publisher,
            };
            harvest(&cfg, &job, json, out)
        }
        Command::Search {
            query,
            mode,
            bbox,
            relation,
            time_start,
            time_end,
            facet,
            page,
            page_size,
            json,
        } => {
            let mut params = Vec::new();
            for (k, v) in [
                ("q", query),
                ("mode", mode),
                ("bbox", bbox),
                ("relation", relation),
                ("time_start", time_start),
                ("time_end", time_end),
                ("page", page),
                ("page_size", page_size),
            ] {
                if let Some(v) = v {
                    params.push((k.to_string(), v));
                }
            }
            for f in facet {
                let (k, v) = f
                    .split_once('=')
                    .ok_or_else(|| Failure::usage(format!("--facet {f:?}: expected FIELD=VALUE")))?;
                params.push((format!("facet.{k}"), v.to_string()));
            }
            let envelope = search(&cfg, &params)?;
            let text = if json { envelope.to_json() } else { render_table(&envelope) };
            writeln!(out, "{}", text.trim_end()).map_err(stdout_err)?;
            Ok(0)
        }
        Command::Serve { .. } => serve(&cfg, out),
    }
}

fn stdout_err(e: io::Error) -> Failure {
    Failure::io(format!("writing output: {e}"))
}

fn read_document(path: &Path) -> Result<Decoded, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Failure::io(format!("{}: not UTF-8 ({e})", path.display())))?;
    from_canonical(text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn open_store(cfg: &CliConfig) -> Result<CatalogStore, Failure> {
    CatalogStore::open(&cfg.catalog_dir).map_err(|e| Failure::io(format!("catalog: {e}")))
}

fn field_list(fields: &[sdi_core::metadata::RecordField]) -> String {
    fields.iter().map(|f| f.name()).collect::<Vec<_>>().join(", ")
}

pub fn render_report(path: &Path, report: &ValidationReport, warnings: &[String]) -> String {
    let mut s = format!(
        "{}: {} completeness={:.3}\n",
        path.display(),
        if report.valid { "valid" } else { "invalid" },
        report.completeness
    );
    if !report.missing_mandatory.is_empty() {
        let _ = writeln!(s, "  missing mandatory: {}", field_list(&report.missing_mandatory));
    }
    if !report.missing_recommended.is_empty() {
        let _ = writeln!(s, "  missing recommended: {}", field_list(&report.missing_recommended));
    }
    for v in &report.violations {
        let _ = writeln!(s, "  violation: {}: {}", v.field, v.message);
    }
    for w in warnings {
        let _ = writeln!(s, "  warning: {w}");
    }
    s
}

fn validate(cfg: &CliConfig, files: &[PathBuf], out: &mut dyn Write) -> Result<u8, Failure> {
    let profile = cfg.load_profile()?;
    let mut code = 0;
    for path in files {
        match read_document(path) {
            Ok(d) => {
                let report = validate_record(&d.record, &profile);
                if !report.valid {
                    code = code.max(1);
                }
                write!(out, "{}", render_report(path, &report, &d.warnings)).map_err(stdout_err)?;
            }
            Err(f) => {
                eprintln!("sdi: {}", f.message);
                code = 2;
            }
        }
    }
    Ok(code)
}

fn ingest(cfg: &CliConfig, files: &[PathBuf], out: &mut dyn Write) -> Result<u8, Failure> {
    let profile = cfg.load_profile()?;
    let mut store = open_store(cfg)?;
    let (mut added, mut updated, mut rejected) = (0, 0, 0);
    let mut code = 0;
    for path in files {
        let d = match read_document(path) {
            Ok(d) => d,
            Err(f) => {
                eprintln!("sdi: {}", f.message);
                rejected += 1;
                code = 2;
                continue;
            }
        };
        let report = validate_record(&d.record, &profile);
        if !report.valid {
            rejected += 1;
            code = code.max(1);
            write!(out, "{}", render_report(path, &report, &d.warnings)).map_err(stdout_err)?;
            continue;
        }
        let id = d.record.id.clone();
        match store.upsert(d.record) {
            Ok(UpsertOutcome::Added) => added += 1,
            Ok(UpsertOutcome::Updated) => updated += 1,
            Err(e) => return Err(Failure::io(format!("catalog: {e}"))),
        }
        writeln!(out, "{}: stored {id}", path.display()).map_err(stdout_err)?;
    }
    store.close().map_err(|e| Failure::io(format!("catalog: {e}")))?;
    writeln!(out, "added={added} updated={updated} rejected={rejected}").map_err(stdout_err)?;
    Ok(code)
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Runtime::new().map_err(|e| Failure::io(format!("starting runtime: {e}")))
}

pub fn render_harvest(report: &HarvestReport) -> String {
    let mut s = String::new();
    for o in &report.outcomes {
        let (status, detail) = match &o.outcome {
            UrlOutcome::Ok {
                records_added,
                records_updated,
                warnings,
            } => {
                let _ = writeln!(s, "ok           added={records_added} updated={records_updated} {}", o.url);
                for w in warnings {
                    let _ = writeln!(s, "  warning: {w}");
                }
                continue;
            }
            UrlOutcome::FetchError { detail } => ("fetch_error", detail),
            UrlOutcome::ParseError { detail } => ("parse_error", detail),
            UrlOutcome::StoreError { detail } => ("store_error", detail),
        };
        let _ = writeln!(s, "{status:<12} {}\n  {detail}", o.url);
    }
    let _ = writeln!(
        s,
        "added={} updated={} failed={} started={} finished={}",
        report.added(),
        report.updated(),
        report.failures(),
        report.started,
        report.finished
    );
    s
}

fn harvest(cfg: &CliConfig, job: &HarvestJob, json: bool, out: &mut dyn Write) -> Result<u8, Failure> {
    let store = sdi_portal::shared(open_store(cfg)?);
    let result = runtime()?.block_on(harvester::harvest(&store, job));
    let report = match result {
        Ok(r) => r,
        Err(e @ HarvestError::InProgress(_)) => return Err(Failure::domain(e.to_string())),
        Err(e) => return Err(Failure::usage(e.to_string())),
    };
    store
        .write()
        .expect("store lock poisoned")
        .sync()
        .map_err(|e| Failure::io(format!("catalog: {e}")))?;
    if json {
        writeln!(out, "{}", serde_json::to_string(&report).expect("reports serialize")).map_err(stdout_err)?;
    } else {
        write!(out, "{}", render_harvest(&report)).map_err(stdout_err)?;
    }
    Ok(if report.failures() > 0 { 1 } else { 0 })
}

fn search(cfg: &CliConfig, params: &[(String, String)]) -> Result<SearchEnvelope, Failure> {
    let query = SearchQuery::from_params(params.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| Failure::usage(e.to_string()))?;
    if !cfg.catalog_dir.is_dir() {
        return Err(Failure::io(format!("{}: no catalog directory", cfg.catalog_dir.display())));
    }
    let store = open_store(cfg)?;
    let thesaurus = cfg.load_thesaurus()?.unwrap_or_default();
    search_envelope(store.catalog(), &query, &thesaurus, &SearchConfig::default()).map_err(|e| Failure::usage(e.to_string()))
}

/// Fixed-width ASCII table; numbers use `.` and fixed precision.
pub fn render_table(env: &SearchEnvelope) -> String {
    let mut s = format!("total={} page={} page_size={}\n", env.total, env.page, env.page_size);
    if !env.results.is_empty() {
        let id_width = env.results.iter().map(|h| h.id.len()).max().unwrap_or(2).max(2);
        let _ = writeln!(s, "{:<4} {:>9}  {:<id_width$}  TITLE", "RANK", "SCORE", "ID");
        let first = env.page * env.page_size;
        for (i, h) in env.results.iter().enumerate() {
            let _ = writeln!(s, "{:<4} {:>9.4}  {:<id_width$}  {}", first + i + 1, h.score, h.id, h.title);
        }
    }
    for (field, counts) in &env.facets {
        let values: Vec<String> = counts.iter().map(|c| format!("{}={}", c.value, c.count)).collect();
        let _ = writeln!(s, "facet {field}: {}", values.join(" | "));
    }
    s
}

fn serve(cfg: &CliConfig, out: &mut dyn Write) -> Result<u8, Failure> {
    let profile = cfg.load_profile()?;
    let thesaurus: Option<Thesaurus> = cfg.load_thesaurus()?;
    let store = sdi_portal::shared(open_store(cfg)?);
    let mut state = AppState::new(store.clone())
        .with_profile(profile)
        .with_harvest_settings(HarvestSettings::default());
    if let Some(t) = thesaurus {
        state = state.with_thesaurus(t);
    }
    if let Some(dir) = &cfg.ui_dir {
        state = state.with_ui_dir(dir);
    }
    let rt = runtime()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.listen_addr)
            .await
            .map_err(|e| Failure::io(format!("listen on {}: {e}", cfg.listen_addr)))?;
        let local = listener.local_addr().map_err(|e| Failure::io(e.to_string()))?;
        writeln!(out, "listening on http://{local}").map_err(stdout_err)?;
        out.flush().map_err(stdout_err)?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        api::serve(listener, state, shutdown)
            .await
            .map_err(|e| Failure::io(format!("server: {e}")))
    })?;
    store
        .write()
        .expect("store lock poisoned")
        .sync()
        .map_err(|e| Failure::io(format!("catalog: {e}")))?;
    Ok(0)
}
