//! On-disk layout of a catalog directory:
//!
//! * `records.log`: one canonical record document per line, appended on every upsert
//! * `snapshot.json`: compacted record set plus the catalog version it corresponds to
//! * `MANIFEST`: format version, record count and catalog version as `key=value` lines
//!
//! Opening a directory loads the snapshot, replays the log on top of it and
//! rebuilds both indexes. Deletes and periodic compaction rewrite the
//! snapshot and truncate the log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Catalog, CatalogError, UpsertOutcome};
use crate::metadata::{from_canonical, to_canonical, MetadataRecord, Timestamp};

pub const FORMAT_VERSION: &str = "1";
const LOG_FILE: &str = "records.log";
const SNAPSHOT_FILE: &str = "snapshot.json";
const MANIFEST_FILE: &str = "MANIFEST";
const DEFAULT_COMPACT_AFTER: usize = 4096;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub record_count: usize,
    pub catalog_version: u64,
}

impl Manifest {
    fn render(&self) -> String {
        format!(
            "format_version={}\nrecord_count={}\ncatalog_version={}\n",
            self.format_version, self.record_count, self.catalog_version
        )
    }

    fn parse(path: &Path, text: &str) -> Result<Manifest, StoreError> {
        let mut fields = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            fields.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let get = |key: &str| {
            fields.get(key).cloned().ok_or_else(|| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: 0,
                message: format!("missing {key}"),
            })
        };
        let num = |key: &str| -> Result<u64, StoreError> {
            let (line, v) = get(key)?;
            v.parse().map_err(|_| StoreError::Corrupt {
                path: path.to_path_buf(),
                line,
                message: format!("{key} is not a number"),
            })
        };
        Ok(Manifest {
            format_version: get("format_version")?.1,
            record_count: num("record_count")? as usize,
            catalog_version: num("catalog_version")?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format_version: String,
    catalog_version: u64,
    records: Vec<MetadataRecord>,
}

/// A catalog, optionally backed by a directory.
pub struct CatalogStore {
    dir: Option<PathBuf>,
    catalog: Catalog,
    log: Option<File>,
    log_entries: usize,
    compact_after: usize,
}

impl CatalogStore {
    pub fn in_memory() -> Self {
        CatalogStore {
            dir: None,
            catalog: Catalog::new(),
            log: None,
            log_entries: 0,
            compact_after: DEFAULT_COMPACT_AFTER,
        }
    }

    /// Opens (creating if needed) the catalog stored in `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = match fs::read_to_string(&manifest_path) {
            Ok(text) => Some(Manifest::parse(&manifest_path, &text)?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(&manifest_path)(e)),
        };
        if let Some(m) = &manifest {
            if m.format_version != FORMAT_VERSION {
                return Err(StoreError::Corrupt {
                    path: manifest_path,
                    line: 1,
                    message: format!("unsupported format version {:?}", m.format_version),
                });
            }
        }

        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let (mut records, mut version) = match fs::read_to_string(&snapshot_path) {
            Ok(text) => {
                let snap: Snapshot = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                    path: snapshot_path.clone(),
                    line: e.line(),
                    message: e.to_string(),
                })?;
                let map: BTreeMap<_, _> = snap.records.into_iter().map(|r| (r.id.clone(), r)).collect();
                (map, snap.catalog_version)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (BTreeMap::new(), 0),
            Err(e) => return Err(io_err(&snapshot_path)(e)),
        };

        let log_path = dir.join(LOG_FILE);
        let mut log_entries = 0;
        match File::open(&log_path) {
            Ok(f) => {
                let mut reader = BufReader::new(f);
                let mut line = String::new();
                let mut lineno = 0;
                let mut good_bytes: u64 = 0;
                loop {
                    line.clear();
                    let n = reader.read_line(&mut line).map_err(io_err(&log_path))?;
                    if n == 0 {
                        break;
                    }
                    lineno += 1;
                    let complete = line.ends_with('\n');
                    match from_canonical(line.trim_end()) {
                        Ok(decoded) => {
                            if !complete {
                                let mut f = OpenOptions::new()
                                    .append(true)
                                    .open(&log_path)
                                    .map_err(io_err(&log_path))?;
                                f.write_all(b"\n").map_err(io_err(&log_path))?;
                            }
                            let r = decoded.record;
                            records.insert(r.id.clone(), r);
                            version += 1;
                            log_entries += 1;
                            good_bytes += n as u64;
                        }
                        // A torn final line from an interrupted append is dropped.
                        Err(_) if !complete => {
                            let f = OpenOptions::new().write(true).open(&log_path).map_err(io_err(&log_path))?;
                            f.set_len(good_bytes).map_err(io_err(&log_path))?;
                            break;
                        }
                        Err(e) => {
                            return Err(StoreError::Corrupt {
                                path: log_path,
                                line: lineno,
                                message: e.to_string(),
                            })
                        }
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&log_path)(e)),
        }

        if let Some(m) = &manifest {
            if m.catalog_version > version {
                return Err(StoreError::Corrupt {
                    path: manifest_path,
                    line: 0,
                    message: format!(
                        "manifest records catalog version {} but the snapshot and log only reach {}",
                        m.catalog_version, version
                    ),
                });
            }
        }

        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let store = CatalogStore {
            dir: Some(dir),
            catalog: Catalog::from_parts(records, version),
            log: Some(log),
            log_entries,
            compact_after: DEFAULT_COMPACT_AFTER,
        };
        store.write_manifest()?;
        Ok(store)
    }

    /// Sets how many log entries accumulate before the snapshot is rewritten.
    pub fn set_compact_after(&mut self, entries: usize) {
        self.compact_after = entries.max(1);
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION.to_string(),
            record_count: self.catalog.len(),
            catalog_version: self.catalog.version(),
        }
    }

    pub fn upsert(&mut self, record: MetadataRecord) -> Result<UpsertOutcome, StoreError> {
        let prepared = self.catalog.prepare(record, Timestamp::now())?;
        if let (Some(log), Some(dir)) = (self.log.as_mut(), self.dir.as_ref()) {
            let path = dir.join(LOG_FILE);
            let mut line = to_canonical(&prepared);
            line.push('\n');
            log.write_all(line.as_bytes()).map_err(io_err(&path))?;
            log.flush().map_err(io_err(&path))?;
            self.log_entries += 1;
        }
        let outcome = self.catalog.apply(prepared);
        if self.dir.is_some() && self.log_entries >= self.compact_after {
            self.compact()?;
        }
        Ok(outcome)
    }

    pub fn delete(&mut self, id: &str) -> Result<bool, StoreError> {
        let removed = self.catalog.delete(id);
        if removed && self.dir.is_some() {
            self.compact()?;
        }
        Ok(removed)
    }

    /// Rebuilds the indexes; readers holding `&self` never see a partial rebuild.
    pub fn reindex(&mut self) {
        self.catalog.reindex();
    }

    /// Rewrites the snapshot from the current record set and truncates the log.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let Some(dir) = self.dir.clone() else {
            return Ok(());
        };
        let snap = Snapshot {
            format_version: FORMAT_VERSION.to_string(),
            catalog_version: self.catalog.version(),
            records: self.catalog.records().cloned().collect(),
        };
        let path = dir.join(SNAPSHOT_FILE);
        let body = serde_json::to_string(&snap).expect("snapshot serializes");
        write_atomic(&path, body.as_bytes())?;

        let log_path = dir.join(LOG_FILE);
        if let Some(log) = self.log.as_mut() {
            log.set_len(0).map_err(io_err(&log_path))?;
        }
        self.log_entries = 0;
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        write_atomic(&dir.join(MANIFEST_FILE), self.manifest().render().as_bytes())
    }

    /// Flushes the log to disk and records the current manifest.
    pub fn sync(&mut self) -> Result<(), StoreError> {
        if let (Some(log), Some(dir)) = (self.log.as_mut(), self.dir.as_ref()) {
            log.sync_data().map_err(io_err(&dir.join(LOG_FILE)))?;
        }
        self.write_manifest()
    }

    pub fn close(mut self) -> Result<(), StoreError> {
        self.sync()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_data().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}
