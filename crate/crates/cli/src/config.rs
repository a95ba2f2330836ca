//! Settings resolution: flags, then `SDI_*` environment variables, then
//! `<catalog_dir>/config.json`, then built-in defaults.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sdi_core::MetadataProfile;
use serde::Deserialize;

use crate::Failure;

pub const DEFAULT_CATALOG_DIR: &str = "sdi-catalog";
pub const CONFIG_FILE: &str = "config.json";

/// Values given on the command line. `None` means not given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub catalog_dir: Option<PathBuf>,
    pub profile: Option<String>,
    pub thesaurus: Option<PathBuf>,
    pub addr: Option<String>,
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    profile: Option<String>,
    thesaurus_path: Option<PathBuf>,
    listen_addr: Option<String>,
    ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub catalog_dir: PathBuf,
    pub profile: String,
    pub thesaurus_path: Option<PathBuf>,
    pub listen_addr: String,
    pub ui_dir: Option<PathBuf>,
}

impl CliConfig {
    pub fn resolve(flags: &Overrides, env: impl Fn(&str) -> Option<String>) -> Result<CliConfig, Failure> {
        let env = |k: &str| env(k).filter(|v| !v.is_empty());
        let catalog_dir = flags
            .catalog_dir
            .clone()
            .or_else(|| env("SDI_CATALOG_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CATALOG_DIR));
        let file = read_config_file(&catalog_dir)?;
        // relative paths in config.json are relative to the catalog directory
        let in_dir = |p: PathBuf| if p.is_relative() { catalog_dir.join(p) } else { p };
        Ok(CliConfig {
            profile: flags
                .profile
                .clone()
                .or_else(|| env("SDI_PROFILE"))
                .or(file.profile)
                .unwrap_or_else(|| MetadataProfile::DEFAULT_NAME.to_string()),
            thesaurus_path: flags
                .thesaurus
                .clone()
                .or_else(|| env("SDI_THESAURUS").map(PathBuf::from))
                .or_else(|| file.thesaurus_path.map(in_dir)),
            listen_addr: flags
                .addr
                .clone()
                .or_else(|| env("SDI_ADDR"))
                .or(file.listen_addr)
                .unwrap_or_else(|| sdi_portal::api::DEFAULT_ADDR.to_string()),
            ui_dir: flags
                .ui_dir
                .clone()
                .or_else(|| env("SDI_UI_DIR").map(PathBuf::from))
                .or_else(|| file.ui_dir.map(in_dir)),
            catalog_dir,
        })
    }

    /// The named built-in profile, or a profile JSON file if the value names one.
    pub fn load_profile(&self) -> Result<MetadataProfile, Failure> {
        if let Ok(p) = MetadataProfile::builtin(&self.profile) {
            return Ok(p);
        }
        let path = Path::new(&self.profile);
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("profile {:?}: not a built-in profile and not readable: {e}", self.profile)))?;
        MetadataProfile::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }

    pub fn load_thesaurus(&self) -> Result<Option<sdi_core::Thesaurus>, Failure> {
        self.thesaurus_path
            .as_ref()
            .map(|p| sdi_core::Thesaurus::load(p).map_err(|e| Failure::io(format!("{}: {e}", p.display()))))
            .transpose()
    }
}

fn read_config_file(dir: &Path) -> Result<FileConfig, Failure> {
    let path = dir.join(CONFIG_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(FileConfig::default()),
        Err(e) => Err(Failure::io(format!("{}: {e}", path.display()))),
    }
}
