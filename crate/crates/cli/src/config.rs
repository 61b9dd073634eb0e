//! Option resolution and run manifests.
//!
//! Every subcommand resolves its options from (highest precedence first)
//! command-line flags, the optional `--config` JSON file, then built-in
//! defaults, and echoes the fully-resolved result into `run.json` in the
//! output directory. Timestamps live only under the `meta` key so report
//! payloads stay byte-identical across reruns; paths are echoed as file
//! names only, never absolute.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use stratum_core::error::{Error, Result};

/// JSON config file; a flat object whose keys mirror long flag names.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: Map<String, Value>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let v: Value = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                match v {
                    Value::Object(values) => Ok(FileConfig { values }),
                    _ => Err(Error::Argument(format!(
                        "config file {} must hold a JSON object",
                        p.display()
                    ))),
                }
            }
        }
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.values.get(key).and_then(|v| v.as_u64())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.values.get(key).and_then(|v| v.as_f64())
    }

    pub fn get_str(&self, key: &str) -> Option<String> {
        self.values.get(key).and_then(|v| v.as_str().map(String::from))
    }
}

/// Worker count: flag, else config, else the environment variable
/// `STRATUM_THREADS`, else 1.
pub fn resolve_threads(flag: Option<usize>, cfg: &FileConfig) -> usize {
    flag.or_else(|| cfg.get_u64("threads").map(|v| v as usize))
        .or_else(|| {
            std::env::var("STRATUM_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1)
}

pub fn resolve_seed(flag: Option<u64>, cfg: &FileConfig) -> u64 {
    flag.or_else(|| cfg.get_u64("seed")).unwrap_or(0)
}

/// File-name-only form of a path, for report echoing.
pub fn portable(path: &Path) -> String {
    path.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

pub struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(RunDir { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write `run.json`: the resolved config plus a meta block.
    pub fn write_run_manifest(&self, subcommand: &str, resolved: Value) -> Result<()> {
        let manifest = json!({
            "meta": meta_block(),
            "subcommand": subcommand,
            "config": resolved,
        });
        self.write_json("run.json", &manifest)
    }

    pub fn write_json(&self, name: &str, value: &Value) -> Result<()> {
        std::fs::write(self.path(name), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.path(name), text)?;
        Ok(())
    }
}

/// Timestamp and version, quarantined under `meta` in every report.
pub fn meta_block() -> Value {
    let unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({
        "timestamp_unix": unix,
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    })
}
