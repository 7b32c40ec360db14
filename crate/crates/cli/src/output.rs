use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;

use crate::Usage;

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Makes `dir` ready for fresh output. A non-empty directory is only
/// replaced with `force`, and only when an earlier run wrote it.
pub fn prepare(dir: &Path, force: bool) -> Result<()> {
    let occupied = dir.is_dir() && std::fs::read_dir(dir)?.next().is_some();
    if dir.exists() && !dir.is_dir() {
        return Err(Usage(format!("{} exists and is not a directory", dir.display())).into());
    }
    if occupied {
        if !force {
            return Err(Usage(format!("output directory {} is not empty; pass --force to replace it", dir.display())).into());
        }
        if !dir.join(RUN_MANIFEST).is_file() {
            return Err(Usage(format!(
                "refusing to clear {}: it holds no {RUN_MANIFEST} from an earlier run",
                dir.display()
            ))
            .into());
        }
        std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_file: Option<PathBuf>,
    pub master_seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: &'static str,
    pub started_at: String,
    pub finished_at: String,
    pub settings: serde_json::Map<String, serde_json::Value>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(command: &str, config_file: Option<&Path>, started_at: String) -> Self {
        Self {
            command: command.into(),
            config_file: config_file.map(Path::to_path_buf),
            master_seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION"),
            started_at,
            finished_at: String::new(),
            settings: Default::default(),
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_at = now();
        self.outputs.sort();
        std::fs::write(dir.join(RUN_MANIFEST), serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}

/// Writes `contents` to `dir/name` and records the name in `manifest`.
pub fn emit(manifest: &mut RunManifest, dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    manifest.outputs.push(name.into());
    Ok(())
}
