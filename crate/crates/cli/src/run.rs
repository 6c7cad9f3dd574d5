//! Per-run bookkeeping shared by every subcommand: config loading with
//! overrides, the output lock, the run manifest and exit-code mapping.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use csi2video::config::KeyValues;
use csi2video::networks::NetworkError;
use csi2video::pipeline::PipelineError;
use serde::Serialize;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".csi2video.lock";

/// Bad invocation detected after argument parsing (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn is_numeric_failure(e: &NetworkError) -> bool {
    matches!(
        e,
        NetworkError::NonFiniteLoss { .. } | NetworkError::NonFiniteGradient { .. }
    )
}

/// 1 usage, 3 non-finite training numerics, 2 anything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        let numeric = match (
            cause.downcast_ref::<NetworkError>(),
            cause.downcast_ref::<PipelineError>(),
        ) {
            (Some(e), _) | (_, Some(PipelineError::Network(e))) => is_numeric_failure(e),
            _ => false,
        };
        if numeric {
            return 3;
        }
    }
    2
}

/// One-line `csi2video: error[kind]: cause: cause` diagnostic.
pub fn diagnostic(err: &anyhow::Error) -> String {
    let kind = match exit_code(err) {
        1 => "usage",
        3 => "numeric",
        _ => "data",
    };
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        // some errors already print their source inline
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    format!(
        "csi2video: error[{kind}]: {}",
        msg.replace(['\n', '\r'], " ")
    )
}

/// Reads an optional key=value file and applies `--set key=value` overrides.
pub fn load_kv(config: Option<&Path>, overrides: &[String]) -> Result<KeyValues> {
    let mut kv = match config {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            KeyValues::parse(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => KeyValues::new(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got `{o}`")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

/// Exclusive claim on an output location, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(path: PathBuf) -> Result<Self> {
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                anyhow::bail!("{} exists: another run holds this output", path.display())
            }
            Err(e) => Err(e).with_context(|| format!("creating lock {}", path.display())),
        }
    }

    /// Creates `dir` if needed and locks it.
    pub fn directory(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Self::acquire(dir.join(LOCK_FILE))
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

impl RunManifest {
    pub fn start(subcommand: &str, config: Option<&Path>, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config: config.map(path_string),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: VERSION.to_string(),
            started_unix_ms: unix_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.inputs.push(path_string(p));
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.outputs.push(path_string(p));
        self
    }

    /// Stamps the end time and writes `path` via a temporary file and rename.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_unix_ms = unix_ms();
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_replace_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("a.cfg");
        fs::write(&cfg, "seed = 3\nepochs = 5\n").unwrap();
        let kv = load_kv(Some(&cfg), &["epochs=7".to_string()]).unwrap();
        assert_eq!(kv.get_raw("seed"), Some("3"));
        assert_eq!(kv.get_raw("epochs"), Some("7"));
    }

    #[test]
    fn malformed_override_is_a_usage_error() {
        let err = load_kv(None, &["epochs".to_string()]).unwrap_err();
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn non_finite_loss_maps_to_exit_3() {
        let err = anyhow::Error::from(NetworkError::NonFiniteLoss { epoch: 0, batch: 2 })
            .context("training");
        assert_eq!(exit_code(&err), 3);
        let wrapped = anyhow::Error::from(PipelineError::Network(NetworkError::NonFiniteLoss {
            epoch: 0,
            batch: 0,
        }));
        assert_eq!(exit_code(&wrapped), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("missing file")), 2);
    }

    #[test]
    fn diagnostics_are_single_line() {
        let err = anyhow::anyhow!("line one\nline two").context("outer");
        let d = diagnostic(&err);
        assert!(!d.contains('\n'));
        assert!(d.starts_with("csi2video: error[data]: outer: line one"));
    }

    #[test]
    fn second_lock_on_same_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let first = OutputLock::directory(dir.path()).unwrap();
        assert!(OutputLock::directory(dir.path()).is_err());
        drop(first);
        assert!(OutputLock::directory(dir.path()).is_ok());
    }
}
