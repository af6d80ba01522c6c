use frulab::Result;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Write `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Render with a writer-based emitter, then write atomically.
pub fn emit<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

/// Manifest path for an artifact: `<file>.manifest.json`, or
/// `<dir>/manifest.json` for directory outputs.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{name}.manifest.json"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    /// `running` until the command finishes, then `ok` or `failed`.
    pub status: String,
    pub wall_clock_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
}

/// Manifest written before work starts and finalised afterwards.
pub struct ManifestGuard {
    pub manifest: RunManifest,
    path: PathBuf,
    start: Instant,
}

impl ManifestGuard {
    pub fn begin<C: Serialize>(subcommand: &str, config: &C, seed: Option<u64>, path: PathBuf, artifacts: Vec<PathBuf>) -> Result<Self> {
        let manifest = RunManifest {
            tool: "frulab",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            artifacts,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            status: "running".into(),
            wall_clock_seconds: None,
            summary: None,
        };
        let g = ManifestGuard {
            manifest,
            path,
            start: Instant::now(),
        };
        g.write()?;
        Ok(g)
    }

    fn write(&self) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        write_atomic(&self.path, s.as_bytes())
    }

    pub fn finish(mut self, ok: bool, summary: Option<serde_json::Value>) -> Result<()> {
        self.manifest.status = if ok { "ok" } else { "failed" }.into();
        self.manifest.wall_clock_seconds = Some(self.start.elapsed().as_secs_f64());
        self.manifest.summary = summary;
        self.write()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
