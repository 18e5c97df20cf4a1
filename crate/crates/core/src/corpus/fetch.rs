use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use walkdir::WalkDir;

use crate::error::{Error, Result};

use super::PackageMeta;

pub const DEFAULT_REQUEST_DELAY_MS: u64 = 1000;

/// Minimal GET abstraction so the request pacing can be tested without a
/// network. `Ok(None)` means the server reported the file as missing.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> std::result::Result<Option<Vec<u8>>, String>;
}

/// `ureq`-backed transport; honors `http_proxy`/`https_proxy`/`ALL_PROXY`.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new() -> Self {
        let agent = ureq::AgentBuilder::new()
            .try_proxy_from_env(true)
            .timeout(Duration::from_secs(120))
            .build();
        HttpTransport { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> std::result::Result<Option<Vec<u8>>, String> {
        match self.agent.get(url).call() {
            Ok(resp) => {
                let mut body = Vec::new();
                resp.into_reader()
                    .read_to_end(&mut body)
                    .map_err(|e| e.to_string())?;
                Ok(Some(body))
            }
            Err(ureq::Error::Status(404 | 410, _)) => Ok(None),
            Err(e) => Err(e.to_string()),
        }
    }
}

/// Debug companions stored in a local directory tree.
#[derive(Debug, Clone)]
pub struct LocalDebugSource {
    files: Vec<PathBuf>,
}

impl LocalDebugSource {
    pub fn new(dir: &Path) -> Result<Self> {
        let mut files = Vec::new();
        for entry in WalkDir::new(dir) {
            let entry = entry.map_err(|e| {
                Error::io(dir, e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk")))
            })?;
            if entry.file_type().is_file()
                && entry.file_name().to_string_lossy().ends_with(".ddeb")
            {
                files.push(entry.into_path());
            }
        }
        files.sort();
        Ok(LocalDebugSource { files })
    }

    /// Picks `<name>-dbgsym_<version>_*.ddeb` when present, otherwise the first
    /// `<name>-dbgsym*.ddeb` in path order.
    pub fn lookup(&self, meta: &PackageMeta) -> Option<&Path> {
        let prefix = format!("{}-dbgsym", meta.name);
        let versioned = format!("{}_{}_", prefix, strip_epoch(&meta.version));
        let candidates = self.files.iter().filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix) && is_dbgsym_suffix(&n[prefix.len()..]))
        });
        let mut first = None;
        for path in candidates {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if !meta.version.is_empty() && name.starts_with(&versioned) {
                return Some(path);
            }
            first.get_or_insert(path.as_path());
        }
        first
    }
}

// Only `_<version>...` or `.ddeb` may follow `<name>-dbgsym`.
fn is_dbgsym_suffix(rest: &str) -> bool {
    rest.starts_with('_') || rest == ".ddeb"
}

/// Debug companions served over HTTP from a pool-structured base URL.
/// Consecutive requests are spaced by at least `delay`.
pub struct RemoteDebugSource {
    base: String,
    transport: Box<dyn Transport>,
    delay: Duration,
    last_finished: Mutex<Option<Instant>>,
}

impl RemoteDebugSource {
    pub fn new(base: impl Into<String>, delay: Duration) -> Self {
        Self::with_transport(base, delay, Box::new(HttpTransport::new()))
    }

    pub fn with_transport(
        base: impl Into<String>,
        delay: Duration,
        transport: Box<dyn Transport>,
    ) -> Self {
        RemoteDebugSource {
            base: base.into().trim_end_matches('/').to_string(),
            transport,
            delay,
            last_finished: Mutex::new(None),
        }
    }

    pub fn url_for(&self, meta: &PackageMeta) -> String {
        let arch = meta.architecture().unwrap_or("amd64");
        let file = format!(
            "{}-dbgsym_{}_{}.ddeb",
            meta.name,
            strip_epoch(&meta.version),
            arch
        );
        match meta.filename.rsplit_once('/') {
            Some((dir, _)) => format!("{}/{}/{}", self.base, dir, file),
            None => format!("{}/{}", self.base, file),
        }
    }

    fn fetch(&self, meta: &PackageMeta) -> Result<Option<Vec<u8>>> {
        let url = self.url_for(meta);
        // The lock is held across the request so pacing holds for concurrent callers.
        let mut last = self.last_finished.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let ready = prev + self.delay;
            let now = Instant::now();
            if ready > now {
                std::thread::sleep(ready - now);
            }
        }
        let result = self.transport.get(&url);
        *last = Some(Instant::now());
        result.map_err(|reason| Error::Fetch { url, reason })
    }
}

pub enum DebugSource {
    Local(LocalDebugSource),
    Remote(RemoteDebugSource),
}

impl DebugSource {
    /// Interprets `http://` and `https://` as remote, anything else as a
    /// local directory.
    pub fn from_spec(spec: &str, delay: Duration) -> Result<Self> {
        if spec.starts_with("http://") || spec.starts_with("https://") {
            Ok(DebugSource::Remote(RemoteDebugSource::new(spec, delay)))
        } else {
            Ok(DebugSource::Local(LocalDebugSource::new(Path::new(spec))?))
        }
    }
}

/// Returns the debug-symbol package for `meta`, or `None` when the source has
/// no companion. Network failures are `Error::Fetch` and may be retried.
pub fn fetch_debug_companion(meta: &PackageMeta, source: &DebugSource) -> Result<Option<Vec<u8>>> {
    match source {
        DebugSource::Local(local) => match local.lookup(meta) {
            Some(path) => std::fs::read(path).map(Some).map_err(|e| Error::io(path, e)),
            None => Ok(None),
        },
        DebugSource::Remote(remote) => remote.fetch(meta),
    }
}

fn strip_epoch(version: &str) -> &str {
    match version.split_once(':') {
        Some((epoch, rest)) if epoch.bytes().all(|b| b.is_ascii_digit()) => rest,
        _ => version,
    }
}
