//! Package acquisition: `.deb` unpacking, repository indexes, corpus
//! enumeration and debug-symbol companions.

mod deb;
mod fetch;
mod index;
mod walk;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use deb::{build_deb, open_package, Codec, ControlFields, FileEntry, PackageArchive};
pub use fetch::{
    fetch_debug_companion, DebugSource, HttpTransport, LocalDebugSource, RemoteDebugSource,
    Transport, DEFAULT_REQUEST_DELAY_MS,
};
pub use index::parse_repo_index;
pub use walk::{enumerate_corpus, CorpusItem, CorpusStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepositoryComponent {
    Main,
    Universe,
    Multiverse,
    Restricted,
    Unknown,
}

impl RepositoryComponent {
    /// Reads the component out of a pool path such as `pool/universe/h/hello/...`.
    pub fn from_pool_path(path: &str) -> Self {
        let mut parts = path.split('/');
        while let Some(part) = parts.next() {
            if part == "pool" {
                return match parts.next() {
                    Some("main") => Self::Main,
                    Some("universe") => Self::Universe,
                    Some("multiverse") => Self::Multiverse,
                    Some("restricted") => Self::Restricted,
                    _ => Self::Unknown,
                };
            }
        }
        Self::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageMeta {
    pub name: String,
    pub version: String,
    pub repository_component: RepositoryComponent,
    /// Path relative to the mirror or corpus root.
    pub filename: String,
    pub size_bytes: u64,
    pub sha256: Option<String>,
}

impl PackageMeta {
    pub fn new(
        name: impl Into<String>,
        version: impl Into<String>,
        filename: impl Into<String>,
    ) -> Result<Self> {
        let name = name.into();
        let filename = filename.into();
        validate_name(&name)?;
        Ok(PackageMeta {
            name,
            version: version.into(),
            repository_component: RepositoryComponent::from_pool_path(&filename),
            filename,
            size_bytes: 0,
            sha256: None,
        })
    }

    pub fn with_sha256(mut self, digest: &str) -> Result<Self> {
        let digest = digest.trim().to_ascii_lowercase();
        if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::InvalidMeta(format!("bad sha256 {digest:?}")));
        }
        self.sha256 = Some(digest);
        Ok(self)
    }

    /// Synthesizes metadata from a `<name>_<version>_<arch>.deb` file name.
    /// Names without underscores use the whole stem as the package name.
    pub fn from_filename(relative: &str, size_bytes: u64) -> Result<Self> {
        let base = relative.rsplit('/').next().unwrap_or(relative);
        let stem = base
            .strip_suffix(".deb")
            .or_else(|| base.strip_suffix(".ddeb"))
            .unwrap_or(base);
        let mut parts = stem.splitn(3, '_');
        let name = parts.next().unwrap_or_default();
        let version = parts.next().unwrap_or_default().replace("%3a", ":");
        let mut meta = PackageMeta::new(name, version, relative)?;
        meta.size_bytes = size_bytes;
        Ok(meta)
    }

    /// Architecture suffix of the file name, when it follows Debian naming.
    pub fn architecture(&self) -> Option<&str> {
        let base = self.filename.rsplit('/').next()?;
        let stem = base.strip_suffix(".deb").or_else(|| base.strip_suffix(".ddeb"))?;
        let mut parts = stem.splitn(3, '_');
        parts.next()?;
        parts.next()?;
        parts.next()
    }
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::InvalidMeta("empty package name".into()));
    }
    if name.contains('/') || name.contains('\\') {
        return Err(Error::InvalidMeta(format!(
            "package name {name:?} contains a path separator"
        )));
    }
    Ok(())
}
