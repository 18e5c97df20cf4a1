use crate::error::{Error, Result};

use super::PackageMeta;

pub(crate) type Stanza = Vec<(String, String)>;

/// Splits deb822-style text into stanzas of `(key, value)` pairs. Continuation
/// lines are appended to the previous value with a newline.
pub(crate) fn parse_stanzas(text: &str) -> Result<Vec<Stanza>> {
    let mut stanzas = Vec::new();
    let mut current: Stanza = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            if !current.is_empty() {
                stanzas.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with(' ') || line.starts_with('\t') {
            let (_, value) = current.last_mut().ok_or_else(|| Error::MalformedStanza {
                line: lineno,
                reason: "continuation line before any key".into(),
            })?;
            value.push('\n');
            value.push_str(line.trim());
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| Error::MalformedStanza {
            line: lineno,
            reason: format!("expected `Key: value`, got {line:?}"),
        })?;
        let key = key.trim();
        if key.eq_ignore_ascii_case("Package")
            && current.iter().any(|(k, _)| k.eq_ignore_ascii_case("Package"))
        {
            return Err(Error::MalformedStanza {
                line: lineno,
                reason: "duplicate Package key".into(),
            });
        }
        current.push((key.to_string(), value.trim().to_string()));
    }
    if !current.is_empty() {
        stanzas.push(current);
    }
    Ok(stanzas)
}

/// Parses a `Packages` index. Stanzas missing `Package`, `Version` or
/// `Filename` are skipped; unknown keys are ignored.
pub fn parse_repo_index(index_text: &str) -> Result<Vec<PackageMeta>> {
    let mut out = Vec::new();
    for stanza in parse_stanzas(index_text)? {
        let get = |key: &str| {
            stanza
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(key))
                .map(|(_, v)| v.as_str())
        };
        let (Some(name), Some(version), Some(filename)) =
            (get("Package"), get("Version"), get("Filename"))
        else {
            continue;
        };
        let mut meta = PackageMeta::new(name, version, filename)?;
        if let Some(size) = get("Size") {
            meta.size_bytes = size.parse().map_err(|_| {
                Error::InvalidMeta(format!("package {name}: bad Size {size:?}"))
            })?;
        }
        if let Some(digest) = get("SHA256") {
            meta = meta.with_sha256(digest)?;
        }
        out.push(meta);
    }
    Ok(out)
}
