use std::collections::HashMap;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::warning::Warning;

use super::PackageMeta;

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub meta: PackageMeta,
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

/// Lazily reads `.deb` files in lexicographic path order. Unreadable files
/// come out as `Err(Warning)` items and do not stop the stream.
pub struct CorpusStream {
    root: PathBuf,
    pending: std::vec::IntoIter<Result<PathBuf, Warning>>,
    index: HashMap<String, PackageMeta>,
}

impl CorpusStream {
    pub fn len_hint(&self) -> usize {
        self.pending.len()
    }
}

impl Iterator for CorpusStream {
    type Item = Result<CorpusItem, Warning>;

    fn next(&mut self) -> Option<Self::Item> {
        let path = match self.pending.next()? {
            Ok(path) => path,
            Err(warning) => return Some(Err(warning)),
        };
        Some(self.load(path))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.pending.size_hint()
    }
}

impl CorpusStream {
    fn load(&self, path: PathBuf) -> Result<CorpusItem, Warning> {
        let relative = path
            .strip_prefix(&self.root)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        let bytes = std::fs::read(&path).map_err(|e| Warning::new(&relative, e))?;
        let base = relative.rsplit('/').next().unwrap_or(&relative);
        let meta = match self.index.get(base) {
            Some(meta) => meta.clone(),
            None => PackageMeta::from_filename(&relative, bytes.len() as u64)
                .map_err(|e| Warning::new(&relative, e))?,
        };
        Ok(CorpusItem { meta, path, bytes })
    }
}

/// Lists every `*.deb` under `root`. When an index is supplied, entries are
/// matched to it by file name; otherwise metadata comes from the file name.
pub fn enumerate_corpus(root: &Path, index: Option<&[PackageMeta]>) -> Result<CorpusStream> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus root is not a directory"),
        ));
    }
    let mut found = Vec::new();
    let mut warnings = Vec::new();
    for entry in WalkDir::new(root).follow_links(false) {
        match entry {
            Ok(entry) => {
                if entry.file_type().is_file()
                    && entry.file_name().to_string_lossy().ends_with(".deb")
                {
                    found.push(entry.into_path());
                }
            }
            Err(err) => {
                let subject = err
                    .path()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| root.display().to_string());
                warnings.push(Warning::new(subject, err));
            }
        }
    }
    found.sort_by(|a, b| a.as_os_str().cmp(b.as_os_str()));
    warnings.sort();
    let pending: Vec<_> = warnings
        .into_iter()
        .map(Err)
        .chain(found.into_iter().map(Ok))
        .collect();
    let index = index
        .unwrap_or_default()
        .iter()
        .map(|m| {
            let base = m.filename.rsplit('/').next().unwrap_or(&m.filename).to_string();
            (base, m.clone())
        })
        .collect();
    Ok(CorpusStream {
        root: root.to_path_buf(),
        pending: pending.into_iter(),
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(root: &Path) -> Vec<String> {
        enumerate_corpus(root, None)
            .unwrap()
            .map(|item| item.unwrap().meta.name)
            .collect()
    }

    #[test]
    fn ordering_and_filter() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.deb"), b"b").unwrap();
        std::fs::write(dir.path().join("a.deb"), b"a").unwrap();
        std::fs::write(dir.path().join("x.txt"), b"x").unwrap();
        std::fs::write(dir.path().join("x-dbgsym.ddeb"), b"x").unwrap();
        assert_eq!(names(dir.path()), ["a", "b"]);
        assert_eq!(names(dir.path()), names(dir.path()));
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(names(dir.path()).is_empty());
    }

    #[test]
    fn nested_paths_sort_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("a")).unwrap();
        std::fs::write(dir.path().join("a/z.deb"), b"").unwrap();
        std::fs::write(dir.path().join("a.deb"), b"").unwrap();
        std::fs::write(dir.path().join("0.deb"), b"").unwrap();
        let items: Vec<_> = enumerate_corpus(dir.path(), None)
            .unwrap()
            .map(|i| i.unwrap().meta.filename)
            .collect();
        assert_eq!(items, ["0.deb", "a.deb", "a/z.deb"]);
    }

    #[test]
    fn index_supplies_metadata() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("hello_9_amd64.deb"), b"").unwrap();
        let mut meta = PackageMeta::new("hello", "9", "pool/main/h/hello/hello_9_amd64.deb").unwrap();
        meta.size_bytes = 99;
        let items: Vec<_> = enumerate_corpus(dir.path(), Some(&[meta.clone()]))
            .unwrap()
            .map(|i| i.unwrap().meta)
            .collect();
        assert_eq!(items, [meta]);
    }

    #[test]
    fn missing_root_is_an_error() {
        assert!(enumerate_corpus(Path::new("/definitely/not/here"), None).is_err());
    }
}
