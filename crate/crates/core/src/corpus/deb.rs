use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use std::path::{Component, Path};

use crate::ar;
use crate::error::{Error, Result};

use super::index::parse_stanzas;
use super::PackageMeta;

/// Compression applied to a `control.tar` or `data.tar` member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codec {
    None,
    Gzip,
    Xz,
    Zstd,
    Bzip2,
}

impl Codec {
    fn from_member(name: &str, prefix: &str) -> Result<Self> {
        match &name[prefix.len()..] {
            "" => Ok(Codec::None),
            ".gz" => Ok(Codec::Gzip),
            ".xz" => Ok(Codec::Xz),
            ".zst" => Ok(Codec::Zstd),
            ".bz2" => Ok(Codec::Bzip2),
            _ => Err(Error::UnsupportedCompression {
                member: name.to_string(),
            }),
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Codec::None => "",
            Codec::Gzip => ".gz",
            Codec::Xz => ".xz",
            Codec::Zstd => ".zst",
            Codec::Bzip2 => ".bz2",
        }
    }

    fn reader<'a>(self, data: &'a [u8]) -> Result<Box<dyn Read + 'a>> {
        Ok(match self {
            Codec::None => Box::new(data),
            Codec::Gzip => Box::new(flate2::read::GzDecoder::new(data)),
            Codec::Xz => Box::new(xz2::read::XzDecoder::new_multi_decoder(data)),
            Codec::Zstd => Box::new(
                zstd::stream::read::Decoder::with_buffer(data)
                    .map_err(|e| Error::MalformedArchive(format!("zstd: {e}")))?,
            ),
            Codec::Bzip2 => Box::new(bzip2::read::MultiBzDecoder::new(data)),
        })
    }

    fn compress(self, raw: &[u8]) -> io::Result<Vec<u8>> {
        match self {
            Codec::None => Ok(raw.to_vec()),
            Codec::Gzip => {
                let mut enc =
                    flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
                enc.write_all(raw)?;
                enc.finish()
            }
            Codec::Xz => {
                let mut enc = xz2::write::XzEncoder::new(Vec::new(), 6);
                enc.write_all(raw)?;
                enc.finish()
            }
            Codec::Zstd => zstd::encode_all(raw, 3),
            Codec::Bzip2 => {
                let mut enc =
                    bzip2::write::BzEncoder::new(Vec::new(), bzip2::Compression::default());
                enc.write_all(raw)?;
                enc.finish()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    /// Absolute-style path, e.g. `/usr/bin/hello`.
    pub path: String,
    pub mode: u32,
    pub content: Vec<u8>,
}

impl FileEntry {
    pub fn is_executable(&self) -> bool {
        self.mode & 0o111 != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlFields {
    pub package: String,
    pub version: String,
}

#[derive(Debug, Clone)]
pub struct PackageArchive {
    pub meta: PackageMeta,
    pub entries: Vec<FileEntry>,
    pub control: Option<ControlFields>,
}

impl PackageArchive {
    /// Describes a disagreement between the supplied metadata and the control
    /// file, if any.
    pub fn control_mismatch(&self) -> Option<String> {
        let control = self.control.as_ref()?;
        if control.package != self.meta.name {
            return Some(format!(
                "control file names package {:?}, metadata says {:?}",
                control.package, self.meta.name
            ));
        }
        if !self.meta.version.is_empty() && control.version != self.meta.version {
            return Some(format!(
                "control file has version {:?}, metadata says {:?}",
                control.version, self.meta.version
            ));
        }
        None
    }
}

/// Unpacks a `.deb` (or `.ddeb`) image into its regular files.
pub fn open_package(raw: &[u8], meta: PackageMeta) -> Result<PackageArchive> {
    let members = ar::parse(raw)?;
    let mut regular = members.iter().filter(|m| m.kind == ar::MemberKind::Regular);

    let first = regular
        .next()
        .ok_or_else(|| Error::MalformedArchive("empty ar container".into()))?;
    if first.name != "debian-binary" {
        return Err(Error::MalformedArchive(format!(
            "first member is {:?}, expected debian-binary",
            first.name
        )));
    }

    let mut control_member = None;
    let mut data_member = None;
    for member in regular {
        if member.name.starts_with("control.tar") && control_member.is_none() {
            control_member = Some(member);
        } else if member.name.starts_with("data.tar") && data_member.is_none() {
            if control_member.is_none() {
                return Err(Error::MalformedArchive(
                    "data member precedes control member".into(),
                ));
            }
            data_member = Some(member);
        }
    }
    let control_member =
        control_member.ok_or_else(|| Error::MalformedArchive("missing control member".into()))?;
    let data_member =
        data_member.ok_or_else(|| Error::MalformedArchive("missing data member".into()))?;

    let control_codec = Codec::from_member(&control_member.name, "control.tar")?;
    let data_codec = Codec::from_member(&data_member.name, "data.tar")?;

    let control = read_control(control_codec.reader(control_member.data)?)?;
    let entries = read_entries(data_codec.reader(data_member.data)?, &data_member.name)?;
    Ok(PackageArchive {
        meta,
        entries,
        control,
    })
}

fn read_control(reader: Box<dyn Read + '_>) -> Result<Option<ControlFields>> {
    let mut archive = tar::Archive::new(reader);
    let entries = archive.entries().map_err(tar_error("control.tar"))?;
    for entry in entries {
        let mut entry = entry.map_err(tar_error("control.tar"))?;
        let path = entry.path().map_err(tar_error("control.tar"))?.into_owned();
        if path.file_name().and_then(|n| n.to_str()) != Some("control") {
            continue;
        }
        let mut text = String::new();
        entry
            .read_to_string(&mut text)
            .map_err(tar_error("control.tar"))?;
        let stanza = parse_stanzas(&text)?.into_iter().next().unwrap_or_default();
        let field = |key: &str| {
            stanza
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(key))
                .map(|(_, v)| v.clone())
        };
        return Ok(field("Package").map(|package| ControlFields {
            package,
            version: field("Version").unwrap_or_default(),
        }));
    }
    Ok(None)
}

fn read_entries(reader: Box<dyn Read + '_>, member: &str) -> Result<Vec<FileEntry>> {
    let mut archive = tar::Archive::new(reader);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for entry in archive.entries().map_err(tar_error(member))? {
        let mut entry = entry.map_err(tar_error(member))?;
        let raw_path = entry.path().map_err(tar_error(member))?.into_owned();
        let Some(path) = normalize_entry_path(&raw_path)? else {
            continue;
        };
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let mode = entry.header().mode().map_err(tar_error(member))?;
        let mut content = Vec::with_capacity(entry.size() as usize);
        entry
            .read_to_end(&mut content)
            .map_err(tar_error(member))?;
        if !seen.insert(path.clone()) {
            return Err(Error::MalformedArchive(format!("duplicate entry {path}")));
        }
        out.push(FileEntry {
            path,
            mode,
            content,
        });
    }
    Ok(out)
}

/// Turns `./usr/bin/x` into `/usr/bin/x`. `..` segments are rejected; the
/// bare root yields `None`.
fn normalize_entry_path(raw: &Path) -> Result<Option<String>> {
    let mut parts = Vec::new();
    for component in raw.components() {
        match component {
            Component::Normal(part) => parts.push(part.to_string_lossy().into_owned()),
            Component::CurDir | Component::RootDir => {}
            Component::ParentDir | Component::Prefix(_) => {
                return Err(Error::UnsafePath(raw.display().to_string()))
            }
        }
    }
    if parts.is_empty() {
        return Ok(None);
    }
    Ok(Some(format!("/{}", parts.join("/"))))
}

fn tar_error(member: &str) -> impl Fn(io::Error) -> Error + '_ {
    move |e| Error::MalformedArchive(format!("{member}: {e}"))
}

/// Builds a minimal `.deb` image. `files` are `(path, mode, content)` with
/// absolute-style paths; intermediate directories are emitted automatically.
/// Timestamps are zeroed so output bytes are reproducible.
pub fn build_deb(
    name: &str,
    version: &str,
    files: &[(&str, u32, &[u8])],
    codec: Codec,
) -> io::Result<Vec<u8>> {
    let control_text = format!(
        "Package: {name}\nVersion: {version}\nArchitecture: amd64\nMaintainer: fixtures <fixtures@localhost>\nDescription: fixture package\n"
    );
    let control_tar = tar_bytes(&[("control", 0o644, control_text.as_bytes())], false)?;
    let data_tar = tar_bytes(files, true)?;
    let control_name = format!("control.tar{}", codec.suffix());
    let data_name = format!("data.tar{}", codec.suffix());
    let control_data = codec.compress(&control_tar)?;
    let data_data = codec.compress(&data_tar)?;
    Ok(ar::write(&[
        ("debian-binary", b"2.0\n"),
        (&control_name, &control_data),
        (&data_name, &data_data),
    ]))
}

fn tar_bytes(files: &[(&str, u32, &[u8])], with_dirs: bool) -> io::Result<Vec<u8>> {
    let mut builder = tar::Builder::new(Vec::new());
    let mut dirs = BTreeSet::new();
    if with_dirs {
        for (path, _, _) in files {
            let trimmed = path.trim_start_matches('/');
            let mut acc = String::new();
            let segments: Vec<_> = trimmed.split('/').collect();
            for seg in &segments[..segments.len().saturating_sub(1)] {
                acc.push_str(seg);
                acc.push('/');
                dirs.insert(acc.clone());
            }
        }
        for dir in &dirs {
            let mut header = tar::Header::new_gnu();
            header.set_entry_type(tar::EntryType::Directory);
            header.set_mode(0o755);
            header.set_size(0);
            header.set_mtime(0);
            builder.append_data(&mut header, format!("./{dir}"), io::empty())?;
        }
    }
    for (path, mode, content) in files {
        let mut header = tar::Header::new_gnu();
        header.set_entry_type(tar::EntryType::Regular);
        header.set_mode(*mode);
        header.set_size(content.len() as u64);
        header.set_mtime(0);
        builder.append_data(
            &mut header,
            format!("./{}", path.trim_start_matches('/')),
            *content,
        )?;
    }
    builder.into_inner()
}
