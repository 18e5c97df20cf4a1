//! Source lineage: address-to-line tables from DWARF and the shared-library
//! origin test.

use std::borrow::Cow;
use std::collections::HashMap;

use gimli::{EndianSlice, Reader, RunTimeEndian};
use object::{Object, ObjectSection};
use serde::{Deserialize, Serialize};

use crate::binobj::ElfImage;
use crate::corpus::PackageArchive;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceLoc {
    pub path: String,
    pub line: u64,
}

#[derive(Debug, Clone, Copy)]
struct Row {
    start: u64,
    end: u64,
    path: u32,
    line: u64,
}

/// Half-open, non-overlapping address ranges sorted by start, each mapped to
/// a source location.
#[derive(Debug, Clone, Default)]
pub struct LineTable {
    rows: Vec<Row>,
    paths: Vec<String>,
}

impl LineTable {
    /// Builds a table from `(start, end, location)` triples. Empty ranges are
    /// dropped; a range overlapping an earlier one is clipped or dropped.
    pub fn from_ranges(ranges: impl IntoIterator<Item = (u64, u64, SourceLoc)>) -> Self {
        let mut builder = TableBuilder::default();
        for (start, end, loc) in ranges {
            let path = builder.intern(loc.path);
            builder.push(start, end, path, loc.line);
        }
        builder.finish()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, address: u64) -> Option<SourceLoc> {
        let idx = self.rows.partition_point(|r| r.start <= address);
        let row = self.rows.get(idx.checked_sub(1)?)?;
        (address < row.end).then(|| SourceLoc {
            path: self.paths[row.path as usize].clone(),
            line: row.line,
        })
    }

    pub fn ranges(&self) -> impl Iterator<Item = (u64, u64, SourceLoc)> + '_ {
        self.rows.iter().map(|r| {
            (
                r.start,
                r.end,
                SourceLoc {
                    path: self.paths[r.path as usize].clone(),
                    line: r.line,
                },
            )
        })
    }
}

pub fn resolve(table: &LineTable, address: u64) -> Option<SourceLoc> {
    table.resolve(address)
}

#[derive(Default)]
struct TableBuilder {
    rows: Vec<Row>,
    paths: Vec<String>,
    path_ids: HashMap<String, u32>,
}

impl TableBuilder {
    fn intern(&mut self, path: String) -> u32 {
        if let Some(&id) = self.path_ids.get(&path) {
            return id;
        }
        let id = self.paths.len() as u32;
        self.paths.push(path.clone());
        self.path_ids.insert(path, id);
        id
    }

    fn push(&mut self, start: u64, end: u64, path: u32, line: u64) {
        if end > start {
            self.rows.push(Row { start, end, path, line });
        }
    }

    fn finish(mut self) -> LineTable {
        self.rows.sort_by_key(|r| (r.start, r.end));
        let mut rows: Vec<Row> = Vec::with_capacity(self.rows.len());
        for row in self.rows {
            match rows.last_mut() {
                Some(prev) if row.start < prev.end => {
                    // Keep the earlier-starting row, trimmed to where this one begins.
                    if prev.start < row.start {
                        prev.end = row.start;
                        rows.push(row);
                    }
                }
                _ => rows.push(row),
            }
        }
        LineTable {
            rows,
            paths: self.paths,
        }
    }
}

/// Separate debug files from a `.ddeb`, indexed by build-id and file name.
#[derive(Debug, Clone, Default)]
pub struct DebugCompanion {
    files: Vec<(String, Vec<u8>)>,
    by_build_id: HashMap<String, usize>,
    by_name: HashMap<String, usize>,
}

impl DebugCompanion {
    pub fn from_archive(archive: PackageArchive) -> Self {
        Self::from_files(archive.entries.into_iter().map(|e| (e.path, e.content)))
    }

    pub fn from_files(files: impl IntoIterator<Item = (String, Vec<u8>)>) -> Self {
        let mut companion = DebugCompanion::default();
        for (path, content) in files {
            let idx = companion.files.len();
            if let Some(id) = build_id_from_path(&path) {
                companion.by_build_id.entry(id).or_insert(idx);
            }
            let name = path.rsplit('/').next().unwrap_or(&path).to_string();
            companion.by_name.entry(name).or_insert(idx);
            companion.files.push((path, content));
        }
        companion
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    fn lookup(&self, image: &ElfImage) -> Option<&(String, Vec<u8>)> {
        let by_id = image
            .build_id_hex()
            .and_then(|id| self.by_build_id.get(&id));
        let by_link = || image.debug_link.as_ref().and_then(|l| self.by_name.get(l));
        by_id.or_else(by_link).map(|&i| &self.files[i])
    }
}

/// `/usr/lib/debug/.build-id/ab/cdef.debug` -> `abcdef`.
fn build_id_from_path(path: &str) -> Option<String> {
    let rest = path.split("/.build-id/").nth(1)?;
    let (dir, file) = rest.split_once('/')?;
    let stem = file.strip_suffix(".debug")?;
    let id = format!("{dir}{stem}");
    id.bytes().all(|b| b.is_ascii_hexdigit()).then(|| id.to_ascii_lowercase())
}

/// Builds the line table for an image: from its own `.debug_line` when
/// present, else from a companion debug file matched by build-id (preferred)
/// or debug-link name.
///
/// `Ok(None)` means no debug information exists. `Err` carries a warning;
/// lineage is then unknown for the whole image.
pub fn load_line_table(
    content: &[u8],
    image: &ElfImage,
    companion: Option<&DebugCompanion>,
) -> Result<Option<LineTable>, String> {
    if image.relocatable {
        // Line addresses in relocatable objects need relocation processing.
        return Ok(None);
    }
    if image.has_debug_line {
        return line_table_from_elf(content).map(Some);
    }
    let Some(companion) = companion else {
        return Ok(None);
    };
    if image.build_id.is_none() && image.debug_link.is_none() {
        return Ok(None);
    }
    let Some((path, debug)) = companion.lookup(image) else {
        return Err(format!(
            "no debug file matches build-id {} / debug-link {}",
            image.build_id_hex().as_deref().unwrap_or("-"),
            image.debug_link.as_deref().unwrap_or("-")
        ));
    };
    if let Some(expected) = &image.build_id {
        let actual = object::File::parse(debug.as_slice())
            .ok()
            .and_then(|f| f.build_id().ok().flatten().map(<[u8]>::to_vec));
        if actual.as_ref() != Some(expected) {
            return Err(format!(
                "{path}: build-id {} does not match {}",
                actual.as_deref().map(hex::encode).unwrap_or_else(|| "-".into()),
                hex::encode(expected)
            ));
        }
    }
    line_table_from_elf(debug).map(Some).map_err(|e| format!("{path}: {e}"))
}

/// Materializes every line-program row of an ELF file's DWARF.
pub fn line_table_from_elf(data: &[u8]) -> Result<LineTable, String> {
    let file = object::File::parse(data).map_err(|e| format!("malformed debug info: {e}"))?;
    let endian = if file.is_little_endian() {
        RunTimeEndian::Little
    } else {
        RunTimeEndian::Big
    };
    let load = |id: gimli::SectionId| -> Result<Cow<'_, [u8]>, gimli::Error> {
        Ok(file
            .section_by_name(id.name())
            .and_then(|s| s.uncompressed_data().ok())
            .unwrap_or(Cow::Borrowed(&[])))
    };
    let sections = gimli::DwarfSections::load(load).map_err(|e| format!("malformed debug info: {e}"))?;
    let dwarf = sections.borrow(|s| EndianSlice::new(s, endian));
    collect_rows(&dwarf).map_err(|e| format!("malformed debug info: {e}"))
}

fn collect_rows<R: Reader>(dwarf: &gimli::Dwarf<R>) -> gimli::Result<LineTable> {
    let mut builder = TableBuilder::default();
    let mut units = dwarf.units();
    while let Some(header) = units.next()? {
        let unit = dwarf.unit(header)?;
        let Some(program) = unit.line_program.clone() else {
            continue;
        };
        let comp_dir = match &unit.comp_dir {
            Some(dir) => Some(dir.to_string_lossy()?.into_owned()),
            None => None,
        };
        let mut file_cache: HashMap<u64, u32> = HashMap::new();
        let mut rows = program.rows();
        let mut open: Option<(u64, u32, u64)> = None;
        while let Some((header, row)) = rows.next_row()? {
            let address = row.address();
            if let Some((start, path, line)) = open.take() {
                builder.push(start, address, path, line);
            }
            if row.end_sequence() {
                continue;
            }
            let file_index = row.file_index();
            let path = match file_cache.get(&file_index) {
                Some(&id) => id,
                None => {
                    let name = file_path(dwarf, &unit, header, file_index, comp_dir.as_deref())?
                        .unwrap_or_else(|| "<unknown>".to_string());
                    let id = builder.intern(name);
                    file_cache.insert(file_index, id);
                    id
                }
            };
            let line = row.line().map(|l| l.get()).unwrap_or(0);
            open = Some((address, path, line));
        }
    }
    Ok(builder.finish())
}

fn file_path<R: Reader>(
    dwarf: &gimli::Dwarf<R>,
    unit: &gimli::Unit<R>,
    header: &gimli::LineProgramHeader<R>,
    file_index: u64,
    comp_dir: Option<&str>,
) -> gimli::Result<Option<String>> {
    let Some(file) = header.file(file_index) else {
        return Ok(None);
    };
    let name = dwarf.attr_string(unit, file.path_name())?.to_string_lossy()?.into_owned();
    if name.starts_with('/') {
        return Ok(Some(normalize_path(&name)));
    }
    let dir = match file.directory(header) {
        Some(attr) => Some(dwarf.attr_string(unit, attr)?.to_string_lossy()?.into_owned()),
        None => None,
    };
    let joined = match dir {
        Some(dir) if dir.starts_with('/') => format!("{dir}/{name}"),
        Some(dir) if !dir.is_empty() => match comp_dir {
            Some(cd) => format!("{cd}/{dir}/{name}"),
            None => format!("{dir}/{name}"),
        },
        _ => match comp_dir {
            Some(cd) => format!("{cd}/{name}"),
            None => name,
        },
    };
    Ok(Some(normalize_path(&joined)))
}

/// Lexically removes `.` and `..` segments and duplicate slashes.
pub fn normalize_path(path: &str) -> String {
    let absolute = path.starts_with('/');
    let mut parts: Vec<&str> = Vec::new();
    for seg in path.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if parts.last().is_some_and(|p| *p != "..") {
                    parts.pop();
                } else if !absolute {
                    parts.push("..");
                }
            }
            s => parts.push(s),
        }
    }
    let body = parts.join("/");
    if absolute {
        format!("/{body}")
    } else {
        body
    }
}

/// True when the source path starts with `/usr/include` or `/usr/lib`.
pub fn is_shared_library_origin(loc: &SourceLoc) -> bool {
    let path = normalize_path(&loc.path);
    path.starts_with("/usr/include") || path.starts_with("/usr/lib")
}
