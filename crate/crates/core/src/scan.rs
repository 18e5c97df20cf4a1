//! The per-binary pipeline (detect, load, decode, classify, attribute) and
//! the drivers that run it over packages, directory trees and single files.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::binobj::{
    classify_elf, detect_binary, load_elf, unpack_static_archive, BinaryKind,
    ElfClassification, ElfImage,
};
use crate::classify::{classify_with, is_repne_movs, IsaClass, IsaMode, TargetMode};
use crate::corpus::{fetch_debug_companion, open_package, CorpusItem, DebugSource, PackageMeta};
use crate::decode::{decode_linear, DecodeEvent};
use crate::error::{Error, Result};
use crate::lineage::{load_line_table, DebugCompanion, LineTable, SourceLoc};
use crate::metrics::{BinaryReport, BinaryStatus, CorpusReport};
use crate::warning::Warning;

#[derive(Debug, Clone, Copy, Default)]
pub struct ScanOptions {
    pub isa_mode: IsaMode,
    /// Keep a per-hit listing alongside the counts.
    pub keep_hits: bool,
}

/// One target instruction, as listed by single-file mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HitRecord {
    /// Static-archive member the hit came from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member: Option<String>,
    pub address: u64,
    pub mnemonic: &'static str,
    pub mode: TargetMode,
    pub isa_class: IsaClass,
    pub registers: Vec<String>,
    pub function: Option<String>,
    pub lineage: Option<SourceLoc>,
}

#[derive(Debug, Clone)]
pub struct BinaryScan {
    pub report: BinaryReport,
    pub hits: Vec<HitRecord>,
    pub warnings: Vec<Warning>,
}

/// How per-item work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// A worker pool of the given size. Without the `parallel` feature this
    /// runs sequentially.
    Parallel { jobs: usize },
}

impl Execution {
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { jobs }
        }
    }
}

/// Maps `f` over `items` and returns the results in input order.
pub fn run_ordered<I, T, R, F>(items: I, execution: Execution, f: F) -> Vec<R>
where
    I: Iterator<Item = T> + Send,
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    match execution {
        Execution::Sequential => items.map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel { jobs } => {
            use rayon::iter::{ParallelBridge, ParallelIterator};
            let run = || {
                let mut out: Vec<(usize, R)> = items
                    .enumerate()
                    .par_bridge()
                    .map(|(i, item)| (i, f(item)))
                    .collect();
                out.sort_unstable_by_key(|(i, _)| *i);
                out.into_iter().map(|(_, r)| r).collect()
            };
            match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                Ok(pool) => pool.install(run),
                Err(e) => {
                    log::warn!("could not start a worker pool ({e}); using the global pool");
                    run()
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => items.map(f).collect(),
    }
}

/// Source of debug companions for one package, fetched at most once.
struct LazyCompanion<'a> {
    meta: &'a PackageMeta,
    source: Option<&'a DebugSource>,
    loaded: Option<Option<DebugCompanion>>,
}

impl<'a> LazyCompanion<'a> {
    fn new(meta: &'a PackageMeta, source: Option<&'a DebugSource>) -> Self {
        LazyCompanion {
            meta,
            source,
            loaded: None,
        }
    }

    fn none() -> Self {
        LazyCompanion {
            meta: &NO_META,
            source: None,
            loaded: Some(None),
        }
    }

    fn get(&mut self, warnings: &mut Vec<Warning>) -> Option<&DebugCompanion> {
        if self.loaded.is_none() {
            let subject = &self.meta.name;
            let companion = self.source.and_then(|source| {
                match fetch_debug_companion(self.meta, source) {
                    Ok(Some(raw)) => match open_package(&raw, self.meta.clone()) {
                        Ok(archive) => Some(DebugCompanion::from_archive(archive)),
                        Err(e) => {
                            warnings.push(Warning::new(subject, format!("debug package: {e}")));
                            None
                        }
                    },
                    Ok(None) => None,
                    Err(e) => {
                        warnings.push(Warning::new(subject, e));
                        None
                    }
                }
            });
            self.loaded = Some(companion);
        }
        self.loaded.as_ref().and_then(Option::as_ref)
    }
}

static NO_META: PackageMeta = PackageMeta {
    name: String::new(),
    version: String::new(),
    repository_component: crate::corpus::RepositoryComponent::Unknown,
    filename: String::new(),
    size_bytes: 0,
    sha256: None,
};

fn needs_companion(image: &ElfImage) -> bool {
    !image.relocatable
        && !image.has_debug_line
        && (image.build_id.is_some() || image.debug_link.is_some())
}

/// Decodes every executable range of `image` into `report`.
fn scan_image(
    image: &ElfImage,
    lines: Option<&LineTable>,
    member: Option<&str>,
    options: ScanOptions,
    report: &mut BinaryReport,
    hits: &mut Vec<HitRecord>,
) {
    for range in &image.exec_ranges {
        for event in decode_linear(&range.bytes, range.address) {
            let inst = match event {
                DecodeEvent::Instruction(inst) => inst,
                DecodeEvent::InvalidByte { .. } => {
                    report.n_invalid_bytes += 1;
                    continue;
                }
            };
            report.n_instructions += 1;
            if is_repne_movs(&inst) {
                report.n_repne_movs += 1;
            }
            let Some(mut hit) = classify_with(&inst, options.isa_mode) else {
                continue;
            };
            hit.lineage = lines.and_then(|t| t.resolve(hit.address));
            let function = image.function_at(hit.address).map(|f| f.name.as_str());
            report.add_hit(&hit, function);
            if options.keep_hits {
                hits.push(HitRecord {
                    member: member.map(str::to_string),
                    address: hit.address,
                    mnemonic: hit.mnemonic,
                    mode: hit.mode,
                    isa_class: hit.isa_class,
                    registers: hit.registers.iter().map(ToString::to_string).collect(),
                    function: function.map(str::to_string),
                    lineage: hit.lineage,
                });
            }
        }
    }
}

fn failed(mut report: BinaryReport, err: &Error, warnings: &mut Vec<Warning>) -> BinaryReport {
    report.status = match err {
        Error::NonX86 { .. } => BinaryStatus::ForeignArch,
        _ => BinaryStatus::ParseFailed,
    };
    if report.status == BinaryStatus::ParseFailed {
        warnings.push(Warning::new(format!("{}:{}", report.package, report.binary_path), err));
    }
    report
}

fn scan_with_companion(
    package: &str,
    path: &str,
    content: &[u8],
    kind: BinaryKind,
    companion: &mut LazyCompanion<'_>,
    options: ScanOptions,
) -> BinaryScan {
    let mut warnings = Vec::new();
    let mut hits = Vec::new();
    let mut report = BinaryReport::new(package, path, kind);
    let subject = || format!("{package}:{path}");

    if kind == BinaryKind::StaticArchive {
        let members = match unpack_static_archive(content) {
            Ok(members) => members,
            Err(e) => {
                let report = failed(report, &e, &mut warnings);
                return BinaryScan { report, hits, warnings };
            }
        };
        let mut any_x86 = members.is_empty();
        for (name, data) in &members {
            if !data.starts_with(b"\x7fELF") {
                continue;
            }
            match load_elf(data, kind) {
                Ok(image) => {
                    any_x86 = true;
                    let mut part = BinaryReport::new(package, path, kind);
                    scan_image(&image, None, Some(name), options, &mut part, &mut hits);
                    report.absorb(&part);
                }
                Err(Error::NonX86 { .. }) => {}
                Err(e) => warnings.push(Warning::new(subject(), format!("member {name}: {e}"))),
            }
        }
        if !any_x86 && members.iter().any(|(_, d)| d.starts_with(b"\x7fELF")) {
            report.status = BinaryStatus::ForeignArch;
        }
        return BinaryScan { report, hits, warnings };
    }

    let image = match load_elf(content, kind) {
        Ok(image) => image,
        Err(e) => {
            let report = failed(report, &e, &mut warnings);
            return BinaryScan { report, hits, warnings };
        }
    };
    let companion = if needs_companion(&image) {
        companion.get(&mut warnings)
    } else {
        None
    };
    let lines = match load_line_table(content, &image, companion) {
        Ok(lines) => lines,
        Err(message) => {
            warnings.push(Warning::new(subject(), format!("lineage unavailable: {message}")));
            None
        }
    };
    scan_image(&image, lines.as_ref(), None, options, &mut report, &mut hits);
    BinaryScan { report, hits, warnings }
}

/// Scans one binary file that is already known to be a binary.
pub fn scan_binary_bytes(
    package: &str,
    path: &str,
    content: &[u8],
    kind: BinaryKind,
    companion: Option<&DebugCompanion>,
    options: ScanOptions,
) -> BinaryScan {
    let mut lazy = LazyCompanion::none();
    if let Some(c) = companion {
        lazy.loaded = Some(Some(c.clone()));
    }
    scan_with_companion(package, path, content, kind, &mut lazy, options)
}

/// Picks a kind for a file that failed the detection rules.
fn forced_kind(content: &[u8]) -> BinaryKind {
    if content.starts_with(b"!<arch>\n") {
        return BinaryKind::StaticArchive;
    }
    match classify_elf(content) {
        Some(ElfClassification::Executable) => BinaryKind::Executable,
        Some(ElfClassification::PieExecutable) => BinaryKind::PieExecutable,
        _ => BinaryKind::SharedLibrary,
    }
}

fn mode_bits(path: &Path) -> std::io::Result<u32> {
    let meta = std::fs::metadata(path)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        Ok(meta.permissions().mode())
    }
    #[cfg(not(unix))]
    {
        let _ = meta;
        Ok(0)
    }
}

/// Single-file mode. Files failing the detection rules are rejected unless
/// `force` is set.
pub fn scan_file(path: &Path, force: bool, options: ScanOptions) -> Result<BinaryScan> {
    let content = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mode = mode_bits(path).map_err(|e| Error::io(path, e))?;
    let display = path.to_string_lossy();
    let kind = match detect_binary(&display, mode, &content) {
        Some(kind) => kind,
        None if force => forced_kind(&content),
        None => return Err(Error::NotABinary(display.into_owned())),
    };
    Ok(scan_binary_bytes("", &display, &content, kind, None, options))
}

/// Everything one `.deb` contributed.
#[derive(Debug, Clone)]
pub struct PackageScan {
    pub meta: PackageMeta,
    /// Corpus-relative path of the `.deb`.
    pub source: String,
    pub sha256: String,
    /// `None` when the archive itself could not be opened.
    pub binaries: Option<Vec<BinaryReport>>,
    pub warnings: Vec<Warning>,
}

pub fn scan_package(
    item: CorpusItem,
    root: &Path,
    debug: Option<&DebugSource>,
    options: ScanOptions,
) -> PackageScan {
    let source = item
        .path
        .strip_prefix(root)
        .unwrap_or(&item.path)
        .to_string_lossy()
        .replace('\\', "/");
    let sha256 = hex::encode(Sha256::digest(&item.bytes));
    let mut warnings = Vec::new();
    let archive = match open_package(&item.bytes, item.meta.clone()) {
        Ok(archive) => archive,
        Err(e) => {
            warnings.push(Warning::new(&source, e));
            return PackageScan {
                meta: item.meta,
                source,
                sha256,
                binaries: None,
                warnings,
            };
        }
    };
    if let Some(mismatch) = archive.control_mismatch() {
        warnings.push(Warning::new(&source, mismatch));
    }
    let meta = archive.meta.clone();
    let mut companion = LazyCompanion::new(&meta, debug);
    let mut binaries = Vec::new();
    for entry in &archive.entries {
        let Some(kind) = detect_binary(&entry.path, entry.mode, &entry.content) else {
            continue;
        };
        let scan = scan_with_companion(
            &meta.name,
            &entry.path,
            &entry.content,
            kind,
            &mut companion,
            options,
        );
        warnings.extend(scan.warnings);
        binaries.push(scan.report);
    }
    PackageScan {
        meta: item.meta,
        source,
        sha256,
        binaries: Some(binaries),
        warnings,
    }
}

/// Result of reducing many package scans.
#[derive(Debug, Clone, Default)]
pub struct Reduced {
    pub report: CorpusReport,
    /// (source, package, version, sha256) for every package counted, in
    /// corpus order.
    pub packages: Vec<(String, String, String, String)>,
    pub warnings: Vec<Warning>,
}

/// Folds package scans in corpus order. The first `.deb` of a given package
/// name wins; later ones are reported and skipped.
pub fn reduce(scans: impl IntoIterator<Item = PackageScan>) -> Reduced {
    let mut out = Reduced::default();
    for scan in scans {
        out.warnings.extend(scan.warnings);
        let Some(binaries) = scan.binaries else {
            continue;
        };
        let name = scan.meta.name.clone();
        if out.report.packages.contains_key(&name) {
            out.warnings.push(Warning::new(
                &scan.source,
                format!("package {name} already scanned from an earlier file; skipped"),
            ));
            continue;
        }
        out.report.add_package(name.clone(), scan.meta.version.clone());
        for binary in binaries {
            if let Err(e) = out.report.add_binary(binary) {
                out.warnings.push(Warning::new(&scan.source, e));
            }
        }
        out.packages
            .push((scan.source, name, scan.meta.version, scan.sha256));
    }
    out.warnings.sort();
    out
}

/// Scans loose files under each root as if every root were one package,
/// named after the root path.
pub fn scan_tree(roots: &[PathBuf], options: ScanOptions, execution: Execution) -> Reduced {
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    let mut warnings = Vec::new();
    for root in roots {
        let package = root.to_string_lossy().into_owned();
        for entry in walkdir::WalkDir::new(root).follow_links(false) {
            match entry {
                Ok(e) if e.file_type().is_file() => files.push((package.clone(), e.into_path())),
                Ok(_) => {}
                Err(e) => warnings.push(Warning::new(&package, e)),
            }
        }
    }
    files.sort_by(|a, b| (&a.0, a.1.as_os_str()).cmp(&(&b.0, b.1.as_os_str())));

    let results = run_ordered(files.into_iter(), execution, |(package, path)| {
        scan_tree_file(&package, &path, options)
    });

    let mut report = CorpusReport::new();
    let mut packages = Vec::new();
    for root in roots {
        let name = root.to_string_lossy().into_owned();
        if !report.packages.contains_key(&name) {
            report.add_package(name.clone(), "");
            packages.push((name.clone(), name, String::new(), String::new()));
        }
    }
    for result in results {
        match result {
            Ok(Some(scan)) => {
                warnings.extend(scan.warnings);
                if let Err(e) = report.add_binary(scan.report) {
                    warnings.push(Warning::new("tree", e));
                }
            }
            Ok(None) => {}
            Err(w) => warnings.push(w),
        }
    }
    warnings.sort();
    Reduced {
        report,
        packages,
        warnings,
    }
}

fn scan_tree_file(
    package: &str,
    path: &Path,
    options: ScanOptions,
) -> std::result::Result<Option<BinaryScan>, Warning> {
    let display = path.to_string_lossy();
    let mode = mode_bits(path).map_err(|e| Warning::new(display.as_ref(), e))?;
    let name = display.rsplit('/').next().unwrap_or(&display);
    // Name-only candidates and exec-bit files are the only ones worth reading.
    if mode & 0o111 == 0 && detect_binary(name, 0, b"").is_none() {
        return Ok(None);
    }
    let content = std::fs::read(path).map_err(|e| Warning::new(display.as_ref(), e))?;
    let Some(kind) = detect_binary(&display, mode, &content) else {
        return Ok(None);
    };
    Ok(Some(scan_binary_bytes(package, &display, &content, kind, None, options)))
}
