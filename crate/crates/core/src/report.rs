//! End-to-end runs: configuration, the corpus scan, and dataset output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::classify::IsaMode;
use crate::corpus::{enumerate_corpus, parse_repo_index, DebugSource, DEFAULT_REQUEST_DELAY_MS};
use crate::error::{Error, Result};
use crate::metrics::{CorpusReport, FMax, MnemonicWeighting};
use crate::scan::{reduce, run_ordered, scan_package, scan_tree, Execution, Reduced, ScanOptions};
use crate::warning::Warning;

pub const DATASETS: [&str; 7] = [
    "table2_package_ratio",
    "fig4_binary_ratio",
    "fig5_isa_series",
    "table3_mnemonics",
    "fig6_lineage_series",
    "fig7_library_share",
    "table4_package_detail",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    #[default]
    Both,
}

impl Format {
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "both" => Ok(Format::Both),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanConfig {
    pub corpus_root: PathBuf,
    /// Treat `corpus_root` (and `extra_roots`) as plain directory trees
    /// instead of a set of `.deb` files.
    pub tree: bool,
    pub extra_roots: Vec<PathBuf>,
    /// Optional repository index supplying package metadata.
    pub index: Option<PathBuf>,
    pub debug_source: Option<String>,
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub format: Format,
    pub isa_mode: IsaMode,
    pub top_k: usize,
    pub mnemonic_weighting: MnemonicWeighting,
    #[serde(skip)]
    pub jobs: usize,
    pub request_delay_ms: u64,
}

impl ScanConfig {
    pub fn new(corpus_root: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        ScanConfig {
            corpus_root: corpus_root.into(),
            tree: false,
            extra_roots: Vec::new(),
            index: None,
            debug_source: None,
            output_dir: output_dir.into(),
            format: Format::Both,
            isa_mode: IsaMode::Encoding,
            top_k: 10,
            mnemonic_weighting: MnemonicWeighting::CorpusCount,
            jobs: 1,
            request_delay_ms: DEFAULT_REQUEST_DELAY_MS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.tree && (self.index.is_some() || self.debug_source.is_some()) {
            return Err(Error::Config("tree mode takes no index or debug source".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ScanOutcome {
    pub report: CorpusReport,
    pub warnings: Vec<Warning>,
    pub corpus_sha256: Option<String>,
}

impl ScanOutcome {
    /// 0 when clean, 2 when the run finished with warnings.
    pub fn exit_code(&self) -> i32 {
        if self.warnings.is_empty() {
            0
        } else {
            2
        }
    }
}

#[derive(Serialize)]
struct ManifestPackage<'a> {
    source: &'a str,
    name: &'a str,
    version: &'a str,
    sha256: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ScanConfig,
    corpus_sha256: Option<&'a str>,
    n_packages: usize,
    n_binaries: usize,
    packages: Vec<ManifestPackage<'a>>,
    warnings: &'a [Warning],
}

/// Runs the whole pipeline and writes every dataset into `output_dir`.
/// Per-file problems become warnings; only configuration, I/O on the output
/// side, or an empty corpus are errors.
pub fn run_scan(config: &ScanConfig) -> Result<ScanOutcome> {
    config.validate()?;
    let options = ScanOptions {
        isa_mode: config.isa_mode,
        keep_hits: false,
    };
    let execution = Execution::from_jobs(config.jobs);
    let (reduced, corpus_sha256) = if config.tree {
        let mut roots = vec![config.corpus_root.clone()];
        roots.extend(config.extra_roots.iter().cloned());
        for root in &roots {
            if !root.is_dir() {
                return Err(Error::io(
                    root,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
                ));
            }
        }
        (scan_tree(&roots, options, execution), None)
    } else {
        scan_debs(config, options, execution)?
    };
    if reduced.report.packages.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    write_outputs(config, &reduced, corpus_sha256.as_deref())?;
    Ok(ScanOutcome {
        report: reduced.report,
        warnings: reduced.warnings,
        corpus_sha256,
    })
}

fn scan_debs(
    config: &ScanConfig,
    options: ScanOptions,
    execution: Execution,
) -> Result<(Reduced, Option<String>)> {
    let index = match &config.index {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(parse_repo_index(&text)?)
        }
        None => None,
    };
    let debug = match &config.debug_source {
        Some(spec) => Some(DebugSource::from_spec(
            spec,
            Duration::from_millis(config.request_delay_ms),
        )?),
        None => None,
    };
    let stream = enumerate_corpus(&config.corpus_root, index.as_deref())?;
    let root = config.corpus_root.as_path();
    let results = run_ordered(stream, execution, |item| match item {
        Ok(item) => Ok(scan_package(item, root, debug.as_ref(), options)),
        Err(warning) => Err(warning),
    });

    let mut hasher = Sha256::new();
    let mut scans = Vec::with_capacity(results.len());
    let mut unreadable = Vec::new();
    for result in results {
        match result {
            Ok(scan) => {
                hasher.update(scan.source.as_bytes());
                hasher.update([0]);
                hasher.update(scan.sha256.as_bytes());
                hasher.update(b"\n");
                scans.push(scan);
            }
            Err(warning) => unreadable.push(warning),
        }
    }
    let mut reduced = reduce(scans);
    reduced.warnings.extend(unreadable);
    reduced.warnings.sort();
    Ok((reduced, Some(hex::encode(hasher.finalize()))))
}

#[derive(Serialize)]
struct RatioRow {
    n_total: usize,
    n_matching: usize,
    ratio: Option<f64>,
}

#[derive(Serialize)]
struct IsaRow<'a> {
    rank: usize,
    package: &'a str,
    binary_path: &'a str,
    ratio_sse: f64,
    ratio_avx: f64,
    ratio_other: f64,
}

#[derive(Serialize)]
struct ShareRow<'a> {
    rank: usize,
    key: &'a str,
    count: u64,
    percent: f64,
}

#[derive(Serialize)]
struct LineageRow<'a> {
    rank: usize,
    package: &'a str,
    binary_path: &'a str,
    library_ratio: f64,
}

#[derive(Serialize)]
struct DetailRow<'a> {
    package: &'a str,
    n_binaries: u64,
    n_binaries_with_hits: u64,
    #[serde(rename = "N_T")]
    n_t: u64,
    #[serde(rename = "N_F")]
    n_f: u64,
    #[serde(rename = "F_MAX")]
    f_max: String,
    f_max_kind: &'static str,
}

#[derive(Serialize)]
struct BinaryRow<'a> {
    package: &'a str,
    binary_path: &'a str,
    kind: &'static str,
    status: &'static str,
    n_instructions: u64,
    n_invalid_bytes: u64,
    n_target: u64,
    n_explicit: u64,
    n_implicit: u64,
    n_repne_movs: u64,
    sse: u64,
    avx: u64,
    other: u64,
    lineage_known: u64,
    lineage_library: u64,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    writer.write_record(columns)?;
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Writes `{dataset, columns, rows}` as JSON and/or a CSV with the same
/// columns, according to `format`.
fn write_dataset<T: Serialize>(
    dir: &Path,
    name: &str,
    format: Format,
    columns: &[&str],
    extra: Option<(&str, serde_json::Value)>,
    rows: &[T],
) -> Result<()> {
    if format.json() {
        let mut doc = serde_json::Map::new();
        doc.insert("dataset".into(), name.into());
        if let Some((key, value)) = extra {
            doc.insert(key.into(), value);
        }
        doc.insert("columns".into(), columns.into());
        doc.insert("rows".into(), serde_json::to_value(rows)?);
        write_json(&dir.join(format!("{name}.json")), &doc)?;
    }
    if format.csv() {
        write_csv(&dir.join(format!("{name}.csv")), columns, rows)?;
    }
    Ok(())
}

fn f_max_kind(f: &FMax) -> &'static str {
    match f {
        FMax::None => "none",
        FMax::Multiple => "multiple",
        FMax::Name(_) => "name",
    }
}

fn write_outputs(config: &ScanConfig, reduced: &Reduced, corpus_sha256: Option<&str>) -> Result<()> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = &reduced.report;
    let format = config.format;
    let ratio_columns = ["n_total", "n_matching", "ratio"];

    let with_binaries = report
        .packages
        .keys()
        .filter(|p| report.binaries_of(p).next().is_some())
        .count();
    write_dataset(
        dir,
        "table2_package_ratio",
        format,
        &ratio_columns,
        None,
        &[RatioRow {
            n_total: report.n_packages(),
            n_matching: with_binaries,
            ratio: report.package_binary_ratio().ok(),
        }],
    )?;

    let with_hits = report.binaries.values().filter(|b| b.n_target > 0).count();
    write_dataset(
        dir,
        "fig4_binary_ratio",
        format,
        &ratio_columns,
        None,
        &[RatioRow {
            n_total: report.n_binaries(),
            n_matching: with_hits,
            ratio: report.binary_target_ratio().ok(),
        }],
    )?;

    let isa = report.isa_ratio_series();
    let rows: Vec<IsaRow> = isa
        .iter()
        .enumerate()
        .map(|(i, r)| IsaRow {
            rank: i + 1,
            package: &r.package,
            binary_path: &r.binary_path,
            ratio_sse: r.ratio_sse,
            ratio_avx: r.ratio_avx,
            ratio_other: r.ratio_other,
        })
        .collect();
    write_dataset(
        dir,
        "fig5_isa_series",
        format,
        &["rank", "package", "binary_path", "ratio_sse", "ratio_avx", "ratio_other"],
        Some(("isa_mode", config.isa_mode.to_string().into())),
        &rows,
    )?;

    let share_columns = ["rank", "key", "count", "percent"];
    let mnemonics = report.mnemonic_table(config.top_k, config.mnemonic_weighting);
    let rows: Vec<ShareRow> = mnemonics
        .iter()
        .enumerate()
        .map(|(i, s)| ShareRow {
            rank: i + 1,
            key: &s.key,
            count: s.count,
            percent: s.percent,
        })
        .collect();
    write_dataset(
        dir,
        "table3_mnemonics",
        format,
        &share_columns,
        Some(("weighting", config.mnemonic_weighting.to_string().into())),
        &rows,
    )?;

    let lineage = report.lineage_series();
    let rows: Vec<LineageRow> = lineage
        .iter()
        .enumerate()
        .map(|(i, r)| LineageRow {
            rank: i + 1,
            package: &r.package,
            binary_path: &r.binary_path,
            library_ratio: r.library_ratio,
        })
        .collect();
    write_dataset(
        dir,
        "fig6_lineage_series",
        format,
        &["rank", "package", "binary_path", "library_ratio"],
        None,
        &rows,
    )?;

    let libraries = report.library_share(config.top_k);
    let rows: Vec<ShareRow> = libraries
        .iter()
        .enumerate()
        .map(|(i, s)| ShareRow {
            rank: i + 1,
            key: &s.key,
            count: s.count,
            percent: s.percent,
        })
        .collect();
    write_dataset(dir, "fig7_library_share", format, &share_columns, None, &rows)?;

    let details = report.package_details();
    let rows: Vec<DetailRow> = details
        .iter()
        .map(|d| DetailRow {
            package: &d.package,
            n_binaries: d.n_binaries,
            n_binaries_with_hits: d.n_binaries_with_hits,
            n_t: d.n_t,
            n_f: d.n_f,
            f_max: d.f_max.to_string(),
            f_max_kind: f_max_kind(&d.f_max),
        })
        .collect();
    write_dataset(
        dir,
        "table4_package_detail",
        format,
        &["package", "n_binaries", "n_binaries_with_hits", "N_T", "N_F", "F_MAX", "f_max_kind"],
        None,
        &rows,
    )?;

    let binaries: Vec<_> = report.binaries.values().collect();
    if format.json() {
        write_json(&dir.join("binaries.json"), &binaries)?;
    }
    if format.csv() {
        let rows: Vec<BinaryRow> = binaries
            .iter()
            .map(|b| BinaryRow {
                package: &b.package,
                binary_path: &b.binary_path,
                kind: b.kind.as_str(),
                status: b.status.as_str(),
                n_instructions: b.n_instructions,
                n_invalid_bytes: b.n_invalid_bytes,
                n_target: b.n_target,
                n_explicit: b.n_explicit,
                n_implicit: b.n_implicit,
                n_repne_movs: b.n_repne_movs,
                sse: b.class_counts.sse,
                avx: b.class_counts.avx,
                other: b.class_counts.other,
                lineage_known: b.lineage_known,
                lineage_library: b.lineage_library,
            })
            .collect();
        write_csv(
            &dir.join("binaries.csv"),
            &[
                "package",
                "binary_path",
                "kind",
                "status",
                "n_instructions",
                "n_invalid_bytes",
                "n_target",
                "n_explicit",
                "n_implicit",
                "n_repne_movs",
                "sse",
                "avx",
                "other",
                "lineage_known",
                "lineage_library",
            ],
            &rows,
        )?;
    }

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
        corpus_sha256,
        n_packages: report.n_packages(),
        n_binaries: report.n_binaries(),
        packages: reduced
            .packages
            .iter()
            .map(|(source, name, version, sha256)| ManifestPackage {
                source,
                name,
                version,
                sha256,
            })
            .collect(),
        warnings: &reduced.warnings,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// `x` rounded to two significant figures, e.g. 12.34 -> "12", 8.44 -> "8.4".
pub fn two_significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (1 - magnitude).max(0) as usize;
    let scale = 10f64.powi(1 - magnitude);
    let rounded = (x * scale).round() / scale;
    format!("{rounded:.decimals$}")
}

fn percent(ratio: Option<f64>) -> String {
    ratio.map_or_else(|| "n/a".into(), |r| format!("{}%", two_significant(r * 100.0)))
}

/// A short human-readable summary of a report.
pub fn summary(report: &CorpusReport, top_k: usize, weighting: MnemonicWeighting) -> String {
    let mut out = String::new();
    let with_binaries = report
        .packages
        .keys()
        .filter(|p| report.binaries_of(p).next().is_some())
        .count();
    let with_hits = report.binaries.values().filter(|b| b.n_target > 0).count();
    let _ = writeln!(
        out,
        "packages: {} ({} with binary files, {})",
        report.n_packages(),
        with_binaries,
        percent(report.package_binary_ratio().ok())
    );
    let _ = writeln!(
        out,
        "binary files: {} ({} with target instructions, {})",
        report.n_binaries(),
        with_hits,
        percent(report.binary_target_ratio().ok())
    );
    let table = report.mnemonic_table(top_k, weighting);
    if !table.is_empty() {
        let _ = writeln!(out, "top mnemonics ({weighting}):");
        for share in table {
            let _ = writeln!(out, "  {:<16} {}%", share.key, two_significant(share.percent));
        }
    }
    let libraries = report.library_share(top_k);
    if !libraries.is_empty() {
        let _ = writeln!(out, "top library origins:");
        for share in libraries {
            let _ = writeln!(out, "  {:<48} {}%", share.key, two_significant(share.percent));
        }
    }
    out
}
