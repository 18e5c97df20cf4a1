//! Per-binary records, the mergeable corpus aggregate, and the derived
//! datasets computed from it.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::binobj::BinaryKind;
use crate::classify::{IsaClass, TargetHit, TargetMode};
use crate::error::{Error, Result};
use crate::lineage::{is_shared_library_origin, normalize_path};

/// Function-name bucket for hits outside every function span.
pub const UNATTRIBUTED: &str = "<unattributed>";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub sse: u64,
    pub avx: u64,
    pub other: u64,
}

impl ClassCounts {
    pub fn get(&self, class: IsaClass) -> u64 {
        match class {
            IsaClass::Sse => self.sse,
            IsaClass::Avx => self.avx,
            IsaClass::Other => self.other,
        }
    }

    pub fn add(&mut self, class: IsaClass, n: u64) {
        match class {
            IsaClass::Sse => self.sse += n,
            IsaClass::Avx => self.avx += n,
            IsaClass::Other => self.other += n,
        }
    }

    pub fn total(&self) -> u64 {
        self.sse + self.avx + self.other
    }

    fn absorb(&mut self, other: &ClassCounts) {
        self.sse += other.sse;
        self.avx += other.avx;
        self.other += other.other;
    }
}

/// How far a binary got through the pipeline. Every status counts in
/// binary-file denominators; only `scanned` ones can carry hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryStatus {
    Scanned,
    ForeignArch,
    ParseFailed,
}

impl BinaryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryStatus::Scanned => "scanned",
            BinaryStatus::ForeignArch => "foreign_arch",
            BinaryStatus::ParseFailed => "parse_failed",
        }
    }
}

fn add_count(map: &mut BTreeMap<String, u64>, key: &str, n: u64) {
    if let Some(v) = map.get_mut(key) {
        *v += n;
    } else {
        map.insert(key.to_string(), n);
    }
}

fn absorb_map(into: &mut BTreeMap<String, u64>, from: &BTreeMap<String, u64>) {
    for (k, v) in from {
        add_count(into, k, *v);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryReport {
    pub package: String,
    pub binary_path: String,
    pub kind: BinaryKind,
    pub status: BinaryStatus,
    pub n_instructions: u64,
    pub n_invalid_bytes: u64,
    pub n_target: u64,
    pub n_explicit: u64,
    pub n_implicit: u64,
    /// `repne movs*`: not targets, counted for reference.
    pub n_repne_movs: u64,
    pub class_counts: ClassCounts,
    pub mnemonic_counts: BTreeMap<String, u64>,
    pub lineage_known: u64,
    pub lineage_library: u64,
    pub library_path_counts: BTreeMap<String, u64>,
    pub function_counts: BTreeMap<String, u64>,
}

impl BinaryReport {
    pub fn new(package: impl Into<String>, binary_path: impl Into<String>, kind: BinaryKind) -> Self {
        BinaryReport {
            package: package.into(),
            binary_path: binary_path.into(),
            kind,
            status: BinaryStatus::Scanned,
            n_instructions: 0,
            n_invalid_bytes: 0,
            n_target: 0,
            n_explicit: 0,
            n_implicit: 0,
            n_repne_movs: 0,
            class_counts: ClassCounts::default(),
            mnemonic_counts: BTreeMap::new(),
            lineage_known: 0,
            lineage_library: 0,
            library_path_counts: BTreeMap::new(),
            function_counts: BTreeMap::new(),
        }
    }

    pub fn with_status(mut self, status: BinaryStatus) -> Self {
        self.status = status;
        self
    }

    /// Records one target hit; `function` is the containing function, if any.
    pub fn add_hit(&mut self, hit: &TargetHit, function: Option<&str>) {
        self.n_target += 1;
        match hit.mode {
            TargetMode::ExplicitVector => self.n_explicit += 1,
            TargetMode::ImplicitRepMovs => self.n_implicit += 1,
        }
        self.class_counts.add(hit.isa_class, 1);
        add_count(&mut self.mnemonic_counts, hit.mnemonic, 1);
        if let Some(loc) = &hit.lineage {
            self.lineage_known += 1;
            if is_shared_library_origin(loc) {
                self.lineage_library += 1;
                add_count(&mut self.library_path_counts, &normalize_path(&loc.path), 1);
            }
        }
        add_count(&mut self.function_counts, function.unwrap_or(UNATTRIBUTED), 1);
    }

    /// Folds another report's counts into this one (static-archive members).
    pub fn absorb(&mut self, other: &BinaryReport) {
        self.n_instructions += other.n_instructions;
        self.n_invalid_bytes += other.n_invalid_bytes;
        self.n_target += other.n_target;
        self.n_explicit += other.n_explicit;
        self.n_implicit += other.n_implicit;
        self.n_repne_movs += other.n_repne_movs;
        self.class_counts.absorb(&other.class_counts);
        absorb_map(&mut self.mnemonic_counts, &other.mnemonic_counts);
        self.lineage_known += other.lineage_known;
        self.lineage_library += other.lineage_library;
        absorb_map(&mut self.library_path_counts, &other.library_path_counts);
        absorb_map(&mut self.function_counts, &other.function_counts);
    }

    /// Checks the partition and lineage invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mnemonics: u64 = self.mnemonic_counts.values().sum();
        let functions: u64 = self.function_counts.values().sum();
        let libraries: u64 = self.library_path_counts.values().sum();
        let checks = [
            (self.class_counts.total() == self.n_target, "class_counts"),
            (mnemonics == self.n_target, "mnemonic_counts"),
            (functions == self.n_target, "function_counts"),
            (self.n_explicit + self.n_implicit == self.n_target, "mode counts"),
            (libraries == self.lineage_library, "library_path_counts"),
            (self.lineage_library <= self.lineage_known, "lineage_library <= lineage_known"),
            (self.lineage_known <= self.n_target, "lineage_known <= n_target"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(format!("{}:{}: {what} invariant violated", self.package, self.binary_path)),
            None => Ok(()),
        }
    }
}

/// `lineage_library / lineage_known`; absent when no hit has known lineage.
pub fn library_origin_ratio(b: &BinaryReport) -> Option<f64> {
    (b.lineage_known > 0).then(|| b.lineage_library as f64 / b.lineage_known as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageEntry {
    pub version: String,
}

/// Aggregate over a set of packages and the binaries found in them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub packages: BTreeMap<String, PackageEntry>,
    /// Keyed by (package, binary path).
    pub binaries: BTreeMap<(String, String), BinaryReport>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MnemonicWeighting {
    /// Share of all target instructions in the corpus.
    #[default]
    CorpusCount,
    /// Mean of each binary's own mnemonic shares, over binaries with hits.
    PerBinaryMean,
}

impl FromStr for MnemonicWeighting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "corpus" | "corpus-count" => Ok(MnemonicWeighting::CorpusCount),
            "per-binary" | "per-binary-mean" => Ok(MnemonicWeighting::PerBinaryMean),
            other => Err(format!("unknown mnemonic weighting {other:?}")),
        }
    }
}

impl fmt::Display for MnemonicWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MnemonicWeighting::CorpusCount => "corpus-count",
            MnemonicWeighting::PerBinaryMean => "per-binary-mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsaRatio {
    pub package: String,
    pub binary_path: String,
    pub ratio_sse: f64,
    pub ratio_avx: f64,
    pub ratio_other: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineageRatio {
    pub package: String,
    pub binary_path: String,
    pub library_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Share {
    pub key: String,
    pub count: u64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "lowercase")]
pub enum FMax {
    None,
    Multiple,
    Name(String),
}

impl fmt::Display for FMax {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FMax::None => f.write_str("N/A"),
            FMax::Multiple => f.write_str("M/F"),
            FMax::Name(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PackageReport {
    pub package: String,
    pub n_binaries: u64,
    pub n_binaries_with_hits: u64,
    #[serde(rename = "N_T")]
    pub n_t: u64,
    #[serde(rename = "N_F")]
    pub n_f: u64,
    #[serde(rename = "F_MAX")]
    pub f_max: FMax,
}

fn desc_then_key(a: (f64, &str, &str), b: (f64, &str, &str)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.2.cmp(b.2))
        .then_with(|| a.1.cmp(b.1))
}

/// Top-k of a count map by count descending, ties by key; percents of `total`.
fn top_k(counts: BTreeMap<String, u64>, total: u64, k: usize) -> Vec<Share> {
    let mut rows: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows.truncate(k);
    rows.into_iter()
        .map(|(key, count)| Share {
            percent: if total == 0 { 0.0 } else { count as f64 * 100.0 / total as f64 },
            key,
            count,
        })
        .collect()
}

impl CorpusReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_package(&mut self, name: impl Into<String>, version: impl Into<String>) {
        self.packages
            .entry(name.into())
            .or_insert_with(|| PackageEntry { version: version.into() });
    }

    /// Adds a binary, registering its package when needed.
    pub fn add_binary(&mut self, report: BinaryReport) -> Result<()> {
        if !self.packages.contains_key(&report.package) {
            self.add_package(report.package.clone(), "");
        }
        match self.binaries.entry((report.package.clone(), report.binary_path.clone())) {
            Entry::Occupied(_) => Err(Error::OverlapDetected {
                package: report.package,
                path: report.binary_path,
            }),
            Entry::Vacant(slot) => {
                slot.insert(report);
                Ok(())
            }
        }
    }

    /// Union of two reports over disjoint binary sets.
    pub fn merge(mut self, other: CorpusReport) -> Result<CorpusReport> {
        if let Some((package, path)) = other.binaries.keys().find(|k| self.binaries.contains_key(*k)) {
            return Err(Error::OverlapDetected {
                package: package.clone(),
                path: path.clone(),
            });
        }
        for (name, entry) in other.packages {
            match self.packages.entry(name) {
                Entry::Vacant(slot) => {
                    slot.insert(entry);
                }
                Entry::Occupied(mut slot) => {
                    if slot.get().version.is_empty() {
                        slot.insert(entry);
                    }
                }
            }
        }
        self.binaries.extend(other.binaries);
        Ok(self)
    }

    pub fn n_packages(&self) -> usize {
        self.packages.len()
    }

    pub fn n_binaries(&self) -> usize {
        self.binaries.len()
    }

    pub fn binaries_of<'a>(&'a self, package: &'a str) -> impl Iterator<Item = &'a BinaryReport> + 'a {
        self.binaries
            .range((package.to_string(), String::new())..)
            .take_while(move |((p, _), _)| p == package)
            .map(|(_, b)| b)
    }

    /// Packages holding at least one binary file, over all packages.
    pub fn package_binary_ratio(&self) -> Result<f64> {
        if self.packages.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let with_binaries = self
            .packages
            .keys()
            .filter(|p| self.binaries_of(p).next().is_some())
            .count();
        Ok(with_binaries as f64 / self.packages.len() as f64)
    }

    /// Binaries with at least one target hit, over all binary files.
    pub fn binary_target_ratio(&self) -> Result<f64> {
        if self.binaries.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let hit = self.binaries.values().filter(|b| b.n_target > 0).count();
        Ok(hit as f64 / self.binaries.len() as f64)
    }

    /// One class-ratio triple per binary with hits, by `ratio_sse` descending.
    pub fn isa_ratio_series(&self) -> Vec<IsaRatio> {
        let mut series: Vec<IsaRatio> = self
            .binaries
            .values()
            .filter(|b| b.n_target > 0)
            .map(|b| {
                let n = b.n_target as f64;
                IsaRatio {
                    package: b.package.clone(),
                    binary_path: b.binary_path.clone(),
                    ratio_sse: b.class_counts.sse as f64 / n,
                    ratio_avx: b.class_counts.avx as f64 / n,
                    ratio_other: b.class_counts.other as f64 / n,
                }
            })
            .collect();
        series.sort_by(|a, b| {
            desc_then_key(
                (a.ratio_sse, &a.package, &a.binary_path),
                (b.ratio_sse, &b.package, &b.binary_path),
            )
        });
        series
    }

    pub fn mnemonic_table(&self, k: usize, weighting: MnemonicWeighting) -> Vec<Share> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for b in self.binaries.values() {
            absorb_map(&mut counts, &b.mnemonic_counts);
        }
        match weighting {
            MnemonicWeighting::CorpusCount => {
                let total = self.binaries.values().map(|b| b.n_target).sum();
                top_k(counts, total, k)
            }
            MnemonicWeighting::PerBinaryMean => {
                let with_hits: Vec<&BinaryReport> =
                    self.binaries.values().filter(|b| b.n_target > 0).collect();
                let mut means: Vec<Share> = counts
                    .into_iter()
                    .map(|(key, count)| {
                        let sum: f64 = with_hits
                            .iter()
                            .map(|b| {
                                b.mnemonic_counts.get(&key).copied().unwrap_or(0) as f64
                                    / b.n_target as f64
                            })
                            .sum();
                        Share {
                            percent: sum * 100.0 / with_hits.len() as f64,
                            key,
                            count,
                        }
                    })
                    .collect();
                means.sort_by(|a, b| b.percent.total_cmp(&a.percent).then_with(|| a.key.cmp(&b.key)));
                means.truncate(k);
                means
            }
        }
    }

    /// Per-binary library-origin ratio, over binaries with known lineage,
    /// descending.
    pub fn lineage_series(&self) -> Vec<LineageRatio> {
        let mut series: Vec<LineageRatio> = self
            .binaries
            .values()
            .filter_map(|b| {
                library_origin_ratio(b).map(|r| LineageRatio {
                    package: b.package.clone(),
                    binary_path: b.binary_path.clone(),
                    library_ratio: r,
                })
            })
            .collect();
        series.sort_by(|a, b| {
            desc_then_key(
                (a.library_ratio, &a.package, &a.binary_path),
                (b.library_ratio, &b.package, &b.binary_path),
            )
        });
        series
    }

    /// Share of library-origin hits per source path, top-k.
    pub fn library_share(&self, k: usize) -> Vec<Share> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for b in self.binaries.values() {
            absorb_map(&mut counts, &b.library_path_counts);
        }
        let total = counts.values().sum();
        top_k(counts, total, k)
    }

    pub fn package_detail(&self, package: &str) -> Result<PackageReport> {
        if !self.packages.contains_key(package) {
            return Err(Error::UnknownPackage(package.to_string()));
        }
        let mut report = PackageReport {
            package: package.to_string(),
            n_binaries: 0,
            n_binaries_with_hits: 0,
            n_t: 0,
            n_f: 0,
            f_max: FMax::None,
        };
        let mut functions: BTreeMap<String, u64> = BTreeMap::new();
        for b in self.binaries_of(package) {
            report.n_binaries += 1;
            report.n_t += b.n_target;
            if b.n_target > 0 {
                report.n_binaries_with_hits += 1;
            }
            absorb_map(&mut functions, &b.function_counts);
        }
        report.n_f = report.n_binaries_with_hits;
        if report.n_t > 0 {
            let max = functions.values().copied().max().unwrap_or(0);
            let mut leaders = functions.iter().filter(|(_, c)| **c == max);
            report.f_max = match (leaders.next(), leaders.next()) {
                (Some((name, _)), None) => FMax::Name(name.clone()),
                (Some(_), Some(_)) => FMax::Multiple,
                (None, _) => FMax::None,
            };
        }
        Ok(report)
    }

    /// Table-4 rows for every package, in name order.
    pub fn package_details(&self) -> Vec<PackageReport> {
        self.packages
            .keys()
            .map(|p| self.package_detail(p).expect("package is present"))
            .collect()
    }
}
