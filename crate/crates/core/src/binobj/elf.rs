use std::collections::{BTreeMap, HashMap};

use object::elf;
use object::read::elf::{ElfFile64, FileHeader, SectionHeader, Sym};
use object::{Endianness, Object, ObjectSection, ObjectSymbol, SectionIndex};
use serde::Serialize;

use crate::error::{Error, Result};

use super::BinaryKind;

const EM_X86_64: u16 = 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Machine {
    X86_64,
    Other(u16),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecRange {
    pub address: u64,
    pub bytes: Vec<u8>,
    pub section_name: String,
}

impl ExecRange {
    pub fn end(&self) -> u64 {
        self.address + self.bytes.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FunctionSpan {
    pub start: u64,
    pub size: u64,
    pub name: String,
    pub out_of_text: bool,
}

impl FunctionSpan {
    pub fn contains(&self, address: u64) -> bool {
        address >= self.start && address - self.start < self.size
    }
}

/// A parsed x86-64 ELF object, reduced to what instruction scanning and
/// attribution need. Relocatable objects get synthetic addresses equal to
/// each section's file offset so their sections never overlap.
#[derive(Debug, Clone)]
pub struct ElfImage {
    pub kind: BinaryKind,
    pub machine: Machine,
    pub relocatable: bool,
    pub exec_ranges: Vec<ExecRange>,
    pub functions: Vec<FunctionSpan>,
    pub build_id: Option<Vec<u8>>,
    pub debug_link: Option<String>,
    pub has_debug_line: bool,
}

impl ElfImage {
    /// Function span containing `address`.
    pub fn function_at(&self, address: u64) -> Option<&FunctionSpan> {
        let idx = self.functions.partition_point(|f| f.start <= address);
        let candidate = self.functions.get(idx.checked_sub(1)?)?;
        candidate.contains(address).then_some(candidate)
    }

    pub fn build_id_hex(&self) -> Option<String> {
        self.build_id.as_deref().map(hex::encode)
    }
}

/// Reads the ELF machine field without a full parse.
pub fn elf_machine(content: &[u8]) -> Option<u16> {
    if content.len() < 20 || !content.starts_with(b"\x7fELF") {
        return None;
    }
    let b = [content[18], content[19]];
    Some(if content[5] == 2 { u16::from_be_bytes(b) } else { u16::from_le_bytes(b) })
}

fn section_table_end(content: &[u8]) -> Option<u64> {
    let shoff = u64::from_le_bytes(content.get(40..48)?.try_into().ok()?);
    let shentsize = u16::from_le_bytes(content.get(58..60)?.try_into().ok()?);
    let shnum = u16::from_le_bytes(content.get(60..62)?.try_into().ok()?);
    shoff.checked_add(u64::from(shentsize) * u64::from(shnum))
}

pub fn load_elf(content: &[u8], kind: BinaryKind) -> Result<ElfImage> {
    if content.len() < 64 {
        return Err(Error::TruncatedElf(format!("{} bytes is shorter than an ELF header", content.len())));
    }
    if !content.starts_with(b"\x7fELF") {
        return Err(Error::MalformedElf("missing ELF magic".into()));
    }
    let machine = elf_machine(content).unwrap_or_default();
    if machine != EM_X86_64 || content[4] != 2 {
        return Err(Error::NonX86 { machine });
    }
    let file = ElfFile64::<Endianness>::parse(content).map_err(|e| {
        if section_table_end(content).is_some_and(|end| end > content.len() as u64) {
            Error::TruncatedElf(e.to_string())
        } else {
            Error::MalformedElf(e.to_string())
        }
    })?;
    let endian = file.endian();
    let relocatable = file.elf_header().e_type(endian) == elf::ET_REL;

    let mut bases: HashMap<SectionIndex, (u64, u64)> = HashMap::new();
    let mut exec_ranges = Vec::new();
    let mut has_debug_line = false;
    for section in file.sections() {
        let header = section.elf_section_header();
        let name = section.name().unwrap_or("");
        if matches!(name, ".debug_line" | ".zdebug_line") {
            has_debug_line = true;
        }
        let base = if relocatable {
            header.sh_offset(endian)
        } else {
            header.sh_addr(endian)
        };
        bases.insert(section.index(), (base, header.sh_size(endian)));
        let flags = header.sh_flags(endian);
        if flags & u64::from(elf::SHF_EXECINSTR) == 0 || header.sh_type(endian) == elf::SHT_NOBITS {
            continue;
        }
        let data = section
            .data()
            .map_err(|e| Error::TruncatedElf(format!("section {name}: {e}")))?;
        if data.is_empty() {
            continue;
        }
        exec_ranges.push(ExecRange {
            address: base,
            bytes: data.to_vec(),
            section_name: name.to_string(),
        });
    }
    exec_ranges.sort_by_key(|r| r.address);
    let mut kept: Vec<ExecRange> = Vec::with_capacity(exec_ranges.len());
    for range in exec_ranges {
        if kept.last().is_some_and(|prev| range.address < prev.end()) {
            log::warn!("dropping overlapping executable section {}", range.section_name);
            continue;
        }
        kept.push(range);
    }

    let mut raw = collect_function_symbols(&file, file.symbols(), &bases);
    if raw.is_empty() {
        raw = collect_function_symbols(&file, file.dynamic_symbols(), &bases);
    }
    let functions = resolve_spans(raw, &kept);

    let build_id = file.build_id().ok().flatten().map(<[u8]>::to_vec);
    let debug_link = file
        .gnu_debuglink()
        .ok()
        .flatten()
        .map(|(name, _crc)| String::from_utf8_lossy(name).into_owned());

    Ok(ElfImage {
        kind,
        machine: Machine::X86_64,
        relocatable,
        exec_ranges: kept,
        functions,
        build_id,
        debug_link,
        has_debug_line,
    })
}

/// A defined function symbol before extent resolution.
#[derive(Debug, Clone)]
pub(crate) struct RawSymbol {
    pub name: String,
    pub start: u64,
    pub size: u64,
    /// Start and end of the containing section, in image addresses.
    pub section: (u64, u64),
}

fn collect_function_symbols<'data, 'file, I>(
    file: &ElfFile64<'data, Endianness>,
    symbols: I,
    bases: &HashMap<SectionIndex, (u64, u64)>,
) -> Vec<RawSymbol>
where
    I: Iterator<Item = object::read::elf::ElfSymbol64<'data, 'file, Endianness>>,
    'data: 'file,
{
    let endian = file.endian();
    let mut out = Vec::new();
    for sym in symbols {
        let st_type = sym.elf_symbol().st_type();
        if st_type != elf::STT_FUNC && st_type != elf::STT_GNU_IFUNC {
            continue;
        }
        let Some(index) = sym.section_index() else { continue };
        let Some(&(base, section_size)) = bases.get(&index) else { continue };
        let Ok(name) = sym.name() else { continue };
        if name.is_empty() {
            continue;
        }
        let value = sym.elf_symbol().st_value(endian);
        let start = if file.elf_header().e_type(endian) == elf::ET_REL {
            base + value
        } else {
            value
        };
        out.push(RawSymbol {
            name: name.to_string(),
            start,
            size: sym.size(),
            section: (base, base + section_size),
        });
    }
    out
}

/// Gives zero-size symbols an extent reaching the next function start in the
/// same section, then merges overlapping spans under the smallest name.
pub(crate) fn resolve_spans(mut raw: Vec<RawSymbol>, exec: &[ExecRange]) -> Vec<FunctionSpan> {
    raw.sort_by(|a, b| (a.start, &a.name).cmp(&(b.start, &b.name)));
    raw.dedup_by(|b, a| a.start == b.start && a.name == b.name);

    let mut by_section: BTreeMap<(u64, u64), Vec<u64>> = BTreeMap::new();
    for sym in &raw {
        by_section.entry(sym.section).or_default().push(sym.start);
    }
    for sym in raw.iter_mut().filter(|s| s.size == 0) {
        let starts = &by_section[&sym.section];
        let next = starts
            .iter()
            .copied()
            .find(|&s| s > sym.start)
            .unwrap_or(sym.section.1);
        sym.size = next.saturating_sub(sym.start);
    }

    let mut merged: Vec<FunctionSpan> = Vec::new();
    let mut current: Option<(u64, u64, String)> = None;
    for sym in raw.into_iter().filter(|s| s.size > 0) {
        let end = sym.start + sym.size;
        current = match current.take() {
            Some((start, cur_end, name)) if sym.start < cur_end => {
                let name = if sym.name < name { sym.name } else { name };
                Some((start, cur_end.max(end), name))
            }
            Some((start, cur_end, name)) => {
                merged.push(span(start, cur_end, name, exec));
                Some((sym.start, end, sym.name))
            }
            None => Some((sym.start, end, sym.name)),
        };
    }
    if let Some((start, end, name)) = current {
        merged.push(span(start, end, name, exec));
    }
    merged
}

fn span(start: u64, end: u64, name: String, exec: &[ExecRange]) -> FunctionSpan {
    let in_text = exec
        .iter()
        .any(|r| start >= r.address && end <= r.end());
    FunctionSpan {
        start,
        size: end - start,
        name,
        out_of_text: !in_text,
    }
}
