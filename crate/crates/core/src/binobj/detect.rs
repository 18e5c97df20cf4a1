use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryKind {
    Executable,
    PieExecutable,
    SharedLibrary,
    StaticArchive,
}

impl BinaryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryKind::Executable => "executable",
            BinaryKind::PieExecutable => "pie_executable",
            BinaryKind::SharedLibrary => "shared_library",
            BinaryKind::StaticArchive => "static_archive",
        }
    }
}

const ET_REL: u16 = 1;
const ET_EXEC: u16 = 2;
const ET_DYN: u16 = 3;
const PT_DYNAMIC: u32 = 2;
const PT_INTERP: u32 = 3;
const DT_NULL: u64 = 0;
const DT_FLAGS_1: u64 = 0x6fff_fffb;
const DF_1_PIE: u64 = 0x0800_0000;

/// What the ELF header says about a file, as far as the available bytes allow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ElfClassification {
    Relocatable,
    Executable,
    PieExecutable,
    /// `ET_DYN` without an interpreter or the PIE flag.
    SharedObject,
    Other,
}

/// Little helper over the ELF ident: class and byte order decide every read.
struct Reader<'a> {
    data: &'a [u8],
    is64: bool,
    le: bool,
}

impl Reader<'_> {
    fn u16(&self, off: usize) -> Option<u16> {
        let b: [u8; 2] = self.data.get(off..off + 2)?.try_into().ok()?;
        Some(if self.le { u16::from_le_bytes(b) } else { u16::from_be_bytes(b) })
    }

    fn u32(&self, off: usize) -> Option<u32> {
        let b: [u8; 4] = self.data.get(off..off + 4)?.try_into().ok()?;
        Some(if self.le { u32::from_le_bytes(b) } else { u32::from_be_bytes(b) })
    }

    fn u64(&self, off: usize) -> Option<u64> {
        let b: [u8; 8] = self.data.get(off..off + 8)?.try_into().ok()?;
        Some(if self.le { u64::from_le_bytes(b) } else { u64::from_be_bytes(b) })
    }

    fn word(&self, off: usize) -> Option<u64> {
        if self.is64 {
            self.u64(off)
        } else {
            self.u32(off).map(u64::from)
        }
    }
}

pub(crate) fn has_elf_magic(head: &[u8]) -> bool {
    head.starts_with(b"\x7fELF")
}

/// Mirrors the executable/PIE distinction of the common file-type tool:
/// `ET_EXEC` is an executable; `ET_DYN` is a PIE when it requests an
/// interpreter or carries `DF_1_PIE`.
pub(crate) fn classify_elf(head: &[u8]) -> Option<ElfClassification> {
    if !has_elf_magic(head) || head.len() < 20 {
        return None;
    }
    let r = Reader {
        data: head,
        is64: head[4] == 2,
        le: head[5] != 2,
    };
    let e_type = r.u16(16)?;
    Some(match e_type {
        ET_REL => ElfClassification::Relocatable,
        ET_EXEC => ElfClassification::Executable,
        ET_DYN => {
            if dyn_is_pie(&r).unwrap_or(false) {
                ElfClassification::PieExecutable
            } else {
                ElfClassification::SharedObject
            }
        }
        _ => ElfClassification::Other,
    })
}

fn dyn_is_pie(r: &Reader<'_>) -> Option<bool> {
    let (phoff, phentsize, phnum) = if r.is64 {
        (r.u64(32)?, r.u16(54)?, r.u16(56)?)
    } else {
        (u64::from(r.u32(28)?), r.u16(42)?, r.u16(44)?)
    };
    let mut dynamic = None;
    for i in 0..usize::from(phnum) {
        let ph = usize::try_from(phoff).ok()? + i * usize::from(phentsize);
        let Some(p_type) = r.u32(ph) else { break };
        if p_type == PT_INTERP {
            return Some(true);
        }
        if p_type == PT_DYNAMIC {
            let (offset, size) = if r.is64 {
                (r.u64(ph + 8)?, r.u64(ph + 32)?)
            } else {
                (u64::from(r.u32(ph + 4)?), u64::from(r.u32(ph + 16)?))
            };
            dynamic = Some((offset, size));
        }
    }
    let (offset, size) = dynamic?;
    let entsize = if r.is64 { 16 } else { 8 };
    let start = usize::try_from(offset).ok()?;
    let count = usize::try_from(size).ok()? / entsize;
    for i in 0..count {
        let at = start + i * entsize;
        let Some(tag) = r.word(at) else { break };
        if tag == DT_NULL {
            break;
        }
        if tag == DT_FLAGS_1 {
            let value = r.word(at + entsize / 2)?;
            return Some(value & DF_1_PIE != 0);
        }
    }
    Some(false)
}

/// `.so` followed by zero or more `.<digits>` groups, e.g. `liba.so.1.2`.
pub(crate) fn is_shared_library_name(file_name: &str) -> bool {
    let mut rest = file_name;
    loop {
        if rest.ends_with(".so") {
            return true;
        }
        let Some((head, tail)) = rest.rsplit_once('.') else {
            return false;
        };
        if tail.is_empty() || !tail.bytes().all(|b| b.is_ascii_digit()) {
            return false;
        }
        rest = head;
    }
}

/// Decides whether a file is a binary file.
///
/// Condition one: the execute bit is set and the ELF header identifies an
/// executable or PIE. Condition two: the file name ends in `.so(.digits)*`
/// (shared library) or `.a` (static archive), regardless of permissions or
/// content.
pub fn detect_binary(path: &str, mode_bits: u32, head: &[u8]) -> Option<BinaryKind> {
    if mode_bits & 0o111 != 0 {
        match classify_elf(head) {
            Some(ElfClassification::Executable) => return Some(BinaryKind::Executable),
            Some(ElfClassification::PieExecutable) => return Some(BinaryKind::PieExecutable),
            _ => {}
        }
    }
    let file_name = path.rsplit('/').next().unwrap_or(path);
    if is_shared_library_name(file_name) {
        return Some(BinaryKind::SharedLibrary);
    }
    if file_name.ends_with(".a") {
        return Some(BinaryKind::StaticArchive);
    }
    None
}
