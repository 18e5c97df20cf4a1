//! Binary-file detection and ELF loading.

mod detect;
mod elf;

use crate::ar;
use crate::error::{Error, Result};

pub use detect::{detect_binary, BinaryKind};
pub(crate) use detect::{classify_elf, ElfClassification};
pub use elf::{elf_machine, load_elf, ElfImage, ExecRange, FunctionSpan, Machine};

/// Regular members of a static library, in stored order. The symbol index and
/// the extended-name table are consumed, not returned.
pub fn unpack_static_archive(content: &[u8]) -> Result<Vec<(String, Vec<u8>)>> {
    if content.starts_with(b"!<thin>\n") {
        return Err(Error::MalformedArchive(
            "thin archives reference external files".into(),
        ));
    }
    Ok(ar::parse(content)?
        .into_iter()
        .filter(|m| m.kind == ar::MemberKind::Regular)
        .map(|m| (m.name, m.data.to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_members_in_order() {
        let raw = ar::write(&[("one.o", b"\x7fELF1"), ("two.o", b"\x7fELF2")]);
        let members = unpack_static_archive(&raw).unwrap();
        let names: Vec<_> = members.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["one.o", "two.o"]);
    }

    #[test]
    fn symbol_index_only() {
        let raw = ar::write(&[("/", b"\0\0\0\0")]);
        assert!(unpack_static_archive(&raw).unwrap().is_empty());
    }

    #[test]
    fn not_an_archive() {
        assert!(matches!(unpack_static_archive(b"hello"), Err(Error::MalformedArchive(_))));
        assert!(matches!(unpack_static_archive(b"!<thin>\n"), Err(Error::MalformedArchive(_))));
    }
}
