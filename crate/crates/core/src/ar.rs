//! Reader for the Unix `ar` container, shared by `.deb` packages and static
//! libraries. Handles the GNU symbol index (`/`, `/SYM64/`), the GNU
//! extended-name table (`//` + `/<offset>`) and BSD `#1/<len>` names.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"!<arch>\n";
const HEADER_LEN: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberKind {
    Regular,
    SymbolIndex,
    ExtendedNames,
}

#[derive(Debug, Clone)]
pub struct Member<'a> {
    pub name: String,
    pub kind: MemberKind,
    pub data: &'a [u8],
}

pub fn is_ar(content: &[u8]) -> bool {
    content.starts_with(MAGIC)
}

/// Parses every member of an ar archive in stored order.
///
/// Extended names are resolved against the `//` table, which GNU `ar` always
/// stores before the first member that refers to it.
pub fn parse(content: &[u8]) -> Result<Vec<Member<'_>>> {
    if !is_ar(content) {
        return Err(Error::MalformedArchive("missing ar magic".into()));
    }
    let mut members = Vec::new();
    let mut long_names: Option<&[u8]> = None;
    let mut pos = MAGIC.len();
    while pos < content.len() {
        // Some writers pad with a trailing newline after the last member.
        if content.len() - pos == 1 && content[pos] == b'\n' {
            break;
        }
        let header = content.get(pos..pos + HEADER_LEN).ok_or_else(|| {
            Error::MalformedArchive(format!("truncated member header at offset {pos}"))
        })?;
        if &header[58..60] != b"`\n" {
            return Err(Error::MalformedArchive(format!(
                "bad header terminator at offset {pos}"
            )));
        }
        let raw_name = std::str::from_utf8(&header[..16])
            .map_err(|_| Error::MalformedArchive("member name is not ASCII".into()))?
            .trim_end();
        let size = parse_decimal(&header[48..58]).ok_or_else(|| {
            Error::MalformedArchive(format!("bad size field for member {raw_name:?}"))
        })?;
        let data_start = pos + HEADER_LEN;
        let available = content.len().saturating_sub(data_start);
        if size > available {
            return Err(Error::TruncatedMember {
                member: raw_name.to_string(),
                needed: size,
                available,
            });
        }
        let mut data = &content[data_start..data_start + size];
        pos = data_start + size + (size & 1);

        let (name, kind) = match raw_name {
            "/" | "/SYM64/" | "__.SYMDEF" | "__.SYMDEF SORTED" => {
                (raw_name.to_string(), MemberKind::SymbolIndex)
            }
            "//" => {
                long_names = Some(data);
                (raw_name.to_string(), MemberKind::ExtendedNames)
            }
            n if n.starts_with("#1/") => {
                let len = n[3..]
                    .parse::<usize>()
                    .ok()
                    .filter(|&l| l <= data.len())
                    .ok_or_else(|| Error::MalformedArchive(format!("bad BSD name {n:?}")))?;
                let name = String::from_utf8_lossy(&data[..len])
                    .trim_end_matches('\0')
                    .to_string();
                data = &data[len..];
                let kind = if name.starts_with("__.SYMDEF") {
                    MemberKind::SymbolIndex
                } else {
                    MemberKind::Regular
                };
                (name, kind)
            }
            n if n.len() > 1 && n.starts_with('/') && n[1..].bytes().all(|b| b.is_ascii_digit()) => {
                let offset: usize = n[1..].parse().unwrap_or(usize::MAX);
                let table = long_names.ok_or_else(|| {
                    Error::MalformedArchive(format!("{n:?} used before the extended-name table"))
                })?;
                (resolve_long_name(table, offset)?, MemberKind::Regular)
            }
            n => (n.strip_suffix('/').unwrap_or(n).to_string(), MemberKind::Regular),
        };
        members.push(Member { name, kind, data });
    }
    Ok(members)
}

fn resolve_long_name(table: &[u8], offset: usize) -> Result<String> {
    let rest = table
        .get(offset..)
        .ok_or_else(|| Error::MalformedArchive(format!("extended name offset {offset} out of range")))?;
    let end = rest
        .iter()
        .position(|&b| b == b'\n' || b == 0)
        .unwrap_or(rest.len());
    let name = String::from_utf8_lossy(&rest[..end]);
    Ok(name.strip_suffix('/').unwrap_or(&name).to_string())
}

fn parse_decimal(field: &[u8]) -> Option<usize> {
    let s = std::str::from_utf8(field).ok()?.trim();
    if s.is_empty() {
        return None;
    }
    s.parse().ok()
}

/// Serializes members into a GNU-style archive. Names longer than 15 bytes go
/// to the extended-name table. Used to build fixtures and in tests.
pub fn write(members: &[(&str, &[u8])]) -> Vec<u8> {
    let mut table = Vec::new();
    let mut encoded = Vec::with_capacity(members.len());
    for (name, _) in members {
        if name.len() > 15 {
            encoded.push(format!("/{}", table.len()));
            table.extend_from_slice(name.as_bytes());
            table.extend_from_slice(b"/\n");
        } else {
            encoded.push(name.to_string());
        }
    }
    let mut out = MAGIC.to_vec();
    if !table.is_empty() {
        push_member(&mut out, "//", &table);
    }
    for ((_, data), name) in members.iter().zip(&encoded) {
        push_member(&mut out, name, data);
    }
    out
}

fn push_member(out: &mut Vec<u8>, name: &str, data: &[u8]) {
    out.extend_from_slice(
        format!("{:<16}{:<12}{:<6}{:<6}{:<8}{:<10}`\n", name, 0, 0, 0, 100644, data.len())
            .as_bytes(),
    );
    out.extend_from_slice(data);
    if data.len() % 2 == 1 {
        out.push(b'\n');
    }
}
