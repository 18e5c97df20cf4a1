//! Reference model built from `objdump -M intel` listings plus the
//! architectural rules the listing leaves out: implicit vector operands, and
//! encodings that are #UD on Intel processors even though objdump prints them.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefInst {
    pub address: u64,
    pub bytes: Vec<u8>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefVerdict {
    pub target: Option<&'static str>,
    pub vector_regs: BTreeSet<String>,
    pub rep: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reference {
    /// Not comparable; the reason is reported.
    Skip(&'static str),
    /// The encoding raises #UD.
    Invalid,
    /// The instruction proper starts `offset` bytes into the listing line.
    Valid { offset: usize, verdict: RefVerdict },
}

const PREFIX_WORDS: &[&str] = &[
    "rep", "repz", "repe", "repnz", "repne", "lock", "data16", "data32", "addr32", "addr16", "cs",
    "ds", "es", "fs", "gs", "ss", "bnd", "notrack", "xacquire", "xrelease",
];

fn is_prefix_word(w: &str) -> bool {
    PREFIX_WORDS.contains(&w) || w.starts_with("rex") || w.starts_with('{')
}

pub fn available() -> bool {
    Command::new("objdump")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

/// Disassembles every executable section of an ELF file.
pub fn disassemble_elf(path: &Path) -> Vec<RefInst> {
    run(Command::new("objdump")
        .args(["-d", "-M", "intel", "--insn-width=16", "-z"])
        .arg(path))
}

/// Disassembles a raw byte blob as 64-bit code.
pub fn disassemble_raw(path: &Path) -> Vec<RefInst> {
    run(Command::new("objdump")
        .args(["-D", "-b", "binary", "-m", "i386:x86-64", "-M", "intel", "--insn-width=16"])
        .arg(path))
}

fn run(cmd: &mut Command) -> Vec<RefInst> {
    let out = cmd.output().expect("objdump runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    parse(&String::from_utf8_lossy(&out.stdout))
}

pub fn parse(listing: &str) -> Vec<RefInst> {
    let mut insts = Vec::new();
    for line in listing.lines() {
        let mut cols = line.splitn(3, '\t');
        let (Some(addr), Some(bytes), Some(text)) = (cols.next(), cols.next(), cols.next()) else {
            continue;
        };
        let Some(addr) = addr.trim().strip_suffix(':') else { continue };
        let Ok(address) = u64::from_str_radix(addr, 16) else { continue };
        let bytes: Option<Vec<u8>> = bytes
            .split_whitespace()
            .map(|b| u8::from_str_radix(b, 16).ok())
            .collect();
        let Some(bytes) = bytes else { continue };
        insts.push(RefInst {
            address,
            bytes,
            text: text.trim().to_string(),
        });
    }
    insts
}

/// Prefix words, mnemonic and operand text; `None` for lines that are not a
/// complete instruction.
pub fn split(text: &str) -> Option<(Vec<&str>, &str, &str)> {
    let text = text.split(" #").next().unwrap_or(text).trim();
    if text.contains("(bad)") || text.starts_with('.') {
        return None;
    }
    let mut prefixes = Vec::new();
    let mut rest = text;
    loop {
        let (word, tail) = rest.split_once(' ').unwrap_or((rest, ""));
        if is_prefix_word(word) && !tail.trim().is_empty() {
            prefixes.push(word);
            rest = tail.trim_start();
        } else {
            let (mnemonic, operands) = rest.split_once(' ').unwrap_or((rest, ""));
            if is_prefix_word(mnemonic) {
                return None;
            }
            return Some((prefixes, mnemonic, operands.trim()));
        }
    }
}

fn implicit_vector_operands(mnemonic: &str) -> Vec<String> {
    let regs = |bank: &str, idx: &[u32]| idx.iter().map(|i| format!("{bank}{i}")).collect::<Vec<_>>();
    match mnemonic {
        "pcmpestrm" | "pcmpistrm" => regs("xmm", &[0]),
        // VEX writes zero the destination up to the maximum vector length.
        "vpcmpestrm" | "vpcmpistrm" => regs("zmm", &[0]),
        "vzeroupper" | "vzeroall" => regs("zmm", &(0..16).collect::<Vec<_>>()),
        "aesencwide128kl" | "aesdecwide128kl" | "aesencwide256kl" | "aesdecwide256kl" => {
            regs("xmm", &(0..8).collect::<Vec<_>>())
        }
        "encodekey128" => regs("xmm", &[0, 1, 2, 4, 5, 6]),
        "encodekey256" => regs("xmm", &[0, 1, 2, 3, 4, 5, 6]),
        "loadiwkey" => regs("xmm", &[0]),
        _ => Vec::new(),
    }
}

pub fn vector_registers_in(operands: &str) -> BTreeSet<String> {
    let mut regs = BTreeSet::new();
    let b = operands.as_bytes();
    let mut i = 0;
    while i + 3 <= b.len() {
        let boundary = i == 0 || !b[i - 1].is_ascii_alphanumeric();
        if boundary && matches!(b[i], b'x' | b'y' | b'z') && &b[i + 1..i + 3] == b"mm" {
            let digits = b[i + 3..].iter().take_while(|c| c.is_ascii_digit()).count();
            let after = i + 3 + digits;
            if digits > 0 && (after == b.len() || !b[after].is_ascii_alphanumeric()) {
                regs.insert(operands[i..after].to_string());
                i = after;
                continue;
            }
        }
        i += 1;
    }
    regs
}

const LOCKABLE: &[&str] = &[
    "add", "adc", "and", "btc", "btr", "bts", "cmpxchg", "cmpxchg8b", "cmpxchg16b", "dec", "inc",
    "neg", "not", "or", "sbb", "sub", "xor", "xadd", "xchg",
];

/// EVEX instructions that take no opmask.
const NO_MASKING: &[&str] = &[
    "vcvtsi2s", "vcvtusi2s", "vcvtss2si", "vcvtsd2si", "vcvttss2si", "vcvttsd2si", "vcvtss2usi",
    "vcvtsd2usi", "vcvttss2usi", "vcvttsd2usi", "vpinsr", "vpextr", "vcomis", "vucomis", "vextractps", "vinsertps", "vpmovm2", "vpbroadcastm", "vaes", "vpclmulqdq",
];

fn numbered(op: &str, prefix: &str) -> Option<u32> {
    op.strip_prefix(prefix)?.parse().ok()
}

/// #UD rules visible in the text: LOCK outside a lockable read-modify-write
/// on memory; `mov` with CS as destination or a nonexistent segment, control
/// or debug register; zeroing-masking into a mask register or memory; masks
/// on unmaskable forms; a nonzero ModRM.reg on the AMX tile-config forms;
/// objdump's own `bad` markers; 66/F2/F3 on no-prefix opcodes.
fn invalid_by_text(prefixes: &[&str], mnemonic: &str, operands: &str, modrm_reg: Option<u8>) -> bool {
    let ops: Vec<&str> = operands.split(',').map(str::trim).collect();
    let dest = ops.first().copied().unwrap_or("");
    let memory_dest = dest.contains('[') || dest.contains("PTR");
    if prefixes.contains(&"lock") && (!LOCKABLE.contains(&mnemonic) || !memory_dest) {
        return true;
    }
    if mnemonic == "mov" {
        let bad_reg = |op: &&str| {
            *op == "?"
                || numbered(op, "cr").is_some_and(|n| !matches!(n, 0 | 2 | 3 | 4 | 8))
                || numbered(op, "dr").is_some_and(|n| n > 7)
        };
        if ops.iter().any(bad_reg) || dest == "cs" {
            return true;
        }
    }
    if dest.contains("{z}") && (dest.starts_with('k') || dest.contains("PTR")) {
        return true;
    }
    const NO_PREFIX: &[&str] = &["fxsave", "fxrstor", "xsave", "xrstor", "ldmxcsr", "stmxcsr", "getsec"];
    if NO_PREFIX.iter().any(|m| mnemonic.starts_with(m))
        && prefixes.iter().any(|p| matches!(*p, "data16" | "rep" | "repz" | "repe" | "repnz" | "repne"))
    {
        return true;
    }
    // 4FMAPS/4VNNIW packed forms exist only at 512 bits.
    let packed_four = mnemonic.starts_with("v4f") && mnemonic.ends_with("ps") || mnemonic.starts_with("vp4d");
    if packed_four && (operands.contains("xmm") || operands.contains("ymm")) {
        return true;
    }
    let unmaskable = NO_MASKING.iter().any(|m| mnemonic.starts_with(m)) || matches!(mnemonic, "vmovd" | "vmovq");
    if matches!(mnemonic, "ldtilecfg" | "sttilecfg") && modrm_reg != Some(0) {
        return true;
    }
    if dest.contains("{k") && unmaskable {
        return true;
    }
    mnemonic.starts_with("frstpm") || mnemonic.contains("bad}") || operands.contains("bad}")
}

/// EVEX forms whose memory operand cannot be an embedded broadcast: byte and
/// word element operations, and the VAES, VPCLMULQDQ and GF2P8MULB groups.
fn rejects_broadcast(mnemonic: &str) -> bool {
    const DWORD_SOURCES: &[&str] = &["vpackssdw", "vpackusdw", "vpmultishiftqb"];
    const NO_BROADCAST: &[&str] = &[
        "vpclmulqdq", "vgf2p8mulb", "vpmaddwd", "vpunpcklwd", "vpunpckhwd", "vpalignr", "vpslldq", "vpsrldq", "vdbpsadbw",
    ];
    if mnemonic.starts_with("vaes") || NO_BROADCAST.contains(&mnemonic) {
        return true;
    }
    mnemonic.starts_with("vp")
        && (mnemonic.ends_with('b') || mnemonic.ends_with('w'))
        && !DWORD_SOURCES.contains(&mnemonic)
}

fn is_legacy_prefix(b: u8) -> bool {
    matches!(b, 0x26 | 0x2E | 0x36 | 0x3E | 0x64 | 0x65 | 0x66 | 0x67 | 0xF0 | 0xF2 | 0xF3)
}

fn is_rex(b: u8) -> bool {
    b & 0xF0 == 0x40
}

fn prefix_len(bytes: &[u8]) -> usize {
    bytes
        .iter()
        .take_while(|&&b| is_legacy_prefix(b) || is_rex(b))
        .count()
}

/// #UD rules for VEX and EVEX: no 66/F2/F3/F0/REX may precede the
/// escape, VZEROUPPER/VZEROALL exist only with pp = 00, an EVEX form without
/// an NDS operand must encode V' = 1, map 0F3A prefixes are constrained, the
/// VNNI dot products and 4FMAPS are W0 only, IFMA is W1 only, and embedded broadcast needs 32- or 64-bit
/// elements.
fn invalid_vector_encoding(bytes: &[u8], mnemonic: &str, operands: &str) -> bool {
    let n = prefix_len(bytes);
    let Some(&escape) = bytes.get(n) else { return false };
    if !matches!(escape, 0xC4 | 0xC5 | 0x62) {
        return false;
    }
    if bytes[..n]
        .iter()
        .any(|&b| matches!(b, 0x66 | 0xF0 | 0xF2 | 0xF3) || is_rex(b))
    {
        return true;
    }
    if mnemonic.starts_with("vzero") {
        let pp = match escape {
            0xC5 => bytes.get(n + 1),
            _ => bytes.get(n + 2),
        };
        if pp.is_some_and(|b| b & 3 != 0) {
            return true;
        }
    }
    if escape == 0x62 {
        let v_prime = bytes.get(n + 3).is_some_and(|p2| p2 & 0x08 != 0);
        if !v_prime && operands.split(',').count() < 3 {
            return true;
        }
        // Map 0F3A has no F3/F2 opcodes, and its no-prefix ones are FP16.
        let map = bytes.get(n + 1).map_or(0, |p0| p0 & 7);
        let pp = bytes.get(n + 2).map_or(1, |p1| p1 & 3);
        let fp16 = mnemonic.ends_with("ph") || mnemonic.ends_with("sh");
        if map == 3 && (pp >= 2 || pp == 0 && !fp16) {
            return true;
        }
        let w1 = bytes.get(n + 2).is_some_and(|p1| p1 & 0x80 != 0);
        if w1 && matches!(mnemonic, "vpdpbusd" | "vpdpbusds" | "vpdpwssd" | "vpdpwssds") {
            return true;
        }
        let four_iter = mnemonic.starts_with("v4f") || mnemonic.starts_with("vp4d");
        if w1 && four_iter || !w1 && mnemonic.starts_with("vpmadd52") {
            return true;
        }
        if operands.contains("{1to") && rejects_broadcast(mnemonic) {
            return true;
        }
    }
    false
}

/// Last of F2/F3 wins; BND and XACQUIRE are F2, XRELEASE is F3 but not REP.
fn rep_from_words(prefixes: &[&str]) -> bool {
    let last = prefixes.iter().rev().find(|p| {
        matches!(
            **p,
            "rep" | "repz" | "repe" | "repnz" | "repne" | "bnd" | "xacquire" | "xrelease"
        )
    });
    matches!(last, Some(&"rep" | &"repz" | &"repe"))
}

fn rep_from_bytes(bytes: &[u8]) -> bool {
    bytes[..prefix_len(bytes)]
        .iter()
        .rev()
        .find(|b| matches!(b, 0xF2 | 0xF3))
        == Some(&0xF3)
}

/// VIA PadLock, AMD SSE4a, XOP and 3DNow!; none exist on Intel parts.
fn is_other_vendor(bytes: &[u8], mnemonic: &str) -> bool {
    const MNEMONICS: &[&str] = &[
        "xsha1", "xsha256", "xstore", "xcrypt", "montmul", "extrq", "insertq", "movntss", "movntsd",
    ];
    let n = prefix_len(bytes);
    let xop = bytes.get(n) == Some(&0x8F) && bytes.get(n + 1).is_some_and(|b| b & 0x1F >= 8);
    let now3d = bytes.get(n..n + 2) == Some(&[0x0F, 0x0F]);
    xop || now3d || MNEMONICS.iter().any(|m| mnemonic.starts_with(m))
}

/// VEX `vpdp*` in map 0F38 with pp other than 66 belongs to the AVX-VNNI-INT8
/// and AVX-VNNI-INT16 extensions, which neither decoder models; the listing
/// prints it as the 66 form.
fn is_newer_vnni_encoding(bytes: &[u8], mnemonic: &str) -> bool {
    let n = prefix_len(bytes);
    let pp = match bytes.get(n) {
        Some(0xC4) => bytes.get(n + 2),
        Some(0xC5) => bytes.get(n + 1),
        _ => return false,
    };
    mnemonic.starts_with("vpdp") && pp.is_some_and(|b| b & 3 != 1)
}

/// ModRM.reg of a three-byte-VEX instruction.
fn vex_modrm_reg(bytes: &[u8]) -> Option<u8> {
    let n = prefix_len(bytes);
    (bytes.get(n) == Some(&0xC4)).then(|| bytes.get(n + 4).map(|m| (m >> 3) & 7))?
}

pub fn reference(inst: &RefInst) -> Reference {
    let Some((prefixes, mnemonic, operands)) = split(&inst.text) else {
        return Reference::Skip("incomplete");
    };
    if is_other_vendor(&inst.bytes, mnemonic) {
        return Reference::Skip("non-Intel opcode");
    }
    if is_newer_vnni_encoding(&inst.bytes, mnemonic) {
        return Reference::Skip("encoding newer than the reference");
    }
    let n = prefix_len(&inst.bytes);
    // WAIT (9B) is an instruction of its own; the listing folds it, and any
    // prefixes in front of it, into the following x87 opcode.
    let mut offset = 0;
    while inst.bytes.get(offset + prefix_len(&inst.bytes[offset..])) == Some(&0x9B) {
        offset += prefix_len(&inst.bytes[offset..]) + 1;
    }
    let wait_folded = offset > 0;
    if wait_folded && (mnemonic == "fwait" || offset + prefix_len(&inst.bytes[offset..]) >= inst.bytes.len()) {
        return Reference::Skip("prefix residue");
    }
    if n < inst.bytes.len()
        && inst.bytes[..n].contains(&0x66)
        && (mnemonic.starts_with('j') || mnemonic.starts_with("call"))
        && operands.starts_with(|c: char| c.is_ascii_hexdigit())
    {
        // rel16 branches exist only on AMD; Intel ignores 66 here.
        return Reference::Skip("operand-size near branch");
    }
    if invalid_by_text(&prefixes, mnemonic, operands, vex_modrm_reg(&inst.bytes))
        || invalid_vector_encoding(&inst.bytes, mnemonic, operands)
    {
        return Reference::Invalid;
    }
    let rep = if mnemonic == "pause" {
        false
    } else if wait_folded {
        rep_from_bytes(&inst.bytes[offset..])
    } else {
        rep_from_words(&prefixes)
    };
    let mut vector_regs = vector_registers_in(operands);
    if matches!(mnemonic, "vmovss" | "vmovsd") {
        // VEX.LIG scalar moves: operands are xmm whatever VEX.L says.
        vector_regs = vector_regs.into_iter().map(|r| r.replacen("ymm", "xmm", 1)).collect();
    }
    let index = |r: &str| r[3..].to_string();
    for implicit in implicit_vector_operands(mnemonic) {
        if !vector_regs.iter().any(|r| index(r) == index(&implicit)) {
            vector_regs.insert(implicit);
        }
    }
    if mnemonic.starts_with("v4f") || mnemonic.starts_with("vp4d") {
        // The second operand names a block of four registers, aligned to four.
        if let Some(first) = operands.split(',').nth(1).map(str::trim) {
            let bank = &first[..3];
            if let Ok(n) = first[3..].parse::<u32>() {
                vector_regs.remove(first);
                vector_regs.extend((n & !3..(n & !3) + 4).map(|i| format!("{bank}{i}")));
            }
        }
    }
    let movs = matches!(mnemonic, "movs" | "movsb" | "movsw" | "movsd" | "movsq") && operands.contains("es:");
    let target = if !vector_regs.is_empty() {
        Some("explicit_vector")
    } else if rep && movs {
        Some("implicit_rep_movs")
    } else {
        None
    };
    Reference::Valid {
        offset,
        verdict: RefVerdict {
            target,
            vector_regs,
            rep,
        },
    }
}
