//! Linear-sweep x86-64 decoding into a small, decoder-independent model.
//!
//! The sweep decodes at every position; bytes that do not start a valid
//! instruction become [`DecodeEvent::InvalidByte`] and the sweep resumes one
//! byte later, so events always tile the input exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use iced_x86::{
    Code, CpuidFeature, Decoder, DecoderOptions, EncodingKind, InstructionInfoFactory, OpKind,
    Register,
};
use serde::Serialize;
use smallvec::SmallVec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegisterBank {
    Gpr,
    X87,
    Mmx,
    Xmm,
    Ymm,
    Zmm,
    Mask,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RegisterRef {
    pub bank: RegisterBank,
    pub index: u8,
}

impl RegisterRef {
    pub const fn new(bank: RegisterBank, index: u8) -> Self {
        RegisterRef { bank, index }
    }

    pub fn xmm(index: u8) -> Self {
        Self::new(RegisterBank::Xmm, index)
    }

    pub fn ymm(index: u8) -> Self {
        Self::new(RegisterBank::Ymm, index)
    }

    pub fn zmm(index: u8) -> Self {
        Self::new(RegisterBank::Zmm, index)
    }

    pub fn is_vector(self) -> bool {
        matches!(self.bank, RegisterBank::Xmm | RegisterBank::Ymm | RegisterBank::Zmm)
    }

    fn from_iced(reg: Register) -> Option<Self> {
        if reg == Register::None {
            return None;
        }
        let number = reg.number() as u8;
        let (bank, index) = if reg.is_xmm() {
            (RegisterBank::Xmm, number)
        } else if reg.is_ymm() {
            (RegisterBank::Ymm, number)
        } else if reg.is_zmm() {
            (RegisterBank::Zmm, number)
        } else if reg.is_gpr() {
            (RegisterBank::Gpr, reg.full_register().number() as u8)
        } else if reg.is_k() {
            (RegisterBank::Mask, number)
        } else if reg.is_mm() {
            (RegisterBank::Mmx, number)
        } else if reg.is_st() {
            (RegisterBank::X87, number)
        } else {
            (RegisterBank::Other, reg as u8)
        };
        Some(RegisterRef { bank, index })
    }
}

impl fmt::Display for RegisterRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bank {
            RegisterBank::Gpr => write!(f, "gpr{}", self.index),
            RegisterBank::X87 => write!(f, "st{}", self.index),
            RegisterBank::Mmx => write!(f, "mm{}", self.index),
            RegisterBank::Xmm => write!(f, "xmm{}", self.index),
            RegisterBank::Ymm => write!(f, "ymm{}", self.index),
            RegisterBank::Zmm => write!(f, "zmm{}", self.index),
            RegisterBank::Mask => write!(f, "k{}", self.index),
            RegisterBank::Other => write!(f, "other{}", self.index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Legacy,
    Vex,
    Evex,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct Prefixes {
    pub rep: bool,
    pub repne: bool,
    pub operand_size: bool,
    pub address_size: bool,
    pub lock: bool,
    pub segment: bool,
}

/// The instruction-set extension an opcode belongs to, coarsened to what
/// extension-based bucketing needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Extension {
    /// SSE through SSE4.2, including SSSE3 and SSE4a.
    Sse,
    /// AVX, AVX2 and every AVX-512 subset.
    Avx,
    Mmx,
    X87,
    /// Anything else: base ISA, AES-NI, SHA, FMA, F16C, GFNI, ...
    Other,
}

pub type Registers = SmallVec<[RegisterRef; 4]>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub address: u64,
    pub length: u8,
    pub mnemonic: &'static str,
    pub prefixes: Prefixes,
    pub encoding: Encoding,
    pub explicit_regs: Registers,
    pub implicit_regs: Registers,
    pub has_memory_operand: bool,
    /// True for the string-instruction opcode family (`movs`, `stos`, ...),
    /// which separates `movsd` the string move from `movsd` the SSE2 move.
    pub is_string_op: bool,
    pub extension: Extension,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeEvent {
    Instruction(Instruction),
    InvalidByte { address: u64, byte: u8 },
}

impl DecodeEvent {
    pub fn address(&self) -> u64 {
        match self {
            DecodeEvent::Instruction(i) => i.address,
            DecodeEvent::InvalidByte { address, .. } => *address,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            DecodeEvent::Instruction(i) => usize::from(i.length),
            DecodeEvent::InvalidByte { .. } => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Iterator returned by [`decode_linear`].
pub struct LinearSweep<'a> {
    code: &'a [u8],
    base: u64,
    pos: usize,
    decoder: Decoder<'a>,
    info: InstructionInfoFactory,
    scratch: iced_x86::Instruction,
    resync: bool,
}

pub fn decode_linear(code: &[u8], base: u64) -> LinearSweep<'_> {
    LinearSweep {
        code,
        base,
        pos: 0,
        decoder: Decoder::with_ip(64, code, base, DecoderOptions::NONE),
        info: InstructionInfoFactory::new(),
        scratch: iced_x86::Instruction::default(),
        resync: false,
    }
}

impl Iterator for LinearSweep<'_> {
    type Item = DecodeEvent;

    fn next(&mut self) -> Option<DecodeEvent> {
        if self.pos >= self.code.len() {
            return None;
        }
        if self.resync {
            // Positions inside the buffer are always accepted.
            let _ = self.decoder.set_position(self.pos);
            self.decoder.set_ip(self.base + self.pos as u64);
            self.resync = false;
        }
        self.decoder.decode_out(&mut self.scratch);
        let address = self.base + self.pos as u64;
        if self.scratch.is_invalid() {
            let byte = self.code[self.pos];
            self.pos += 1;
            self.resync = true;
            return Some(DecodeEvent::InvalidByte { address, byte });
        }
        let len = self.scratch.len();
        let raw = &self.code[self.pos..self.pos + len];
        self.pos += len;
        Some(DecodeEvent::Instruction(normalize(
            &self.scratch,
            raw,
            &mut self.info,
        )))
    }
}

fn normalize(
    instr: &iced_x86::Instruction,
    raw: &[u8],
    factory: &mut InstructionInfoFactory,
) -> Instruction {
    let mut explicit: Registers = SmallVec::new();
    let mut has_memory_operand = false;
    for op in 0..instr.op_count() {
        match instr.op_kind(op) {
            OpKind::Register => explicit.extend(RegisterRef::from_iced(instr.op_register(op))),
            OpKind::Memory => {
                has_memory_operand = true;
                explicit.extend(RegisterRef::from_iced(instr.memory_base()));
                explicit.extend(RegisterRef::from_iced(instr.memory_index()));
            }
            OpKind::MemorySegSI
            | OpKind::MemorySegESI
            | OpKind::MemorySegRSI
            | OpKind::MemorySegDI
            | OpKind::MemorySegEDI
            | OpKind::MemorySegRDI
            | OpKind::MemoryESDI
            | OpKind::MemoryESEDI
            | OpKind::MemoryESRDI => has_memory_operand = true,
            _ => {}
        }
    }
    explicit.extend(RegisterRef::from_iced(instr.op_mask()));
    dedup(&mut explicit);

    let mut implicit: Registers = SmallVec::new();
    for used in factory.info(instr).used_registers() {
        if let Some(reg) = RegisterRef::from_iced(used.register()) {
            // VEX/EVEX writes zero the destination's upper lanes; that shows up
            // as a wider alias of an explicit register and is not a new operand.
            let alias = reg.is_vector()
                && explicit.iter().any(|e| e.is_vector() && e.index == reg.index);
            if !explicit.contains(&reg) && !alias {
                implicit.push(reg);
            }
        }
    }
    dedup(&mut implicit);
    // Keep only the widest alias of each implicitly used vector register.
    let widest = implicit.clone();
    implicit.retain(|r| {
        !r.is_vector() || !widest.iter().any(|w| w.is_vector() && w.index == r.index && w.bank > r.bank)
    });

    let encoding = match instr.encoding() {
        EncodingKind::EVEX | EncodingKind::MVEX => Encoding::Evex,
        EncodingKind::VEX | EncodingKind::XOP => Encoding::Vex,
        _ => Encoding::Legacy,
    };

    let mut prefixes = Prefixes {
        rep: instr.has_rep_prefix() && !instr.has_xrelease_prefix(),
        repne: instr.has_repne_prefix() && !instr.has_xacquire_prefix(),
        lock: instr.has_lock_prefix(),
        segment: instr.segment_prefix() != Register::None,
        ..Prefixes::default()
    };
    for &b in raw {
        match b {
            0x66 => prefixes.operand_size = true,
            0x67 => prefixes.address_size = true,
            0xF0 | 0xF2 | 0xF3 | 0x26 | 0x2E | 0x36 | 0x3E | 0x64 | 0x65 => {}
            _ => break,
        }
    }

    Instruction {
        address: instr.ip(),
        length: instr.len() as u8,
        mnemonic: mnemonic_name(instr.mnemonic()),
        prefixes,
        encoding,
        explicit_regs: explicit,
        implicit_regs: implicit,
        has_memory_operand,
        is_string_op: instr.is_string_instruction(),
        extension: extension_of(instr.code()),
    }
}

fn dedup(regs: &mut Registers) {
    let mut seen = 0usize;
    for i in 0..regs.len() {
        if !regs[..seen].contains(&regs[i]) {
            regs[seen] = regs[i];
            seen += 1;
        }
    }
    regs.truncate(seen);
}

fn mnemonic_name(m: iced_x86::Mnemonic) -> &'static str {
    static NAMES: OnceLock<Vec<&'static str>> = OnceLock::new();
    let names = NAMES.get_or_init(|| {
        iced_x86::Mnemonic::values()
            .map(|m| &*Box::leak(format!("{m:?}").to_ascii_lowercase().into_boxed_str()))
            .collect()
    });
    names[m as usize]
}

fn extension_of(code: Code) -> Extension {
    static TABLE: OnceLock<Vec<Extension>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut scratch = iced_x86::Instruction::default();
        Code::values()
            .map(|c| {
                scratch.set_code(c);
                group_features(scratch.cpuid_features())
            })
            .collect()
    });
    table[code as usize]
}

fn group_features(features: &[CpuidFeature]) -> Extension {
    use CpuidFeature as F;
    let is_sse = |f: &CpuidFeature| {
        matches!(f, F::SSE | F::SSE2 | F::SSE3 | F::SSSE3 | F::SSE4_1 | F::SSE4_2 | F::SSE4A)
    };
    let is_avx = |f: &CpuidFeature| {
        matches!(f, F::AVX | F::AVX2) || format!("{f:?}").starts_with("AVX512")
    };
    if features.iter().any(is_sse) {
        Extension::Sse
    } else if features.iter().any(is_avx) {
        Extension::Avx
    } else if features.iter().any(|f| matches!(f, F::MMX)) {
        Extension::Mmx
    } else if features.iter().any(|f| matches!(f, F::FPU | F::FPU287 | F::FPU387)) {
        Extension::X87
    } else {
        Extension::Other
    }
}

/// Every xmm/ymm/zmm register the instruction names or implicitly uses.
/// Mask, mmx and x87 registers are not vector registers here.
pub fn vector_registers_of(inst: &Instruction) -> BTreeSet<RegisterRef> {
    inst.explicit_regs
        .iter()
        .chain(&inst.implicit_regs)
        .copied()
        .filter(|r| r.is_vector())
        .collect()
}

pub(crate) fn has_vector_register(inst: &Instruction) -> bool {
    inst.explicit_regs
        .iter()
        .chain(&inst.implicit_regs)
        .any(|r| r.is_vector())
}
