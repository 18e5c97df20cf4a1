//! Target-instruction classification.
//!
//! An instruction is a target when it names or implicitly uses an xmm, ymm
//! or zmm register (`ExplicitVector`), or when it is a `rep`-prefixed string
//! move of the `movs` family (`ImplicitRepMovs`), which uses vector registers
//! internally.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decode::{has_vector_register, vector_registers_of, Encoding, Extension, Instruction, RegisterRef};
use crate::lineage::SourceLoc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    ExplicitVector,
    ImplicitRepMovs,
}

impl TargetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetMode::ExplicitVector => "explicit_vector",
            TargetMode::ImplicitRepMovs => "implicit_rep_movs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsaClass {
    Sse,
    Avx,
    Other,
}

impl IsaClass {
    pub const ALL: [IsaClass; 3] = [IsaClass::Sse, IsaClass::Avx, IsaClass::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            IsaClass::Sse => "sse",
            IsaClass::Avx => "avx",
            IsaClass::Other => "other",
        }
    }
}

/// How explicit hits are bucketed into [`IsaClass`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsaMode {
    /// Legacy encoding is SSE, VEX and EVEX are AVX.
    #[default]
    Encoding,
    /// Bucket by the opcode's CPUID extension; extensions outside SSE and
    /// AVX (AES-NI, SHA, FMA, F16C, ...) fall into `other`.
    Extension,
}

impl FromStr for IsaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "encoding" => Ok(IsaMode::Encoding),
            "extension" => Ok(IsaMode::Extension),
            other => Err(format!("unknown isa mode {other:?}")),
        }
    }
}

impl fmt::Display for IsaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IsaMode::Encoding => "encoding",
            IsaMode::Extension => "extension",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TargetHit {
    pub address: u64,
    pub mode: TargetMode,
    pub isa_class: IsaClass,
    pub mnemonic: &'static str,
    pub registers: BTreeSet<RegisterRef>,
    pub lineage: Option<SourceLoc>,
}

const MOVS_FAMILY: [&str; 5] = ["movs", "movsb", "movsw", "movsd", "movsq"];

fn is_movs_string_op(inst: &Instruction) -> bool {
    inst.is_string_op && MOVS_FAMILY.contains(&inst.mnemonic)
}

/// `rep movs*`: only the plain F3 prefix qualifies.
pub fn is_rep_movs(inst: &Instruction) -> bool {
    inst.prefixes.rep && is_movs_string_op(inst)
}

/// `repne movs*` behaves like `rep` on hardware but is not a target; callers
/// count it separately.
pub fn is_repne_movs(inst: &Instruction) -> bool {
    inst.prefixes.repne && !inst.prefixes.rep && is_movs_string_op(inst)
}

pub fn classify(inst: &Instruction) -> Option<TargetHit> {
    classify_with(inst, IsaMode::Encoding)
}

pub fn classify_with(inst: &Instruction, isa_mode: IsaMode) -> Option<TargetHit> {
    let mode = target_mode(inst)?;
    let registers = match mode {
        TargetMode::ExplicitVector => vector_registers_of(inst),
        TargetMode::ImplicitRepMovs => BTreeSet::new(),
    };
    Some(TargetHit {
        address: inst.address,
        mode,
        isa_class: isa_class_of(inst, mode, isa_mode),
        mnemonic: normalize_mnemonic(inst),
        registers,
        lineage: None,
    })
}

/// Cheap check used on the hot path before building a [`TargetHit`].
pub fn target_mode(inst: &Instruction) -> Option<TargetMode> {
    if has_vector_register(inst) {
        Some(TargetMode::ExplicitVector)
    } else if is_rep_movs(inst) {
        Some(TargetMode::ImplicitRepMovs)
    } else {
        None
    }
}

pub fn isa_class_of(inst: &Instruction, mode: TargetMode, isa_mode: IsaMode) -> IsaClass {
    if mode == TargetMode::ImplicitRepMovs {
        return IsaClass::Other;
    }
    match isa_mode {
        IsaMode::Encoding => match inst.encoding {
            Encoding::Legacy => IsaClass::Sse,
            Encoding::Vex | Encoding::Evex => IsaClass::Avx,
        },
        IsaMode::Extension => match inst.extension {
            Extension::Sse => IsaClass::Sse,
            Extension::Avx => IsaClass::Avx,
            Extension::Mmx | Extension::X87 | Extension::Other => IsaClass::Other,
        },
    }
}

/// Histogram key: the canonical lowercase mnemonic. Prefixes are not part of
/// it and VEX/EVEX forms keep their `v`.
pub fn normalize_mnemonic(inst: &Instruction) -> &'static str {
    inst.mnemonic
}
