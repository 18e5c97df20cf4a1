#![allow(dead_code)]

pub mod fixtures;
pub mod objdump;

use std::collections::{BTreeMap, BTreeSet};

use gds_scan::classify::classify;
use gds_scan::decode::{decode_linear, vector_registers_of, DecodeEvent};

use objdump::{RefInst, RefVerdict, Reference};

#[derive(Debug)]
pub struct Disagreement {
    pub inst: RefInst,
    pub reference: Option<RefVerdict>,
    pub ours: Option<RefVerdict>,
}

#[derive(Debug, Default)]
pub struct Comparison {
    pub compared: usize,
    pub invalid: usize,
    pub skipped: BTreeMap<&'static str, usize>,
    pub disagreements: Vec<Disagreement>,
}

/// Our verdict for a single instruction's bytes; `None` when the bytes do not
/// decode to exactly one instruction of that length.
pub fn our_verdict(bytes: &[u8], address: u64) -> Option<RefVerdict> {
    match decode_linear(bytes, address).next()? {
        DecodeEvent::Instruction(i) if usize::from(i.length) == bytes.len() => Some(RefVerdict {
            target: classify(&i).map(|h| h.mode.as_str()),
            vector_regs: vector_registers_of(&i)
                .iter()
                .map(|r| r.to_string())
                .collect::<BTreeSet<_>>(),
            rep: i.prefixes.rep,
        }),
        _ => None,
    }
}

pub fn compare(insts: &[RefInst]) -> Comparison {
    let mut out = Comparison::default();
    for inst in insts {
        let (reference, ours) = match objdump::reference(inst) {
            Reference::Skip(reason) => {
                *out.skipped.entry(reason).or_default() += 1;
                continue;
            }
            Reference::Invalid => {
                out.invalid += 1;
                (None, our_verdict(&inst.bytes, inst.address))
            }
            Reference::Valid { offset, verdict } => (
                Some(verdict),
                our_verdict(&inst.bytes[offset..], inst.address + offset as u64),
            ),
        };
        out.compared += 1;
        if ours != reference {
            out.disagreements.push(Disagreement {
                inst: inst.clone(),
                reference,
                ours,
            });
        }
    }
    out
}
