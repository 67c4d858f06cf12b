//! Fault space for CPU-core elements — registers, memory cells, data-address
//! decoding, instruction decoding — and the pure views that apply active
//! faults to architectural accesses during execution.
//!
//! Register and memory stuck-at faults have read-side and write-side hooks;
//! which side a run applies is chosen by the interpreter's wiring (default:
//! registers read-side, memory store-side). Address-decoder faults act on the
//! CPU's data-address calculation (load/store effective addresses).
//! Instruction decoder faults substitute physical opcode bytes at decode.

use crate::machine::Word;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use rand::Rng;

/// Behavior of a faulty address line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DecoderMode {
    #[serde(rename = "stuck-0")]
    Stuck0,
    #[serde(rename = "stuck-1")]
    Stuck1,
    #[serde(rename = "flip")]
    Flip,
}

impl DecoderMode {
    pub const ALL: [DecoderMode; 3] = [DecoderMode::Stuck0, DecoderMode::Stuck1, DecoderMode::Flip];

    pub fn apply(self, addr: u32, line: u8) -> u32 {
        let mask = 1u32 << line;
        match self {
            DecoderMode::Stuck0 => addr & !mask,
            DecoderMode::Stuck1 => addr | mask,
            DecoderMode::Flip => addr ^ mask,
        }
    }
}

impl fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderMode::Stuck0 => "stuck-0",
            DecoderMode::Stuck1 => "stuck-1",
            DecoderMode::Flip => "flip",
        })
    }
}

/// A located hardware fault.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    RegisterStuckBit { reg: u8, bit: u8, stuck_value: u8 },
    MemoryStuckBit { addr: u32, bit: u8, stuck_value: u8 },
    AddressDecoderLine { line: u8, mode: DecoderMode },
    InstructionDecoderSub { from: u8, to: u8 },
}

impl FaultKind {
    /// Fault class name used in campaign breakdowns and CSV rows.
    pub fn class(&self) -> &'static str {
        match self {
            FaultKind::RegisterStuckBit { .. } => "register",
            FaultKind::MemoryStuckBit { .. } => "memory",
            FaultKind::AddressDecoderLine { .. } => "address_decoder",
            FaultKind::InstructionDecoderSub { .. } => "instruction_decoder",
        }
    }

    /// Location key; at most one fault per key may join a plan.
    fn location_key(&self) -> (u8, u64, u64) {
        match *self {
            FaultKind::RegisterStuckBit { reg, bit, .. } => (0, reg as u64, bit as u64),
            FaultKind::MemoryStuckBit { addr, bit, .. } => (1, addr as u64, bit as u64),
            FaultKind::AddressDecoderLine { line, .. } => (2, line as u64, 0),
            FaultKind::InstructionDecoderSub { from, .. } => (3, from as u64, 0),
        }
    }

    /// Compact human-readable location, hex for addresses and bytes.
    pub fn location_string(&self) -> String {
        match *self {
            FaultKind::RegisterStuckBit { reg, bit, stuck_value } => {
                format!("r{reg}.b{bit}={stuck_value}")
            }
            FaultKind::MemoryStuckBit { addr, bit, stuck_value } => {
                format!("@{addr:#06x}.b{bit}={stuck_value}")
            }
            FaultKind::AddressDecoderLine { line, mode } => format!("line{line}:{mode}"),
            FaultKind::InstructionDecoderSub { from, to } => format!("{from:#04x}->{to:#04x}"),
        }
    }
}

/// When a fault is active. Cycles index executed instructions within one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "persistence", rename_all = "snake_case")]
pub enum Persistence {
    Transient { cycle: u32 },
    Permanent {
        #[serde(rename = "cycle")]
        onset_cycle: u32,
    },
}

impl Persistence {
    pub fn active_at(self, cycle: u32) -> bool {
        match self {
            Persistence::Transient { cycle: c } => cycle == c,
            Persistence::Permanent { onset_cycle } => cycle >= onset_cycle,
        }
    }

    /// Whether the fault already affects the image-load writes that precede
    /// cycle 0. Only a permanent fault standing from the start does.
    pub fn active_at_image_load(self) -> bool {
        matches!(self, Persistence::Permanent { onset_cycle: 0 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fault {
    #[serde(flatten)]
    pub kind: FaultKind,
    #[serde(flatten)]
    pub persistence: Persistence,
    pub core: u8,
}

/// Faults applied to one core's architectural elements. At most one fault per
/// (kind, location) pair; all faults share the same core.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    faults: Vec<Fault>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("fault plan mixes cores {0} and {1}")]
    MixedCores(u8, u8),
    #[error("duplicate fault location: {0}")]
    DuplicateLocation(String),
}

impl FaultPlan {
    pub fn empty() -> Self {
        FaultPlan::default()
    }

    pub fn new(faults: Vec<Fault>) -> Result<Self, PlanError> {
        let mut keys = std::collections::BTreeSet::new();
        for f in &faults {
            if f.core != faults[0].core {
                return Err(PlanError::MixedCores(faults[0].core, f.core));
            }
            if !keys.insert(f.kind.location_key()) {
                return Err(PlanError::DuplicateLocation(f.kind.location_string()));
            }
        }
        Ok(FaultPlan { faults })
    }

    pub fn single(fault: Fault) -> Self {
        FaultPlan { faults: vec![fault] }
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    pub fn faults(&self) -> &[Fault] {
        &self.faults
    }

    pub fn core(&self) -> Option<u8> {
        self.faults.first().map(|f| f.core)
    }
}

fn force_bit(value: Word, bit: u8, stuck_value: u8) -> Word {
    let mask = 1u32 << bit;
    if stuck_value == 0 {
        value & !mask
    } else {
        value | mask
    }
}

/// Value observed when reading register `reg` whose raw content is `raw`.
pub fn view_register_read(raw: Word, reg: u8, plan: &FaultPlan, cycle: u32) -> Word {
    let mut v = raw;
    for f in plan.faults() {
        if let FaultKind::RegisterStuckBit { reg: r, bit, stuck_value } = f.kind {
            if r == reg && f.persistence.active_at(cycle) {
                v = force_bit(v, bit, stuck_value);
            }
        }
    }
    v
}

/// Value actually stored when writing `raw` into register `reg`.
pub fn view_register_write(raw: Word, reg: u8, plan: &FaultPlan, cycle: u32) -> Word {
    view_register_read(raw, reg, plan, cycle)
}

/// Value observed when reading memory cell `addr` whose raw content is `raw`.
pub fn view_memory_read(raw: Word, addr: u32, plan: &FaultPlan, cycle: u32) -> Word {
    let mut v = raw;
    for f in plan.faults() {
        if let FaultKind::MemoryStuckBit { addr: a, bit, stuck_value } = f.kind {
            if a == addr && f.persistence.active_at(cycle) {
                v = force_bit(v, bit, stuck_value);
            }
        }
    }
    v
}

/// Value actually stored when writing `raw` into memory cell `addr`.
pub fn view_memory_write(raw: Word, addr: u32, plan: &FaultPlan, cycle: u32) -> Word {
    view_memory_read(raw, addr, plan, cycle)
}

/// Data address produced by the core's address calculation for intended
/// address `addr`. Result taken modulo `memory_size`.
pub fn view_address(addr: u32, plan: &FaultPlan, cycle: u32, memory_size: u32) -> u32 {
    let mut a = addr;
    for f in plan.faults() {
        if let FaultKind::AddressDecoderLine { line, mode } = f.kind {
            if f.persistence.active_at(cycle) {
                a = mode.apply(a, line);
            }
        }
    }
    a % memory_size
}

/// Physical opcode byte observed by the decoder for fetched byte `op`.
pub fn view_opcode(op: u8, plan: &FaultPlan, cycle: u32) -> u8 {
    for f in plan.faults() {
        if let FaultKind::InstructionDecoderSub { from, to } = f.kind {
            if from == op && f.persistence.active_at(cycle) {
                return to;
            }
        }
    }
    op
}

/// Fault reported by a self-test. Location is always pinned; for decoder
/// substitutions the observed target byte may be unidentifiable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectedFault {
    RegisterStuckBit { reg: u8, bit: u8, stuck_value: u8 },
    MemoryStuckBit { addr: u32, bit: u8, stuck_value: u8 },
    AddressDecoderLine { line: u8, mode: DecoderMode },
    InstructionDecoderSub { from: u8, to: Option<u8> },
}

impl DetectedFault {
    /// Whether this report matches an injected fault kind.
    pub fn matches(&self, injected: &FaultKind) -> bool {
        match (*self, *injected) {
            (
                DetectedFault::RegisterStuckBit { reg, bit, stuck_value },
                FaultKind::RegisterStuckBit { reg: r, bit: b, stuck_value: s },
            ) => reg == r && bit == b && stuck_value == s,
            (
                DetectedFault::MemoryStuckBit { addr, bit, stuck_value },
                FaultKind::MemoryStuckBit { addr: a, bit: b, stuck_value: s },
            ) => addr == a && bit == b && stuck_value == s,
            (
                DetectedFault::AddressDecoderLine { line, mode },
                FaultKind::AddressDecoderLine { line: l, mode: m },
            ) => line == l && mode == m,
            (
                DetectedFault::InstructionDecoderSub { from, to },
                FaultKind::InstructionDecoderSub { from: f, to: t },
            ) => from == f && to.map_or(true, |b| b == t),
            _ => false,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            DetectedFault::RegisterStuckBit { .. } => "register",
            DetectedFault::MemoryStuckBit { .. } => "memory",
            DetectedFault::AddressDecoderLine { .. } => "address_decoder",
            DetectedFault::InstructionDecoderSub { .. } => "instruction_decoder",
        }
    }
}

/// Located fault plus the self-test that produced the evidence; what the
/// recovery procedure ships to the variant-generation server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultDefinition {
    #[serde(flatten)]
    pub kind: DetectedFault,
    pub evidence: String,
}

/// Finite fault space descriptor for campaign sampling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpace {
    pub classes: Vec<ClassSpace>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassSpace {
    RegisterBits {
        regs: Vec<u8>,
        bits: Vec<u8>,
        stuck_values: Vec<u8>,
    },
    MemoryBits {
        /// Inclusive-exclusive address range `[addr_lo, addr_hi)`.
        addr_lo: u32,
        addr_hi: u32,
        bits: Vec<u8>,
        stuck_values: Vec<u8>,
    },
    AddressDecoderLines {
        lines: Vec<u8>,
        modes: Vec<DecoderMode>,
    },
    InstructionDecoderSubs {
        from: Vec<u8>,
        to: Vec<u8>,
    },
}

impl ClassSpace {
    fn size(&self) -> u64 {
        match self {
            ClassSpace::RegisterBits { regs, bits, stuck_values } => {
                regs.len() as u64 * bits.len() as u64 * stuck_values.len() as u64
            }
            ClassSpace::MemoryBits { addr_lo, addr_hi, bits, stuck_values } => {
                (addr_hi.saturating_sub(*addr_lo)) as u64
                    * bits.len() as u64
                    * stuck_values.len() as u64
            }
            ClassSpace::AddressDecoderLines { lines, modes } => {
                lines.len() as u64 * modes.len() as u64
            }
            ClassSpace::InstructionDecoderSubs { from, to } => {
                // from == to pairs are invalid and excluded.
                let mut n = from.len() as u64 * to.len() as u64;
                for f in from {
                    if to.contains(f) {
                        n -= 1;
                    }
                }
                n
            }
        }
    }

    fn index(&self, mut i: u64) -> FaultKind {
        match self {
            ClassSpace::RegisterBits { regs, bits, stuck_values } => {
                let s = stuck_values[(i % stuck_values.len() as u64) as usize];
                i /= stuck_values.len() as u64;
                let b = bits[(i % bits.len() as u64) as usize];
                i /= bits.len() as u64;
                let r = regs[i as usize];
                FaultKind::RegisterStuckBit { reg: r, bit: b, stuck_value: s }
            }
            ClassSpace::MemoryBits { addr_lo, bits, stuck_values, .. } => {
                let s = stuck_values[(i % stuck_values.len() as u64) as usize];
                i /= stuck_values.len() as u64;
                let b = bits[(i % bits.len() as u64) as usize];
                i /= bits.len() as u64;
                FaultKind::MemoryStuckBit { addr: addr_lo + i as u32, bit: b, stuck_value: s }
            }
            ClassSpace::AddressDecoderLines { lines, modes } => {
                let m = modes[(i % modes.len() as u64) as usize];
                i /= modes.len() as u64;
                FaultKind::AddressDecoderLine { line: lines[i as usize], mode: m }
            }
            ClassSpace::InstructionDecoderSubs { .. } => {
                unreachable!("decoder subs are drawn by rejection")
            }
        }
    }
}

pub fn all_bits() -> Vec<u8> {
    (0..32).collect()
}

pub fn all_regs() -> Vec<u8> {
    (0..crate::machine::NUM_REGS).collect()
}

pub fn both_stuck_values() -> Vec<u8> {
    vec![0, 1]
}

impl FaultSpace {
    /// Space containing exactly one located fault.
    pub fn singleton(kind: FaultKind) -> Self {
        let class = match kind {
            FaultKind::RegisterStuckBit { reg, bit, stuck_value } => ClassSpace::RegisterBits {
                regs: vec![reg],
                bits: vec![bit],
                stuck_values: vec![stuck_value],
            },
            FaultKind::MemoryStuckBit { addr, bit, stuck_value } => ClassSpace::MemoryBits {
                addr_lo: addr,
                addr_hi: addr + 1,
                bits: vec![bit],
                stuck_values: vec![stuck_value],
            },
            FaultKind::AddressDecoderLine { line, mode } => {
                ClassSpace::AddressDecoderLines { lines: vec![line], modes: vec![mode] }
            }
            FaultKind::InstructionDecoderSub { from, to } => {
                ClassSpace::InstructionDecoderSubs { from: vec![from], to: vec![to] }
            }
        };
        FaultSpace { classes: vec![class] }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("fault space matches zero locations")]
    EmptySpace,
}

/// Uniform deterministic draw of `n` fault kinds from the described space.
/// Identical (seed, space, n) always yields the identical list.
pub fn sample_fault_kinds(
    seed: u64,
    space: &FaultSpace,
    n: usize,
) -> Result<Vec<FaultKind>, SampleError> {
    let sizes: Vec<u64> = space.classes.iter().map(ClassSpace::size).collect();
    let total: u64 = sizes.iter().sum();
    if total == 0 || n == 0 {
        return Err(SampleError::EmptySpace);
    }
    let mut rng = crate::rng::stream_rng(seed, 0xFA014);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut pick = rng.gen_range(0..total);
        let class = space
            .classes
            .iter()
            .zip(&sizes)
            .find_map(|(c, &s)| {
                if pick < s {
                    Some(c)
                } else {
                    pick -= s;
                    None
                }
            })
            .expect("pick within total");
        match class {
            ClassSpace::InstructionDecoderSubs { from, to } => {
                let f = from[rng.gen_range(0..from.len())];
                let t = to[rng.gen_range(0..to.len())];
                if f == t {
                    continue; // rejection keeps the draw uniform over valid pairs
                }
                out.push(FaultKind::InstructionDecoderSub { from: f, to: t });
            }
            c => out.push(c.index(pick)),
        }
    }
    Ok(out)
}

/// As [`sample_fault_kinds`], materialized as faults on one core.
pub fn sample_faults(
    seed: u64,
    space: &FaultSpace,
    n: usize,
    core: u8,
    persistence: Persistence,
) -> Result<Vec<Fault>, SampleError> {
    Ok(sample_fault_kinds(seed, space, n)?
        .into_iter()
        .map(|kind| Fault { kind, persistence, core })
        .collect())
}
