//! A deterministic 16-register, 32-bit load/store machine with explicit hook
//! points at register access, data-address translation, memory cell access,
//! and opcode decoding, so that hardware faults and diversity transforms act
//! at the architectural level.
//!
//! Instructions occupy two words: an encoded opcode/register word followed by
//! an immediate word. Code and data share one flat word-addressed memory.

mod asm;
mod image;
mod interp;

pub use asm::parse_program;
pub use image::{
    assemble, assemble_with, decode_fields, decode_instruction, encode_instruction, MachineImage,
    RegisterMap,
};
pub use interp::{
    golden_run, run, run_with_memory, run_with_state, CrashReason, ExecStatus, ExecutionOutcome,
    GoldenCache, GoldenError, MemoryFaultSide, RegisterFaultSide, RunOptions,
};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::rng::stream_rng;
use rand::seq::SliceRandom;

/// Machine word. All arithmetic wraps modulo 2^32.
pub type Word = u32;

pub const NUM_REGS: u8 = 16;
/// Words per encoded instruction (opcode/register word + immediate word).
pub const INSTRUCTION_WORDS: u32 = 2;

pub const DEFAULT_MEMORY_SIZE: u32 = 65536;
pub const DEFAULT_CODE_BASE: u32 = 0x0100;
pub const DEFAULT_DATA_BASE: u32 = 0x0008;
pub const DEFAULT_CYCLE_LIMIT: u32 = 100_000;

/// Number of address lines for the default memory size.
pub const DEFAULT_ADDRESS_LINES: u8 = 16;

/// The sixteen logical opcodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Opcode {
    Loadi,
    Load,
    Store,
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Beq,
    Bne,
    Blt,
    Jmp,
    Halt,
}

impl Opcode {
    pub const ALL: [Opcode; 16] = [
        Opcode::Loadi,
        Opcode::Load,
        Opcode::Store,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Shl,
        Opcode::Shr,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::Blt,
        Opcode::Jmp,
        Opcode::Halt,
    ];

    pub fn index(self) -> u8 {
        Self::ALL.iter().position(|&o| o == self).unwrap() as u8
    }

    pub fn from_index(i: u8) -> Option<Opcode> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Loadi => "LOADI",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Xor => "XOR",
            Opcode::Shl => "SHL",
            Opcode::Shr => "SHR",
            Opcode::Beq => "BEQ",
            Opcode::Bne => "BNE",
            Opcode::Blt => "BLT",
            Opcode::Jmp => "JMP",
            Opcode::Halt => "HALT",
        }
    }

    pub fn is_alu(self) -> bool {
        matches!(
            self,
            Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::And
                | Opcode::Or
                | Opcode::Xor
                | Opcode::Shl
                | Opcode::Shr
        )
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Opcode::Beq | Opcode::Bne | Opcode::Blt)
    }
}

/// Immediate operand: a literal word or a variable address to be resolved
/// against the image's memory layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Imm {
    Value(Word),
    VarAddr { name: String, offset: Word },
}

impl Imm {
    pub fn value(&self) -> Word {
        match self {
            Imm::Value(w) => *w,
            Imm::VarAddr { .. } => panic!("unresolved variable reference"),
        }
    }
}

/// Branch destination: a label before assembly, an absolute code word
/// address afterwards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Label(String),
    Addr(Word),
}

/// One logical instruction. Register fields are indices 0..16.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instruction {
    Loadi { rd: u8, imm: Imm },
    Load { rd: u8, base: u8, offset: Imm },
    Store { rs: u8, base: u8, offset: Imm },
    Alu { op: Opcode, rd: u8, ra: u8, rb: u8 },
    Branch { op: Opcode, ra: u8, rb: u8, target: Target },
    Jmp { target: Target },
    Halt,
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Loadi { .. } => Opcode::Loadi,
            Instruction::Load { .. } => Opcode::Load,
            Instruction::Store { .. } => Opcode::Store,
            Instruction::Alu { op, .. } => *op,
            Instruction::Branch { op, .. } => *op,
            Instruction::Jmp { .. } => Opcode::Jmp,
            Instruction::Halt => Opcode::Halt,
        }
    }

    /// All register fields referenced by this instruction.
    pub fn registers(&self) -> Vec<u8> {
        match self {
            Instruction::Loadi { rd, .. } => vec![*rd],
            Instruction::Load { rd, base, .. } => vec![*rd, *base],
            Instruction::Store { rs, base, .. } => vec![*rs, *base],
            Instruction::Alu { rd, ra, rb, .. } => vec![*rd, *ra, *rb],
            Instruction::Branch { ra, rb, .. } => vec![*ra, *rb],
            Instruction::Jmp { .. } | Instruction::Halt => vec![],
        }
    }

    /// Rewrite every register field through `f`.
    pub fn map_registers(&mut self, f: impl Fn(u8) -> u8) {
        match self {
            Instruction::Loadi { rd, .. } => *rd = f(*rd),
            Instruction::Load { rd, base, .. } => {
                *rd = f(*rd);
                *base = f(*base);
            }
            Instruction::Store { rs, base, .. } => {
                *rs = f(*rs);
                *base = f(*base);
            }
            Instruction::Alu { rd, ra, rb, .. } => {
                *rd = f(*rd);
                *ra = f(*ra);
                *rb = f(*rb);
            }
            Instruction::Branch { ra, rb, .. } => {
                *ra = f(*ra);
                *rb = f(*rb);
            }
            Instruction::Jmp { .. } | Instruction::Halt => {}
        }
    }
}

/// A declared program variable occupying `size` consecutive data words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarDecl {
    pub name: String,
    pub size: u32,
    pub init: Vec<Word>,
}

/// Reserved variable names backing the `.in` / `.out` directives.
pub const INPUT_VAR: &str = "in";
pub const OUTPUT_VAR: &str = "out";

/// A parsed program: ordered instructions plus variable declarations and
/// I/O metadata. Programs are immutable once validated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, usize>,
    pub variables: Vec<VarDecl>,
    pub inputs: u32,
    pub outputs: u32,
    pub reexpression: Option<String>,
}

impl Program {
    /// Distinct register indices referenced anywhere in the program.
    pub fn used_registers(&self) -> std::collections::BTreeSet<u8> {
        self.instructions
            .iter()
            .flat_map(|i| i.registers())
            .collect()
    }

    pub fn variable(&self, name: &str) -> Option<&VarDecl> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn data_words(&self) -> u32 {
        self.variables.iter().map(|v| v.size).sum()
    }

    pub fn validate(&self) -> Result<(), AssembleError> {
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.as_str()) {
                return Err(AssembleError::InvalidProgram(format!(
                    "duplicate variable `{}`",
                    v.name
                )));
            }
            if v.size == 0 {
                return Err(AssembleError::InvalidProgram(format!(
                    "variable `{}` has zero size",
                    v.name
                )));
            }
            if v.init.len() as u32 > v.size {
                return Err(AssembleError::InvalidProgram(format!(
                    "initializer for `{}` exceeds its size",
                    v.name
                )));
            }
        }
        if self.outputs == 0 {
            return Err(AssembleError::InvalidProgram(
                "programs must declare at least one output word".into(),
            ));
        }
        if self.inputs > 0 {
            match self.variable(INPUT_VAR) {
                Some(v) if v.size == self.inputs => {}
                _ => {
                    return Err(AssembleError::InvalidProgram(
                        "`.in` count does not match the `in` variable".into(),
                    ))
                }
            }
        }
        match self.variable(OUTPUT_VAR) {
            Some(v) if v.size == self.outputs => {}
            _ => {
                return Err(AssembleError::InvalidProgram(
                    "`.out` count does not match the `out` variable".into(),
                ))
            }
        }
        for (idx, insn) in self.instructions.iter().enumerate() {
            for r in insn.registers() {
                if r >= NUM_REGS {
                    return Err(AssembleError::InvalidProgram(format!(
                        "instruction {idx} references register r{r}"
                    )));
                }
            }
            let imm = match insn {
                Instruction::Loadi { imm, .. }
                | Instruction::Load { offset: imm, .. }
                | Instruction::Store { offset: imm, .. } => Some(imm),
                _ => None,
            };
            if let Some(Imm::VarAddr { name, offset }) = imm {
                match self.variable(name) {
                    Some(v) if *offset < v.size => {}
                    Some(_) => {
                        return Err(AssembleError::InvalidProgram(format!(
                            "instruction {idx}: offset past the end of `{name}`"
                        )))
                    }
                    None => {
                        return Err(AssembleError::InvalidProgram(format!(
                            "instruction {idx}: unknown variable `{name}`"
                        )))
                    }
                }
            }
            let target = match insn {
                Instruction::Branch { target, .. } | Instruction::Jmp { target } => Some(target),
                _ => None,
            };
            if let Some(Target::Label(l)) = target {
                if !self.labels.contains_key(l) {
                    return Err(AssembleError::InvalidProgram(format!(
                        "instruction {idx}: unknown label `{l}`"
                    )));
                }
            }
        }
        for (label, &idx) in &self.labels {
            if idx > self.instructions.len() {
                return Err(AssembleError::InvalidProgram(format!(
                    "label `{label}` points past the program"
                )));
            }
        }
        Ok(())
    }
}

/// Bijection between logical opcodes and physical opcode bytes. Physical
/// bytes not covered by the encoding decode to invalid-opcode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpcodeEncoding {
    to_byte: [u8; 16],
}

impl OpcodeEncoding {
    /// Identity encoding: logical opcode index equals the physical byte.
    pub fn identity() -> Self {
        let mut to_byte = [0u8; 16];
        for (i, b) in to_byte.iter_mut().enumerate() {
            *b = i as u8;
        }
        OpcodeEncoding { to_byte }
    }

    /// Seed-derived bijection onto 16 distinct bytes of the 256-byte space.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x09_C0DE);
        let mut bytes: Vec<u8> = (0..=255).collect();
        bytes.shuffle(&mut rng);
        let mut to_byte = [0u8; 16];
        to_byte.copy_from_slice(&bytes[..16]);
        OpcodeEncoding { to_byte }
    }

    pub fn encode(&self, op: Opcode) -> u8 {
        self.to_byte[op.index() as usize]
    }

    pub fn decode(&self, byte: u8) -> Option<Opcode> {
        self.to_byte
            .iter()
            .position(|&b| b == byte)
            .and_then(|i| Opcode::from_index(i as u8))
    }

    /// True when some logical opcode is encoded as `byte`.
    pub fn uses_byte(&self, byte: u8) -> bool {
        self.to_byte.contains(&byte)
    }

    pub fn assigned_bytes(&self) -> [u8; 16] {
        self.to_byte
    }
}

/// Placement of a program in memory: code base, data base, the variable
/// permutation and per-variable gaps actually applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryLayout {
    pub code_base: u32,
    pub data_base: u32,
    /// Placement order: `variable_order[i]` is the index (into
    /// `Program::variables`) of the i-th variable laid out.
    pub variable_order: Vec<u32>,
    /// Gap in words placed before each variable, indexed like
    /// `variable_order`.
    pub gaps: Vec<u32>,
    pub memory_size: u32,
    var_addrs: BTreeMap<String, u32>,
    data_end: u32,
}

impl MemoryLayout {
    pub(crate) fn place(
        code_base: u32,
        data_base: u32,
        memory_size: u32,
        variables: &[VarDecl],
        variable_order: Vec<u32>,
        gaps: Vec<u32>,
    ) -> Result<Self, AssembleError> {
        assert_eq!(variable_order.len(), variables.len());
        assert_eq!(gaps.len(), variables.len());
        let mut var_addrs = BTreeMap::new();
        let mut cursor = data_base as u64;
        for (slot, &vi) in variable_order.iter().enumerate() {
            let var = &variables[vi as usize];
            cursor += gaps[slot] as u64;
            var_addrs.insert(var.name.clone(), cursor as u32);
            cursor += var.size as u64;
            if cursor > memory_size as u64 {
                return Err(AssembleError::LayoutOverflow(format!(
                    "data segment ends at {cursor:#x}, memory holds {memory_size:#x} words"
                )));
            }
        }
        Ok(MemoryLayout {
            code_base,
            data_base,
            variable_order,
            gaps,
            memory_size,
            var_addrs,
            data_end: cursor as u32,
        })
    }

    pub fn addr_of(&self, var: &str) -> Option<u32> {
        self.var_addrs.get(var).copied()
    }

    pub fn data_end(&self) -> u32 {
        self.data_end
    }

    /// Address ranges `[start, end)` of all variables, for disjointness checks.
    pub fn var_ranges(&self, variables: &[VarDecl]) -> Vec<(String, u32, u32)> {
        variables
            .iter()
            .map(|v| {
                let a = self.var_addrs[&v.name];
                (v.name.clone(), a, a + v.size)
            })
            .collect()
    }
}

/// Machine geometry an image is assembled against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineParams {
    pub memory_size: u32,
    pub code_base: u32,
    pub data_base: u32,
}

impl Default for MachineParams {
    fn default() -> Self {
        MachineParams {
            memory_size: DEFAULT_MEMORY_SIZE,
            code_base: DEFAULT_CODE_BASE,
            data_base: DEFAULT_DATA_BASE,
        }
    }
}

impl MachineParams {
    /// Number of address lines (log2 of the memory size).
    pub fn address_lines(&self) -> u8 {
        debug_assert!(self.memory_size.is_power_of_two());
        self.memory_size.trailing_zeros() as u8
    }
}

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("layout overflow: {0}")]
    LayoutOverflow(String),
    #[error("infeasible register allocation: {used} registers used, {available} available")]
    InfeasibleRegisterAllocation { used: usize, available: usize },
    #[error("unknown re-expression family `{0}`")]
    UnknownFamily(String),
    #[error("invalid diversity config: {0}")]
    InvalidConfig(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_encoding_round_trips() {
        let enc = OpcodeEncoding::identity();
        for op in Opcode::ALL {
            assert_eq!(enc.decode(enc.encode(op)), Some(op));
        }
        assert_eq!(enc.decode(16), None);
    }

    #[test]
    fn seeded_encoding_is_a_bijection() {
        for seed in [1u64, 2, 3, 0xDEAD, u64::MAX] {
            let enc = OpcodeEncoding::from_seed(seed);
            let mut seen = std::collections::BTreeSet::new();
            for op in Opcode::ALL {
                assert!(seen.insert(enc.encode(op)), "seed {seed} repeats a byte");
                assert_eq!(enc.decode(enc.encode(op)), Some(op));
            }
        }
    }

    #[test]
    fn layout_rejects_overflow() {
        let vars = vec![VarDecl { name: "v".into(), size: 8, init: vec![] }];
        let err = MemoryLayout::place(0, 60, 64, &vars, vec![0], vec![0]);
        assert!(matches!(err, Err(AssembleError::LayoutOverflow(_))));
    }
}
