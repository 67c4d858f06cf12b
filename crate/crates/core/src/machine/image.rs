//! Image assembly: static transforms, layout derivation, symbol resolution,
//! and physical encoding. An image is a pure function of (program, config).

use super::{
    AssembleError, Imm, Instruction, MachineParams, MemoryLayout, Opcode, OpcodeEncoding, Program,
    Target, Word, INSTRUCTION_WORDS,
};
use crate::diversity::{apply_static, derive_layout_with, DiversityConfig};

pub use crate::diversity::RegisterRemap as RegisterMap;

/// A loaded program plus memory layout, register allocation, and opcode
/// encoding for one replica. Immutable after assembly and safe to share.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineImage {
    /// The transformed program: registers remapped, NOPs inserted, variable
    /// references and branch targets resolved to absolute addresses.
    pub program: Program,
    pub layout: MemoryLayout,
    pub register_map: RegisterMap,
    pub opcode_encoding: OpcodeEncoding,
    /// Physically encoded instruction stream, two words per instruction.
    pub resolved_code: Vec<Word>,
}

impl MachineImage {
    pub fn code_end(&self) -> u32 {
        self.layout.code_base + self.resolved_code.len() as u32
    }

    pub fn input_addr(&self) -> Option<u32> {
        self.layout.addr_of(super::INPUT_VAR)
    }

    pub fn output_addr(&self) -> u32 {
        self.layout
            .addr_of(super::OUTPUT_VAR)
            .expect("validated programs declare an output variable")
    }
}

/// Assemble against the default machine geometry.
pub fn assemble(program: &Program, config: &DiversityConfig) -> Result<MachineImage, AssembleError> {
    assemble_with(program, config, &MachineParams::default())
}

/// Assemble with explicit geometry: apply static transforms, derive the
/// layout, resolve symbols, and encode. Deterministic in all arguments.
pub fn assemble_with(
    program: &Program,
    config: &DiversityConfig,
    params: &MachineParams,
) -> Result<MachineImage, AssembleError> {
    program.validate()?;
    config.validate(program)?;

    let st = apply_static(program, &config.static_params)?;
    let layout = derive_layout_with(&st.program, &config.dynamic, params)?;

    let mut resolved = st.program;
    let code_words = resolved.instructions.len() as u32 * INSTRUCTION_WORDS;
    let code_end = params
        .code_base
        .checked_add(code_words)
        .filter(|&e| e <= params.memory_size)
        .ok_or_else(|| {
            AssembleError::LayoutOverflow(format!(
                "{code_words} code words do not fit above {:#x}",
                params.code_base
            ))
        })?;
    if layout.data_base < code_end && params.code_base < layout.data_end() {
        return Err(AssembleError::LayoutOverflow(format!(
            "data segment [{:#x}, {:#x}) overlaps code segment [{:#x}, {:#x})",
            layout.data_base,
            layout.data_end(),
            params.code_base,
            code_end
        )));
    }

    let labels = resolved.labels.clone();
    let code_base = params.code_base;
    let resolve_target = |t: &mut Target| {
        if let Target::Label(l) = t {
            let idx = labels[l.as_str()] as u32;
            *t = Target::Addr(code_base + idx * INSTRUCTION_WORDS);
        }
    };
    for insn in &mut resolved.instructions {
        match insn {
            Instruction::Loadi { imm, .. }
            | Instruction::Load { offset: imm, .. }
            | Instruction::Store { offset: imm, .. } => {
                if let Imm::VarAddr { name, offset } = imm {
                    let addr = layout
                        .addr_of(name)
                        .expect("validated variable reference")
                        + *offset;
                    *imm = Imm::Value(addr);
                }
            }
            Instruction::Branch { target, .. } => resolve_target(target),
            Instruction::Jmp { target } => resolve_target(target),
            _ => {}
        }
    }

    let encoding = st.opcode_encoding;
    let mut resolved_code = Vec::with_capacity(resolved.instructions.len() * 2);
    for insn in &resolved.instructions {
        let (w0, w1) = encode_instruction(insn, &encoding);
        resolved_code.push(w0);
        resolved_code.push(w1);
    }

    Ok(MachineImage {
        program: resolved,
        layout,
        register_map: st.register_map,
        opcode_encoding: encoding,
        resolved_code,
    })
}

/// Encode one resolved instruction: opcode byte in bits 0..8, register
/// fields in bits 8..20, immediate/target in the second word.
pub fn encode_instruction(insn: &Instruction, enc: &OpcodeEncoding) -> (Word, Word) {
    let byte = enc.encode(insn.opcode()) as u32;
    let pack = |a: u8, b: u8, c: u8| byte | ((a as u32) << 8) | ((b as u32) << 12) | ((c as u32) << 16);
    match insn {
        Instruction::Loadi { rd, imm } => (pack(*rd, 0, 0), imm.value()),
        Instruction::Load { rd, base, offset } => (pack(*rd, *base, 0), offset.value()),
        Instruction::Store { rs, base, offset } => (pack(*rs, *base, 0), offset.value()),
        Instruction::Alu { rd, ra, rb, .. } => (pack(*rd, *ra, *rb), 0),
        Instruction::Branch { ra, rb, target, .. } => match target {
            Target::Addr(a) => (pack(*ra, *rb, 0), *a),
            Target::Label(_) => panic!("unresolved branch target"),
        },
        Instruction::Jmp { target } => match target {
            Target::Addr(a) => (pack(0, 0, 0), *a),
            Target::Label(_) => panic!("unresolved jump target"),
        },
        Instruction::Halt => (pack(0, 0, 0), 0),
    }
}

/// Decode an instruction pair under an encoding. `None` when the opcode byte
/// is not assigned.
pub fn decode_instruction(w0: Word, w1: Word, enc: &OpcodeEncoding) -> Option<Instruction> {
    let op = enc.decode((w0 & 0xFF) as u8)?;
    Some(decode_fields(op, w0, w1))
}

/// Decode the operand fields for a known logical opcode.
pub fn decode_fields(op: Opcode, w0: Word, w1: Word) -> Instruction {
    let a = ((w0 >> 8) & 0xF) as u8;
    let b = ((w0 >> 12) & 0xF) as u8;
    let c = ((w0 >> 16) & 0xF) as u8;
    match op {
        Opcode::Loadi => Instruction::Loadi { rd: a, imm: Imm::Value(w1) },
        Opcode::Load => Instruction::Load { rd: a, base: b, offset: Imm::Value(w1) },
        Opcode::Store => Instruction::Store { rs: a, base: b, offset: Imm::Value(w1) },
        o if o.is_alu() => Instruction::Alu { op: o, rd: a, ra: b, rb: c },
        o if o.is_branch() => Instruction::Branch { op: o, ra: a, rb: b, target: Target::Addr(w1) },
        Opcode::Jmp => Instruction::Jmp { target: Target::Addr(w1) },
        Opcode::Halt => Instruction::Halt,
        _ => unreachable!(),
    }
}
