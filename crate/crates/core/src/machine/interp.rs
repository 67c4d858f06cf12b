//! The interpreter: deterministic execution of an image under a fault plan.
//!
//! Every register access, data-address translation, memory cell access, and
//! opcode decode passes through the fault views. Instruction fetch reads
//! physical memory (the PC increment path is not part of the modeled
//! data-address calculation unit); memory-cell defects still reach fetched
//! words because the cell forces what it stores.
//!
//! I/O convention: the loader places code, variable initializers, and the
//! input words physically (cell defects apply, the CPU's address path does
//! not); the voter reads the output variable's physical cells after HALT.

use super::image::{decode_fields, MachineImage};
use super::{Opcode, Program, Word, DEFAULT_CYCLE_LIMIT};
use crate::diversity::DiversityConfig;
use crate::faults::{
    view_address, view_memory_read, view_memory_write, view_opcode, view_register_read,
    view_register_write, FaultKind, FaultPlan,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashReason {
    InvalidOpcode,
    OutOfBounds,
    DivideByZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExecStatus {
    Completed,
    Crashed { reason: CrashReason },
    TimedOut,
}

/// Result of one execution. `outputs` is present iff the run completed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    #[serde(flatten)]
    pub status: ExecStatus,
    pub outputs: Option<Vec<Word>>,
    pub cycles: u32,
}

/// Which access side register stuck-bit faults force.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegisterFaultSide {
    Read,
    Write,
}

/// Which access side memory stuck-bit faults force.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemoryFaultSide {
    Load,
    Store,
}

/// Fault-view wiring. Default campaigns force registers on read and memory
/// cells on store; both hooks exist and are exercised in tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub register_side: RegisterFaultSide,
    pub memory_side: MemoryFaultSide,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            register_side: RegisterFaultSide::Read,
            memory_side: MemoryFaultSide::Store,
        }
    }
}

/// Run an image on an input under a fault plan. Deterministic: identical
/// arguments yield identical outcomes.
pub fn run(
    image: &MachineImage,
    input: &[Word],
    plan: &FaultPlan,
    cycle_limit: u32,
) -> ExecutionOutcome {
    run_with_memory(image, input, plan, cycle_limit, RunOptions::default()).0
}

/// As [`run`], additionally returning the final physical memory — what the
/// fault-free voter core can observe in shared RAM.
pub fn run_with_memory(
    image: &MachineImage,
    input: &[Word],
    plan: &FaultPlan,
    cycle_limit: u32,
    opts: RunOptions,
) -> (ExecutionOutcome, Vec<Word>) {
    run_with_state(image, input, plan, cycle_limit, opts, None)
}

/// As [`run_with_memory`], optionally starting from a prior RAM state (RAM
/// persists across the probe programs of one self-test sequence). The image
/// load still rewrites code, initializers, and inputs.
pub fn run_with_state(
    image: &MachineImage,
    input: &[Word],
    plan: &FaultPlan,
    cycle_limit: u32,
    opts: RunOptions,
    initial_memory: Option<Vec<Word>>,
) -> (ExecutionOutcome, Vec<Word>) {
    assert!(cycle_limit > 0, "cycle_limit must be positive");
    assert_eq!(
        input.len() as u32,
        image.program.inputs,
        "input length must match the program's declared inputs"
    );

    let ms = image.layout.memory_size;
    let mut mem = match initial_memory {
        Some(m) => {
            assert_eq!(m.len(), ms as usize, "prior RAM must match the memory size");
            m
        }
        None => vec![0u32; ms as usize],
    };

    // Image load: cell defects standing from the start force stored bits
    // when memory faults are wired store-side.
    let store_at_load = |mem: &mut Vec<Word>, addr: u32, value: Word| {
        let mut v = value;
        if opts.memory_side == MemoryFaultSide::Store {
            for f in plan.faults() {
                if let FaultKind::MemoryStuckBit { addr: a, bit, stuck_value } = f.kind {
                    if a == addr && f.persistence.active_at_image_load() {
                        let mask = 1u32 << bit;
                        v = if stuck_value == 0 { v & !mask } else { v | mask };
                    }
                }
            }
        }
        mem[addr as usize] = v;
    };

    for (i, &w) in image.resolved_code.iter().enumerate() {
        store_at_load(&mut mem, image.layout.code_base + i as u32, w);
    }
    for var in &image.program.variables {
        let base = image.layout.addr_of(&var.name).expect("placed variable");
        for (i, &w) in var.init.iter().enumerate() {
            store_at_load(&mut mem, base + i as u32, w);
        }
    }
    if let Some(in_addr) = image.input_addr() {
        for (i, &w) in input.iter().enumerate() {
            store_at_load(&mut mem, in_addr + i as u32, w);
        }
    }

    let mut regs = [0u32; 16];
    let mut pc = image.layout.code_base;
    let mut cycle: u32 = 0;

    let outcome = loop {
        if cycle >= cycle_limit {
            break ExecutionOutcome { status: ExecStatus::TimedOut, outputs: None, cycles: cycle };
        }
        if pc >= ms || pc + 1 >= ms {
            break crash(CrashReason::OutOfBounds, cycle);
        }

        let fetch = |addr: u32| -> Word {
            let raw = mem[addr as usize];
            match opts.memory_side {
                MemoryFaultSide::Load => view_memory_read(raw, addr, plan, cycle),
                MemoryFaultSide::Store => raw,
            }
        };
        let w0 = fetch(pc);
        let w1 = fetch(pc + 1);

        let byte = view_opcode((w0 & 0xFF) as u8, plan, cycle);
        let Some(op) = image.opcode_encoding.decode(byte) else {
            break crash(CrashReason::InvalidOpcode, cycle);
        };
        let insn = decode_fields(op, w0, w1);

        let read_reg = |regs: &[Word; 16], r: u8| -> Word {
            let raw = regs[r as usize];
            match opts.register_side {
                RegisterFaultSide::Read => view_register_read(raw, r, plan, cycle),
                RegisterFaultSide::Write => raw,
            }
        };
        let write_reg = |regs: &mut [Word; 16], r: u8, v: Word| {
            regs[r as usize] = match opts.register_side {
                RegisterFaultSide::Write => view_register_write(v, r, plan, cycle),
                RegisterFaultSide::Read => v,
            };
        };

        use super::Instruction as I;
        match insn {
            I::Loadi { rd, imm } => write_reg(&mut regs, rd, imm.value()),
            I::Load { rd, base, offset } => {
                let ea = read_reg(&regs, base).wrapping_add(offset.value());
                if ea >= ms {
                    break crash(CrashReason::OutOfBounds, cycle);
                }
                let pa = view_address(ea, plan, cycle, ms);
                let raw = mem[pa as usize];
                let v = match opts.memory_side {
                    MemoryFaultSide::Load => view_memory_read(raw, pa, plan, cycle),
                    MemoryFaultSide::Store => raw,
                };
                write_reg(&mut regs, rd, v);
            }
            I::Store { rs, base, offset } => {
                let ea = read_reg(&regs, base).wrapping_add(offset.value());
                if ea >= ms {
                    break crash(CrashReason::OutOfBounds, cycle);
                }
                let pa = view_address(ea, plan, cycle, ms);
                let v = read_reg(&regs, rs);
                mem[pa as usize] = match opts.memory_side {
                    MemoryFaultSide::Store => view_memory_write(v, pa, plan, cycle),
                    MemoryFaultSide::Load => v,
                };
            }
            I::Alu { op, rd, ra, rb } => {
                let x = read_reg(&regs, ra);
                let y = read_reg(&regs, rb);
                let v = match op {
                    Opcode::Add => x.wrapping_add(y),
                    Opcode::Sub => x.wrapping_sub(y),
                    Opcode::Mul => x.wrapping_mul(y),
                    Opcode::And => x & y,
                    Opcode::Or => x | y,
                    Opcode::Xor => x ^ y,
                    Opcode::Shl => x << (y & 31),
                    Opcode::Shr => x >> (y & 31),
                    _ => unreachable!(),
                };
                write_reg(&mut regs, rd, v);
            }
            I::Branch { op, ra, rb, target } => {
                let x = read_reg(&regs, ra);
                let y = read_reg(&regs, rb);
                let taken = match op {
                    Opcode::Beq => x == y,
                    Opcode::Bne => x != y,
                    Opcode::Blt => x < y,
                    _ => unreachable!(),
                };
                if taken {
                    let t = target_addr(&target);
                    if t >= ms {
                        break crash(CrashReason::OutOfBounds, cycle);
                    }
                    pc = t;
                    cycle += 1;
                    continue;
                }
            }
            I::Jmp { target } => {
                let t = target_addr(&target);
                if t >= ms {
                    break crash(CrashReason::OutOfBounds, cycle);
                }
                pc = t;
                cycle += 1;
                continue;
            }
            I::Halt => {
                let out_addr = image.output_addr();
                let outputs = (0..image.program.outputs)
                    .map(|i| mem[(out_addr + i) as usize])
                    .collect();
                break ExecutionOutcome {
                    status: ExecStatus::Completed,
                    outputs: Some(outputs),
                    cycles: cycle + 1,
                };
            }
        }
        pc += 2;
        cycle += 1;
    };

    (outcome, mem)
}

fn target_addr(t: &super::Target) -> u32 {
    match t {
        super::Target::Addr(a) => *a,
        super::Target::Label(_) => unreachable!("images carry resolved targets"),
    }
}

fn crash(reason: CrashReason, cycles: u32) -> ExecutionOutcome {
    ExecutionOutcome { status: ExecStatus::Crashed { reason }, outputs: None, cycles }
}

#[derive(Debug, Error)]
pub enum GoldenError {
    #[error("golden run failed: fault-free execution ended {status:?} after {cycles} cycles")]
    GoldenRunFailed { status: ExecStatus, cycles: u32 },
    #[error(transparent)]
    Assemble(#[from] super::AssembleError),
}

/// Fault-free reference output under the identity configuration.
pub fn golden_run(program: &Program, input: &[Word]) -> Result<Vec<Word>, GoldenError> {
    let image = super::assemble(program, &DiversityConfig::identity())?;
    let outcome = run(&image, input, &FaultPlan::empty(), DEFAULT_CYCLE_LIMIT);
    match outcome.status {
        ExecStatus::Completed => Ok(outcome.outputs.expect("completed runs carry outputs")),
        status => Err(GoldenError::GoldenRunFailed { status, cycles: outcome.cycles }),
    }
}

/// Memoized golden outputs, keyed by (program name, input). Shared across
/// campaign trials; safe for concurrent use.
#[derive(Default)]
pub struct GoldenCache {
    images: Mutex<HashMap<String, std::sync::Arc<MachineImage>>>,
    outputs: Mutex<HashMap<(String, Vec<Word>), Vec<Word>>>,
}

impl GoldenCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identity image for a program, built once.
    pub fn identity_image(&self, program: &Program) -> std::sync::Arc<MachineImage> {
        let mut images = self.images.lock().unwrap();
        images
            .entry(program.name.clone())
            .or_insert_with(|| {
                std::sync::Arc::new(
                    super::assemble(program, &DiversityConfig::identity())
                        .expect("registered benchmarks assemble under identity"),
                )
            })
            .clone()
    }

    pub fn golden(&self, program: &Program, input: &[Word]) -> Result<Vec<Word>, GoldenError> {
        let key = (program.name.clone(), input.to_vec());
        if let Some(hit) = self.outputs.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let image = self.identity_image(program);
        let outcome = run(&image, input, &FaultPlan::empty(), DEFAULT_CYCLE_LIMIT);
        let out = match outcome.status {
            ExecStatus::Completed => outcome.outputs.expect("completed runs carry outputs"),
            status => return Err(GoldenError::GoldenRunFailed { status, cycles: outcome.cycles }),
        };
        self.outputs.lock().unwrap().insert(key, out.clone());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::{DecoderMode, Fault, Persistence};
    use crate::machine::{assemble, parse_program};

    fn passthrough() -> Program {
        parse_program(
            "pass",
            ".in 1\n.out 1\nLOADI r0, &in\nLOAD r1, r0, 0\nLOADI r2, &out\nSTORE r1, r2, 0\nHALT",
        )
        .unwrap()
    }

    fn image(p: &Program) -> MachineImage {
        assemble(p, &DiversityConfig::identity()).unwrap()
    }

    fn perm0(kind: FaultKind) -> FaultPlan {
        FaultPlan::single(Fault { kind, persistence: Persistence::Permanent { onset_cycle: 0 }, core: 0 })
    }

    #[test]
    fn fault_free_run_passes_the_input_through() {
        let p = passthrough();
        let img = image(&p);
        let out = run(&img, &[0xDEAD_BEEF], &FaultPlan::empty(), 100);
        assert_eq!(out.status, ExecStatus::Completed);
        assert_eq!(out.outputs, Some(vec![0xDEAD_BEEF]));
        assert!(out.cycles <= 100);
    }

    #[test]
    fn runs_are_deterministic() {
        let p = passthrough();
        let img = image(&p);
        let plan = perm0(FaultKind::RegisterStuckBit { reg: 1, bit: 0, stuck_value: 1 });
        let a = run(&img, &[2], &plan, 100);
        let b = run(&img, &[2], &plan, 100);
        assert_eq!(a, b);
    }

    #[test]
    fn register_read_fault_perturbs_the_output() {
        let p = passthrough();
        let img = image(&p);
        let plan = perm0(FaultKind::RegisterStuckBit { reg: 1, bit: 0, stuck_value: 1 });
        let out = run(&img, &[2], &plan, 100);
        assert_eq!(out.outputs, Some(vec![3]));
    }

    #[test]
    fn cycle_limit_times_out_and_never_exceeds() {
        let p = parse_program("spin", ".out 1\nloop:\nJMP loop").unwrap();
        let img = image(&p);
        let out = run(&img, &[], &FaultPlan::empty(), 17);
        assert_eq!(out.status, ExecStatus::TimedOut);
        assert_eq!(out.cycles, 17);
        assert_eq!(out.outputs, None);
    }

    #[test]
    fn unassigned_opcode_byte_crashes_as_invalid() {
        // Substitute HALT's physical byte by an unassigned one.
        let p = passthrough();
        let img = image(&p);
        let halt_byte = img.opcode_encoding.encode(Opcode::Halt);
        let plan = perm0(FaultKind::InstructionDecoderSub { from: halt_byte, to: 0xEE });
        let out = run(&img, &[1], &plan, 200);
        assert!(
            matches!(
                out.status,
                ExecStatus::Crashed { reason: CrashReason::InvalidOpcode } | ExecStatus::TimedOut
            ),
            "unexpected status {:?}",
            out.status
        );
    }

    #[test]
    fn transient_fault_past_the_horizon_is_a_perfect_noop() {
        let p = passthrough();
        let img = image(&p);
        let plan = FaultPlan::single(Fault {
            kind: FaultKind::RegisterStuckBit { reg: 1, bit: 0, stuck_value: 1 },
            persistence: Persistence::Transient { cycle: 5000 },
            core: 0,
        });
        let faulty = run(&img, &[2], &plan, 100);
        let clean = run(&img, &[2], &FaultPlan::empty(), 100);
        assert_eq!(faulty, clean);
    }

    #[test]
    fn memory_store_fault_forces_the_written_cell() {
        let p = passthrough();
        let img = image(&p);
        let out_addr = img.output_addr();
        let plan = perm0(FaultKind::MemoryStuckBit { addr: out_addr, bit: 4, stuck_value: 1 });
        let out = run(&img, &[0], &plan, 100);
        assert_eq!(out.outputs, Some(vec![0x10]));
    }

    #[test]
    fn memory_load_side_wiring_forces_reads_instead() {
        let p = passthrough();
        let img = image(&p);
        let in_addr = img.input_addr().unwrap();
        let plan = perm0(FaultKind::MemoryStuckBit { addr: in_addr, bit: 0, stuck_value: 1 });
        let opts = RunOptions { memory_side: MemoryFaultSide::Load, ..RunOptions::default() };
        let (out, _) = run_with_memory(&img, &[4], &plan, 100, opts);
        assert_eq!(out.outputs, Some(vec![5]));
    }

    #[test]
    fn register_write_side_wiring_forces_stored_values() {
        let p = passthrough();
        let img = image(&p);
        let plan = perm0(FaultKind::RegisterStuckBit { reg: 1, bit: 1, stuck_value: 1 });
        let opts = RunOptions { register_side: RegisterFaultSide::Write, ..RunOptions::default() };
        let (out, _) = run_with_memory(&img, &[4], &plan, 100, opts);
        assert_eq!(out.outputs, Some(vec![6]));
    }

    #[test]
    fn decoder_fault_redirects_data_access_and_detaches_output() {
        let p = passthrough();
        let img = image(&p);
        let out_addr = img.output_addr();
        // Force a data-address line the output cell depends on.
        let line = out_addr.trailing_zeros() as u8;
        let plan = perm0(FaultKind::AddressDecoderLine { line, mode: DecoderMode::Stuck0 });
        let (out, mem) = run_with_memory(&img, &[0xAB], &plan, 100, RunOptions::default());
        assert_eq!(out.status, ExecStatus::Completed);
        // The store was redirected, so the physical output cell is stale.
        assert_eq!(out.outputs, Some(vec![0]));
        assert_eq!(mem[(out_addr & !(1 << line)) as usize], 0xAB);
    }

    #[test]
    fn golden_run_rejects_broken_benchmarks() {
        let p = parse_program("spin", ".out 1\nloop:\nJMP loop").unwrap();
        assert!(matches!(
            golden_run(&p, &[]),
            Err(GoldenError::GoldenRunFailed { status: ExecStatus::TimedOut, .. })
        ));
    }
}
