//! Software-based self-tests that execute targeted probe programs on a
//! (possibly faulty) core and localize permanent faults of the four supported
//! classes.
//!
//! Probes run through the same fault views as normal executions and never
//! consult the fault plan; the plan is only used by the machine. The
//! orchestrator additionally inspects physical memory snapshots after probe
//! runs — the fault-free voter core reading shared RAM — to decode alias
//! signatures and witness cells. Evidence rules (double-witness register
//! probes, exact alias fits, hypothesis simulation for opcode substitutions)
//! keep reports free of phantoms under each single-fault scenario.

use crate::diversity::DiversityConfig;
use crate::faults::{DecoderMode, DetectedFault, Fault, FaultDefinition, FaultKind, FaultPlan, Persistence};
use crate::machine::{
    assemble_with, run_with_state, ExecStatus, ExecutionOutcome, Imm, Instruction, MachineImage,
    MachineParams, Opcode, Program, RunOptions, Target, VarDecl, Word, DEFAULT_MEMORY_SIZE,
    OUTPUT_VAR,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

/// Everything a self-test pass learned: located faults, the tests that ran,
/// and probes that could not complete or be interpreted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultReport {
    pub found: Vec<FaultDefinition>,
    pub tests_run: Vec<String>,
    pub probe_crashes: Vec<String>,
}


const REGISTER_WALK: &str = "register_walk";
const MARCH_MEMORY: &str = "march_memory";
const OPCODE_SWEEP: &str = "opcode_sweep";

/// Small machine for register and opcode probes; memory size only has to
/// hold the probe itself and its witness cells.
fn probe_params() -> MachineParams {
    MachineParams { memory_size: 0x400, code_base: 0x100, data_base: 0x8 }
}

/// March probes run on the full-size machine; their own data lives between
/// the probe code and the first test chunk.
fn march_params() -> MachineParams {
    MachineParams { memory_size: DEFAULT_MEMORY_SIZE, code_base: 0x100, data_base: 0x150 }
}

/// Memory cells the march never compares: probe code and probe data.
const MARCH_PRIVATE: (u32, u32) = (0x100, 0x200);

/// Test region: chunk `(start, len)` pairs chosen so every address line has
/// cells of both polarities somewhere in the union.
pub fn default_march_chunks() -> Vec<(u32, u32)> {
    vec![
        (0x0000, 0x100),
        (0x0200, 0x200),
        (0x0400, 0x200),
        (0x0800, 0x200),
        (0x1000, 0x200),
        (0x2000, 0x200),
        (0x4000, 0x200),
        (0x8000, 0x200),
        (0xC000, 0x200),
    ]
}

fn loadi(rd: u8, v: Word) -> Instruction {
    Instruction::Loadi { rd, imm: Imm::Value(v) }
}

fn loadi_out(rd: u8) -> Instruction {
    Instruction::Loadi { rd, imm: Imm::VarAddr { name: OUTPUT_VAR.into(), offset: 0 } }
}

fn store(rs: u8, base: u8, off: Word) -> Instruction {
    Instruction::Store { rs, base, offset: Imm::Value(off) }
}

fn load(rd: u8, base: u8, off: Word) -> Instruction {
    Instruction::Load { rd, base, offset: Imm::Value(off) }
}

fn alu(op: Opcode, rd: u8, ra: u8, rb: u8) -> Instruction {
    Instruction::Alu { op, rd, ra, rb }
}

fn branch(op: Opcode, ra: u8, rb: u8, label: &str) -> Instruction {
    Instruction::Branch { op, ra, rb, target: Target::Label(label.into()) }
}

fn jmp(label: &str) -> Instruction {
    Instruction::Jmp { target: Target::Label(label.into()) }
}

fn probe_program(
    name: &str,
    outputs: u32,
    vars: Vec<VarDecl>,
    instructions: Vec<Instruction>,
    labels: BTreeMap<String, usize>,
) -> Program {
    let mut variables = vars;
    variables.push(VarDecl { name: OUTPUT_VAR.into(), size: outputs, init: vec![] });
    let program = Program {
        name: name.to_string(),
        instructions,
        labels,
        variables,
        inputs: 0,
        outputs,
        reexpression: None,
    };
    program.validate().expect("probe programs are well-formed");
    program
}

// ---------------------------------------------------------------------------
// Register walk
// ---------------------------------------------------------------------------

const WALK_PATTERNS: [Word; 4] = [0x0000_0000, 0xFFFF_FFFF, 0xAAAA_AAAA, 0x5555_5555];

fn register_probe(reg: u8, pattern: Word) -> Program {
    let addr = (reg + 1) % crate::machine::NUM_REGS;
    probe_program(
        "probe_register",
        2,
        vec![],
        vec![
            loadi(reg, pattern),
            loadi_out(addr),
            store(reg, addr, 0),
            store(reg, addr, 1),
            Instruction::Halt,
        ],
        BTreeMap::new(),
    )
}

/// Walk every register with the four standard patterns; a bit that cannot
/// assume both values (witnessed identically in two cells) is reported as
/// stuck with its observed value.
pub fn register_walk_test(plan: &FaultPlan, _seed: u64) -> (Vec<FaultDefinition>, Vec<String>) {
    let params = probe_params();
    let mut found = Vec::new();
    let mut crashes = Vec::new();

    'regs: for reg in 0..crate::machine::NUM_REGS {
        let mut observed = [0u32; 4];
        for (pi, &pattern) in WALK_PATTERNS.iter().enumerate() {
            let program = register_probe(reg, pattern);
            let image = assemble_with(&program, &DiversityConfig::identity(), &params)
                .expect("register probe assembles");
            let (outcome, _) =
                run_with_state(&image, &[], plan, 64, RunOptions::default(), None);
            match outcome.status {
                ExecStatus::Completed => {
                    let out = outcome.outputs.expect("completed");
                    if out[0] != out[1] {
                        // Witness disagreement: not a register-side effect.
                        continue 'regs;
                    }
                    observed[pi] = out[0];
                }
                status => {
                    crashes.push(format!("{REGISTER_WALK}: probe r{reg} ended {status:?}"));
                    continue 'regs;
                }
            }
        }
        let mut stuck = Vec::new();
        for bit in 0..32u8 {
            let bits: Vec<u8> =
                observed.iter().map(|w| ((w >> bit) & 1) as u8).collect();
            if bits.iter().all(|&b| b == bits[0]) {
                // Written values cover both polarities for every bit, so a
                // constant observation means the bit is forced.
                stuck.push((bit, bits[0]));
            }
        }
        if stuck.len() > 4 {
            // A whole register face reading constant is a systemic symptom
            // (misplaced stores), not a register-cell defect.
            continue;
        }
        for (bit, stuck_value) in stuck {
            found.push(FaultDefinition {
                kind: DetectedFault::RegisterStuckBit { reg, bit, stuck_value },
                evidence: REGISTER_WALK.into(),
            });
        }
    }
    (found, crashes)
}

// ---------------------------------------------------------------------------
// March memory test
// ---------------------------------------------------------------------------

fn marker_write_probe(lo: u32, hi: u32, c: Word) -> Program {
    let mut labels = BTreeMap::new();
    labels.insert("loop".into(), 4);
    labels.insert("done".into(), 9);
    probe_program(
        "probe_march_w",
        1,
        vec![],
        vec![
            loadi(0, lo),
            loadi(1, hi),
            loadi(2, c),
            loadi(3, 1),
            // loop:
            branch(Opcode::Beq, 0, 1, "done"),
            alu(Opcode::Xor, 4, 0, 2),
            store(4, 0, 0),
            alu(Opcode::Add, 0, 0, 3),
            jmp("loop"),
            // done:
            Instruction::Halt,
        ],
        labels,
    )
}

fn verify_complement_probe(lo: u32, hi: u32, c: Word) -> Program {
    let mut labels = BTreeMap::new();
    labels.insert("loop".into(), 7);
    labels.insert("ok".into(), 13);
    labels.insert("done".into(), 17);
    probe_program(
        "probe_march_rv",
        2,
        vec![],
        vec![
            loadi(0, lo),
            loadi(1, hi),
            loadi(2, c),
            loadi(3, 1),
            loadi(5, 0),
            loadi(6, 0),
            loadi(8, 0xFFFF_FFFF),
            // loop:
            branch(Opcode::Beq, 0, 1, "done"),
            alu(Opcode::Xor, 4, 0, 2),
            load(7, 0, 0),
            branch(Opcode::Beq, 7, 4, "ok"),
            alu(Opcode::Add, 5, 5, 3),
            alu(Opcode::Or, 6, 0, 0),
            // ok:
            alu(Opcode::Xor, 4, 4, 8),
            store(4, 0, 0),
            alu(Opcode::Add, 0, 0, 3),
            jmp("loop"),
            // done:
            loadi_out(0),
            store(5, 0, 0),
            store(6, 0, 1),
            Instruction::Halt,
        ],
        labels,
    )
}

fn verify_restore_probe_desc(lo: u32, len: u32, c: Word) -> Program {
    let mut labels = BTreeMap::new();
    labels.insert("loop".into(), 8);
    labels.insert("ok".into(), 17);
    labels.insert("done".into(), 19);
    probe_program(
        "probe_march_rw",
        2,
        vec![],
        vec![
            loadi(1, lo),
            loadi(2, c),
            loadi(3, 1),
            loadi(5, 0),
            loadi(6, 0),
            loadi(8, 0xFFFF_FFFF),
            loadi(9, 0),
            loadi(10, len),
            // loop:
            branch(Opcode::Beq, 10, 9, "done"),
            alu(Opcode::Sub, 10, 10, 3),
            alu(Opcode::Add, 0, 1, 10),
            alu(Opcode::Xor, 4, 0, 2),
            alu(Opcode::Xor, 7, 4, 8),
            load(11, 0, 0),
            branch(Opcode::Beq, 11, 7, "ok"),
            alu(Opcode::Add, 5, 5, 3),
            alu(Opcode::Or, 6, 0, 0),
            // ok:
            store(4, 0, 0),
            jmp("loop"),
            // done:
            loadi_out(0),
            store(5, 0, 0),
            store(6, 0, 1),
            Instruction::Halt,
        ],
        labels,
    )
}

struct ChunkRun {
    lo: u32,
    len: u32,
    outcomes: [ExecStatus; 3],
    snaps: [Vec<Word>; 3],
}

impl ChunkRun {
    fn completed(&self) -> bool {
        self.outcomes.iter().all(|s| matches!(s, ExecStatus::Completed))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum AddrView {
    Identity,
    Line { line: u8, mode: DecoderMode },
}

impl AddrView {
    fn apply(self, addr: u32, memory_size: u32) -> u32 {
        match self {
            AddrView::Identity => addr,
            AddrView::Line { line, mode } => mode.apply(addr, line) % memory_size,
        }
    }
}

/// MATS+ element order (write up; read, write-back up; read, write-back
/// down) with address-unique data backgrounds so decoder aliasing decodes:
/// marker pass, complement pass, restore pass per chunk, with RAM persisting
/// across probes and the orchestrator snapshotting physical memory after
/// each.
pub fn march_memory_test(
    plan: &FaultPlan,
    chunks: &[(u32, u32)],
    seed: u64,
) -> (Vec<FaultDefinition>, Vec<String>) {
    let params = march_params();
    let marker_c: Word = {
        use rand::Rng;
        crate::rng::stream_rng(seed, 0x3A9C).gen()
    };
    let identity = DiversityConfig::identity();

    let mut runs: Vec<ChunkRun> = Vec::with_capacity(chunks.len());
    let mut ram: Option<Vec<Word>> = None;
    for &(lo, len) in chunks {
        let hi = lo + len;
        let limit = len * 24 + 64;
        let programs = [
            marker_write_probe(lo, hi, marker_c),
            verify_complement_probe(lo, hi, marker_c),
            verify_restore_probe_desc(lo, len, marker_c),
        ];
        let mut outcomes = [ExecStatus::Completed; 3];
        let mut snaps: [Vec<Word>; 3] = [vec![], vec![], vec![]];
        for (i, program) in programs.iter().enumerate() {
            let image = assemble_with(program, &identity, &params).expect("march probe assembles");
            let (outcome, mem) =
                run_with_state(&image, &[], plan, limit, RunOptions::default(), ram.take());
            outcomes[i] = outcome.status;
            snaps[i] = mem.clone();
            ram = Some(mem);
        }
        runs.push(ChunkRun { lo, len, outcomes, snaps });
    }

    analyze_march(&runs, marker_c, params.memory_size, params.address_lines())
}

/// Simulate the march write sequence under an address view and compare
/// against the snapshots of completed chunks. Write order is independent of
/// loads and registers, so the prediction is exact.
fn march_view_fits(
    runs: &[ChunkRun],
    view: AddrView,
    marker_c: Word,
    memory_size: u32,
) -> bool {
    let mut sim = vec![0u32; memory_size as usize];
    let out_addr = 0x150u32; // march probe data base
    let mut excluded: BTreeSet<u32> = (MARCH_PRIVATE.0..MARCH_PRIVATE.1).collect();
    excluded.insert(view.apply(out_addr, memory_size));
    excluded.insert(view.apply(out_addr + 1, memory_size));
    for r in runs.iter().filter(|r| !r.completed()) {
        for a in r.lo..r.lo + r.len {
            excluded.insert(a);
            excluded.insert(view.apply(a, memory_size));
        }
    }

    let mut distinguishing = view == AddrView::Identity;
    for r in runs {
        if !r.completed() {
            continue;
        }
        let mut cmp: Vec<u32> = Vec::with_capacity(2 * r.len as usize);
        for a in r.lo..r.lo + r.len {
            let pa = view.apply(a, memory_size);
            if pa != a {
                distinguishing = true;
            }
            cmp.push(a);
            cmp.push(pa);
        }
        for (phase, snap) in r.snaps.iter().enumerate() {
            // Phase 2 marches descending; last-write-wins depends on order.
            let addrs: Vec<u32> = if phase == 2 {
                (r.lo..r.lo + r.len).rev().collect()
            } else {
                (r.lo..r.lo + r.len).collect()
            };
            for a in addrs {
                let value = match phase {
                    1 => !(a ^ marker_c),
                    _ => a ^ marker_c,
                };
                sim[view.apply(a, memory_size) as usize] = value;
            }
            for &cell in &cmp {
                if excluded.contains(&cell) {
                    continue;
                }
                if sim[cell as usize] != snap[cell as usize] {
                    return false;
                }
            }
        }
    }
    distinguishing
}

fn analyze_march(
    runs: &[ChunkRun],
    marker_c: Word,
    memory_size: u32,
    lines: u8,
) -> (Vec<FaultDefinition>, Vec<String>) {
    let mut crashes: Vec<String> = runs
        .iter()
        .filter(|r| !r.completed())
        .map(|r| {
            format!(
                "{MARCH_MEMORY}: chunk {:#06x}+{:#x} ended {:?}",
                r.lo, r.len, r.outcomes
            )
        })
        .collect();
    if runs.iter().all(|r| !r.completed()) {
        crashes.push(format!("{MARCH_MEMORY}: no chunk completed"));
        return (vec![], crashes);
    }

    if march_view_fits(runs, AddrView::Identity, marker_c, memory_size) {
        // Crashes without data anomalies point at the probe's own execution,
        // not at the memory under test; they stay as markers only.
        return (vec![], crashes);
    }

    // Identity with localized single-bit deviations: stuck memory cells.
    if runs.iter().all(ChunkRun::completed) {
        if let Some(found) = stuck_cell_analysis(runs, marker_c) {
            return (found, crashes);
        }
    }

    // Single address-line hypotheses, both stuck modes and flip.
    let mut fits = Vec::new();
    for line in 0..lines {
        for mode in DecoderMode::ALL {
            let view = AddrView::Line { line, mode };
            if march_view_fits(runs, view, marker_c, memory_size) {
                fits.push((line, mode));
            }
        }
    }
    match fits.len() {
        1 => {
            let (line, mode) = fits[0];
            (
                vec![FaultDefinition {
                    kind: DetectedFault::AddressDecoderLine { line, mode },
                    evidence: MARCH_MEMORY.into(),
                }],
                crashes,
            )
        }
        0 => {
            crashes.push(format!("{MARCH_MEMORY}: observations fit no single-line model"));
            (vec![], crashes)
        }
        _ => {
            crashes.push(format!("{MARCH_MEMORY}: ambiguous line fit {fits:?}"));
            let (line, mode) = fits[0];
            (
                vec![FaultDefinition {
                    kind: DetectedFault::AddressDecoderLine { line, mode },
                    evidence: MARCH_MEMORY.into(),
                }],
                crashes,
            )
        }
    }
}

/// Deviations from the identity prediction confined to a few cells, each a
/// single bit with a constant observed value across all three backgrounds.
fn stuck_cell_analysis(runs: &[ChunkRun], marker_c: Word) -> Option<Vec<FaultDefinition>> {
    let mut per_cell: BTreeMap<u32, Vec<(Word, Word)>> = BTreeMap::new();
    for r in runs {
        for a in r.lo..r.lo + r.len {
            for (phase, snap) in r.snaps.iter().enumerate() {
                let expected = match phase {
                    1 => !(a ^ marker_c),
                    _ => a ^ marker_c,
                };
                let got = snap[a as usize];
                if got != expected {
                    per_cell.entry(a).or_default().push((expected, got));
                }
            }
        }
    }
    if per_cell.is_empty() || per_cell.len() > 8 {
        return None;
    }
    let mut found = Vec::new();
    for (addr, devs) in per_cell {
        let mut bits: BTreeSet<u8> = BTreeSet::new();
        for &(expected, got) in &devs {
            let diff = expected ^ got;
            if diff.count_ones() != 1 {
                return None;
            }
            bits.insert(diff.trailing_zeros() as u8);
        }
        if bits.len() != 1 {
            return None;
        }
        let bit = *bits.iter().next().unwrap();
        let stuck_value = ((devs[0].1 >> bit) & 1) as u8;
        if devs.iter().any(|&(_, got)| ((got >> bit) & 1) as u8 != stuck_value) {
            return None;
        }
        found.push(FaultDefinition {
            kind: DetectedFault::MemoryStuckBit { addr, bit, stuck_value },
            evidence: MARCH_MEMORY.into(),
        });
    }
    Some(found)
}

// ---------------------------------------------------------------------------
// Opcode sweep
// ---------------------------------------------------------------------------

const SWEEP_LIMIT: u32 = 2048;

struct SweepProbe {
    image: MachineImage,
    golden: ExecutionOutcome,
    /// Logical opcodes the probe's code stream contains.
    uses: BTreeSet<Opcode>,
}

fn sweep_witness_tail() -> Vec<Instruction> {
    vec![loadi_out(0), store(3, 0, 0), store(3, 0, 1), Instruction::Halt]
}

fn sweep_probe_programs() -> Vec<Program> {
    let mut probes = Vec::new();
    let simple = |name: &str, mut body: Vec<Instruction>, labels: BTreeMap<String, usize>| {
        body.extend(sweep_witness_tail());
        probe_program(name, 2, vec![], body, labels)
    };

    probes.push(simple("sweep_loadi", vec![loadi(3, 0x0001_0005)], BTreeMap::new()));
    probes.push({
        let body = vec![
            Instruction::Loadi { rd: 1, imm: Imm::VarAddr { name: "m".into(), offset: 0 } },
            load(3, 1, 0),
        ];
        let mut p = body;
        p.extend(sweep_witness_tail());
        probe_program(
            "sweep_load",
            2,
            vec![VarDecl { name: "m".into(), size: 1, init: vec![0x2468_ACE1] }],
            p,
            BTreeMap::new(),
        )
    });
    probes.push(simple("sweep_store", vec![loadi(3, 0x0BAD_F00D)], BTreeMap::new()));

    let a = 0x0001_0005u32;
    let b = 3u32;
    for op in [
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Shl,
        Opcode::Shr,
    ] {
        probes.push(simple(
            &format!("sweep_{}", op.mnemonic().to_lowercase()),
            vec![loadi(1, a), loadi(2, b), alu(op, 3, 1, 2)],
            BTreeMap::new(),
        ));
    }

    // Branch probes: taken and not-taken cases pin each branch against the
    // other branch kinds and against JMP (always taken).
    let branch_probe = |name: &str, op: Opcode, x: u32, y: u32| {
        let mut labels = BTreeMap::new();
        labels.insert("hit".into(), 5);
        labels.insert("end".into(), 6);
        let body = vec![
            loadi(1, x),
            loadi(2, y),
            branch(op, 1, 2, "hit"),
            loadi(3, 0x111),
            jmp("end"),
            // hit:
            loadi(3, 0x222),
            // end:
        ];
        let mut p = body;
        p.extend(sweep_witness_tail());
        probe_program(name, 2, vec![], p, labels)
    };
    probes.push(branch_probe("sweep_beq_taken", Opcode::Beq, 2, 2));
    probes.push(branch_probe("sweep_beq_skip", Opcode::Beq, 1, 2));
    probes.push(branch_probe("sweep_bne_taken", Opcode::Bne, 5, 2));
    probes.push(branch_probe("sweep_bne_skip", Opcode::Bne, 2, 2));
    probes.push(branch_probe("sweep_blt_skip", Opcode::Blt, 5, 2));
    probes.push(branch_probe("sweep_blt_taken", Opcode::Blt, 2, 5));

    probes.push({
        let mut labels = BTreeMap::new();
        labels.insert("end".into(), 3);
        let body = vec![loadi(3, 0x600D), jmp("end"), loadi(3, 0x0BAD)];
        let mut p = body;
        p.extend(sweep_witness_tail());
        probe_program("sweep_jmp", 2, vec![], p, labels)
    });
    probes.push({
        let body = vec![
            loadi(3, 0x1011),
            loadi_out(0),
            store(3, 0, 0),
            store(3, 0, 1),
            Instruction::Halt,
            loadi(3, 0x2022),
            loadi_out(0),
            store(3, 0, 0),
            store(3, 0, 1),
            Instruction::Halt,
        ];
        probe_program("sweep_halt", 2, vec![], body, BTreeMap::new())
    });
    probes
}

fn sweep_probes() -> &'static Vec<SweepProbe> {
    static PROBES: OnceLock<Vec<SweepProbe>> = OnceLock::new();
    PROBES.get_or_init(|| {
        let params = probe_params();
        sweep_probe_programs()
            .into_iter()
            .map(|program| {
                let uses: BTreeSet<Opcode> =
                    program.instructions.iter().map(|i| i.opcode()).collect();
                let image = assemble_with(&program, &DiversityConfig::identity(), &params)
                    .expect("sweep probe assembles");
                let (golden, _) = run_with_state(
                    &image,
                    &[],
                    &FaultPlan::empty(),
                    SWEEP_LIMIT,
                    RunOptions::default(),
                    None,
                );
                SweepProbe { image, golden, uses }
            })
            .collect()
    })
}

fn run_sweep_vector(plan: &FaultPlan) -> Vec<ExecutionOutcome> {
    sweep_probes()
        .iter()
        .map(|p| run_with_state(&p.image, &[], plan, SWEEP_LIMIT, RunOptions::default(), None).0)
        .collect()
}

/// Execute a micro-program per opcode (plus taken/not-taken branch cases)
/// and fit the observation against every single-substitution hypothesis by
/// simulating it; a unique target byte is recovered when exactly one
/// explains the behavior, otherwise the target is reported unknown.
pub fn opcode_sweep_test(plan: &FaultPlan, _seed: u64) -> (Vec<FaultDefinition>, Vec<String>) {
    let probes = sweep_probes();
    let observed = run_sweep_vector(plan);
    if observed.iter().zip(probes.iter()).all(|(o, p)| *o == p.golden) {
        return (vec![], vec![]);
    }

    // Identity encoding: logical opcode index == physical byte.
    let mut matches: Vec<(u8, u8)> = Vec::new();
    for from_op in Opcode::ALL {
        let from = from_op.index();
        let affected: Vec<usize> = probes
            .iter()
            .enumerate()
            .filter(|(_, p)| p.uses.contains(&from_op))
            .map(|(i, _)| i)
            .collect();
        // Unaffected probes must look golden under this hypothesis.
        let clean_elsewhere = probes.iter().enumerate().all(|(i, p)| {
            affected.contains(&i) || observed[i] == p.golden
        });
        if !clean_elsewhere {
            continue;
        }
        'to: for to in 0..=255u8 {
            if to == from {
                continue;
            }
            let hyp = FaultPlan::single(Fault {
                kind: FaultKind::InstructionDecoderSub { from, to },
                persistence: Persistence::Permanent { onset_cycle: 0 },
                core: plan.core().unwrap_or(0),
            });
            for &i in &affected {
                let sim = run_with_state(
                    &probes[i].image,
                    &[],
                    &hyp,
                    SWEEP_LIMIT,
                    RunOptions::default(),
                    None,
                )
                .0;
                if sim != observed[i] {
                    continue 'to;
                }
            }
            matches.push((from, to));
        }
    }

    if matches.is_empty() {
        return (
            vec![],
            vec![format!("{OPCODE_SWEEP}: behavior fits no single substitution")],
        );
    }
    let from = matches.iter().map(|&(f, _)| f).min().unwrap();
    let tos: BTreeSet<u8> =
        matches.iter().filter(|&&(f, _)| f == from).map(|&(_, t)| t).collect();
    let to = if tos.len() == 1 { Some(*tos.iter().next().unwrap()) } else { None };
    let mut crashes = Vec::new();
    if matches.iter().any(|&(f, _)| f != from) {
        crashes.push(format!("{OPCODE_SWEEP}: ambiguous from-byte fits {matches:?}"));
    }
    (
        vec![FaultDefinition {
            kind: DetectedFault::InstructionDecoderSub { from, to },
            evidence: OPCODE_SWEEP.into(),
        }],
        crashes,
    )
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Run the three self-tests in fixed order (registers, memory, opcodes) and
/// fuse the evidence. When the march located a memory or address-decoder
/// fault, opcode-sweep findings are dropped: misplaced or corrupted witness
/// cells already explain the sweep's anomalies.
pub fn run_self_tests(plan: &FaultPlan, seed: u64) -> FaultReport {
    let (reg_found, reg_crashes) = register_walk_test(plan, seed);
    let (march_found, march_crashes) = march_memory_test(plan, &default_march_chunks(), seed);
    let (sweep_found, sweep_crashes) = opcode_sweep_test(plan, seed);

    let mut found = reg_found;
    found.extend(march_found.iter().cloned());
    if march_found.is_empty() {
        found.extend(sweep_found);
    }
    found.sort_by(|a, b| a.kind.cmp(&b.kind));
    found.dedup_by(|a, b| a.kind == b.kind);

    let mut probe_crashes = reg_crashes;
    probe_crashes.extend(march_crashes);
    probe_crashes.extend(sweep_crashes);

    FaultReport {
        found,
        tests_run: vec![
            REGISTER_WALK.to_string(),
            MARCH_MEMORY.to_string(),
            OPCODE_SWEEP.to_string(),
        ],
        probe_crashes,
    }
}
