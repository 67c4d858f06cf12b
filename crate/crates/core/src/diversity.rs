//! Dynamic and static diversification transforms, applied as pure functions
//! from (program, config) to executable images and from inputs/outputs
//! through data re-expression.
//!
//! Dynamic knobs (adjustable at runtime without a new binary): memory gap
//! size, data base offset, variable order, re-expression key. Static knobs
//! (baked into a variant binary): excluded registers, NOP padding at basic
//! block heads, opcode encoding seed.

use crate::machine::{
    AssembleError, Instruction, MachineParams, MemoryLayout, OpcodeEncoding, Program, Target,
    Word, NUM_REGS,
};
use crate::rng::stream_rng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Runtime-adjustable diversity parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicParams {
    #[serde(default)]
    pub gap_size: u32,
    #[serde(default)]
    pub base_offset: u32,
    /// Variable placement order; `None` keeps declaration order.
    #[serde(default)]
    pub variable_order_seed: Option<u64>,
    /// Data re-expression key `k`; `None` or `0` disables re-expression.
    #[serde(default)]
    pub reexpr_key: Option<Word>,
    /// Family override; defaults to the program's registered family.
    #[serde(default)]
    pub reexpr_family: Option<String>,
}

/// Parameters of statically generated variants.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticParams {
    #[serde(default)]
    pub excluded_registers: BTreeSet<u8>,
    #[serde(default)]
    pub nop_count: u32,
    /// Opcode encoding seed; `None` keeps the identity encoding.
    #[serde(default)]
    pub opcode_encoding_seed: Option<u64>,
}

pub const MAX_EXCLUDED_REGISTERS: usize = 4;

/// Complete per-replica diversity configuration.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityConfig {
    #[serde(flatten)]
    pub dynamic: DynamicParams,
    #[serde(flatten)]
    pub static_params: StaticParams,
}

impl DiversityConfig {
    pub fn identity() -> Self {
        DiversityConfig::default()
    }

    /// Structural validity against a program: exclusion budget, register
    /// feasibility, family known and applicable.
    pub fn validate(&self, program: &Program) -> Result<(), AssembleError> {
        if self.static_params.excluded_registers.len() > MAX_EXCLUDED_REGISTERS {
            return Err(AssembleError::InvalidConfig(format!(
                "{} registers excluded, at most {MAX_EXCLUDED_REGISTERS} allowed",
                self.static_params.excluded_registers.len()
            )));
        }
        if let Some(r) = self
            .static_params
            .excluded_registers
            .iter()
            .find(|&&r| r >= NUM_REGS)
        {
            return Err(AssembleError::InvalidConfig(format!(
                "excluded register r{r} out of range"
            )));
        }
        let used = program.used_registers().len();
        let available = NUM_REGS as usize - self.static_params.excluded_registers.len();
        if used > available {
            return Err(AssembleError::InfeasibleRegisterAllocation { used, available });
        }
        if self.reexpr_key() != 0 {
            let family_id = self.family_id(program).ok_or_else(|| {
                AssembleError::InvalidConfig(
                    "re-expression key set but the program has no family".into(),
                )
            })?;
            let fam = family(family_id)
                .ok_or_else(|| AssembleError::UnknownFamily(family_id.to_string()))?;
            if !fam.accepts(program) {
                return Err(AssembleError::InvalidConfig(format!(
                    "family `{family_id}` does not apply to `{}`",
                    program.name
                )));
            }
        }
        Ok(())
    }

    pub fn reexpr_key(&self) -> Word {
        self.dynamic.reexpr_key.unwrap_or(0)
    }

    /// Effective family id for a program under this config.
    pub fn family_id<'a>(&'a self, program: &'a Program) -> Option<&'a str> {
        self.dynamic
            .reexpr_family
            .as_deref()
            .or(program.reexpression.as_deref())
    }
}

/// Derive the memory layout a program gets under the given dynamic
/// parameters, against the default machine geometry.
pub fn derive_layout(
    program: &Program,
    dynamic: &DynamicParams,
) -> Result<MemoryLayout, AssembleError> {
    derive_layout_with(program, dynamic, &MachineParams::default())
}

/// As [`derive_layout`] with explicit machine geometry.
pub fn derive_layout_with(
    program: &Program,
    dynamic: &DynamicParams,
    params: &MachineParams,
) -> Result<MemoryLayout, AssembleError> {
    let data_base = params
        .data_base
        .checked_add(dynamic.base_offset)
        .filter(|&b| b < params.memory_size)
        .ok_or_else(|| {
            AssembleError::LayoutOverflow(format!(
                "base offset {:#x} pushes the data segment out of memory",
                dynamic.base_offset
            ))
        })?;
    let n = program.variables.len();
    let order = variable_order(n, dynamic.variable_order_seed);
    let gaps = vec![dynamic.gap_size; n];
    MemoryLayout::place(
        params.code_base,
        data_base,
        params.memory_size,
        &program.variables,
        order,
        gaps,
    )
}

/// Seed-derived variable placement order (Fisher-Yates); identity when the
/// seed is absent.
pub fn variable_order(n: usize, seed: Option<u64>) -> Vec<u32> {
    let mut order: Vec<u32> = (0..n as u32).collect();
    if let Some(seed) = seed {
        let mut rng = stream_rng(seed, 0x0BDE);
        order.shuffle(&mut rng);
    }
    order
}

/// Mapping from source registers to the registers a variant actually uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterRemap {
    map: [u8; 16],
    pub excluded: BTreeSet<u8>,
}

impl RegisterRemap {
    pub fn identity() -> Self {
        let mut map = [0u8; 16];
        for (i, m) in map.iter_mut().enumerate() {
            *m = i as u8;
        }
        RegisterRemap { map, excluded: BTreeSet::new() }
    }

    pub fn apply(&self, reg: u8) -> u8 {
        self.map[reg as usize]
    }
}

/// Outcome of the static transforms: remapped/NOP-padded program plus the
/// register map and opcode encoding the image will carry.
#[derive(Debug)]
pub struct StaticTransform {
    pub program: Program,
    pub register_map: RegisterRemap,
    pub opcode_encoding: OpcodeEncoding,
}

/// Apply the static diversity transforms: register exclusion (by remapping
/// into the allowed set), NOP insertion at basic-block heads, and seed-derived
/// opcode encoding. NOPs are realized as jumps to the following instruction.
pub fn apply_static(
    program: &Program,
    static_params: &StaticParams,
) -> Result<StaticTransform, AssembleError> {
    let excluded = &static_params.excluded_registers;
    let used = program.used_registers();
    let available = NUM_REGS as usize - excluded.len();
    if used.len() > available {
        return Err(AssembleError::InfeasibleRegisterAllocation {
            used: used.len(),
            available,
        });
    }

    let mut map = [0u8; 16];
    for (i, m) in map.iter_mut().enumerate() {
        *m = i as u8;
    }
    let mut free: Vec<u8> = (0..NUM_REGS)
        .filter(|r| !excluded.contains(r) && !used.contains(r))
        .collect();
    for r in used.iter().filter(|r| excluded.contains(r)) {
        map[*r as usize] = free.remove(0);
    }
    let remap = RegisterRemap { map, excluded: excluded.clone() };

    let mut transformed = program.clone();
    for insn in &mut transformed.instructions {
        insn.map_registers(|r| remap.apply(r));
    }

    if static_params.nop_count > 0 {
        insert_nops(&mut transformed, static_params.nop_count);
    }

    let opcode_encoding = match static_params.opcode_encoding_seed {
        None => OpcodeEncoding::identity(),
        Some(seed) => OpcodeEncoding::from_seed(seed),
    };

    Ok(StaticTransform { program: transformed, register_map: remap, opcode_encoding })
}

/// Insert `count` fall-through jumps before every basic-block leader.
fn insert_nops(program: &mut Program, count: u32) {
    let n = program.instructions.len();
    let mut leaders = vec![false; n + 1];
    if n > 0 {
        leaders[0] = true;
    }
    for &idx in program.labels.values() {
        if idx < n {
            leaders[idx] = true;
        }
    }
    for (i, insn) in program.instructions.iter().enumerate() {
        if matches!(insn, Instruction::Branch { .. } | Instruction::Jmp { .. }) && i + 1 < n {
            leaders[i + 1] = true;
        }
    }

    let mut out = Vec::with_capacity(n + count as usize * 4);
    let mut new_index = vec![0usize; n + 1];
    let mut nop_id = 0usize;
    for (i, insn) in program.instructions.iter().enumerate() {
        if leaders[i] {
            for _ in 0..count {
                let label = format!("__nop{nop_id}");
                nop_id += 1;
                program.labels.insert(label.clone(), out.len() + 1);
                out.push(Instruction::Jmp { target: Target::Label(label) });
            }
        }
        new_index[i] = out.len();
        out.push(insn.clone());
    }
    new_index[n] = out.len();

    // Relocate source labels (NOP labels were created against `out` already).
    let relocated: BTreeMap<String, usize> = program
        .labels
        .iter()
        .map(|(name, &idx)| {
            if name.starts_with("__nop") {
                (name.clone(), idx)
            } else {
                (name.clone(), new_index[idx])
            }
        })
        .collect();
    program.labels = relocated;
    program.instructions = out;
}

// ---------------------------------------------------------------------------
// Data re-expression
// ---------------------------------------------------------------------------

/// An invertible input transformation `in' = f(in, k)` whose distortion is
/// removed from outputs (`out = f⁻¹(out', k)`) before comparison. Families
/// are exact: fault-free round trips reproduce the golden output bit for bit.
pub trait ReexprFamily: Send + Sync {
    fn id(&self) -> &'static str;
    fn forward(&self, input: &[Word], key: Word) -> Vec<Word>;
    fn invert(&self, output: &[Word], key: Word, input_len: usize) -> Vec<Word>;
    /// Whether the family's algebra applies to this program's I/O contract.
    fn accepts(&self, program: &Program) -> bool;
}

/// Rotate every input word left by `k mod 32`. Valid for programs whose
/// output is invariant under bit rotation (population count).
struct BitRotate;

impl ReexprFamily for BitRotate {
    fn id(&self) -> &'static str {
        "bitrotate"
    }
    fn forward(&self, input: &[Word], key: Word) -> Vec<Word> {
        input.iter().map(|w| w.rotate_left(key & 31)).collect()
    }
    fn invert(&self, output: &[Word], _key: Word, _input_len: usize) -> Vec<Word> {
        output.to_vec()
    }
    fn accepts(&self, _program: &Program) -> bool {
        true
    }
}

/// Add `k` to every input word; an additive checksum shifts by `n·k`, which
/// the inverse subtracts from each output word.
struct AddConst;

impl ReexprFamily for AddConst {
    fn id(&self) -> &'static str {
        "addconst"
    }
    fn forward(&self, input: &[Word], key: Word) -> Vec<Word> {
        input.iter().map(|w| w.wrapping_add(key)).collect()
    }
    fn invert(&self, output: &[Word], key: Word, input_len: usize) -> Vec<Word> {
        let shift = key.wrapping_mul(input_len as Word);
        output.iter().map(|w| w.wrapping_sub(shift)).collect()
    }
    fn accepts(&self, program: &Program) -> bool {
        program.outputs == 1
    }
}

/// Permute the rows of A and the columns of B; the product comes back as
/// P·(A·B)·Q and the inverse un-permutes rows and columns.
struct MatPerm {
    n: usize,
    id: &'static str,
}

impl MatPerm {
    fn perms(&self, key: Word) -> (Vec<usize>, Vec<usize>) {
        let mut rng = stream_rng(key as u64, 0x3A7);
        let mut p: Vec<usize> = (0..self.n).collect();
        let mut q: Vec<usize> = (0..self.n).collect();
        p.shuffle(&mut rng);
        q.shuffle(&mut rng);
        (p, q)
    }
}

impl ReexprFamily for MatPerm {
    fn id(&self) -> &'static str {
        self.id
    }
    fn forward(&self, input: &[Word], key: Word) -> Vec<Word> {
        let n = self.n;
        let (p, q) = self.perms(key);
        let mut out = vec![0; 2 * n * n];
        for i in 0..n {
            for k in 0..n {
                out[i * n + k] = input[p[i] * n + k];
            }
        }
        for k in 0..n {
            for j in 0..n {
                out[n * n + k * n + j] = input[n * n + k * n + q[j]];
            }
        }
        out
    }
    fn invert(&self, output: &[Word], key: Word, _input_len: usize) -> Vec<Word> {
        let n = self.n;
        let (p, q) = self.perms(key);
        let mut inv_p = vec![0; n];
        let mut inv_q = vec![0; n];
        for i in 0..n {
            inv_p[p[i]] = i;
            inv_q[q[i]] = i;
        }
        let mut out = vec![0; n * n];
        for a in 0..n {
            for b in 0..n {
                out[a * n + b] = output[inv_p[a] * n + inv_q[b]];
            }
        }
        out
    }
    fn accepts(&self, program: &Program) -> bool {
        let n = self.n as u32;
        program.inputs == 2 * n * n && program.outputs == n * n
    }
}

/// Add `k` to every input value; the inverse subtracts `k` and re-sorts,
/// which recovers the golden sorted sequence even when the offset wrapped
/// some elements around 2^32.
struct ValueOffset;

impl ReexprFamily for ValueOffset {
    fn id(&self) -> &'static str {
        "valueoffset"
    }
    fn forward(&self, input: &[Word], key: Word) -> Vec<Word> {
        input.iter().map(|w| w.wrapping_add(key)).collect()
    }
    fn invert(&self, output: &[Word], key: Word, _input_len: usize) -> Vec<Word> {
        let mut out: Vec<Word> = output.iter().map(|w| w.wrapping_sub(key)).collect();
        out.sort_unstable();
        out
    }
    fn accepts(&self, program: &Program) -> bool {
        program.inputs == program.outputs
    }
}

const FAMILIES: &[&dyn ReexprFamily] = &[
    &BitRotate,
    &AddConst,
    &MatPerm { n: 2, id: "matperm2" },
    &MatPerm { n: 4, id: "matperm4" },
    &ValueOffset,
];

/// Look up a registered re-expression family.
pub fn family(id: &str) -> Option<&'static dyn ReexprFamily> {
    FAMILIES.iter().copied().find(|f| f.id() == id)
}

/// Re-express an input vector. Key 0 is the identity for every family.
pub fn reexpress(input: &[Word], key: Word, family_id: &str) -> Result<Vec<Word>, AssembleError> {
    let fam = family(family_id).ok_or_else(|| AssembleError::UnknownFamily(family_id.into()))?;
    if key == 0 {
        return Ok(input.to_vec());
    }
    Ok(fam.forward(input, key))
}

/// Remove the re-expression distortion from a raw output vector.
pub fn invert_reexpress(
    output: &[Word],
    key: Word,
    family_id: &str,
    input_len: usize,
) -> Result<Vec<Word>, AssembleError> {
    let fam = family(family_id).ok_or_else(|| AssembleError::UnknownFamily(family_id.into()))?;
    if key == 0 {
        return Ok(output.to_vec());
    }
    Ok(fam.invert(output, key, input_len))
}

/// Re-express a replica's input under its config (identity when the config
/// carries no key or the program has no family).
pub fn reexpress_for(
    program: &Program,
    config: &DiversityConfig,
    input: &[Word],
) -> Result<Vec<Word>, AssembleError> {
    match (config.reexpr_key(), config.family_id(program)) {
        (0, _) | (_, None) => Ok(input.to_vec()),
        (k, Some(fid)) => reexpress(input, k, fid),
    }
}

/// Canonicalize a replica's raw output under its config.
pub fn invert_for(
    program: &Program,
    config: &DiversityConfig,
    output: &[Word],
    input_len: usize,
) -> Result<Vec<Word>, AssembleError> {
    match (config.reexpr_key(), config.family_id(program)) {
        (0, _) | (_, None) => Ok(output.to_vec()),
        (k, Some(fid)) => invert_reexpress(output, k, fid, input_len),
    }
}

/// Draw a random valid config for a program: used by transparency sweeps and
/// the server's unguided candidate tail.
pub fn random_config(program: &Program, seed: u64) -> DiversityConfig {
    let mut rng = stream_rng(seed, 0xD1_7C0F);
    let used = program.used_registers();
    let max_excl = (NUM_REGS as usize - used.len()).min(MAX_EXCLUDED_REGISTERS);
    loop {
        let n_excl = rng.gen_range(0..=max_excl);
        let mut regs: Vec<u8> = (0..NUM_REGS).collect();
        regs.shuffle(&mut rng);
        let excluded: BTreeSet<u8> = regs.into_iter().take(n_excl).collect();
        let config = DiversityConfig {
            dynamic: DynamicParams {
                gap_size: rng.gen_range(0..8),
                base_offset: rng.gen_range(0..512),
                variable_order_seed: if rng.gen_bool(0.5) { Some(rng.gen()) } else { None },
                reexpr_key: if rng.gen_bool(0.5) { Some(rng.gen()) } else { None },
                reexpr_family: None,
            },
            static_params: StaticParams {
                excluded_registers: excluded,
                nop_count: rng.gen_range(0..4),
                opcode_encoding_seed: if rng.gen_bool(0.5) { Some(rng.gen()) } else { None },
            },
        };
        if config.validate(program).is_ok() && derive_layout(program, &config.dynamic).is_ok() {
            return config;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::parse_program;

    fn three_vars() -> Program {
        parse_program(
            "t",
            ".var a 1\n.var b 1\n.var c 1\n.out 1\nHALT",
        )
        .unwrap()
    }

    #[test]
    fn identity_dynamic_params_give_default_layout() {
        let p = three_vars();
        let layout = derive_layout(&p, &DynamicParams::default()).unwrap();
        let base = MachineParams::default().data_base;
        assert_eq!(layout.addr_of("a"), Some(base));
        assert_eq!(layout.addr_of("b"), Some(base + 1));
        assert_eq!(layout.addr_of("c"), Some(base + 2));
        assert_eq!(layout.addr_of("out"), Some(base + 3));
    }

    #[test]
    fn uniform_gaps_shift_each_variable() {
        let p = parse_program("t", ".var a 1\n.var b 1\n.var c 1\n.out 1\nHALT").unwrap();
        let layout = derive_layout(
            &p,
            &DynamicParams { gap_size: 4, ..DynamicParams::default() },
        )
        .unwrap();
        let base = MachineParams::default().data_base;
        assert_eq!(layout.addr_of("a"), Some(base + 4));
        assert_eq!(layout.addr_of("b"), Some(base + 9));
        assert_eq!(layout.addr_of("c"), Some(base + 14));
    }

    #[test]
    fn distinct_order_seeds_give_distinct_disjoint_layouts() {
        let p = parse_program(
            "t",
            ".var a 1\n.var b 1\n.var c 1\n.var d 1\n.out 1\nHALT",
        )
        .unwrap();
        let o1 = variable_order(p.variables.len(), Some(11));
        let o2 = variable_order(p.variables.len(), Some(12));
        assert_ne!(o1, o2, "seeds 11/12 chosen to permute differently");
        for seed in [11u64, 12] {
            let layout = derive_layout(
                &p,
                &DynamicParams { variable_order_seed: Some(seed), ..DynamicParams::default() },
            )
            .unwrap();
            let mut ranges = layout.var_ranges(&p.variables);
            ranges.sort_by_key(|r| r.1);
            for w in ranges.windows(2) {
                assert!(w[0].2 <= w[1].1, "overlap between {:?} and {:?}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn bitrotate_key7_rotates() {
        assert_eq!(reexpress(&[0x1], 7, "bitrotate").unwrap(), vec![0x80]);
        assert_eq!(invert_reexpress(&[8], 7, "bitrotate", 1).unwrap(), vec![8]);
    }

    #[test]
    fn key_zero_is_identity_for_every_family() {
        let input = [5u32, 6, 7, 8, 1, 2, 3, 4];
        for fam in ["bitrotate", "addconst", "matperm2", "valueoffset"] {
            assert_eq!(reexpress(&input, 0, fam).unwrap(), input.to_vec());
            assert_eq!(invert_reexpress(&input, 0, fam, 8).unwrap(), input.to_vec());
        }
    }

    #[test]
    fn addconst_matches_reference_checksum() {
        // Oracle: additive checksum computed directly.
        let checksum = |ws: &[Word]| ws.iter().fold(0u32, |a, w| a.wrapping_add(*w));
        for (key, input) in [
            (1u32, vec![1u32, 2, 3]),
            (0xDEAD_BEEF, vec![0xFFFF_FFFF, 0, 7, 9]),
            (42, vec![0u32; 8]),
        ] {
            let golden = checksum(&input);
            let shifted = reexpress(&input, key, "addconst").unwrap();
            let raw = checksum(&shifted);
            let canonical = invert_reexpress(&[raw], key, "addconst", input.len()).unwrap();
            assert_eq!(canonical, vec![golden]);
        }
    }

    #[test]
    fn matperm_round_trips_through_a_real_product() {
        let mul2 = |a: &[Word], b: &[Word]| {
            let mut c = vec![0u32; 4];
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        c[i * 2 + j] =
                            c[i * 2 + j].wrapping_add(a[i * 2 + k].wrapping_mul(b[k * 2 + j]));
                    }
                }
            }
            c
        };
        let input: Vec<Word> = vec![1, 2, 3, 4, 5, 6, 7, 8];
        let golden = mul2(&input[..4], &input[4..]);
        for key in [1u32, 2, 0xABCD] {
            let re = reexpress(&input, key, "matperm2").unwrap();
            let raw = mul2(&re[..4], &re[4..]);
            let canonical = invert_reexpress(&raw, key, "matperm2", 8).unwrap();
            assert_eq!(canonical, golden, "key {key}");
        }
    }

    #[test]
    fn valueoffset_recovers_sorted_sequence_across_wraparound() {
        let input: Vec<Word> = vec![0xFFFF_FFF0, 3, 0xFFFF_FFFF, 10];
        let mut golden = input.clone();
        golden.sort_unstable();
        for key in [1u32, 0x20, 0x8000_0000] {
            let re = reexpress(&input, key, "valueoffset").unwrap();
            let mut raw = re;
            raw.sort_unstable(); // what the sort benchmark computes
            let canonical = invert_reexpress(&raw, key, "valueoffset", 4).unwrap();
            assert_eq!(canonical, golden, "key {key}");
        }
    }

    #[test]
    fn unknown_family_is_an_error() {
        assert!(matches!(
            reexpress(&[1], 3, "nope"),
            Err(AssembleError::UnknownFamily(_))
        ));
    }

    #[test]
    fn exclusion_remaps_out_of_the_excluded_set() {
        let p = parse_program(
            "t",
            ".out 1\nLOADI r5, 3\nLOADI r0, &out\nSTORE r5, r0, 0\nHALT",
        )
        .unwrap();
        let st = apply_static(
            &p,
            &StaticParams {
                excluded_registers: [5u8].into_iter().collect(),
                ..StaticParams::default()
            },
        )
        .unwrap();
        for insn in &st.program.instructions {
            assert!(!insn.registers().contains(&5));
        }
    }

    #[test]
    fn infeasible_exclusion_is_rejected() {
        // A program with 14 distinct registers and 3 exclusions: 16 - 3 < 14.
        let mut text = String::from(".out 1\n");
        for r in 0..14 {
            text.push_str(&format!("LOADI r{r}, {r}\n"));
        }
        text.push_str("HALT\n");
        let p = parse_program("wide", &text).unwrap();
        let err = apply_static(
            &p,
            &StaticParams {
                excluded_registers: [0u8, 1, 2].into_iter().collect(),
                ..StaticParams::default()
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            AssembleError::InfeasibleRegisterAllocation { used: 14, available: 13 }
        ));
    }

    #[test]
    fn nop_insertion_shifts_a_one_block_program_entry_by_count() {
        let p = parse_program("t", ".out 1\nentry:\nLOADI r0, 1\nHALT").unwrap();
        let st = apply_static(
            &p,
            &StaticParams { nop_count: 2, ..StaticParams::default() },
        )
        .unwrap();
        assert_eq!(st.program.labels["entry"], 2);
        assert_eq!(st.program.instructions.len(), 4);
        assert!(matches!(st.program.instructions[0], Instruction::Jmp { .. }));
        // NOP jumps land on the immediately following instruction.
        assert_eq!(st.program.labels["__nop0"], 1);
        assert_eq!(st.program.labels["__nop1"], 2);
    }

    #[test]
    fn identity_seed_gives_identity_encoding() {
        let st = apply_static(&three_vars(), &StaticParams::default()).unwrap();
        assert_eq!(st.opcode_encoding, OpcodeEncoding::identity());
    }

    #[test]
    fn config_serialization_uses_fixed_flat_field_names() {
        let cfg = DiversityConfig {
            dynamic: DynamicParams {
                gap_size: 2,
                base_offset: 16,
                variable_order_seed: Some(7),
                reexpr_key: Some(9),
                reexpr_family: Some("bitrotate".into()),
            },
            static_params: StaticParams {
                excluded_registers: [5u8].into_iter().collect(),
                nop_count: 1,
                opcode_encoding_seed: Some(3),
            },
        };
        let json = serde_json::to_value(&cfg).unwrap();
        for field in [
            "gap_size",
            "base_offset",
            "variable_order_seed",
            "reexpr_key",
            "reexpr_family",
            "excluded_registers",
            "nop_count",
            "opcode_encoding_seed",
        ] {
            assert!(json.get(field).is_some(), "missing field {field}");
        }
        let back: DiversityConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, cfg);
    }
}
