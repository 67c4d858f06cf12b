//! N-modular-redundant execution: run diversified replicas of a task on N
//! simulated cores and apply M-out-of-N majority voting on canonical
//! (post-inverse-re-expression) outputs, identifying dissenting cores.

use crate::diversity::{invert_for, reexpress_for, DiversityConfig};
use crate::faults::FaultPlan;
use crate::machine::{assemble, AssembleError, ExecStatus, MachineImage, Program, Word};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// M-out-of-N voting shape. `m` agreeing modules produce consensus, so at
/// most `n - m` cores may fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NmrConfig {
    pub n: u8,
    pub m: u8,
}

impl NmrConfig {
    /// Majority voting over `n` modules: m = ceil(n/2).
    pub fn majority(n: u8) -> Self {
        NmrConfig { n, m: n.div_ceil(2) }
    }

    pub fn tmr() -> Self {
        NmrConfig::majority(3)
    }
}

impl Default for NmrConfig {
    fn default() -> Self {
        NmrConfig::tmr()
    }
}

/// One core's replica: its diversity config and the cached image.
#[derive(Clone, Debug)]
pub struct ReplicaSlot {
    pub core: u8,
    pub config: DiversityConfig,
    pub image: MachineImage,
}

impl ReplicaSlot {
    pub fn new(program: &Program, core: u8, config: DiversityConfig) -> Result<Self, AssembleError> {
        let image = assemble(program, &config)?;
        Ok(ReplicaSlot { core, config, image })
    }

    /// Swap in a new config, rebuilding the image. Other slots are untouched
    /// by construction.
    pub fn deploy(&mut self, program: &Program, config: DiversityConfig) -> Result<(), AssembleError> {
        self.image = assemble(program, &config)?;
        self.config = config;
        Ok(())
    }
}

/// Canonical replica result: an output vector, or a failure marker distinct
/// from every word vector.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ReplicaOutcome {
    Output { words: Vec<Word> },
    Failure { marker: String },
}

impl ReplicaOutcome {
    pub fn is_failure(&self) -> bool {
        matches!(self, ReplicaOutcome::Failure { .. })
    }
}

/// Execute all replicas on one input. Each replica runs with its own
/// re-expressed input and its core's fault plan; results are canonicalized
/// through the inverse re-expression. Deterministically ordered by core.
pub fn execute_replicas(
    program: &Program,
    input: &[Word],
    slots: &[ReplicaSlot],
    per_core_faults: &BTreeMap<u8, FaultPlan>,
    cycle_limit: u32,
) -> BTreeMap<u8, ReplicaOutcome> {
    let empty = FaultPlan::empty();
    slots
        .iter()
        .map(|slot| {
            let plan = per_core_faults.get(&slot.core).unwrap_or(&empty);
            (slot.core, run_replica(program, input, slot, plan, cycle_limit))
        })
        .collect()
}

fn run_replica(
    program: &Program,
    input: &[Word],
    slot: &ReplicaSlot,
    plan: &FaultPlan,
    cycle_limit: u32,
) -> ReplicaOutcome {
    let re_input = match reexpress_for(program, &slot.config, input) {
        Ok(v) => v,
        Err(e) => return ReplicaOutcome::Failure { marker: format!("reexpress: {e}") },
    };
    let outcome = crate::machine::run(&slot.image, &re_input, plan, cycle_limit);
    match outcome.status {
        ExecStatus::Completed => {
            let raw = outcome.outputs.expect("completed runs carry outputs");
            match invert_for(program, &slot.config, &raw, input.len()) {
                Ok(words) => ReplicaOutcome::Output { words },
                Err(e) => ReplicaOutcome::Failure { marker: format!("invert: {e}") },
            }
        }
        ExecStatus::Crashed { reason } => {
            ReplicaOutcome::Failure { marker: format!("crashed: {reason:?}") }
        }
        ExecStatus::TimedOut => ReplicaOutcome::Failure { marker: "timed_out".into() },
    }
}

/// Outcome of M-out-of-N comparison.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "vote", rename_all = "snake_case")]
pub enum VoteResult {
    Consensus {
        value: Vec<Word>,
        dissenters: BTreeSet<u8>,
    },
    NoMajority {
        values: BTreeMap<u8, ReplicaOutcome>,
    },
}

impl VoteResult {
    pub fn dissenters(&self) -> BTreeSet<u8> {
        match self {
            VoteResult::Consensus { dissenters, .. } => dissenters.clone(),
            VoteResult::NoMajority { values } => values.keys().copied().collect(),
        }
    }

    pub fn is_unanimous(&self) -> bool {
        matches!(self, VoteResult::Consensus { dissenters, .. } if dissenters.is_empty())
    }
}

/// Bit-exact grouping of canonical outputs. Failure markers never join any
/// group. The largest group of size >= m wins; equal-sized top groups of
/// size >= m yield NoMajority (impossible for odd n with majority m).
pub fn vote(outputs: &BTreeMap<u8, ReplicaOutcome>, m: u8) -> VoteResult {
    assert!(outputs.len() >= m as usize, "vote needs at least m outputs");
    let mut groups: BTreeMap<&Vec<Word>, BTreeSet<u8>> = BTreeMap::new();
    for (&core, outcome) in outputs {
        if let ReplicaOutcome::Output { words } = outcome {
            groups.entry(words).or_default().insert(core);
        }
    }
    let best = groups.iter().map(|(_, cores)| cores.len()).max().unwrap_or(0);
    if best < m as usize {
        return VoteResult::NoMajority { values: outputs.clone() };
    }
    let top: Vec<_> = groups.iter().filter(|(_, c)| c.len() == best).collect();
    if top.len() > 1 {
        return VoteResult::NoMajority { values: outputs.clone() };
    }
    let (value, members) = top[0];
    let dissenters = outputs.keys().copied().filter(|c| !members.contains(c)).collect();
    VoteResult::Consensus { value: (*value).clone(), dissenters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversity::{DynamicParams, StaticParams};
    use crate::faults::{DecoderMode, Fault, FaultKind, Persistence};
    use crate::machine::golden_run;
    use crate::programs;

    fn out(words: Vec<Word>) -> ReplicaOutcome {
        ReplicaOutcome::Output { words }
    }

    #[test]
    fn two_out_of_three_masks_one_dissenter() {
        let outputs: BTreeMap<u8, ReplicaOutcome> =
            [(0, out(vec![5])), (1, out(vec![5])), (2, out(vec![7]))].into();
        match vote(&outputs, 2) {
            VoteResult::Consensus { value, dissenters } => {
                assert_eq!(value, vec![5]);
                assert_eq!(dissenters, [2u8].into());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_distinct_yields_no_majority() {
        let outputs: BTreeMap<u8, ReplicaOutcome> =
            [(0, out(vec![1])), (1, out(vec![2])), (2, out(vec![3]))].into();
        assert!(matches!(vote(&outputs, 2), VoteResult::NoMajority { .. }));
    }

    #[test]
    fn unanimity_has_no_dissenters() {
        let outputs: BTreeMap<u8, ReplicaOutcome> =
            [(0, out(vec![4])), (1, out(vec![4])), (2, out(vec![4]))].into();
        match vote(&outputs, 2) {
            VoteResult::Consensus { value, dissenters } => {
                assert_eq!(value, vec![4]);
                assert!(dissenters.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn failure_markers_never_join_a_group() {
        let outputs: BTreeMap<u8, ReplicaOutcome> = [
            (0, out(vec![4])),
            (1, ReplicaOutcome::Failure { marker: "crashed".into() }),
            (2, out(vec![4])),
        ]
        .into();
        match vote(&outputs, 2) {
            VoteResult::Consensus { value, dissenters } => {
                assert_eq!(value, vec![4]);
                assert_eq!(dissenters, [1u8].into());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn slots_with_distinct_configs(program: &crate::machine::Program) -> Vec<ReplicaSlot> {
        let configs = [
            DiversityConfig::identity(),
            DiversityConfig {
                dynamic: DynamicParams { gap_size: 2, reexpr_key: Some(5), ..Default::default() },
                static_params: StaticParams { nop_count: 1, ..Default::default() },
            },
            DiversityConfig {
                dynamic: DynamicParams {
                    base_offset: 64,
                    variable_order_seed: Some(3),
                    ..Default::default()
                },
                static_params: StaticParams {
                    opcode_encoding_seed: Some(17),
                    excluded_registers: [15u8].into_iter().collect(),
                    ..Default::default()
                },
            },
        ];
        configs
            .into_iter()
            .enumerate()
            .map(|(core, config)| ReplicaSlot::new(program, core as u8, config).unwrap())
            .collect()
    }

    #[test]
    fn heterogeneous_fault_free_replicas_agree_canonically() {
        for name in ["bitcount", "checksum", "sort"] {
            let program = programs::program(name).unwrap();
            let slots = slots_with_distinct_configs(program);
            let input = programs::random_input(program, 99, 0);
            let golden = golden_run(program, &input).unwrap();
            let outputs =
                execute_replicas(program, &input, &slots, &BTreeMap::new(), 100_000);
            for (core, outcome) in &outputs {
                assert_eq!(outcome, &out(golden.clone()), "{name} core {core}");
            }
        }
    }

    #[test]
    fn faulty_core_dissents_and_consensus_stays_golden() {
        let program = programs::program("bitcount").unwrap();
        let slots = slots_with_distinct_configs(program);
        let input = [0xA5A5_0F0Fu32];
        let golden = golden_run(program, &input).unwrap();

        // Register fault search: find one that perturbs core 1's output.
        let mut chosen = None;
        'search: for reg in program.used_registers() {
            for bit in 0..32u8 {
                for sv in [0u8, 1] {
                    let plan = FaultPlan::single(Fault {
                        kind: FaultKind::RegisterStuckBit { reg, bit, stuck_value: sv },
                        persistence: Persistence::Permanent { onset_cycle: 0 },
                        core: 1,
                    });
                    let per_core: BTreeMap<u8, FaultPlan> = [(1u8, plan.clone())].into();
                    let outputs =
                        execute_replicas(program, &input, &slots, &per_core, 100_000);
                    if outputs[&1] != out(golden.clone()) {
                        chosen = Some((plan, outputs));
                        break 'search;
                    }
                }
            }
        }
        let (_, outputs) = chosen.expect("some register fault perturbs the result");
        match vote(&outputs, 2) {
            VoteResult::Consensus { value, dissenters } => {
                assert_eq!(value, golden);
                assert_eq!(dissenters, [1u8].into());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crashing_core_carries_a_failure_marker() {
        let program = programs::program("bitcount").unwrap();
        let slots = slots_with_distinct_configs(program);
        // Substituting STORE's byte on core 2's identity-encoded image; core 2
        // uses a seeded encoding, so hit the byte its encoding assigns.
        let store_byte = slots[2]
            .image
            .opcode_encoding
            .encode(crate::machine::Opcode::Store);
        let plan = FaultPlan::single(Fault {
            kind: FaultKind::InstructionDecoderSub { from: store_byte, to: 0xFE },
            persistence: Persistence::Permanent { onset_cycle: 0 },
            core: 2,
        });
        let assigned = slots[2].image.opcode_encoding.assigned_bytes();
        assert!(!assigned.contains(&0xFE), "0xFE must be unassigned for this test");
        let per_core: BTreeMap<u8, FaultPlan> = [(2u8, plan)].into();
        let outputs = execute_replicas(program, &[0xFF], &slots, &per_core, 100_000);
        assert!(outputs[&2].is_failure());
        match vote(&outputs, 2) {
            VoteResult::Consensus { dissenters, .. } => assert_eq!(dissenters, [2u8].into()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vote_is_symmetric_under_core_relabeling() {
        let base: BTreeMap<u8, ReplicaOutcome> =
            [(0, out(vec![9])), (1, out(vec![2])), (2, out(vec![9]))].into();
        let swapped: BTreeMap<u8, ReplicaOutcome> =
            [(0, out(vec![2])), (1, out(vec![9])), (2, out(vec![9]))].into();
        let (a, b) = (vote(&base, 2), vote(&swapped, 2));
        match (a, b) {
            (
                VoteResult::Consensus { value: va, dissenters: da },
                VoteResult::Consensus { value: vb, dissenters: db },
            ) => {
                assert_eq!(va, vb);
                assert_eq!(da, [1u8].into());
                assert_eq!(db, [0u8].into());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decoder_fault_detaches_one_core() {
        let program = programs::program("bitcount").unwrap();
        let slots = slots_with_distinct_configs(program);
        let out_addr = slots[0].image.output_addr();
        let plan = FaultPlan::single(Fault {
            kind: FaultKind::AddressDecoderLine {
                line: out_addr.trailing_zeros() as u8,
                mode: DecoderMode::Stuck0,
            },
            persistence: Persistence::Permanent { onset_cycle: 0 },
            core: 0,
        });
        let per_core: BTreeMap<u8, FaultPlan> = [(0u8, plan)].into();
        let outputs = execute_replicas(program, &[0x3], &slots, &per_core, 100_000);
        match vote(&outputs, 2) {
            VoteResult::Consensus { value, dissenters } => {
                assert_eq!(value, vec![2]);
                assert_eq!(dissenters, [0u8].into());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
