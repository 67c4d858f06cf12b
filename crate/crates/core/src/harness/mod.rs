//! Campaign engine: closed-loop recovery scenarios and Monte Carlo
//! fault-injection campaigns, driven round by round through the redundancy
//! layer and the recovery controller. One round is one redundant execution
//! over the next input from a seeded stream.
//!
//! Trials are independent, deterministic in (spec, trial index), and run
//! data-parallel by default; records are assembled in trial order so reports
//! are byte-reproducible.

mod report;

pub use report::{csv_string, summary_json, write_report};

use crate::controller::{Action, Controller, RecoveryPhase, Thresholds, VariantDelivery};
use crate::diversity::DiversityConfig;
use crate::exec;
use crate::faults::{sample_fault_kinds, Fault, FaultKind, FaultPlan, FaultSpace, Persistence};
use crate::machine::{GoldenCache, Word, DEFAULT_CYCLE_LIMIT};
use crate::programs;
use crate::redundancy::{execute_replicas, vote, NmrConfig, ReplicaSlot, VoteResult};
use crate::rng::{mix, stream_rng};
use crate::selftest;
use crate::server::{self, ProgramRef, VariantRequest, VariantResponse};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CampaignMode {
    #[serde(rename = "single-shot-voting")]
    SingleShotVoting,
    #[serde(rename = "closed-loop-recovery")]
    ClosedLoopRecovery,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersistenceMode {
    #[default]
    Permanent,
    /// One transient activation at the onset round, at a seeded cycle within
    /// the fault-free execution span.
    Transient,
}

fn default_max_rounds() -> u32 {
    64
}
fn default_onset_rounds() -> u32 {
    10
}
fn default_cycle_limit() -> u32 {
    DEFAULT_CYCLE_LIMIT
}

/// A reproducible campaign: everything a re-run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub benchmark: String,
    #[serde(default)]
    pub nmr: NmrConfig,
    pub fault_space: FaultSpace,
    pub trials: u32,
    pub seed: u64,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub mode: CampaignMode,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default = "default_onset_rounds")]
    pub onset_rounds: u32,
    #[serde(default)]
    pub persistence: PersistenceMode,
    #[serde(default = "default_cycle_limit")]
    pub cycle_limit: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalStatus {
    MaskedThroughout,
    RecoveredDynamic,
    RecoveredStatic,
    FallbackAlarm,
    Undetected,
}

impl FinalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FinalStatus::MaskedThroughout => "masked-throughout",
            FinalStatus::RecoveredDynamic => "recovered-dynamic",
            FinalStatus::RecoveredStatic => "recovered-static",
            FinalStatus::FallbackAlarm => "fallback-alarm",
            FinalStatus::Undetected => "undetected",
        }
    }

    pub const ALL: [FinalStatus; 5] = [
        FinalStatus::MaskedThroughout,
        FinalStatus::RecoveredDynamic,
        FinalStatus::RecoveredStatic,
        FinalStatus::FallbackAlarm,
        FinalStatus::Undetected,
    ];
}

/// Outcome of one trial: the injected fault, detection and recovery trace
/// summary, and the final status.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u32,
    pub fault: FaultKind,
    pub core: u8,
    pub onset_round: u32,
    pub rounds_to_detect: Option<u32>,
    pub dynamic_attempts: u32,
    pub final_status: FinalStatus,
    pub variant_config: Option<DiversityConfig>,
    pub phases_visited: Vec<String>,
    pub consensus_violations: u32,
    pub rounds: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub trials: u32,
    pub status_counts: BTreeMap<String, u32>,
    pub status_fractions: BTreeMap<String, f64>,
    pub per_class: BTreeMap<String, BTreeMap<String, u32>>,
    pub runtime_ms: u64,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("invalid campaign spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    EmptySpace(#[from] crate::faults::SampleError),
}

fn validate_spec(spec: &CampaignSpec) -> Result<(), CampaignError> {
    if programs::benchmark(&spec.benchmark).is_none() {
        return Err(CampaignError::UnknownBenchmark(spec.benchmark.clone()));
    }
    if spec.trials == 0 {
        return Err(CampaignError::InvalidSpec("trials must be >= 1".into()));
    }
    if spec.nmr.m == 0 || spec.nmr.m > spec.nmr.n || spec.nmr.n == 0 {
        return Err(CampaignError::InvalidSpec(format!(
            "invalid voting shape {}oo{}",
            spec.nmr.m, spec.nmr.n
        )));
    }
    // Probing one draw validates the space is non-empty.
    sample_fault_kinds(spec.seed, &spec.fault_space, 1)?;
    Ok(())
}

/// The fault kind a given trial injects (exposed so analyses can recompute
/// campaign composition without re-running trials).
pub fn trial_fault(spec: &CampaignSpec, trial: u32) -> FaultKind {
    sample_fault_kinds(mix(spec.seed, 0xFA00 + trial as u64), &spec.fault_space, 1)
        .expect("validated fault space")[0]
}

fn trial_input(spec: &CampaignSpec, trial: u32, round: u32) -> Vec<Word> {
    let program = &programs::benchmark(&spec.benchmark).expect("validated").program;
    programs::random_input(program, mix(spec.seed, 0x17_0000 + trial as u64), round as u64)
}

/// Run one trial: inject the sampled fault at a seeded onset round and feed a
/// seeded input stream through redundancy and the controller until normal
/// operation holds for `threshold_dynamic` rounds, a fallback is reached, or
/// the round cap fires.
pub fn run_trial(spec: &CampaignSpec, trial: u32, goldens: &GoldenCache) -> TrialRecord {
    let program = &programs::benchmark(&spec.benchmark).expect("validated").program;
    let kind = trial_fault(spec, trial);
    let core = (trial % spec.nmr.n as u32) as u8;
    let mut rng = stream_rng(spec.seed, 0x05E7_0000 + trial as u64);
    let onset_round = rng.gen_range(0..spec.onset_rounds.max(1));

    let persistence = match spec.persistence {
        PersistenceMode::Permanent => Persistence::Permanent { onset_cycle: 0 },
        PersistenceMode::Transient => {
            // A cycle inside the fault-free execution span of the onset
            // round's input, so the transient can actually bite.
            let input = trial_input(spec, trial, onset_round);
            let image = goldens.identity_image(program);
            let span = crate::machine::run(&image, &input, &FaultPlan::empty(), spec.cycle_limit)
                .cycles
                .max(1);
            Persistence::Transient { cycle: rng.gen_range(0..span) }
        }
    };
    let fault = Fault { kind, persistence, core };

    match spec.mode {
        CampaignMode::SingleShotVoting => single_shot_trial(spec, trial, fault, goldens),
        CampaignMode::ClosedLoopRecovery => closed_loop_trial(spec, trial, fault, goldens),
    }
}

fn single_shot_trial(
    spec: &CampaignSpec,
    trial: u32,
    fault: Fault,
    goldens: &GoldenCache,
) -> TrialRecord {
    let program = &programs::benchmark(&spec.benchmark).expect("validated").program;
    let slots: Vec<ReplicaSlot> = (0..spec.nmr.n)
        .map(|c| ReplicaSlot::new(program, c, DiversityConfig::identity()).expect("identity"))
        .collect();
    let input = trial_input(spec, trial, 0);
    let golden = goldens.golden(program, &input).expect("golden");
    let plans: BTreeMap<u8, FaultPlan> = [(fault.core, FaultPlan::single(fault))].into();
    let outputs = execute_replicas(program, &input, &slots, &plans, spec.cycle_limit);
    let v = vote(&outputs, spec.nmr.m);
    let (violations, dissent) = match &v {
        VoteResult::Consensus { value, dissenters } => {
            ((value != &golden) as u32, !dissenters.is_empty())
        }
        VoteResult::NoMajority { .. } => (1, true),
    };
    TrialRecord {
        trial,
        fault: fault.kind,
        core: fault.core,
        onset_round: 0,
        rounds_to_detect: dissent.then_some(0),
        dynamic_attempts: 0,
        final_status: if dissent { FinalStatus::MaskedThroughout } else { FinalStatus::Undetected },
        variant_config: None,
        phases_visited: vec!["normal".into()],
        consensus_violations: violations,
        rounds: 1,
    }
}

fn closed_loop_trial(
    spec: &CampaignSpec,
    trial: u32,
    fault: Fault,
    goldens: &GoldenCache,
) -> TrialRecord {
    let program = &programs::benchmark(&spec.benchmark).expect("validated").program;
    let mut slots: Vec<ReplicaSlot> = (0..spec.nmr.n)
        .map(|c| ReplicaSlot::new(program, c, DiversityConfig::identity()).expect("identity"))
        .collect();
    let configs: BTreeMap<u8, DiversityConfig> =
        slots.iter().map(|s| (s.core, s.config.clone())).collect();
    let mut controller = Controller::new(
        program,
        configs,
        spec.thresholds,
        mix(spec.seed, 0xC720_0000 + trial as u64),
    );

    let onset = {
        let mut rng = stream_rng(spec.seed, 0x05E7_0000 + trial as u64);
        rng.gen_range(0..spec.onset_rounds.max(1))
    };
    let active_plan = FaultPlan::single(fault);

    let mut rounds_to_detect = None;
    let mut dynamic_attempts = 0u32;
    let mut variant_config = None;
    let mut phases_visited: Vec<String> = vec!["normal".into()];
    let mut consensus_violations = 0u32;
    let mut clean_streak = 0u32;
    let mut any_dissent = false;
    let mut rounds = 0u32;

    for round in 0..spec.max_rounds {
        rounds = round + 1;
        let input = trial_input(spec, trial, round);
        let golden = goldens.golden(program, &input).expect("golden");

        let fault_active = match fault.persistence {
            Persistence::Permanent { .. } => round >= onset,
            Persistence::Transient { .. } => round == onset,
        };
        let mut plans = BTreeMap::new();
        if fault_active {
            plans.insert(fault.core, active_plan.clone());
        }

        let outputs = execute_replicas(program, &input, &slots, &plans, spec.cycle_limit);
        let v = vote(&outputs, spec.nmr.m);
        match &v {
            VoteResult::Consensus { value, dissenters } => {
                if value != &golden {
                    consensus_violations += 1;
                }
                if dissenters.is_empty() {
                    clean_streak += 1;
                } else {
                    clean_streak = 0;
                    any_dissent = true;
                    if rounds_to_detect.is_none() {
                        rounds_to_detect = Some(round.saturating_sub(onset));
                    }
                }
            }
            VoteResult::NoMajority { .. } => {
                consensus_violations += 1;
                clean_streak = 0;
                any_dissent = true;
            }
        }

        let mut queue: VecDeque<Action> = controller.on_vote_result(&v).into();
        while let Some(action) = queue.pop_front() {
            let phase_name = controller.phase().name().to_string();
            if phases_visited.last() != Some(&phase_name) {
                phases_visited.push(phase_name);
            }
            match action {
                Action::ReconfigureDynamic { core, config } => {
                    dynamic_attempts += 1;
                    slots[core as usize]
                        .deploy(program, config)
                        .expect("controller validates configs");
                }
                Action::RunSelfTests { core } => {
                    let plan = if fault_active && fault.core == core {
                        active_plan.clone()
                    } else {
                        FaultPlan::empty()
                    };
                    let report =
                        selftest::run_self_tests(&plan, mix(spec.seed, 0x5E1F + trial as u64));
                    queue.extend(controller.on_selftest_report(core, &report.found));
                }
                Action::RequestVariant { core, fault: definition } => {
                    let request = VariantRequest {
                        program: ProgramRef::Name(spec.benchmark.clone()),
                        fault: definition,
                        coverage_threshold: spec.thresholds.coverage_threshold,
                        test_inputs: programs::default_test_inputs(&spec.benchmark),
                        search_budget: server::DEFAULT_SEARCH_BUDGET,
                    };
                    let delivery = match server::generate_variant(&request) {
                        VariantResponse::Generated { config, .. } => {
                            VariantDelivery::Variant(config)
                        }
                        VariantResponse::Failed { .. } => VariantDelivery::GenerationFailed,
                    };
                    queue.extend(controller.on_variant(core, delivery));
                }
                Action::DeployVariant { core, config } => {
                    variant_config = Some(config.clone());
                    slots[core as usize]
                        .deploy(program, config)
                        .expect("server variants assemble");
                }
                Action::RaiseAlarm { .. } => {}
            }
        }
        let phase_name = controller.phase().name().to_string();
        if phases_visited.last() != Some(&phase_name) {
            phases_visited.push(phase_name);
        }

        if matches!(controller.phase(), RecoveryPhase::Fallback { .. }) {
            break;
        }
        let stable = matches!(controller.phase(), RecoveryPhase::Normal)
            && clean_streak >= spec.thresholds.threshold_dynamic
            && round >= onset + spec.thresholds.threshold_dynamic;
        if stable {
            break;
        }
    }

    let final_status = if matches!(controller.phase(), RecoveryPhase::Fallback { .. }) {
        FinalStatus::FallbackAlarm
    } else if !matches!(controller.phase(), RecoveryPhase::Normal) {
        // Round cap fired mid-recovery.
        FinalStatus::FallbackAlarm
    } else if variant_config.is_some() {
        FinalStatus::RecoveredStatic
    } else if phases_visited.iter().any(|p| p == "dynamic_adaptation") {
        FinalStatus::RecoveredDynamic
    } else if any_dissent {
        FinalStatus::MaskedThroughout
    } else {
        FinalStatus::Undetected
    };

    TrialRecord {
        trial,
        fault: fault.kind,
        core: fault.core,
        onset_round: onset,
        rounds_to_detect,
        dynamic_attempts,
        final_status,
        variant_config,
        phases_visited,
        consensus_violations,
        rounds,
    }
}

fn summarize(records: &[TrialRecord], runtime_ms: u64) -> CampaignSummary {
    let mut status_counts: BTreeMap<String, u32> = BTreeMap::new();
    let mut per_class: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for r in records {
        *status_counts.entry(r.final_status.as_str().to_string()).or_default() += 1;
        *per_class
            .entry(r.fault.class().to_string())
            .or_default()
            .entry(r.final_status.as_str().to_string())
            .or_default() += 1;
    }
    let n = records.len() as f64;
    let status_fractions = status_counts
        .iter()
        .map(|(k, &v)| (k.clone(), v as f64 / n))
        .collect();
    CampaignSummary {
        trials: records.len() as u32,
        status_counts,
        status_fractions,
        per_class,
        runtime_ms,
    }
}

/// Run all trials (data-parallel) and aggregate. Identical specs yield
/// identical records and summaries, apart from the wall-clock field.
pub fn run_campaign(spec: &CampaignSpec) -> Result<(CampaignSummary, Vec<TrialRecord>), CampaignError> {
    campaign_impl(spec, false)
}

/// Sequential counterpart of [`run_campaign`]; always available.
pub fn run_campaign_sequential(
    spec: &CampaignSpec,
) -> Result<(CampaignSummary, Vec<TrialRecord>), CampaignError> {
    campaign_impl(spec, true)
}

fn campaign_impl(
    spec: &CampaignSpec,
    sequential: bool,
) -> Result<(CampaignSummary, Vec<TrialRecord>), CampaignError> {
    validate_spec(spec)?;
    let start = std::time::Instant::now();
    let goldens = GoldenCache::new();
    let run = |i: usize| run_trial(spec, i as u32, &goldens);
    let records = if sequential {
        exec::map_indexed_sequential(spec.trials as usize, run)
    } else {
        exec::map_indexed(spec.trials as usize, run)
    };
    let summary = summarize(&records, start.elapsed().as_millis() as u64);
    Ok((summary, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::{both_stuck_values, ClassSpace, DecoderMode};

    fn register_space() -> FaultSpace {
        FaultSpace {
            classes: vec![ClassSpace::RegisterBits {
                regs: (0..6).collect(),
                bits: (0..32).collect(),
                stuck_values: both_stuck_values(),
            }],
        }
    }

    fn spec(trials: u32, mode: CampaignMode) -> CampaignSpec {
        CampaignSpec {
            benchmark: "bitcount".into(),
            nmr: NmrConfig::tmr(),
            fault_space: register_space(),
            trials,
            seed: 424242,
            thresholds: Thresholds::default(),
            mode,
            max_rounds: 64,
            onset_rounds: 10,
            persistence: PersistenceMode::Permanent,
            cycle_limit: DEFAULT_CYCLE_LIMIT,
        }
    }

    #[test]
    fn single_trial_campaign_aggregates_that_trial() {
        let s = spec(1, CampaignMode::SingleShotVoting);
        let (summary, records) = run_campaign(&s).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(summary.trials, 1);
        assert_eq!(
            summary.status_counts[records[0].final_status.as_str()],
            1
        );
    }

    #[test]
    fn doubling_trials_preserves_the_record_prefix() {
        let small = spec(6, CampaignMode::ClosedLoopRecovery);
        let mut large = small.clone();
        large.trials = 12;
        let (_, a) = run_campaign(&small).unwrap();
        let (_, b) = run_campaign(&large).unwrap();
        assert_eq!(a[..], b[..6]);
    }

    #[test]
    fn parallel_and_sequential_campaigns_agree() {
        let s = spec(8, CampaignMode::ClosedLoopRecovery);
        let (_, a) = run_campaign(&s).unwrap();
        let (_, b) = run_campaign_sequential(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transient_faults_never_escalate() {
        let mut s = spec(24, CampaignMode::ClosedLoopRecovery);
        s.persistence = PersistenceMode::Transient;
        let (_, records) = run_campaign(&s).unwrap();
        for r in &records {
            assert!(
                matches!(r.final_status, FinalStatus::MaskedThroughout | FinalStatus::Undetected),
                "trial {}: {:?}",
                r.trial,
                r.final_status
            );
            assert_eq!(r.consensus_violations, 0);
            assert!(!r.phases_visited.iter().any(|p| p != "normal"));
        }
    }

    #[test]
    fn benign_fault_ends_undetected_with_zero_recovery_activity() {
        // Brute-force a benign fault: bitcount never uses r15, so any stuck
        // bit there cannot manifest.
        let mut s = spec(1, CampaignMode::ClosedLoopRecovery);
        s.fault_space = FaultSpace {
            classes: vec![ClassSpace::RegisterBits {
                regs: vec![15],
                bits: vec![7],
                stuck_values: vec![1],
            }],
        };
        let (_, records) = run_campaign(&s).unwrap();
        assert_eq!(records[0].final_status, FinalStatus::Undetected);
        assert_eq!(records[0].dynamic_attempts, 0);
        assert_eq!(records[0].rounds_to_detect, None);
    }

    #[test]
    fn permanent_register_fault_recovers_statically_with_exclusion() {
        // r1 bit 0 stuck-1 perturbs bitcount on most inputs; dynamic knobs
        // cannot help registers, so the loop must escalate and deploy an
        // exclusion variant.
        let mut s = spec(1, CampaignMode::ClosedLoopRecovery);
        s.fault_space = FaultSpace {
            classes: vec![ClassSpace::RegisterBits {
                regs: vec![1],
                bits: vec![0],
                stuck_values: vec![1],
            }],
        };
        let (_, records) = run_campaign(&s).unwrap();
        let r = &records[0];
        assert_eq!(r.final_status, FinalStatus::RecoveredStatic, "{r:?}");
        assert_eq!(r.consensus_violations, 0);
        let variant = r.variant_config.as_ref().unwrap();
        assert!(variant.static_params.excluded_registers.contains(&1));
        assert!(r.phases_visited.iter().any(|p| p == "self_testing"));
    }

    #[test]
    fn stuck_line_fault_recovers_dynamically() {
        let mut s = spec(1, CampaignMode::ClosedLoopRecovery);
        s.fault_space = FaultSpace {
            classes: vec![ClassSpace::AddressDecoderLines {
                lines: vec![12],
                modes: vec![DecoderMode::Stuck1],
            }],
        };
        let (_, records) = run_campaign(&s).unwrap();
        let r = &records[0];
        assert_eq!(r.final_status, FinalStatus::RecoveredDynamic, "{r:?}");
        assert_eq!(r.consensus_violations, 0);
        assert!(!r.phases_visited.iter().any(|p| p == "self_testing"));
        assert!(r.dynamic_attempts >= 1);
    }
}
