//! Diversification control: per-core error accounting with transient
//! discrimination, a dynamic-diversity adaptation schedule, escalation to
//! self-tests and remote variant generation, and a terminal fallback.
//!
//! The controller is a single logical actor. It consumes vote results,
//! self-test reports, and variant deliveries one at a time and emits actions
//! for the surrounding harness to carry out (reconfigure a replica, run
//! self-tests, request a variant, deploy it, raise an alarm). The full
//! transition trace is a pure function of the event sequence and the seed.

use crate::diversity::DiversityConfig;
use crate::faults::FaultDefinition;
use crate::machine::{assemble, Program, DEFAULT_DATA_BASE, DEFAULT_MEMORY_SIZE};
use crate::redundancy::VoteResult;
use crate::rng::{mix, stream_rng};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Recovery tuning knobs. Up to `threshold_dynamic` errors are tolerated as
/// transients; exceeding the threshold starts dynamic adaptation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    #[serde(default = "default_threshold_dynamic")]
    pub threshold_dynamic: u32,
    #[serde(default = "default_max_dynamic_attempts")]
    pub max_dynamic_attempts: u32,
    #[serde(default = "default_coverage_threshold")]
    pub coverage_threshold: f64,
}

fn default_threshold_dynamic() -> u32 {
    3
}
fn default_max_dynamic_attempts() -> u32 {
    8
}
fn default_coverage_threshold() -> f64 {
    0.95
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            threshold_dynamic: default_threshold_dynamic(),
            max_dynamic_attempts: default_max_dynamic_attempts(),
            coverage_threshold: default_coverage_threshold(),
        }
    }
}

/// Per-core error accounting. The counter resets to zero after a correct
/// execution; `consecutive_ok` gates the recovery exit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreHealth {
    pub error_counter: u32,
    pub consecutive_ok: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackReason {
    NoFaultFound,
    GenerationFailed,
}

/// Recovery phase; at most one core is in recovery at a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum RecoveryPhase {
    Normal,
    DynamicAdaptation { core: u8, attempt: u32 },
    SelfTesting { core: u8 },
    AwaitingVariant { core: u8, fault: FaultDefinition },
    Fallback { core: u8, reason: FallbackReason },
}

impl RecoveryPhase {
    pub fn name(&self) -> &'static str {
        match self {
            RecoveryPhase::Normal => "normal",
            RecoveryPhase::DynamicAdaptation { .. } => "dynamic_adaptation",
            RecoveryPhase::SelfTesting { .. } => "self_testing",
            RecoveryPhase::AwaitingVariant { .. } => "awaiting_variant",
            RecoveryPhase::Fallback { .. } => "fallback",
        }
    }
}

/// Side effects the harness must carry out after a transition.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    ReconfigureDynamic { core: u8, config: DiversityConfig },
    RunSelfTests { core: u8 },
    RequestVariant { core: u8, fault: FaultDefinition },
    DeployVariant { core: u8, config: DiversityConfig },
    RaiseAlarm { core: u8, reason: FallbackReason },
}

impl Action {
    fn describe(&self) -> String {
        match self {
            Action::ReconfigureDynamic { core, .. } => format!("reconfigure_dynamic(core={core})"),
            Action::RunSelfTests { core } => format!("run_self_tests(core={core})"),
            Action::RequestVariant { core, fault } => {
                format!("request_variant(core={core}, fault={:?})", fault.kind)
            }
            Action::DeployVariant { core, .. } => format!("deploy_variant(core={core})"),
            Action::RaiseAlarm { core, reason } => {
                format!("raise_alarm(core={core}, reason={reason:?})")
            }
        }
    }
}

/// What the server returned for a variant request.
#[derive(Clone, Debug, PartialEq)]
pub enum VariantDelivery {
    Variant(DiversityConfig),
    GenerationFailed,
}

/// One structured record per controller transition.
#[derive(Clone, Debug, Serialize)]
pub struct TransitionRecord {
    pub round: u64,
    pub phase: String,
    pub counters: BTreeMap<u8, u32>,
    pub actions: Vec<String>,
}

/// Per-core adaptation history: for each episode, the configs tried and the
/// error-counter trajectory observed under each. Append-only within an
/// episode.
#[derive(Clone, Debug, Default, Serialize)]
pub struct AdaptationHistory {
    pub per_core: BTreeMap<u8, Vec<Vec<(DiversityConfig, Vec<u32>)>>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("dynamic adaptation schedule exhausted")]
pub struct ScheduleExhausted;

/// Pluggable adaptation tactic: propose the candidate config at a 1-based
/// schedule position, relative to the episode's baseline config.
pub trait AdaptationStrategy: Send + Sync {
    fn propose(
        &self,
        program: &Program,
        baseline: &DiversityConfig,
        position: u32,
        seed: u64,
    ) -> Option<DiversityConfig>;
}

/// Default deterministic schedule: double gap_size (attempts 1 and 2 use
/// gaps 1 and 2), then vary base_offset, re-draw the variable order, vary the
/// re-expression key — one knob per attempt, cycling, with the gap doubling
/// and the base walk advancing on each revisit.
pub struct DefaultSchedule;

impl DefaultSchedule {
    /// Base-offset walk: one small shift, the top-of-memory placement (which
    /// sets every high address bit of the data block), then wider strides.
    fn base_offsets(program: &Program) -> Vec<u32> {
        let span = program.data_words();
        let top = DEFAULT_MEMORY_SIZE - span - DEFAULT_DATA_BASE;
        vec![8, top, 0x20, 0x100, 0x400, 0x2000]
    }
}

impl AdaptationStrategy for DefaultSchedule {
    fn propose(
        &self,
        program: &Program,
        baseline: &DiversityConfig,
        position: u32,
        seed: u64,
    ) -> Option<DiversityConfig> {
        if position == 0 {
            return None;
        }
        // Positions 1 and 2 are the first two gap doublings; afterwards the
        // knob cycle is [base, order, key, gap].
        let (knob, visit) = match position {
            1 => (3usize, 0usize),
            2 => (3, 1),
            p => (((p - 3) % 4) as usize, ((p - 3) / 4) as usize),
        };
        let mut config = baseline.clone();
        match knob {
            0 => {
                let walk = Self::base_offsets(program);
                config.dynamic.base_offset = walk[visit % walk.len()];
            }
            1 => {
                config.dynamic.variable_order_seed = Some(mix(seed, 0x0D30 + visit as u64));
            }
            2 => {
                let mut rng = stream_rng(seed, 0x4E40 + visit as u64);
                let key = loop {
                    let k: u32 = rng.gen();
                    if k != 0 {
                        break k;
                    }
                };
                config.dynamic.reexpr_key = Some(key);
            }
            3 => {
                // Positions 1 and 2 already used gaps 1 and 2; revisits in
                // the cycle continue the doubling at 4.
                let doubling = if position <= 2 { visit } else { visit + 2 };
                config.dynamic.gap_size = 1u32 << doubling.min(20);
            }
            _ => unreachable!(),
        }
        Some(config)
    }
}

/// The recovery controller for one redundant task.
pub struct Controller {
    program: Program,
    thresholds: Thresholds,
    phase: RecoveryPhase,
    health: BTreeMap<u8, CoreHealth>,
    /// Config each core currently runs (kept in sync with emitted actions).
    active: BTreeMap<u8, DiversityConfig>,
    episode_baseline: Option<DiversityConfig>,
    schedule_cursor: u32,
    episode_tried: Vec<DiversityConfig>,
    history: AdaptationHistory,
    strategy: Box<dyn AdaptationStrategy>,
    seed: u64,
    round: u64,
    log: Vec<TransitionRecord>,
}

impl Controller {
    pub fn new(
        program: &Program,
        configs: BTreeMap<u8, DiversityConfig>,
        thresholds: Thresholds,
        seed: u64,
    ) -> Self {
        let health = configs.keys().map(|&c| (c, CoreHealth::default())).collect();
        Controller {
            program: program.clone(),
            thresholds,
            phase: RecoveryPhase::Normal,
            health,
            active: configs,
            episode_baseline: None,
            schedule_cursor: 0,
            episode_tried: Vec::new(),
            history: AdaptationHistory::default(),
            strategy: Box::new(DefaultSchedule),
            seed,
            round: 0,
            log: Vec::new(),
        }
    }

    pub fn with_strategy(mut self, strategy: Box<dyn AdaptationStrategy>) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn phase(&self) -> &RecoveryPhase {
        &self.phase
    }

    pub fn health(&self) -> &BTreeMap<u8, CoreHealth> {
        &self.health
    }

    pub fn history(&self) -> &AdaptationHistory {
        &self.history
    }

    pub fn log(&self) -> &[TransitionRecord] {
        &self.log
    }

    pub fn active_config(&self, core: u8) -> Option<&DiversityConfig> {
        self.active.get(&core)
    }

    /// Next untried feasible config from the schedule for this episode.
    fn next_dynamic_config(&mut self, core: u8) -> Result<DiversityConfig, ScheduleExhausted> {
        let baseline = self
            .episode_baseline
            .clone()
            .expect("episode open while proposing configs");
        let seed = mix(self.seed, core as u64);
        // Bounded skip-ahead over infeasible or already-tried candidates.
        for _ in 0..64 {
            self.schedule_cursor += 1;
            let Some(cand) =
                self.strategy.propose(&self.program, &baseline, self.schedule_cursor, seed)
            else {
                break;
            };
            if self.episode_tried.contains(&cand) {
                continue;
            }
            if assemble(&self.program, &cand).is_err() {
                continue;
            }
            self.episode_tried.push(cand.clone());
            return Ok(cand);
        }
        Err(ScheduleExhausted)
    }

    fn open_episode(&mut self, core: u8) {
        self.episode_baseline = Some(self.active[&core].clone());
        self.schedule_cursor = 0;
        self.episode_tried.clear();
        self.history.per_core.entry(core).or_default().push(Vec::new());
    }

    fn record_attempt(&mut self, core: u8, config: &DiversityConfig) {
        if let Some(episode) = self.history.per_core.entry(core).or_default().last_mut() {
            episode.push((config.clone(), Vec::new()));
        }
    }

    fn record_counter(&mut self, core: u8) {
        let counter = self.health[&core].error_counter;
        if let Some(attempt) = self
            .history
            .per_core
            .entry(core)
            .or_default()
            .last_mut()
            .and_then(|e| e.last_mut())
        {
            attempt.1.push(counter);
        }
    }

    /// Feed one vote result; returns the actions the harness must execute.
    pub fn on_vote_result(&mut self, vote: &VoteResult) -> Vec<Action> {
        self.round += 1;
        let mut actions = Vec::new();

        if let VoteResult::Consensus { dissenters, .. } = vote {
            for (&core, health) in self.health.iter_mut() {
                if dissenters.contains(&core) {
                    health.error_counter += 1;
                    health.consecutive_ok = 0;
                } else {
                    health.error_counter = 0;
                    health.consecutive_ok += 1;
                }
            }

            match self.phase.clone() {
                RecoveryPhase::Normal => {
                    // Strictly-greater-than semantics on the threshold.
                    let trigger = self
                        .health
                        .iter()
                        .find(|(_, h)| h.error_counter > self.thresholds.threshold_dynamic)
                        .map(|(&c, _)| c);
                    if let Some(core) = trigger {
                        self.open_episode(core);
                        match self.next_dynamic_config(core) {
                            Ok(config) => {
                                self.phase = RecoveryPhase::DynamicAdaptation { core, attempt: 1 };
                                self.record_attempt(core, &config);
                                self.active.insert(core, config.clone());
                                actions.push(Action::ReconfigureDynamic { core, config });
                            }
                            Err(ScheduleExhausted) => {
                                self.phase = RecoveryPhase::SelfTesting { core };
                                actions.push(Action::RunSelfTests { core });
                            }
                        }
                    }
                }
                RecoveryPhase::DynamicAdaptation { core, attempt } => {
                    self.record_counter(core);
                    if dissenters.contains(&core) {
                        let next = if attempt >= self.thresholds.max_dynamic_attempts {
                            Err(ScheduleExhausted)
                        } else {
                            self.next_dynamic_config(core)
                        };
                        match next {
                            Ok(config) => {
                                self.phase =
                                    RecoveryPhase::DynamicAdaptation { core, attempt: attempt + 1 };
                                self.record_attempt(core, &config);
                                self.active.insert(core, config.clone());
                                actions.push(Action::ReconfigureDynamic { core, config });
                            }
                            Err(ScheduleExhausted) => {
                                self.phase = RecoveryPhase::SelfTesting { core };
                                actions.push(Action::RunSelfTests { core });
                            }
                        }
                    } else if self.health[&core].consecutive_ok >= self.thresholds.threshold_dynamic
                    {
                        // Recovered: the episode closes with the working
                        // config left deployed.
                        self.phase = RecoveryPhase::Normal;
                        self.episode_baseline = None;
                    }
                }
                RecoveryPhase::SelfTesting { .. }
                | RecoveryPhase::AwaitingVariant { .. }
                | RecoveryPhase::Fallback { .. } => {}
            }
        }

        self.log_transition(&actions);
        actions
    }

    /// Feed a self-test report for the core under test.
    pub fn on_selftest_report(&mut self, core: u8, found: &[FaultDefinition]) -> Vec<Action> {
        let mut actions = Vec::new();
        if matches!(self.phase, RecoveryPhase::SelfTesting { core: c } if c == core) {
            let mut sorted = found.to_vec();
            sorted.sort_by(|a, b| a.kind.cmp(&b.kind));
            match sorted.into_iter().next() {
                Some(fault) => {
                    self.phase = RecoveryPhase::AwaitingVariant { core, fault: fault.clone() };
                    actions.push(Action::RequestVariant { core, fault });
                }
                None => {
                    let reason = FallbackReason::NoFaultFound;
                    self.phase = RecoveryPhase::Fallback { core, reason };
                    actions.push(Action::RaiseAlarm { core, reason });
                }
            }
        }
        self.log_transition(&actions);
        actions
    }

    /// Feed the server's answer to a variant request.
    pub fn on_variant(&mut self, core: u8, delivery: VariantDelivery) -> Vec<Action> {
        let mut actions = Vec::new();
        if matches!(self.phase, RecoveryPhase::AwaitingVariant { core: c, .. } if c == core) {
            match delivery {
                VariantDelivery::Variant(config) => {
                    self.active.insert(core, config.clone());
                    self.health.insert(core, CoreHealth::default());
                    self.phase = RecoveryPhase::Normal;
                    self.episode_baseline = None;
                    actions.push(Action::DeployVariant { core, config });
                }
                VariantDelivery::GenerationFailed => {
                    let reason = FallbackReason::GenerationFailed;
                    self.phase = RecoveryPhase::Fallback { core, reason };
                    actions.push(Action::RaiseAlarm { core, reason });
                }
            }
        }
        self.log_transition(&actions);
        actions
    }

    fn log_transition(&mut self, actions: &[Action]) {
        self.log.push(TransitionRecord {
            round: self.round,
            phase: self.phase.name().to_string(),
            counters: self.health.iter().map(|(&c, h)| (c, h.error_counter)).collect(),
            actions: actions.iter().map(Action::describe).collect(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::DetectedFault;
    use crate::programs;
    use crate::redundancy::ReplicaOutcome;
    use std::collections::BTreeSet;

    fn consensus(dissenters: &[u8]) -> VoteResult {
        VoteResult::Consensus {
            value: vec![1],
            dissenters: dissenters.iter().copied().collect::<BTreeSet<u8>>(),
        }
    }

    fn controller() -> Controller {
        let program = programs::program("bitcount").unwrap();
        let configs = (0..3u8).map(|c| (c, DiversityConfig::identity())).collect();
        Controller::new(program, configs, Thresholds::default(), 7)
    }

    fn fault_def() -> FaultDefinition {
        FaultDefinition {
            kind: DetectedFault::RegisterStuckBit { reg: 5, bit: 3, stuck_value: 1 },
            evidence: "register_walk".into(),
        }
    }

    #[test]
    fn counter_at_threshold_does_not_trigger_adaptation() {
        let mut c = controller();
        c.health.insert(1, CoreHealth { error_counter: 2, consecutive_ok: 0 });
        let actions = c.on_vote_result(&consensus(&[1]));
        assert_eq!(c.health[&1].error_counter, 3);
        assert_eq!(c.phase, RecoveryPhase::Normal);
        assert!(actions.is_empty());
    }

    #[test]
    fn counter_exceeding_threshold_starts_dynamic_adaptation() {
        let mut c = controller();
        c.health.insert(1, CoreHealth { error_counter: 3, consecutive_ok: 0 });
        let actions = c.on_vote_result(&consensus(&[1]));
        assert_eq!(c.health[&1].error_counter, 4);
        assert!(matches!(c.phase, RecoveryPhase::DynamicAdaptation { core: 1, attempt: 1 }));
        match &actions[..] {
            [Action::ReconfigureDynamic { core: 1, config }] => {
                // Schedule head: gap 1, everything else default.
                assert_eq!(config.dynamic.gap_size, 1);
                assert_eq!(config.dynamic.base_offset, 0);
                assert_eq!(config.static_params, Default::default());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clean_vote_resets_error_counters() {
        let mut c = controller();
        c.health.insert(1, CoreHealth { error_counter: 2, consecutive_ok: 0 });
        c.on_vote_result(&consensus(&[]));
        assert_eq!(c.health[&1].error_counter, 0);
        assert_eq!(c.health[&1].consecutive_ok, 1);
    }

    #[test]
    fn schedule_head_doubles_gap_then_walks_other_knobs() {
        let s = DefaultSchedule;
        let program = programs::program("bitcount").unwrap();
        let base = DiversityConfig::identity();
        let c1 = s.propose(program, &base, 1, 9).unwrap();
        assert_eq!(c1.dynamic.gap_size, 1);
        assert_eq!(c1.dynamic.base_offset, 0);
        let c2 = s.propose(program, &base, 2, 9).unwrap();
        assert_eq!(c2.dynamic.gap_size, 2);
        let c3 = s.propose(program, &base, 3, 9).unwrap();
        assert_eq!(c3.dynamic.base_offset, 8);
        let c4 = s.propose(program, &base, 4, 9).unwrap();
        assert!(c4.dynamic.variable_order_seed.is_some());
        let c5 = s.propose(program, &base, 5, 9).unwrap();
        assert!(c5.dynamic.reexpr_key.is_some());
        let c6 = s.propose(program, &base, 6, 9).unwrap();
        assert_eq!(c6.dynamic.gap_size, 4);
        let c7 = s.propose(program, &base, 7, 9).unwrap();
        let top = DEFAULT_MEMORY_SIZE - program.data_words() - DEFAULT_DATA_BASE;
        assert_eq!(c7.dynamic.base_offset, top);
    }

    #[test]
    fn exhausted_schedule_escalates_to_self_tests() {
        let mut c = controller();
        c.health.insert(2, CoreHealth { error_counter: 4, consecutive_ok: 0 });
        c.on_vote_result(&consensus(&[2]));
        let max = Thresholds::default().max_dynamic_attempts;
        for attempt in 1..max {
            let actions = c.on_vote_result(&consensus(&[2]));
            assert!(
                matches!(
                    c.phase,
                    RecoveryPhase::DynamicAdaptation { core: 2, attempt: a } if a == attempt + 1
                ),
                "attempt {attempt}: {:?}",
                c.phase
            );
            assert!(matches!(actions[..], [Action::ReconfigureDynamic { core: 2, .. }]));
        }
        let actions = c.on_vote_result(&consensus(&[2]));
        assert_eq!(c.phase, RecoveryPhase::SelfTesting { core: 2 });
        assert!(matches!(actions[..], [Action::RunSelfTests { core: 2 }]));
    }

    #[test]
    fn consecutive_clean_votes_close_the_episode() {
        let mut c = controller();
        c.health.insert(0, CoreHealth { error_counter: 4, consecutive_ok: 0 });
        c.on_vote_result(&consensus(&[0]));
        assert!(matches!(c.phase, RecoveryPhase::DynamicAdaptation { core: 0, .. }));
        for _ in 0..Thresholds::default().threshold_dynamic {
            c.on_vote_result(&consensus(&[]));
        }
        assert_eq!(c.phase, RecoveryPhase::Normal);
        // The adapted config stays deployed.
        assert_eq!(c.active_config(0).unwrap().dynamic.gap_size, 1);
    }

    #[test]
    fn selftest_report_routes_to_variant_request_or_fallback() {
        let mut c = controller();
        c.phase = RecoveryPhase::SelfTesting { core: 1 };
        let f = fault_def();
        let actions = c.on_selftest_report(1, &[f.clone()]);
        assert!(matches!(c.phase, RecoveryPhase::AwaitingVariant { core: 1, .. }));
        assert!(matches!(&actions[..], [Action::RequestVariant { core: 1, fault }] if fault == &f));

        let mut c = controller();
        c.phase = RecoveryPhase::SelfTesting { core: 1 };
        let actions = c.on_selftest_report(1, &[]);
        assert_eq!(
            c.phase,
            RecoveryPhase::Fallback { core: 1, reason: FallbackReason::NoFaultFound }
        );
        assert!(matches!(
            actions[..],
            [Action::RaiseAlarm { core: 1, reason: FallbackReason::NoFaultFound }]
        ));
    }

    #[test]
    fn multi_fault_reports_take_the_first_in_kind_location_order() {
        let mut c = controller();
        c.phase = RecoveryPhase::SelfTesting { core: 1 };
        let later = FaultDefinition {
            kind: DetectedFault::MemoryStuckBit { addr: 8, bit: 0, stuck_value: 0 },
            evidence: "march_memory".into(),
        };
        let first = fault_def(); // register sorts before memory
        let actions = c.on_selftest_report(1, &[later, first.clone()]);
        match &actions[..] {
            [Action::RequestVariant { fault, .. }] => assert_eq!(fault, &first),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn variant_delivery_deploys_and_returns_to_normal() {
        let mut c = controller();
        c.phase = RecoveryPhase::AwaitingVariant { core: 1, fault: fault_def() };
        c.health.insert(1, CoreHealth { error_counter: 9, consecutive_ok: 0 });
        let variant = DiversityConfig {
            static_params: crate::diversity::StaticParams {
                excluded_registers: [5u8].into_iter().collect(),
                ..Default::default()
            },
            ..Default::default()
        };
        let actions = c.on_variant(1, VariantDelivery::Variant(variant.clone()));
        assert_eq!(c.phase, RecoveryPhase::Normal);
        assert_eq!(c.health[&1], CoreHealth::default());
        assert_eq!(c.active_config(1), Some(&variant));
        // Other cores' configs untouched.
        assert_eq!(c.active_config(0), Some(&DiversityConfig::identity()));
        assert!(matches!(actions[..], [Action::DeployVariant { core: 1, .. }]));
    }

    #[test]
    fn generation_failure_falls_back() {
        let mut c = controller();
        c.phase = RecoveryPhase::AwaitingVariant { core: 2, fault: fault_def() };
        let actions = c.on_variant(2, VariantDelivery::GenerationFailed);
        assert_eq!(
            c.phase,
            RecoveryPhase::Fallback { core: 2, reason: FallbackReason::GenerationFailed }
        );
        assert!(matches!(
            actions[..],
            [Action::RaiseAlarm { core: 2, reason: FallbackReason::GenerationFailed }]
        ));
    }

    #[test]
    fn no_majority_changes_nothing() {
        let mut c = controller();
        c.health.insert(1, CoreHealth { error_counter: 2, consecutive_ok: 0 });
        let values: BTreeMap<u8, ReplicaOutcome> = (0..3)
            .map(|i| (i, ReplicaOutcome::Output { words: vec![i as u32] }))
            .collect();
        let actions = c.on_vote_result(&VoteResult::NoMajority { values });
        assert!(actions.is_empty());
        assert_eq!(c.phase, RecoveryPhase::Normal);
        assert_eq!(c.health[&1].error_counter, 2);
    }

    #[test]
    fn history_is_append_only_within_an_episode() {
        let mut c = controller();
        c.health.insert(1, CoreHealth { error_counter: 4, consecutive_ok: 0 });
        c.on_vote_result(&consensus(&[1]));
        c.on_vote_result(&consensus(&[1]));
        c.on_vote_result(&consensus(&[1]));
        let episodes = &c.history().per_core[&1];
        assert_eq!(episodes.len(), 1);
        assert_eq!(episodes[0].len(), 3); // three configs tried so far
        assert!(!episodes[0][0].1.is_empty()); // trajectory recorded under the first
    }
}
