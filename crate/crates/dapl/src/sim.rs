//! Schedulers that drive the machine to an outcome, plus checkers for the
//! properties the mutual-exclusion programs are supposed to have.
//!
//! A scheduler repeatedly picks one enabled action: advance a process's
//! local code to its next yield point, move a message from a channel into a
//! destination queue (possibly reordered or dropped, per the configuration),
//! consume a queued message at a yield point, or attempt the await there.
//! Handling and firing run the unblocked code straight to the next yield, so
//! the scheduler only ever sees processes parked at yields or terminated;
//! local steps of distinct processes act on disjoint heaps, so this loses no
//! observable behavior.

use crate::ast::{Addr, ChannelOrder, ChannelReliability, Program};
use crate::runtime::eval::EvalError;
use crate::runtime::rules::{AwaitOutcome, Event, LocalStatus, Machine, Metrics, ProcStatus};
use crate::runtime::state::RECEIVED_FIELD;
use crate::runtime::value::AtomTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Policy {
    /// Uniform choice among enabled actions, seeded.
    Random,
    /// Processes take turns in address order; each turn drains arrivals and
    /// queued messages, then attempts the await. Deterministic for lossless
    /// ordered channels.
    RoundRobin,
}

impl std::str::FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Policy, String> {
        match s {
            "random" => Ok(Policy::Random),
            "round-robin" | "roundrobin" => Ok(Policy::RoundRobin),
            _ => Err(format!("unknown policy `{s}` (random|round-robin)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub policy: Policy,
    /// Budget on local micro steps across the whole run.
    pub max_steps: u64,
    /// Per-message drop probability under unreliable channels.
    pub drop_prob: f64,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig { seed: 0, policy: Policy::Random, max_steps: 2_000_000, drop_prob: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Outcome {
    /// Every started process ran its statement down to `skip`.
    Terminated,
    /// No action can make progress and no timeout is available.
    Deadlock,
    /// A transition rule failed, e.g. selecting from a non-tuple or reading
    /// a field that does not exist.
    Stuck { proc: String, error: String },
    StepLimit,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProcSummary {
    pub class: String,
    pub received_len: usize,
    pub stored_elements: usize,
    pub terminated: bool,
}

#[derive(Debug)]
pub struct RunResult {
    pub outcome: Outcome,
    pub events: Vec<Event>,
    pub metrics: Metrics,
    pub per_proc: BTreeMap<Addr, ProcSummary>,
}

/// One schedulable unit. At most one process action is enabled per process
/// at a time, so sorted action sets line up run-to-run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Advance(Addr),
    Handle(Addr),
    Attempt(Addr),
    Arrive(Addr, Addr),
}

pub fn run(program: &Program, cfg: &SimConfig) -> RunResult {
    let mut machine = Machine::new(program);
    let outcome = drive(&mut machine, cfg);
    let per_proc = summarize(&machine);
    RunResult { outcome, events: machine.events, metrics: machine.metrics, per_proc }
}

fn summarize(machine: &Machine) -> BTreeMap<Addr, ProcSummary> {
    machine
        .state
        .processes()
        .into_iter()
        .map(|a| {
            let class = machine.state.class_of(a).unwrap_or_default().to_string();
            let s = ProcSummary {
                class,
                received_len: machine.state.history_len(a, RECEIVED_FIELD),
                stored_elements: machine.state.stored_elements(a),
                terminated: machine.status_of(a) == ProcStatus::Terminated,
            };
            (a, s)
        })
        .collect()
}

pub fn drive(machine: &mut Machine, cfg: &SimConfig) -> Outcome {
    match cfg.policy {
        Policy::Random => drive_random(machine, cfg),
        Policy::RoundRobin => drive_round_robin(machine, cfg),
    }
}

struct Budget {
    left: u64,
}

enum AdvanceEnd {
    Done(LocalStatus),
    OutOfSteps,
    Stuck(EvalError),
}

/// Runs local code of `a` until it parks at a yield, terminates, or blocks
/// on a send to a not-yet-started process. Returns the count of micro steps
/// taken alongside how it ended.
fn advance_to_yield(machine: &mut Machine, a: Addr, budget: &mut Budget) -> (u64, AdvanceEnd) {
    let mut steps = 0;
    loop {
        if budget.left == 0 {
            return (steps, AdvanceEnd::OutOfSteps);
        }
        match machine.step_process(a) {
            Ok(LocalStatus::Progressed) => {
                steps += 1;
                budget.left -= 1;
            }
            Ok(status) => return (steps, AdvanceEnd::Done(status)),
            Err(e) => return (steps, AdvanceEnd::Stuck(e)),
        }
    }
}

fn enabled_actions(machine: &Machine) -> Vec<Action> {
    let mut out = Vec::new();
    for a in machine.state.processes() {
        match machine.status_of(a) {
            ProcStatus::Terminated => {}
            ProcStatus::Runnable => out.push(Action::Advance(a)),
            ProcStatus::AtYield => {
                let queued =
                    machine.state.queues.get(&a).map(|q| !q.is_empty()).unwrap_or(false);
                // the formal await step requires an empty message queue, so
                // attempts wait until handling catches up
                out.push(if queued { Action::Handle(a) } else { Action::Attempt(a) });
            }
        }
    }
    for (f, t) in machine.state.channels.keys() {
        out.push(Action::Arrive(*f, *t));
    }
    out.sort();
    out
}

fn all_terminated(machine: &Machine) -> bool {
    machine.state.processes().into_iter().all(|a| machine.status_of(a) == ProcStatus::Terminated)
}

fn stuck(machine: &Machine, a: Addr, e: EvalError) -> Outcome {
    let _ = machine;
    Outcome::Stuck { proc: a.to_string(), error: e.to_string() }
}

fn drive_random(machine: &mut Machine, cfg: &SimConfig) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut budget = Budget { left: cfg.max_steps };
    let unordered = machine.program.config.order == ChannelOrder::Unordered;
    let lossy = machine.program.config.reliability == ChannelReliability::Unreliable;
    // actions tried since the last progress that could not fire; when every
    // enabled action is in here the system is quiescent
    let mut failed: BTreeSet<Action> = BTreeSet::new();

    loop {
        if all_terminated(machine) {
            return Outcome::Terminated;
        }
        let actions = enabled_actions(machine);
        let fresh: Vec<Action> =
            actions.iter().copied().filter(|x| !failed.contains(x)).collect();
        if fresh.is_empty() {
            let timeouts: Vec<Addr> = machine
                .state
                .processes()
                .into_iter()
                .filter(|a| machine.status_of(*a) == ProcStatus::AtYield)
                .filter(|a| {
                    machine.state.queues.get(a).map(|q| q.is_empty()).unwrap_or(true)
                        && machine.at_timeout_await(*a)
                })
                .collect();
            if timeouts.is_empty() {
                return Outcome::Deadlock;
            }
            let a = timeouts[rng.gen_range(0..timeouts.len())];
            if let Err(e) = machine.fire_timeout(a) {
                return stuck(machine, a, e);
            }
            failed.clear();
            let (_, end) = advance_to_yield(machine, a, &mut budget);
            match end {
                AdvanceEnd::Done(LocalStatus::Blocked) => {
                    failed.insert(Action::Advance(a));
                }
                AdvanceEnd::Done(_) => {}
                AdvanceEnd::OutOfSteps => return Outcome::StepLimit,
                AdvanceEnd::Stuck(e) => return stuck(machine, a, e),
            }
            continue;
        }
        let action = fresh[rng.gen_range(0..fresh.len())];
        match action {
            Action::Advance(a) => {
                let (steps, end) = advance_to_yield(machine, a, &mut budget);
                if steps > 0 {
                    failed.clear();
                }
                match end {
                    AdvanceEnd::Done(LocalStatus::Blocked) => {
                        failed.insert(Action::Advance(a));
                    }
                    AdvanceEnd::Done(_) => {}
                    AdvanceEnd::OutOfSteps => return Outcome::StepLimit,
                    AdvanceEnd::Stuck(e) => return stuck(machine, a, e),
                }
            }
            Action::Handle(a) => {
                match machine.handle_message(a) {
                    Ok(true) => failed.clear(),
                    Ok(false) => unreachable!("Handle enabled on empty queue"),
                    Err(e) => return stuck(machine, a, e),
                }
                let (_, end) = advance_to_yield(machine, a, &mut budget);
                match end {
                    AdvanceEnd::Done(LocalStatus::Blocked) => {
                        failed.insert(Action::Advance(a));
                    }
                    AdvanceEnd::Done(_) => {}
                    AdvanceEnd::OutOfSteps => return Outcome::StepLimit,
                    AdvanceEnd::Stuck(e) => return stuck(machine, a, e),
                }
            }
            Action::Attempt(a) => match machine.attempt_await(a) {
                Ok(AwaitOutcome::Fired) => {
                    failed.clear();
                    let (_, end) = advance_to_yield(machine, a, &mut budget);
                    match end {
                        AdvanceEnd::Done(LocalStatus::Blocked) => {
                            failed.insert(Action::Advance(a));
                        }
                        AdvanceEnd::Done(_) => {}
                        AdvanceEnd::OutOfSteps => return Outcome::StepLimit,
                        AdvanceEnd::Stuck(e) => return stuck(machine, a, e),
                    }
                }
                Ok(AwaitOutcome::Blocked { .. }) => {
                    failed.insert(Action::Attempt(a));
                }
                Err(e) => return stuck(machine, a, e),
            },
            Action::Arrive(f, t) => {
                let len = machine.state.channels.get(&(f, t)).map(|q| q.len()).unwrap_or(0);
                debug_assert!(len > 0);
                let index = if unordered { rng.gen_range(0..len) } else { 0 };
                let deliver = !(lossy && rng.gen_bool(cfg.drop_prob));
                machine.arrive(f, t, index, deliver);
                failed.clear();
            }
        }
    }
}

fn drive_round_robin(machine: &mut Machine, cfg: &SimConfig) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut budget = Budget { left: cfg.max_steps };
    let unordered = machine.program.config.order == ChannelOrder::Unordered;
    let lossy = machine.program.config.reliability == ChannelReliability::Unreliable;

    loop {
        if all_terminated(machine) {
            return Outcome::Terminated;
        }
        let mut progressed = false;
        for a in machine.state.processes() {
            // a turn: keep the process moving while anything lets it move
            loop {
                match machine.status_of(a) {
                    ProcStatus::Terminated => break,
                    ProcStatus::Runnable => {
                        let (steps, end) = advance_to_yield(machine, a, &mut budget);
                        progressed |= steps > 0;
                        match end {
                            AdvanceEnd::Done(LocalStatus::Blocked) => break,
                            AdvanceEnd::Done(_) => {}
                            AdvanceEnd::OutOfSteps => return Outcome::StepLimit,
                            AdvanceEnd::Stuck(e) => return stuck(machine, a, e),
                        }
                    }
                    ProcStatus::AtYield => {
                        // pull in everything already sent to us
                        let inbound: Vec<(Addr, Addr)> = machine
                            .state
                            .channels
                            .keys()
                            .filter(|(_, t)| *t == a)
                            .copied()
                            .collect();
                        for (f, t) in inbound {
                            while let Some(len) =
                                machine.state.channels.get(&(f, t)).map(|q| q.len())
                            {
                                let index = if unordered { rng.gen_range(0..len) } else { 0 };
                                let deliver = !(lossy && rng.gen_bool(cfg.drop_prob));
                                machine.arrive(f, t, index, deliver);
                                progressed = true;
                            }
                        }
                        let queued =
                            machine.state.queues.get(&a).map(|q| !q.is_empty()).unwrap_or(false);
                        if queued {
                            match machine.handle_message(a) {
                                Ok(_) => progressed = true,
                                Err(e) => return stuck(machine, a, e),
                            }
                            continue;
                        }
                        match machine.attempt_await(a) {
                            Ok(AwaitOutcome::Fired) => progressed = true,
                            Ok(AwaitOutcome::Blocked { .. }) => break,
                            Err(e) => return stuck(machine, a, e),
                        }
                    }
                }
            }
        }
        if !progressed {
            let timeouts: Vec<Addr> = machine
                .state
                .processes()
                .into_iter()
                .filter(|a| machine.status_of(*a) == ProcStatus::AtYield)
                .filter(|a| machine.at_timeout_await(*a))
                .collect();
            if timeouts.is_empty() {
                return Outcome::Deadlock;
            }
            for a in timeouts {
                if let Err(e) = machine.fire_timeout(a) {
                    return stuck(machine, a, e);
                }
            }
        }
    }
}

// ---- property checkers ----

/// What the critical-section marks of one run show.
#[derive(Debug, Clone, Serialize)]
pub struct MutexReport {
    pub safety_ok: bool,
    /// First pair of processes observed inside the critical section together.
    pub overlap: Option<(String, String)>,
    pub total_enters: u64,
    pub enters_by_proc: BTreeMap<String, u64>,
    pub balanced: bool,
}

/// Scans mark events for `('cs_enter', ..)` / `('cs_exit', ..)` tuples and
/// checks that no two processes are ever inside at once.
pub fn check_mutex(events: &[Event], atoms: &AtomTable) -> MutexReport {
    use crate::runtime::value::Value;
    let mut inside: BTreeSet<Addr> = BTreeSet::new();
    let mut overlap = None;
    let mut total = 0u64;
    let mut by_proc: BTreeMap<String, u64> = BTreeMap::new();
    let mut balanced = true;
    for ev in events {
        let Event::Mark { proc, value } = ev else { continue };
        let tag = match value {
            Value::Tuple(vs) => match vs.first() {
                Some(Value::Int(n)) => atoms.name_of(n),
                _ => None,
            },
            _ => None,
        };
        match tag {
            Some("cs_enter") => {
                if let Some(other) = inside.iter().next() {
                    overlap.get_or_insert((other.to_string(), proc.to_string()));
                }
                inside.insert(*proc);
                total += 1;
                *by_proc.entry(proc.to_string()).or_insert(0) += 1;
            }
            Some("cs_exit") => {
                if !inside.remove(proc) {
                    balanced = false;
                }
            }
            _ => {}
        }
    }
    balanced &= inside.is_empty();
    MutexReport {
        safety_ok: overlap.is_none(),
        overlap,
        total_enters: total,
        enters_by_proc: by_proc,
        balanced,
    }
}

/// Message-complexity check: every critical-section entry should cost one
/// request, one acknowledgement, and one release per peer.
pub fn check_message_complexity(
    metrics: &Metrics,
    total_enters: u64,
    peers: u64,
) -> Result<(), String> {
    let expect = total_enters * peers;
    for tag in ["request", "ack", "release"] {
        let got = metrics.sends_by_tag.get(tag).copied().unwrap_or(0);
        if got != expect {
            return Err(format!(
                "expected {expect} `{tag}` sends for {total_enters} entries with {peers} peers, saw {got}"
            ));
        }
    }
    let total: u64 = ["request", "ack", "release"]
        .iter()
        .map(|t| metrics.sends_by_tag.get(*t).copied().unwrap_or(0))
        .sum();
    if total != 3 * expect {
        return Err(format!("expected {} total sends, saw {total}", 3 * expect));
    }
    Ok(())
}
