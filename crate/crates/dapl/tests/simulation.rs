//! End-to-end simulation runs of the mutual-exclusion program and smaller
//! programs exercising scheduler outcomes.

use dapl::runtime::value::AtomTable;
use dapl::sim::{check_message_complexity, check_mutex, run, Outcome, Policy, SimConfig};

fn corpus(name: &str) -> String {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {path}: {e}"))
}

fn compile(src: &str) -> dapl::ast::Program {
    dapl::compile(src).unwrap_or_else(|ds| panic!("compile: {ds:?}"))
}

#[test]
fn trivial_main_terminates() {
    let p = compile("def main():\n  self.x = 1 + 2\nend\n");
    let r = run(&p, &SimConfig::default());
    assert_eq!(r.outcome, Outcome::Terminated);
    assert_eq!(r.metrics.unicast_sends, 0);
}

#[test]
fn field_read_of_missing_object_gets_stuck() {
    let p = compile("def main():\n  self.x = 1\n  self.y = x.f\nend\n");
    let r = run(&p, &SimConfig::default());
    assert!(matches!(r.outcome, Outcome::Stuck { .. }), "{:?}", r.outcome);
}

#[test]
fn unsatisfiable_await_deadlocks() {
    let p = compile("def main():\n  await 1 is 2\nend\n");
    let r = run(&p, &SimConfig::default());
    assert_eq!(r.outcome, Outcome::Deadlock);
}

#[test]
fn await_timeout_branch_unblocks() {
    let p = compile(
        "def main():\n  await 1 is 2:\n    skip\n  timeout 5:\n    self.x = 7\n  end\nend\n",
    );
    let r = run(&p, &SimConfig::default());
    assert_eq!(r.outcome, Outcome::Terminated);
}

fn assert_mutex_run(p: &dapl::ast::Program, cfg: &SimConfig, n: u64, requests: u64) {
    let atoms = AtomTable::new(&p.atoms);
    let r = run(p, cfg);
    assert_eq!(r.outcome, Outcome::Terminated, "seed {}", cfg.seed);
    let report = check_mutex(&r.events, &atoms);
    assert!(report.safety_ok, "overlap {:?} at seed {}", report.overlap, cfg.seed);
    assert!(report.balanced);
    assert_eq!(report.total_enters, n * requests, "seed {}", cfg.seed);
    for (_, count) in &report.enters_by_proc {
        assert_eq!(*count, requests);
    }
    check_message_complexity(&r.metrics, report.total_enters, n - 1).unwrap();
}

#[test]
fn mutex_round_robin_is_safe_and_fair() {
    let p = compile(&corpus("lamport_orig.dap"));
    let cfg = SimConfig { policy: Policy::RoundRobin, ..SimConfig::default() };
    assert_mutex_run(&p, &cfg, 3, 3);
}

#[test]
fn mutex_random_schedules_are_safe_and_fair() {
    let p = compile(&corpus("lamport_orig.dap"));
    for seed in 0..20 {
        let cfg = SimConfig { seed, policy: Policy::Random, ..SimConfig::default() };
        assert_mutex_run(&p, &cfg, 3, 3);
    }
}
