use dapl::{parser, pretty, wf};

fn corpus(name: &str) -> String {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {path}: {e}"))
}

fn roundtrip(src: &str) -> String {
    let p1 = parser::parse(src).unwrap_or_else(|e| panic!("parse failed: {e}"));
    let printed = pretty::program(&p1);
    let p2 = parser::parse(&printed)
        .unwrap_or_else(|e| panic!("reparse failed: {e}\n--- printed ---\n{printed}"));
    let printed2 = pretty::program(&p2);
    assert_eq!(printed, printed2, "printer not stable after one round");
    printed
}

#[test]
fn mutex_program_parses_and_roundtrips() {
    let src = corpus("lamport_orig.dap");
    let p = parser::parse(&src).expect("parse");
    wf::check(&p).expect("well-formed");
    assert_eq!(p.atoms, ["ack", "cs_enter", "cs_exit", "done", "release", "request"]);
    assert_eq!(p.classes.len(), 1);
    assert_eq!(p.classes[0].methods.len(), 3);
    assert_eq!(p.classes[0].receives.len(), 2);
    roundtrip(&src);
}

#[test]
fn wf_rejects_duplicate_class() {
    let src = "configuration fifo reliable\nclass A extends Process: end\nclass A extends Process: end\ndef main() skip";
    let p = parser::parse(src).expect("parse");
    let errs = wf::check(&p).unwrap_err();
    assert!(errs.iter().any(|d| d.rule == "wf1"), "{errs:?}");
}

#[test]
fn wf_rejects_unknown_receive_label() {
    let src = "configuration fifo reliable\nclass A extends Process:\n  def run() skip\n  receive ('m', x) at nowhere: skip end\nend\ndef main() skip";
    let p = parser::parse(src).expect("parse");
    let errs = wf::check(&p).unwrap_err();
    assert!(errs.iter().any(|d| d.rule == "wf3"), "{errs:?}");
}

#[test]
fn wf_rejects_assignment_to_history() {
    let src = "configuration fifo reliable\nclass A extends Process:\n  def run(): self.received = 1 end\nend\ndef main() skip";
    let p = parser::parse(src).expect("parse");
    let errs = wf::check(&p).unwrap_err();
    assert!(errs.iter().any(|d| d.rule == "wf2"), "{errs:?}");
}

#[test]
fn parse_error_reports_position() {
    let err = parser::parse("configuration fifo reliable\ndef main() send 1").unwrap_err();
    assert_eq!(err.rule, "parse");
    assert_eq!(err.line, 2);
}
