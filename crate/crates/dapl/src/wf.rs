//! Well-formedness checks run after parsing, before any transformation.
//!
//! wf1: every class extends Process or a previously declared class, class
//!      names are unique and do not shadow predefined classes, and method
//!      names are unique within a class.
//! wf2: the history sequences `received` and `sent`, the yield-point label
//!      namespace, and method parameter lists contain no duplicates or
//!      reserved names; `self` is never assigned or bound.
//! wf3: `receive` definitions name only labels that exist in the class's
//!      methods, and label markers are unique within a method.

use std::collections::BTreeSet;

use crate::ast::*;
use crate::diag::Diagnostic;

const RESERVED_FIELDS: [&str; 3] = ["self", "received", "sent"];

pub fn check(p: &Program) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    check_classes(p, &mut diags);
    check_names(p, &mut diags);
    check_labels(p, &mut diags);
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn check_classes(p: &Program, diags: &mut Vec<Diagnostic>) {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for c in &p.classes {
        if is_predefined_class(&c.name) {
            diags.push(Diagnostic::new(
                c.pos,
                "wf1",
                format!("class `{}` shadows a predefined class", c.name),
            ));
        }
        if !seen.insert(&c.name) {
            diags.push(Diagnostic::new(
                c.pos,
                "wf1",
                format!("duplicate class `{}`", c.name),
            ));
        }
        let super_ok = c.superclass == PROCESS_CLASS
            || p.classes
                .iter()
                .take_while(|d| d.name != c.name)
                .any(|d| d.name == c.superclass);
        if !super_ok {
            diags.push(Diagnostic::new(
                c.pos,
                "wf1",
                format!(
                    "class `{}` extends unknown class `{}`",
                    c.name, c.superclass
                ),
            ));
        }
        let mut methods: BTreeSet<&str> = BTreeSet::new();
        for m in &c.methods {
            if !methods.insert(&m.name) {
                diags.push(Diagnostic::new(
                    m.pos,
                    "wf1",
                    format!("duplicate method `{}` in class `{}`", m.name, c.name),
                ));
            }
        }
    }
}

fn check_method_names(class: &str, m: &Method, diags: &mut Vec<Diagnostic>) {
    let mut params: BTreeSet<&str> = BTreeSet::new();
    for param in &m.params {
        if RESERVED_FIELDS.contains(&param.as_str()) {
            diags.push(Diagnostic::new(
                m.pos,
                "wf2",
                format!("parameter `{param}` of `{class}.{}` is reserved", m.name),
            ));
        }
        if !params.insert(param) {
            diags.push(Diagnostic::new(
                m.pos,
                "wf2",
                format!("duplicate parameter `{param}` in `{class}.{}`", m.name),
            ));
        }
    }
    if let MethodBody::Stmt(body) = &m.body {
        check_assignments(body, m.pos, diags);
    }
}

fn check_names(p: &Program, diags: &mut Vec<Diagnostic>) {
    for c in &p.classes {
        for m in &c.methods {
            check_method_names(&c.name, m, diags);
        }
        for r in &c.receives {
            for arm in &r.arms {
                for b in arm.pattern.binders() {
                    if b == "self" {
                        diags.push(Diagnostic::new(
                            r.pos,
                            "wf2",
                            "receive pattern binds `self`",
                        ));
                    }
                }
            }
            check_assignments(&r.body, r.pos, diags);
        }
    }
    check_method_names("<top>", &p.main, diags);
}

fn check_assignments(s: &Stmt, mpos: crate::diag::Pos, diags: &mut Vec<Diagnostic>) {
    let assigned = |lv: &LValue, diags: &mut Vec<Diagnostic>| {
        let bad = match lv {
            LValue::Var(n) => n == "self",
            LValue::Field(_, f) => RESERVED_FIELDS[1..].contains(&f.as_str()),
        };
        if bad {
            diags.push(Diagnostic::new(
                mpos,
                "wf2",
                "assignment to a reserved name (`self`, `received`, `sent`)",
            ));
        }
    };
    match &s.kind {
        StmtKind::Assign(lv, _)
        | StmtKind::New(lv, _)
        | StmtKind::NewMany(lv, _, _)
        | StmtKind::Compr(lv, _) => assigned(lv, diags),
        StmtKind::Seq(a, b) => {
            check_assignments(a, mpos, diags);
            check_assignments(b, mpos, diags);
        }
        StmtKind::If(_, a, b) => {
            check_assignments(a, mpos, diags);
            check_assignments(b, mpos, diags);
        }
        StmtKind::For(pat, _, body) => {
            if pat.binders().iter().any(|b| b == "self") {
                diags.push(Diagnostic::new(mpos, "wf2", "loop pattern binds `self`"));
            }
            check_assignments(body, mpos, diags);
        }
        StmtKind::ForItems(_, _, body) | StmtKind::While(_, body) => {
            check_assignments(body, mpos, diags);
        }
        StmtKind::Await(a) => {
            for (_, body) in &a.clauses {
                check_assignments(body, mpos, diags);
            }
            if let Some((_, body)) = &a.timeout {
                check_assignments(body, mpos, diags);
            }
        }
        StmtKind::Labeled(_, inner) => check_assignments(inner, mpos, diags),
        _ => {}
    }
}

fn check_labels(p: &Program, diags: &mut Vec<Diagnostic>) {
    for c in &p.classes {
        let mut class_labels: BTreeSet<String> = BTreeSet::new();
        for m in &c.methods {
            let mut method_labels: BTreeSet<String> = BTreeSet::new();
            if let MethodBody::Stmt(body) = &m.body {
                collect_labels(body, &mut |label, pos| {
                    if !method_labels.insert(label.to_owned()) {
                        diags.push(Diagnostic::new(
                            pos,
                            "wf3",
                            format!("duplicate label `{label}` in `{}.{}`", c.name, m.name),
                        ));
                    }
                    class_labels.insert(label.to_owned());
                });
            }
        }
        for r in &c.receives {
            if let Some(labels) = &r.labels {
                for l in labels {
                    if !class_labels.contains(l) {
                        diags.push(Diagnostic::new(
                            r.pos,
                            "wf3",
                            format!("receive names unknown label `{l}` in class `{}`", c.name),
                        ));
                    }
                }
            }
        }
    }
}

fn collect_labels(s: &Stmt, f: &mut impl FnMut(&str, crate::diag::Pos)) {
    match &s.kind {
        StmtKind::Seq(a, b) => {
            collect_labels(a, f);
            collect_labels(b, f);
        }
        StmtKind::If(_, a, b) => {
            collect_labels(a, f);
            collect_labels(b, f);
        }
        StmtKind::For(_, _, body)
        | StmtKind::ForItems(_, _, body)
        | StmtKind::While(_, body) => collect_labels(body, f),
        StmtKind::Await(a) => {
            if !a.label.is_empty() {
                f(&a.label, s.pos);
            }
            for (_, body) in &a.clauses {
                collect_labels(body, f);
            }
            if let Some((_, body)) = &a.timeout {
                collect_labels(body, f);
            }
        }
        StmtKind::Labeled(l, inner) => {
            f(l, s.pos);
            collect_labels(inner, f);
        }
        _ => {}
    }
}
