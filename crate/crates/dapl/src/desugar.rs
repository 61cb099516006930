//! Lowering from surface syntax to the core statement language.
//!
//! Statement-level sugar is eliminated: labels move onto `await true: skip`
//! markers, bare names resolve to `self` fields, multi-object creation
//! becomes an allocation loop, `and`/`each`/`implies` and aggregates and
//! comprehensions and tuple-pattern iterators are rewritten away, and
//! wildcards become fresh (unused) binders.
//!
//! `await` conditions are the one exception: they stay in query form
//! (quantifications, aggregates, comprehensions, `and`) because both the
//! query-to-aggregate conversion and the blocking evaluator consume that
//! form directly. Statements nested inside await clause bodies are lowered
//! like any other statement.

use std::collections::BTreeSet;

use crate::ast::*;
use crate::diag::{Diagnostic, Pos};

/// Full lowering pipeline, in place. Diagnostics abort the pipeline.
pub fn desugar(p: &mut Program) -> Result<(), Vec<Diagnostic>> {
    let mut fresh = Fresh::seeded_from(p);
    normalize_labels(p, &mut fresh);
    eliminate_wildcards(p, &mut fresh);
    resolve_names(p, &mut fresh);
    check_remote_calls(p)?;
    lower_multi_new(p, &mut fresh);
    lower_statements(p, &mut fresh);
    Ok(())
}

/// Re-run the statement-level lowering after a transformation has
/// introduced new comprehensions, aggregates, or boolean sugar. Inputs are
/// expected to already be name-resolved with explicit `self`.
pub fn desugar_statements(p: &mut Program) {
    let mut fresh = Fresh::seeded_from(p);
    lower_statements(p, &mut fresh);
}

fn lower_statements(p: &mut Program, fresh: &mut Fresh) {
    // passes feed each other (comprehension lowering emits tuple-pattern
    // loops, tuple elimination emits fresh comparisons), so iterate to a
    // fixed point; each round must strictly shrink the sugar count
    let mut rounds = 0;
    loop {
        let before = sugar_count(p);
        if before == 0 {
            break;
        }
        for_each_body(p, &mut |s| {
            let mut owned = std::mem::replace(s, Stmt::skip());
            owned = lower_stmt(owned, fresh);
            *s = owned;
        });
        let after = sugar_count(p);
        assert!(after < before, "lowering made no progress ({before} -> {after})");
        rounds += 1;
        assert!(rounds < 64, "lowering did not converge");
    }
}

// ---- label normalization ----

/// Labels live only on `await` afterwards: a label on any other statement
/// becomes a labeled `await true: skip` in front of it, and unlabeled
/// awaits get fresh labels that are appended to every explicit `at` clause
/// of the class.
fn normalize_labels(p: &mut Program, fresh: &mut Fresh) {
    fn on_stmt(s: &mut Stmt, new_labels: &mut Vec<Name>, fresh: &mut Fresh) {
        // rewrite children first so a Labeled(await ..) nests correctly
        match &mut s.kind {
            StmtKind::Seq(a, b) => {
                on_stmt(a, new_labels, fresh);
                on_stmt(b, new_labels, fresh);
            }
            StmtKind::If(_, a, b) => {
                on_stmt(a, new_labels, fresh);
                on_stmt(b, new_labels, fresh);
            }
            StmtKind::For(_, _, body)
            | StmtKind::ForItems(_, _, body)
            | StmtKind::While(_, body) => on_stmt(body, new_labels, fresh),
            StmtKind::Await(a) => {
                if a.label.is_empty() {
                    a.label = fresh.name("l");
                    new_labels.push(a.label.clone());
                }
                for (_, body) in &mut a.clauses {
                    on_stmt(body, new_labels, fresh);
                }
                if let Some((_, body)) = &mut a.timeout {
                    on_stmt(body, new_labels, fresh);
                }
            }
            StmtKind::Labeled(..) => {
                let pos = s.pos;
                let StmtKind::Labeled(label, inner) =
                    std::mem::replace(&mut s.kind, StmtKind::Skip)
                else {
                    unreachable!()
                };
                let mut inner = *inner;
                on_stmt(&mut inner, new_labels, fresh);
                let marker = Stmt::at(
                    pos,
                    StmtKind::Await(Box::new(AwaitStmt {
                        label,
                        clauses: vec![(Expr::bool(true), Stmt::skip())],
                        timeout: None,
                    })),
                );
                *s = Stmt::at(pos, StmtKind::Seq(Box::new(marker), Box::new(inner)));
            }
            _ => {}
        }
    }
    for class in &mut p.classes {
        let mut new_labels = Vec::new();
        for m in &mut class.methods {
            if let MethodBody::Stmt(body) = &mut m.body {
                on_stmt(body, &mut new_labels, fresh);
            }
        }
        for r in &mut class.receives {
            on_stmt(&mut r.body, &mut new_labels, fresh);
        }
        if !new_labels.is_empty() {
            for r in &mut class.receives {
                if let Some(labels) = &mut r.labels {
                    labels.extend(new_labels.iter().cloned());
                }
            }
        }
    }
    if let MethodBody::Stmt(body) = &mut p.main.body {
        let mut ignored = Vec::new();
        on_stmt(body, &mut ignored, fresh);
    }
}

// ---- wildcard elimination ----

fn eliminate_wildcards(p: &mut Program, fresh: &mut Fresh) {
    fn on_pattern(pat: &mut Pattern, fresh: &mut Fresh) {
        match pat {
            Pattern::Wildcard => *pat = Pattern::Var(fresh.name("w")),
            Pattern::Tuple(ps) => ps.iter_mut().for_each(|q| on_pattern(q, fresh)),
            _ => {}
        }
    }
    fn on_expr(e: &mut Expr, fresh: &mut Fresh) {
        walk_expr_mut(e, &mut |x| {
            match x {
                Expr::Quant(_, iters, _) => {
                    for it in iters {
                        on_pattern(&mut it.pattern, fresh);
                    }
                }
                Expr::ComprExpr(c) => {
                    for it in &mut c.iters {
                        on_pattern(&mut it.pattern, fresh);
                    }
                }
                _ => {}
            }
        });
    }
    fn on_stmt(s: &mut Stmt, fresh: &mut Fresh) {
        match &mut s.kind {
            StmtKind::For(pat, _, _) => on_pattern(pat, fresh),
            StmtKind::Compr(_, c) => {
                for it in &mut c.iters {
                    on_pattern(&mut it.pattern, fresh);
                }
            }
            _ => {}
        }
        for e in stmt_exprs_mut(s) {
            on_expr(e, fresh);
        }
        for child in stmt_children_mut(s) {
            on_stmt(child, fresh);
        }
    }
    for_each_receive(p, &mut |r| {
        for arm in &mut r.arms {
            on_pattern(&mut arm.pattern, fresh);
            if let Some(f) = &mut arm.from {
                on_pattern(f, fresh);
            }
        }
    });
    for_each_body(p, &mut |s| on_stmt(s, fresh));
}

// ---- name resolution (implicit self) ----

/// Any name that is not a parameter or pattern binder in scope denotes a
/// field of `self`. An `=x` pattern where `x` is a field cannot stay a
/// pattern (patterns name locals only), so it becomes a fresh binder plus
/// an equality test against the field, spliced into the nearest condition.
/// Receive arm patterns are exempt: the message matcher resolves their
/// `=x` names against the heap itself.
fn resolve_names(p: &mut Program, fresh: &mut Fresh) {
    type Env = BTreeSet<Name>;

    fn resolve_pattern(pat: &mut Pattern, env: &Env, fresh: &mut Fresh, eqs: &mut Vec<Expr>) {
        match pat {
            Pattern::Bound(x) if !env.contains(x) => {
                let y = fresh.name("b");
                eqs.push(Expr::is(Expr::Var(y.clone()), Expr::self_field(x)));
                *pat = Pattern::Var(y);
            }
            Pattern::Tuple(ps) => {
                for q in ps {
                    resolve_pattern(q, env, fresh, eqs);
                }
            }
            _ => {}
        }
    }

    fn conjoin(eqs: Vec<Expr>) -> Option<Expr> {
        eqs.into_iter().reduce(|a, b| Expr::And(Box::new(a), Box::new(b)))
    }

    fn on_expr(e: &mut Expr, env: &Env, fresh: &mut Fresh) {
        match e {
            Expr::Var(n) => {
                if n != "self" && !env.contains(n) {
                    let name = n.clone();
                    *e = Expr::self_field(&name);
                }
            }
            Expr::Quant(kind, iters, body) => {
                let mut inner = env.clone();
                let mut eqs = Vec::new();
                for it in iters.iter_mut() {
                    on_expr(&mut it.domain, &inner, fresh);
                    resolve_pattern(&mut it.pattern, &inner, fresh, &mut eqs);
                    inner.extend(it.pattern.binders());
                }
                on_expr(body, &inner, fresh);
                if let Some(eq) = conjoin(eqs) {
                    let old = std::mem::replace(body.as_mut(), Expr::Undefined);
                    // matching elements must satisfy the body; non-matching
                    // ones are outside the iteration
                    **body = match kind {
                        QuantKind::Some => Expr::And(Box::new(eq), Box::new(old)),
                        QuantKind::Each => Expr::Implies(Box::new(eq), Box::new(old)),
                    };
                }
            }
            Expr::ComprExpr(c) => on_compr(c, env, fresh),
            _ => {
                for child in expr_children_mut(e) {
                    on_expr(child, env, fresh);
                }
            }
        }
    }

    fn on_compr(c: &mut Comprehension, env: &Env, fresh: &mut Fresh) {
        let mut inner = env.clone();
        let mut eqs = Vec::new();
        for it in &mut c.iters {
            on_expr(&mut it.domain, &inner, fresh);
            resolve_pattern(&mut it.pattern, &inner, fresh, &mut eqs);
            inner.extend(it.pattern.binders());
        }
        on_expr(&mut c.head, &inner, fresh);
        on_expr(&mut c.cond, &inner, fresh);
        if let Some(eq) = conjoin(eqs) {
            let old = std::mem::replace(&mut c.cond, Expr::Undefined);
            c.cond = and2(eq, old);
        }
    }

    fn on_stmt(s: &mut Stmt, env: &Env, fresh: &mut Fresh) {
        match &mut s.kind {
            StmtKind::Assign(lv, e) => {
                on_lvalue(lv, env, fresh);
                on_expr(e, env, fresh);
            }
            StmtKind::New(lv, _) => on_lvalue(lv, env, fresh),
            StmtKind::NewMany(lv, e, _) => {
                on_lvalue(lv, env, fresh);
                on_expr(e, env, fresh);
            }
            StmtKind::Compr(lv, c) => {
                on_lvalue(lv, env, fresh);
                on_compr(c, env, fresh);
            }
            StmtKind::Seq(a, b) => {
                on_stmt(a, env, fresh);
                on_stmt(b, env, fresh);
            }
            StmtKind::If(e, a, b) => {
                on_expr(e, env, fresh);
                on_stmt(a, env, fresh);
                on_stmt(b, env, fresh);
            }
            StmtKind::For(pat, domain, body) => {
                on_expr(domain, env, fresh);
                let mut eqs = Vec::new();
                resolve_pattern(pat, env, fresh, &mut eqs);
                let mut inner = env.clone();
                inner.extend(pat.binders());
                on_stmt(body, &inner, fresh);
                if let Some(eq) = conjoin(eqs) {
                    let pos = s.pos;
                    let old = std::mem::replace(body.as_mut(), Stmt::skip());
                    **body = Stmt::at(
                        pos,
                        StmtKind::If(eq, Box::new(old), Box::new(Stmt::skip())),
                    );
                }
            }
            StmtKind::ForItems(name, items, body) => {
                for e in items {
                    on_expr(e, env, fresh);
                }
                let mut inner = env.clone();
                inner.insert(name.clone());
                on_stmt(body, &inner, fresh);
            }
            StmtKind::While(e, body) => {
                on_expr(e, env, fresh);
                on_stmt(body, env, fresh);
            }
            StmtKind::Call(target, _, args) => {
                on_expr(target, env, fresh);
                for a in args {
                    on_expr(a, env, fresh);
                }
            }
            StmtKind::Send(m, d) => {
                on_expr(m, env, fresh);
                on_expr(d, env, fresh);
            }
            StmtKind::Await(a) => {
                for (cond, body) in &mut a.clauses {
                    on_expr(cond, env, fresh);
                    on_stmt(body, env, fresh);
                }
                if let Some((period, body)) = &mut a.timeout {
                    on_expr(period, env, fresh);
                    on_stmt(body, env, fresh);
                }
            }
            StmtKind::Labeled(_, inner) => on_stmt(inner, env, fresh),
            StmtKind::Skip => {}
        }
    }

    fn on_lvalue(lv: &mut LValue, env: &Env, fresh: &mut Fresh) {
        match lv {
            LValue::Var(n) => {
                if !env.contains(n) {
                    *lv = LValue::Field(Expr::self_var(), n.clone());
                }
            }
            LValue::Field(obj, _) => on_expr(obj, env, fresh),
        }
    }

    fn on_method(m: &mut Method, fresh: &mut Fresh) {
        let env: Env = m.params.iter().cloned().collect();
        match &mut m.body {
            MethodBody::Stmt(s) => on_stmt(s, &env, fresh),
            MethodBody::Expr(e) => on_expr(e, &env, fresh),
        }
    }
    for class in &mut p.classes {
        for m in &mut class.methods {
            on_method(m, fresh);
        }
        for r in &mut class.receives {
            let mut env = Env::new();
            for arm in &r.arms {
                env.extend(arm.pattern.binders());
                if let Some(f) = &arm.from {
                    env.extend(f.binders());
                }
            }
            on_stmt(&mut r.body, &env, fresh);
        }
    }
    on_method(&mut p.main, fresh);
}

// ---- remote call checking ----

/// Methods of another process may only be invoked before that process is
/// started, which in practice means inside the top-level method before the
/// first `start`. Calls on `self` and collection mutations are always
/// local. Anything else would need a remoting translation this compiler
/// does not perform, so it is rejected.
const COLLECTION_METHODS: [&str; 8] =
    ["add", "del", "contains", "size", "length", "min", "max", "is_empty"];

fn check_remote_calls(p: &Program) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut on_call = |target: &Expr, m: &str, pos: Pos, in_main: bool, started: bool| {
        if COLLECTION_METHODS.contains(&m) || m == "mark" {
            return;
        }
        if matches!(target, Expr::Var(n) if n == "self") {
            return;
        }
        if m == "start" {
            return;
        }
        if in_main && !started {
            return;
        }
        diags.push(Diagnostic::new(
            pos,
            "desugar-rmi",
            format!("call of `{m}` on another process after start is not supported"),
        ));
    };
    fn walk(s: &Stmt, in_main: bool, started: &mut bool, f: &mut impl FnMut(&Expr, &str, Pos, bool, bool)) {
        match &s.kind {
            StmtKind::Call(target, m, _) => {
                f(target, m, s.pos, in_main, *started);
                if m == "start" {
                    *started = true;
                }
            }
            StmtKind::Seq(a, b) => {
                walk(a, in_main, started, f);
                walk(b, in_main, started, f);
            }
            StmtKind::If(_, a, b) => {
                walk(a, in_main, started, f);
                walk(b, in_main, started, f);
            }
            StmtKind::For(_, _, body)
            | StmtKind::ForItems(_, _, body)
            | StmtKind::While(_, body)
            | StmtKind::Labeled(_, body) => walk(body, in_main, started, f),
            StmtKind::Await(a) => {
                for (_, body) in &a.clauses {
                    walk(body, in_main, started, f);
                }
                if let Some((_, body)) = &a.timeout {
                    walk(body, in_main, started, f);
                }
            }
            _ => {}
        }
    }
    for class in &p.classes {
        for m in &class.methods {
            if let MethodBody::Stmt(body) = &m.body {
                let mut started = true;
                walk(body, false, &mut started, &mut on_call);
            }
        }
        for r in &class.receives {
            let mut started = true;
            walk(&r.body, false, &mut started, &mut on_call);
        }
    }
    if let MethodBody::Stmt(body) = &p.main.body {
        let mut started = false;
        walk(body, true, &mut started, &mut on_call);
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

// ---- multi-object creation ----

/// `x = e new C` becomes a set allocation plus a countdown loop that adds
/// `e` fresh instances.
fn lower_multi_new(p: &mut Program, fresh: &mut Fresh) {
    for_each_body(p, &mut |top| {
        rewrite_stmts(top, &mut |s| {
            if !matches!(s.kind, StmtKind::NewMany(..)) {
                return None;
            }
            let pos = s.pos;
            let StmtKind::NewMany(lv, count, class) =
                std::mem::replace(&mut s.kind, StmtKind::Skip)
            else {
                unreachable!()
            };
            let counter = fresh.name("i");
            let item = fresh.name("p");
            let counter_lv = LValue::Field(Expr::self_var(), counter.clone());
            let item_lv = LValue::Field(Expr::self_var(), item.clone());
            let body = Stmt::seq_all(vec![
                Stmt::at(pos, StmtKind::New(item_lv, class)),
                Stmt::at(
                    pos,
                    StmtKind::Call(
                        lvalue_expr(&lv),
                        "add".into(),
                        vec![Expr::self_field(&item)],
                    ),
                ),
                Stmt::at(
                    pos,
                    StmtKind::Assign(
                        counter_lv.clone(),
                        Expr::bin(
                            BinOp::Minus,
                            Expr::self_field(&counter),
                            Expr::int(1),
                        ),
                    ),
                ),
            ]);
            Some(Stmt::seq_all(vec![
                Stmt::at(pos, StmtKind::New(lv, SET_CLASS.into())),
                Stmt::at(pos, StmtKind::Assign(counter_lv, count)),
                Stmt::at(
                    pos,
                    StmtKind::While(
                        Expr::bin(BinOp::Gt, Expr::self_field(&counter), Expr::int(0)),
                        Box::new(body),
                    ),
                ),
            ]))
        });
    });
}

fn lvalue_expr(lv: &LValue) -> Expr {
    match lv {
        LValue::Var(n) => Expr::Var(n.clone()),
        LValue::Field(obj, f) => Expr::Field(Box::new(obj.clone()), f.clone()),
    }
}

// ---- the statement-level sugar fixpoint ----

fn lower_stmt(s: Stmt, fresh: &mut Fresh) -> Stmt {
    let pos = s.pos;
    let kind = match s.kind {
        StmtKind::Seq(a, b) => StmtKind::Seq(
            Box::new(lower_stmt(*a, fresh)),
            Box::new(lower_stmt(*b, fresh)),
        ),
        StmtKind::Labeled(l, inner) => {
            StmtKind::Labeled(l, Box::new(lower_stmt(*inner, fresh)))
        }
        StmtKind::If(mut cond, a, b) => {
            lower_bool(&mut cond);
            let mut pre = Vec::new();
            hoist_queries(&mut cond, &mut pre, pos, fresh);
            let out = StmtKind::If(
                cond,
                Box::new(lower_stmt(*a, fresh)),
                Box::new(lower_stmt(*b, fresh)),
            );
            return with_pre(pre, Stmt::at(pos, out), fresh);
        }
        StmtKind::While(mut cond, body) => {
            lower_bool(&mut cond);
            let mut pre = Vec::new();
            hoist_queries(&mut cond, &mut pre, pos, fresh);
            let body = lower_stmt(*body, fresh);
            if pre.is_empty() {
                StmtKind::While(cond, Box::new(body))
            } else {
                // recompute hoisted values before each re-test
                let recompute = Stmt::seq_all(pre.clone());
                let looped = Stmt::at(
                    pos,
                    StmtKind::While(cond, Box::new(Stmt::seq(body, recompute))),
                );
                return with_pre(pre, looped, fresh);
            }
        }
        StmtKind::For(pat, mut domain, body) => {
            let mut pre = Vec::new();
            hoist_queries(&mut domain, &mut pre, pos, fresh);
            let body = lower_stmt(*body, fresh);
            let lowered = lower_for(pos, pat, domain, body, fresh);
            return with_pre(pre, lowered, fresh);
        }
        StmtKind::ForItems(name, items, body) => {
            StmtKind::ForItems(name, items, Box::new(lower_stmt(*body, fresh)))
        }
        StmtKind::Assign(lv, mut e) => {
            lower_bool(&mut e);
            let mut pre = Vec::new();
            hoist_queries(&mut e, &mut pre, pos, fresh);
            return with_pre(pre, Stmt::at(pos, StmtKind::Assign(lv, e)), fresh);
        }
        StmtKind::Compr(lv, c) => {
            return lower_comprehension(pos, lv, c, fresh);
        }
        StmtKind::Call(target, m, mut args) => {
            let mut pre = Vec::new();
            let mut target = target;
            hoist_queries(&mut target, &mut pre, pos, fresh);
            for a in &mut args {
                lower_bool(a);
                hoist_queries(a, &mut pre, pos, fresh);
            }
            return with_pre(pre, Stmt::at(pos, StmtKind::Call(target, m, args)), fresh);
        }
        StmtKind::Send(mut msg, mut dest) => {
            let mut pre = Vec::new();
            hoist_queries(&mut msg, &mut pre, pos, fresh);
            hoist_queries(&mut dest, &mut pre, pos, fresh);
            return with_pre(pre, Stmt::at(pos, StmtKind::Send(msg, dest)), fresh);
        }
        StmtKind::Await(mut a) => {
            // conditions stay in query form; only clause bodies are lowered
            for (_, body) in &mut a.clauses {
                let owned = std::mem::replace(body, Stmt::skip());
                *body = lower_stmt(owned, fresh);
            }
            if let Some((_, body)) = &mut a.timeout {
                let owned = std::mem::replace(body, Stmt::skip());
                *body = lower_stmt(owned, fresh);
            }
            StmtKind::Await(a)
        }
        other @ (StmtKind::Skip | StmtKind::New(..) | StmtKind::NewMany(..)) => other,
    };
    Stmt::at(pos, kind)
}

fn with_pre(pre: Vec<Stmt>, s: Stmt, fresh: &mut Fresh) -> Stmt {
    if pre.is_empty() {
        return s;
    }
    let mut stmts: Vec<Stmt> = pre.into_iter().map(|p| lower_stmt(p, fresh)).collect();
    stmts.push(s);
    Stmt::seq_all(stmts)
}

/// `and`, `implies`, and `each` in statement expressions reduce to
/// `not`/`or`/`some`. Applies everywhere in the expression, including under
/// quantifier bodies.
fn lower_bool(e: &mut Expr) {
    fn notx(e: Expr) -> Expr {
        // collapse double negation from composed rewrites
        if let Expr::Unary(UnOp::Not, inner) = e {
            *inner
        } else {
            Expr::not(e)
        }
    }
    walk_expr_mut(e, &mut |x| match x {
        Expr::And(..) => {
            let Expr::And(a, b) = std::mem::replace(x, Expr::Undefined) else {
                unreachable!()
            };
            *x = notx(Expr::Or(Box::new(notx(*a)), Box::new(notx(*b))));
        }
        Expr::Implies(..) => {
            let Expr::Implies(a, b) = std::mem::replace(x, Expr::Undefined) else {
                unreachable!()
            };
            *x = Expr::Or(Box::new(notx(*a)), b);
        }
        Expr::Quant(QuantKind::Each, ..) => {
            let Expr::Quant(_, iters, body) = std::mem::replace(x, Expr::Undefined) else {
                unreachable!()
            };
            *x = notx(Expr::Quant(QuantKind::Some, iters, Box::new(notx(*body))));
        }
        _ => {}
    });
}

/// Hoists aggregates, comprehension expressions, and empty-set literals out
/// of a statement expression into prefix statements, leaving a field read.
fn hoist_queries(e: &mut Expr, pre: &mut Vec<Stmt>, pos: Pos, fresh: &mut Fresh) {
    // `x == {}` keeps its set literal: the runtime reads that comparison as
    // an emptiness test, and hoisting the literal into a fresh allocation
    // would flip it to address identity, which is always false
    if let Expr::Binary(BinOp::Is, a, b) = e {
        for side in [a, b] {
            if !matches!(**side, Expr::EmptySet) {
                hoist_queries(side, pre, pos, fresh);
            }
        }
        return;
    }
    // children first: an aggregate argument may itself contain hoistables
    for child in expr_children_mut(e) {
        hoist_queries(child, pre, pos, fresh);
    }
    match e {
        Expr::Agg(op, arg) => {
            let op = *op;
            // comprehension arguments materialize into a set first; anything
            // else is iterated in place so sequence duplicates still count
            let src_field = match arg.as_mut() {
                Expr::ComprExpr(c) => {
                    let src = fresh.name("src");
                    pre.push(Stmt::at(
                        pos,
                        StmtKind::Compr(
                            LValue::Field(Expr::self_var(), src.clone()),
                            (**c).clone(),
                        ),
                    ));
                    Expr::self_field(&src)
                }
                other => other.clone(),
            };
            let acc = fresh.name("acc");
            let acc_lv = LValue::Field(Expr::self_var(), acc.clone());
            let acc_read = Expr::self_field(&acc);
            let init = match op {
                AggOp::Size | AggOp::Sum => {
                    Stmt::at(pos, StmtKind::Assign(acc_lv.clone(), Expr::int(0)))
                }
                AggOp::Max | AggOp::Min => {
                    Stmt::at(pos, StmtKind::Assign(acc_lv.clone(), Expr::Undefined))
                }
            };
            let x = fresh.name("x");
            let xe = Expr::Var(x.clone());
            let step = match op {
                AggOp::Size => Stmt::at(
                    pos,
                    StmtKind::Assign(
                        acc_lv,
                        Expr::bin(BinOp::Plus, acc_read.clone(), Expr::int(1)),
                    ),
                ),
                AggOp::Sum => Stmt::at(
                    pos,
                    StmtKind::Assign(
                        acc_lv,
                        Expr::bin(BinOp::Plus, acc_read.clone(), xe.clone()),
                    ),
                ),
                AggOp::Max | AggOp::Min => {
                    let beats = if op == AggOp::Max {
                        Expr::bin(BinOp::Gt, xe.clone(), acc_read.clone())
                    } else {
                        Expr::bin(BinOp::Lt, xe.clone(), acc_read.clone())
                    };
                    let take = Stmt::at(pos, StmtKind::Assign(acc_lv.clone(), xe.clone()));
                    Stmt::at(
                        pos,
                        StmtKind::If(
                            Expr::is(acc_read.clone(), Expr::Undefined),
                            Box::new(take.clone()),
                            Box::new(Stmt::at(
                                pos,
                                StmtKind::If(beats, Box::new(take), Box::new(Stmt::skip())),
                            )),
                        ),
                    )
                }
            };
            pre.push(init);
            pre.push(Stmt::at(
                pos,
                StmtKind::For(Pattern::Var(x), src_field, Box::new(step)),
            ));
            *e = acc_read;
        }
        Expr::ComprExpr(c) => {
            let name = fresh.name("q");
            pre.push(Stmt::at(
                pos,
                StmtKind::Compr(LValue::Field(Expr::self_var(), name.clone()), (**c).clone()),
            ));
            *e = Expr::self_field(&name);
        }
        Expr::EmptySet => {
            let name = fresh.name("q");
            pre.push(Stmt::at(
                pos,
                StmtKind::New(LValue::Field(Expr::self_var(), name.clone()), SET_CLASS.into()),
            ));
            *e = Expr::self_field(&name);
        }
        _ => {}
    }
}

/// Comprehension statement: allocate, then nested loops with a filter.
/// Pattern variables already bound by an earlier iterator become equality
/// constraints first, then `=x` constraints move into the condition so the
/// loop patterns bind distinct fresh variables only.
fn lower_comprehension(pos: Pos, lv: LValue, mut c: Comprehension, fresh: &mut Fresh) -> Stmt {
    let mut bound: BTreeSet<Name> = BTreeSet::new();
    for it in &mut c.iters {
        mark_bound_as_constraints(&mut it.pattern, &bound);
        bound.extend(it.pattern.binders());
    }
    // =x inside iterator patterns: fresh y, extra `y == x` conjunct
    let mut extra = Vec::new();
    for it in &mut c.iters {
        strip_eq_constraints(&mut it.pattern, &mut extra, fresh);
    }
    for (y, x) in extra {
        let eq = Expr::is(Expr::Var(y), Expr::Var(x));
        c.cond = and2(eq, c.cond);
    }
    let mut body = Stmt::at(
        pos,
        StmtKind::If(
            c.cond,
            Box::new(Stmt::at(
                pos,
                StmtKind::Call(lvalue_expr(&lv), "add".into(), vec![c.head]),
            )),
            Box::new(Stmt::skip()),
        ),
    );
    for it in c.iters.into_iter().rev() {
        body = Stmt::at(pos, StmtKind::For(it.pattern, it.domain, Box::new(body)));
    }
    Stmt::seq(
        Stmt::at(pos, StmtKind::New(lv, SET_CLASS.into())),
        lower_stmt(body, fresh),
    )
}

fn and2(a: Expr, b: Expr) -> Expr {
    if b == Expr::bool(true) {
        a
    } else {
        Expr::And(Box::new(a), Box::new(b))
    }
}

/// A pattern variable that is already bound in scope tests equality instead
/// of rebinding (a join).
fn mark_bound_as_constraints(pat: &mut Pattern, bound: &BTreeSet<Name>) {
    match pat {
        Pattern::Var(n) if bound.contains(n) => {
            *pat = Pattern::Bound(n.clone());
        }
        Pattern::Tuple(ps) => {
            for q in ps {
                mark_bound_as_constraints(q, bound);
            }
        }
        _ => {}
    }
}

fn strip_eq_constraints(pat: &mut Pattern, out: &mut Vec<(Name, Name)>, fresh: &mut Fresh) {
    match pat {
        Pattern::Bound(x) => {
            let y = fresh.name("y");
            out.push((y.clone(), x.clone()));
            *pat = Pattern::Var(y);
        }
        Pattern::Tuple(ps) => {
            for q in ps {
                strip_eq_constraints(q, out, fresh);
            }
        }
        _ => {}
    }
}

/// Tuple-pattern loop elimination. A flat component list builds the single
/// grouped comparison `(select(x,j1),..) is (v1,..)`; nested tuple
/// components recurse structurally.
fn lower_for(pos: Pos, pat: Pattern, domain: Expr, body: Stmt, fresh: &mut Fresh) -> Stmt {
    let Pattern::Tuple(_) = pat else {
        // single variable or literal pattern needs no elimination; a bare
        // literal pattern still goes through the guard builder below
        match &pat {
            Pattern::Var(_) => {
                return Stmt::at(pos, StmtKind::For(pat, domain, Box::new(body)))
            }
            _ => {}
        }
        let x = fresh.name("x");
        let (guard, body) = guarded_body(&pat, Expr::Var(x.clone()), body);
        let inner = Stmt::at(
            pos,
            StmtKind::If(guard, Box::new(body), Box::new(Stmt::skip())),
        );
        return Stmt::at(pos, StmtKind::For(Pattern::Var(x), domain, Box::new(inner)));
    };
    let x = fresh.name("x");
    let xe = Expr::Var(x.clone());
    let (guard, substituted) = guarded_body(&pat, xe, body);

    let holder = fresh.name("s");
    let holder_lv = LValue::Field(Expr::self_var(), holder.clone());
    let holder_read = Expr::self_field(&holder);

    // set branch: filter into a second set first, then loop without a
    // guard; the filtered set cannot reuse the holder because allocation
    // of the comprehension target precedes the iteration over its source
    let kept = fresh.name("s");
    let kept_lv = LValue::Field(Expr::self_var(), kept.clone());
    let kept_read = Expr::self_field(&kept);
    let filter_var = fresh.name("x");
    let filtered = Comprehension {
        head: Expr::Var(filter_var.clone()),
        iters: vec![QIter {
            pattern: Pattern::Var(filter_var.clone()),
            domain: holder_read.clone(),
        }],
        cond: rename_var(&guard, &x, &filter_var),
    };
    let set_branch = Stmt::seq(
        Stmt::at(pos, StmtKind::Compr(kept_lv, filtered)),
        Stmt::at(
            pos,
            StmtKind::For(
                Pattern::Var(x.clone()),
                kept_read,
                Box::new(substituted.clone()),
            ),
        ),
    );
    // sequence branch: guard inline, duplicates preserved
    let seq_branch = Stmt::at(
        pos,
        StmtKind::For(
            Pattern::Var(x),
            holder_read.clone(),
            Box::new(Stmt::at(
                pos,
                StmtKind::If(guard, Box::new(substituted), Box::new(Stmt::skip())),
            )),
        ),
    );
    let dispatch = Stmt::at(
        pos,
        StmtKind::If(
            Expr::IsInstance(Box::new(holder_read), SET_CLASS.into()),
            Box::new(set_branch),
            Box::new(seq_branch),
        ),
    );
    // drop the holder fields afterwards so the filtered snapshot becomes
    // unreachable and stored-state measurements see only live state
    let clear = |field: &Name| {
        Stmt::at(
            pos,
            StmtKind::Assign(
                LValue::Field(Expr::self_var(), field.clone()),
                Expr::int(0),
            ),
        )
    };
    Stmt::seq_all(vec![
        Stmt::at(pos, StmtKind::Assign(holder_lv, domain)),
        lower_stmt(dispatch, fresh),
        clear(&holder),
        clear(&kept),
    ])
}

/// Match condition plus substituted body for binding `pat` against the
/// value of `subject`.
fn guarded_body(pat: &Pattern, subject: Expr, mut body: Stmt) -> (Expr, Stmt) {
    let mut conds = Vec::new();
    let mut subst: Vec<(Name, Expr)> = Vec::new();
    build_match(pat, subject, &mut conds, &mut subst);
    for (name, replacement) in &subst {
        substitute_in_stmt(&mut body, name, replacement);
    }
    let guard = conds
        .into_iter()
        .reduce(|a, b| Expr::And(Box::new(a), Box::new(b)))
        .unwrap_or_else(|| Expr::bool(true));
    (guard, body)
}

fn build_match(pat: &Pattern, subject: Expr, conds: &mut Vec<Expr>, subst: &mut Vec<(Name, Expr)>) {
    match pat {
        Pattern::Var(n) => subst.push((n.clone(), subject)),
        Pattern::Wildcard => {}
        Pattern::Bound(n) => conds.push(Expr::is(subject, Expr::Var(n.clone()))),
        Pattern::Lit(l) => conds.push(Expr::is(subject, Expr::Lit(l.clone()))),
        Pattern::Tuple(ps) => {
            conds.push(Expr::Unary(UnOp::IsTuple, Box::new(subject.clone())));
            conds.push(Expr::is(
                Expr::Unary(UnOp::Len, Box::new(subject.clone())),
                Expr::int(ps.len() as i64),
            ));
            // group fixed components into one tuple comparison
            let mut fixed_sel = Vec::new();
            let mut fixed_val = Vec::new();
            for (i, q) in ps.iter().enumerate() {
                let sel = Expr::bin(
                    BinOp::Select,
                    subject.clone(),
                    Expr::int(i as i64 + 1),
                );
                match q {
                    Pattern::Var(n) => subst.push((n.clone(), sel)),
                    Pattern::Wildcard => {}
                    Pattern::Bound(n) => {
                        fixed_sel.push(sel);
                        fixed_val.push(Expr::Var(n.clone()));
                    }
                    Pattern::Lit(l) => {
                        fixed_sel.push(sel);
                        fixed_val.push(Expr::Lit(l.clone()));
                    }
                    Pattern::Tuple(_) => build_match(q, sel, conds, subst),
                }
            }
            if !fixed_sel.is_empty() {
                conds.push(Expr::is(Expr::Tuple(fixed_sel), Expr::Tuple(fixed_val)));
            }
        }
    }
}

pub fn substitute_in_stmt(s: &mut Stmt, name: &str, replacement: &Expr) {
    // binder shadowing: a nested loop or quantifier re-binding `name` stops
    // the substitution in its scope
    match &mut s.kind {
        StmtKind::For(pat, domain, body) => {
            substitute_in_expr(domain, name, replacement);
            if !pat.binders().iter().any(|b| b == name) {
                substitute_in_stmt(body, name, replacement);
            }
            return;
        }
        StmtKind::ForItems(n, items, body) => {
            for e in items {
                substitute_in_expr(e, name, replacement);
            }
            if n != name {
                substitute_in_stmt(body, name, replacement);
            }
            return;
        }
        StmtKind::Await(aw) => {
            for (cond, body) in &mut aw.clauses {
                substitute_in_expr(cond, name, replacement);
                substitute_in_stmt(body, name, replacement);
            }
            if let Some((period, body)) = &mut aw.timeout {
                substitute_in_expr(period, name, replacement);
                substitute_in_stmt(body, name, replacement);
            }
            return;
        }
        _ => {}
    }
    for e in stmt_exprs_mut(s) {
        substitute_in_expr(e, name, replacement);
    }
    for child in stmt_children_mut(s) {
        substitute_in_stmt(child, name, replacement);
    }
}

pub fn substitute_in_expr(e: &mut Expr, name: &str, replacement: &Expr) {
    match e {
        Expr::Var(n) if n == name => *e = replacement.clone(),
        Expr::Quant(kind, iters, body) => {
            let mut shadowed = false;
            let mut rebound = false;
            for it in iters {
                substitute_in_expr(&mut it.domain, name, replacement);
                if !shadowed {
                    // a Bound pattern reads the variable rather than binding it
                    rebound |= rewrite_bound_reads(&mut it.pattern, name, replacement);
                }
                shadowed |= rebound || it.pattern.binders().iter().any(|b| b == name);
            }
            if !shadowed {
                substitute_in_expr(body, name, replacement);
            }
            if rebound {
                let eq = Expr::is(Expr::Var(name.to_owned()), replacement.clone());
                let old = std::mem::replace(body.as_mut(), Expr::bool(true));
                **body = match kind {
                    QuantKind::Some => Expr::And(Box::new(eq), Box::new(old)),
                    QuantKind::Each => Expr::Implies(Box::new(eq), Box::new(old)),
                };
            }
        }
        Expr::ComprExpr(c) => {
            let mut shadowed = false;
            let mut rebound = false;
            for it in &mut c.iters {
                substitute_in_expr(&mut it.domain, name, replacement);
                if !shadowed {
                    rebound |= rewrite_bound_reads(&mut it.pattern, name, replacement);
                }
                shadowed |= rebound || it.pattern.binders().iter().any(|b| b == name);
            }
            if !shadowed {
                substitute_in_expr(&mut c.head, name, replacement);
                substitute_in_expr(&mut c.cond, name, replacement);
            }
            if rebound {
                let eq = Expr::is(Expr::Var(name.to_owned()), replacement.clone());
                let old = std::mem::replace(&mut c.cond, Expr::bool(true));
                c.cond = and2(eq, old);
            }
        }
        _ => {
            for child in expr_children_mut(e) {
                substitute_in_expr(child, name, replacement);
            }
        }
    }
}

/// `=x` patterns read `x`. A variable replacement renames the read in
/// place. Any other replacement cannot live inside a pattern, so the
/// pattern re-binds `x` and the caller constrains the new binder to equal
/// the replacement, which is the same join. Returns whether a re-bind
/// happened.
fn rewrite_bound_reads(pat: &mut Pattern, name: &str, replacement: &Expr) -> bool {
    match pat {
        Pattern::Bound(n) if n == name => {
            if let Expr::Var(v) = replacement {
                *pat = Pattern::Bound(v.clone());
                false
            } else {
                *pat = Pattern::Var(name.to_owned());
                true
            }
        }
        Pattern::Tuple(ps) => {
            let mut rebound = false;
            for q in ps {
                rebound |= rewrite_bound_reads(q, name, replacement);
            }
            rebound
        }
        _ => false,
    }
}

fn rename_var(e: &Expr, from: &str, to: &str) -> Expr {
    let mut out = e.clone();
    substitute_in_expr(&mut out, from, &Expr::Var(to.to_owned()));
    out
}

// ---- sugar accounting and the core-form check ----

/// Statement-level sugar still present outside await conditions.
fn sugar_count(p: &Program) -> usize {
    let mut n = 0;
    fn on_expr(e: &Expr, n: &mut usize) {
        // set literals under `==` stay put (emptiness test), mirroring the
        // hoist exemption
        if let Expr::Binary(BinOp::Is, a, b) = e {
            for side in [a, b] {
                if !matches!(**side, Expr::EmptySet) {
                    on_expr(side, n);
                }
            }
            return;
        }
        match e {
            Expr::And(..) | Expr::Implies(..) | Expr::Agg(..) | Expr::ComprExpr(..)
            | Expr::EmptySet => *n += 1,
            Expr::Quant(QuantKind::Each, ..) => *n += 1,
            _ => {}
        }
        for child in expr_children(e) {
            on_expr(child, n);
        }
    }
    fn on_stmt(s: &Stmt, n: &mut usize) {
        match &s.kind {
            StmtKind::Compr(..) | StmtKind::NewMany(..) => *n += 1,
            StmtKind::For(pat, _, _) if !matches!(pat, Pattern::Var(_)) => *n += 1,
            StmtKind::Await(a) => {
                for (_, body) in &a.clauses {
                    on_stmt(body, n);
                }
                if let Some((_, body)) = &a.timeout {
                    on_stmt(body, n);
                }
                return;
            }
            _ => {}
        }
        for e in stmt_exprs(s) {
            on_expr(e, n);
        }
        for child in stmt_children(s) {
            on_stmt(child, n);
        }
    }
    let mut count_body = |s: &Stmt| on_stmt(s, &mut n);
    for class in &p.classes {
        for m in &class.methods {
            if let MethodBody::Stmt(body) = &m.body {
                count_body(body);
            }
        }
        for r in &class.receives {
            count_body(&r.body);
        }
    }
    if let MethodBody::Stmt(body) = &p.main.body {
        count_body(body);
    }
    n
}

/// Post-lowering invariant: outside await conditions nothing sugared
/// remains, and no wildcard or label survives anywhere.
pub fn assert_core(p: &Program) -> Result<(), String> {
    if sugar_count(p) != 0 {
        return Err("sugar remains outside await conditions".into());
    }
    let mut err = None;
    fn pat_has_wildcard(p: &Pattern) -> bool {
        match p {
            Pattern::Wildcard => true,
            Pattern::Tuple(ps) => ps.iter().any(pat_has_wildcard),
            _ => false,
        }
    }
    fn on_stmt(s: &Stmt, err: &mut Option<String>) {
        match &s.kind {
            StmtKind::Labeled(l, _) => {
                *err = Some(format!("label `{l}` survived normalization"));
            }
            StmtKind::For(pat, _, _) if pat_has_wildcard(pat) => {
                *err = Some("wildcard in loop pattern".into());
            }
            StmtKind::Await(a) => {
                if a.label.is_empty() {
                    *err = Some("await without label".into());
                }
            }
            _ => {}
        }
        for child in stmt_children(s) {
            on_stmt(child, err);
        }
        if let StmtKind::Await(a) = &s.kind {
            for (_, body) in &a.clauses {
                on_stmt(body, err);
            }
            if let Some((_, body)) = &a.timeout {
                on_stmt(body, err);
            }
        }
    }
    for class in &p.classes {
        for m in &class.methods {
            if let MethodBody::Stmt(body) = &m.body {
                on_stmt(body, &mut err);
            }
        }
        for r in &class.receives {
            for arm in &r.arms {
                if pat_has_wildcard(&arm.pattern) {
                    err = Some("wildcard in receive pattern".into());
                }
            }
            on_stmt(&r.body, &mut err);
        }
    }
    if let MethodBody::Stmt(body) = &p.main.body {
        on_stmt(body, &mut err);
    }
    match err {
        None => Ok(()),
        Some(msg) => Err(msg),
    }
}

// ---- traversal plumbing ----

pub fn for_each_body(p: &mut Program, f: &mut impl FnMut(&mut Stmt)) {
    for class in &mut p.classes {
        for m in &mut class.methods {
            if let MethodBody::Stmt(body) = &mut m.body {
                f(body);
            }
        }
        for r in &mut class.receives {
            f(&mut r.body);
        }
    }
    if let MethodBody::Stmt(body) = &mut p.main.body {
        f(body);
    }
}

fn for_each_receive(p: &mut Program, f: &mut impl FnMut(&mut ReceiveDef)) {
    for class in &mut p.classes {
        for r in &mut class.receives {
            f(r);
        }
    }
}

/// Applies `f` to every statement bottom-up; `f` returning a replacement
/// substitutes it in place.
pub fn rewrite_stmts(s: &mut Stmt, f: &mut impl FnMut(&mut Stmt) -> Option<Stmt>) {
    for child in stmt_children_mut(s) {
        rewrite_stmts(child, f);
    }
    if let StmtKind::Await(a) = &mut s.kind {
        for (_, body) in &mut a.clauses {
            rewrite_stmts(body, f);
        }
        if let Some((_, body)) = &mut a.timeout {
            rewrite_stmts(body, f);
        }
    }
    if let Some(replacement) = f(s) {
        *s = replacement;
    }
}

pub fn stmt_children(s: &Stmt) -> Vec<&Stmt> {
    match &s.kind {
        StmtKind::Seq(a, b) | StmtKind::If(_, a, b) => vec![a, b],
        StmtKind::For(_, _, b) | StmtKind::ForItems(_, _, b) | StmtKind::While(_, b) => {
            vec![b]
        }
        StmtKind::Labeled(_, b) => vec![b],
        _ => Vec::new(),
    }
}

pub fn stmt_children_mut(s: &mut Stmt) -> Vec<&mut Stmt> {
    match &mut s.kind {
        StmtKind::Seq(a, b) | StmtKind::If(_, a, b) => vec![a, b],
        StmtKind::For(_, _, b) | StmtKind::ForItems(_, _, b) | StmtKind::While(_, b) => {
            vec![b]
        }
        StmtKind::Labeled(_, b) => vec![b],
        _ => Vec::new(),
    }
}

/// Expressions owned directly by a statement, excluding await conditions
/// (those are separate query territory) but including await timeout
/// periods.
pub fn stmt_exprs(s: &Stmt) -> Vec<&Expr> {
    match &s.kind {
        StmtKind::Assign(lv, e) => {
            let mut v = lvalue_exprs(lv);
            v.push(e);
            v
        }
        StmtKind::New(lv, _) => lvalue_exprs(lv),
        StmtKind::NewMany(lv, e, _) => {
            let mut v = lvalue_exprs(lv);
            v.push(e);
            v
        }
        StmtKind::Compr(lv, c) => {
            let mut v = lvalue_exprs(lv);
            v.push(&c.head);
            for it in &c.iters {
                v.push(&it.domain);
            }
            v.push(&c.cond);
            v
        }
        StmtKind::If(e, _, _) | StmtKind::While(e, _) | StmtKind::For(_, e, _) => vec![e],
        StmtKind::ForItems(_, items, _) => items.iter().collect(),
        StmtKind::Call(t, _, args) => {
            let mut v = vec![t];
            v.extend(args.iter());
            v
        }
        StmtKind::Send(m, d) => vec![m, d],
        _ => Vec::new(),
    }
}

pub fn stmt_exprs_mut(s: &mut Stmt) -> Vec<&mut Expr> {
    match &mut s.kind {
        StmtKind::Assign(lv, e) => {
            let mut v = lvalue_exprs_mut(lv);
            v.push(e);
            v
        }
        StmtKind::New(lv, _) => lvalue_exprs_mut(lv),
        StmtKind::NewMany(lv, e, _) => {
            let mut v = lvalue_exprs_mut(lv);
            v.push(e);
            v
        }
        StmtKind::Compr(lv, c) => {
            let mut v = lvalue_exprs_mut(lv);
            v.push(&mut c.head);
            for it in &mut c.iters {
                v.push(&mut it.domain);
            }
            v.push(&mut c.cond);
            v
        }
        StmtKind::If(e, _, _) | StmtKind::While(e, _) | StmtKind::For(_, e, _) => vec![e],
        StmtKind::ForItems(_, items, _) => items.iter_mut().collect(),
        StmtKind::Call(t, _, args) => {
            let mut v = vec![t];
            v.extend(args.iter_mut());
            v
        }
        StmtKind::Send(m, d) => vec![m, d],
        _ => Vec::new(),
    }
}

fn lvalue_exprs(lv: &LValue) -> Vec<&Expr> {
    match lv {
        LValue::Var(_) => Vec::new(),
        LValue::Field(e, _) => vec![e],
    }
}

fn lvalue_exprs_mut(lv: &mut LValue) -> Vec<&mut Expr> {
    match lv {
        LValue::Var(_) => Vec::new(),
        LValue::Field(e, _) => vec![e],
    }
}

pub fn expr_children(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::Field(a, _) | Expr::Unary(_, a) | Expr::Agg(_, a) | Expr::IsInstance(a, _) => {
            vec![a]
        }
        Expr::Binary(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
            vec![a, b]
        }
        Expr::Tuple(es) => es.iter().collect(),
        Expr::Call(t, _, args) => {
            let mut v = vec![t.as_ref()];
            v.extend(args.iter());
            v
        }
        Expr::Quant(_, iters, body) => {
            let mut v: Vec<&Expr> = iters.iter().map(|it| &it.domain).collect();
            v.push(body);
            v
        }
        Expr::ComprExpr(c) => {
            let mut v = vec![&c.head];
            v.extend(c.iters.iter().map(|it| &it.domain));
            v.push(&c.cond);
            v
        }
        _ => Vec::new(),
    }
}

pub fn expr_children_mut(e: &mut Expr) -> Vec<&mut Expr> {
    match e {
        Expr::Field(a, _) | Expr::Unary(_, a) | Expr::Agg(_, a) | Expr::IsInstance(a, _) => {
            vec![a]
        }
        Expr::Binary(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
            vec![a, b]
        }
        Expr::Tuple(es) => es.iter_mut().collect(),
        Expr::Call(t, _, args) => {
            let mut v = vec![t.as_mut()];
            v.extend(args.iter_mut());
            v
        }
        Expr::Quant(_, iters, body) => {
            let mut v: Vec<&mut Expr> = iters.iter_mut().map(|it| &mut it.domain).collect();
            v.push(body);
            v
        }
        Expr::ComprExpr(c) => {
            let mut v = vec![&mut c.head];
            v.extend(c.iters.iter_mut().map(|it| &mut it.domain));
            v.push(&mut c.cond);
            v
        }
        _ => Vec::new(),
    }
}

/// Bottom-up mutation over an expression tree.
pub fn walk_expr_mut(e: &mut Expr, f: &mut impl FnMut(&mut Expr)) {
    for child in expr_children_mut(e) {
        walk_expr_mut(child, f);
    }
    f(e);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{parser, pretty};

    fn lowered(src: &str) -> Program {
        let mut p = parser::parse(src).expect("parse");
        desugar(&mut p).expect("desugar");
        assert_core(&p).expect("core form");
        p
    }

    fn main_text(p: &Program) -> String {
        let MethodBody::Stmt(s) = &p.main.body else { panic!() };
        pretty::stmt(s)
    }

    #[test]
    fn bare_names_resolve_to_self() {
        let p = lowered("configuration fifo reliable\ndef main(): x = 1 end");
        assert_eq!(main_text(&p), "self.x = 1\n");
    }

    #[test]
    fn parameters_stay_local() {
        let src = "configuration fifo reliable\nclass A extends Process:\n  def f(a): x = a end\nend\ndef main() skip";
        let p = lowered(src);
        let MethodBody::Stmt(s) = &p.classes[0].methods[0].body else { panic!() };
        assert_eq!(pretty::stmt(s), "self.x = a\n");
    }

    #[test]
    fn label_on_plain_statement_becomes_await_marker() {
        let p = lowered("configuration fifo reliable\ndef main():\n  -- here\n  x = 1\nend");
        let text = main_text(&p);
        assert!(text.starts_with("-- here\nawait true\n"), "{text}");
        assert!(text.contains("self.x = 1"), "{text}");
    }

    #[test]
    fn unlabeled_await_gets_fresh_label_in_at_clauses() {
        let src = "configuration fifo reliable\nclass A extends Process:\n  def f():\n    -- start_f\n    skip\n    await x > 0\n  end\n  receive ('m', v) at start_f: skip end\nend\ndef main() skip";
        let p = lowered(src);
        let labels = p.classes[0].receives[0].labels.as_ref().unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[0], "start_f");
        assert!(labels[1].starts_with("__l"), "{labels:?}");
    }

    #[test]
    fn multi_new_unrolls_to_allocation_loop() {
        let p = lowered("configuration fifo reliable\nclass A extends Process: end\ndef main(): ps = 2 new A end");
        let text = main_text(&p);
        assert!(text.contains("self.ps = {}"), "{text}");
        assert!(text.contains("while self.__i0 > 0:"), "{text}");
        assert!(text.contains("= new A"), "{text}");
        assert!(text.contains("self.ps.add("), "{text}");
    }

    #[test]
    fn conjunction_in_statement_position_uses_or_not() {
        let p = lowered("configuration fifo reliable\ndef main(): x = a and b end");
        assert_eq!(
            main_text(&p),
            "self.x = not (not self.a or not self.b)\n"
        );
    }

    #[test]
    fn each_in_statement_position_becomes_not_some() {
        let p = lowered("configuration fifo reliable\ndef main(): x = each v in s | v > 0 end");
        assert_eq!(
            main_text(&p),
            "self.x = not (some v in self.s | not v > 0)\n"
        );
    }

    #[test]
    fn aggregate_lowers_to_counting_loop() {
        let p = lowered("configuration fifo reliable\ndef main(): n = size(s) end");
        let text = main_text(&p);
        assert!(text.contains("self.__acc0 = 0"), "{text}");
        assert!(text.contains("for __x1 in self.s:"), "{text}");
        assert!(text.contains("self.__acc0 = self.__acc0 + 1"), "{text}");
        assert!(text.ends_with("self.n = self.__acc0\n"), "{text}");
    }

    #[test]
    fn aggregate_over_comprehension_materializes_the_set_first() {
        let p = lowered(
            "configuration fifo reliable\ndef main(): n = size({ v : v in s | v > 2 }) end",
        );
        let text = main_text(&p);
        assert!(text.contains("self.__q0 = {}"), "{text}");
        assert!(text.contains("for __x2 in self.__q0:"), "{text}");
        assert!(text.ends_with("self.n = self.__acc1\n"), "{text}");
    }

    #[test]
    fn max_accumulator_starts_undefined() {
        let p = lowered("configuration fifo reliable\ndef main(): m = max(s) end");
        let text = main_text(&p);
        assert!(text.contains("= undefined"), "{text}");
        assert!(text.contains("== undefined:"), "{text}");
        assert!(text.contains("> self.__acc0:"), "{text}");
    }

    #[test]
    fn comprehension_statement_lowers_to_loop_with_filter() {
        let p = lowered(
            "configuration fifo reliable\ndef main(): evens = { v : v in s | v > 2 } end",
        );
        let text = main_text(&p);
        assert!(text.contains("self.evens = {}"), "{text}");
        assert!(text.contains("for v in self.s:"), "{text}");
        assert!(text.contains("if v > 2:"), "{text}");
        assert!(text.contains("self.evens.add(v)"), "{text}");
    }

    #[test]
    fn tuple_loop_pattern_splits_set_and_sequence_branches() {
        let p = lowered(
            "configuration fifo reliable\ndef main():\n  for ('request', c2, =p) in q:\n    x = c2\n  end\nend",
        );
        let text = main_text(&p);
        assert!(text.contains("isinstance(self.__s"), "{text}");
        assert!(text.contains("istuple("), "{text}");
        assert!(text.contains("len("), "{text}");
        // the literal component compares in the grouped tuple; the `=p`
        // component resolved to a field test in the loop body
        assert!(text.contains("(select(__x1, 1),) != ('request',)"), "{text}");
        assert!(text.contains("if select(__x1, 3) == self.p:"), "{text}");
        assert!(text.contains("self.x = select(__x1, 2)"), "{text}");
        // the filtered set must not overwrite its own source
        assert!(text.contains("self.__s3 = {}"), "{text}");
        assert!(text.contains("for __x4 in self.__s2:"), "{text}");
    }

    #[test]
    fn repeated_comprehension_variable_is_a_join() {
        let p = lowered(
            "configuration fifo reliable\ndef main(): pairs = { v : v in s, v in t } end",
        );
        let text = main_text(&p);
        // second iterator must test equality, not rebind
        assert!(text.contains("for v in self.s:"), "{text}");
        assert!(!text.contains("for v in self.t:"), "{text}");
        assert!(text.contains("== v"), "{text}");
    }

    #[test]
    fn await_condition_keeps_query_form() {
        let src = "configuration fifo reliable\ndef main():\n  await (each v in s | v > 0) and size(s) > 0\nend";
        let p = lowered(src);
        let text = main_text(&p);
        assert!(text.contains("await (each v in self.s | v > 0) and size(self.s) > 0"), "{text}");
    }

    #[test]
    fn remote_user_call_after_start_is_rejected() {
        let src = "configuration fifo reliable\nclass A extends Process:\n  def f(p): p.g() end\n  def g() skip\nend\ndef main() skip";
        let mut p = parser::parse(src).expect("parse");
        let errs = desugar(&mut p).unwrap_err();
        assert!(errs.iter().any(|d| d.rule == "desugar-rmi"), "{errs:?}");
    }

    #[test]
    fn setup_calls_in_main_before_start_are_allowed() {
        let src = "configuration fifo reliable\nclass A extends Process:\n  def setup(v): self.v = v end\nend\ndef main():\n  p = new A\n  p.setup(1)\n  p.start()\nend";
        lowered(src);
    }

    #[test]
    fn lowering_is_idempotent() {
        let src = std::fs::read_to_string(format!(
            "{}/../../corpus/lamport_orig.dap",
            env!("CARGO_MANIFEST_DIR")
        ))
        .unwrap();
        let mut p = parser::parse(&src).expect("parse");
        desugar(&mut p).expect("desugar");
        let once = pretty::program(&p);
        desugar_statements(&mut p);
        assert_eq!(once, pretty::program(&p));
    }
}
