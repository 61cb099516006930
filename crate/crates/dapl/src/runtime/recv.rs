//! Matching of queued messages against receive definitions.
//!
//! A definition handles a message when its label restriction admits the
//! current yield point and one of its arms matches; the first matching arm
//! of a definition wins, and every matching definition contributes its body.
//! The caller sequences the bodies and prepends them before the yield point.

use crate::ast::{Addr, Expr, Literal, Name, Pattern, Stmt};
use crate::desugar::substitute_in_stmt;
use crate::runtime::classes::ClassTable;
use crate::runtime::eval::{Env, EvalCtx};
use crate::runtime::state::LocalHeap;
use crate::runtime::value::{AtomTable, Value};
use std::collections::BTreeMap;

/// Instantiated bodies of every receive definition of `class` that matches
/// `msg` from `sender` at yield point `label`, in definition order. Arm
/// binders are substituted with the matched values; `self` is left for the
/// caller to plug in.
pub fn matching_bodies(
    classes: &ClassTable,
    atoms: &AtomTable,
    heap: &LocalHeap,
    types: &BTreeMap<Addr, Name>,
    proc: Addr,
    class: &str,
    msg: &Value,
    sender: Addr,
    label: &str,
) -> Vec<Stmt> {
    let mut env = Env::new();
    env.insert("self".into(), Value::Addr(proc));
    let sender_v = Value::Addr(sender);
    let mut out = Vec::new();
    for def in classes.receives(class) {
        if let Some(labels) = &def.labels {
            if !labels.iter().any(|l| l == label) {
                continue;
            }
        }
        for arm in &def.arms {
            let mut ctx = EvalCtx {
                classes,
                atoms,
                heap,
                types,
                clock: 0,
                inspections: 0,
            };
            let mut pairs: Vec<(&Pattern, &Value)> = vec![(&arm.pattern, msg)];
            if let Some(from) = &arm.from {
                pairs.push((from, &sender_v));
            }
            let Some(bindings) = ctx.match_many(&env, &pairs) else {
                continue;
            };
            let mut body = def.body.clone();
            for (name, value) in bindings {
                substitute_in_stmt(&mut body, &name, &value_to_expr(&value));
            }
            out.push(body);
            break;
        }
    }
    out
}

/// A value as a closed expression, for plugging into statement templates.
pub fn value_to_expr(v: &Value) -> Expr {
    match v {
        Value::Undefined => Expr::Undefined,
        Value::Bool(b) => Expr::bool(*b),
        Value::Int(n) => Expr::Lit(Literal::Int(n.clone())),
        Value::Addr(a) => Expr::Addr(*a),
        Value::Tuple(vs) => Expr::Tuple(vs.iter().map(value_to_expr).collect()),
    }
}
