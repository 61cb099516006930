//! The transition rules, packaged as a machine that steps one process at a
//! time.
//!
//! Local control flow (assignment, allocation, branching, loops, calls,
//! sends) advances by `step_process`. Yield points are labeled awaits:
//! `handle_message` consumes one queued message there and prepends the
//! matching handler bodies, `attempt_await` evaluates the conditions and
//! commits to a clause, `fire_timeout` takes the timeout branch. Message
//! transport between channel and queue is `arrive`. A scheduler composes
//! these into executions; the machine itself draws no random numbers.

use crate::ast::{
    Addr, ClockKind, Expr, LValue, Pattern, Program, Stmt, StmtKind, DS_CLASS, SEQUENCE_CLASS,
    SET_CLASS,
};
use crate::desugar::substitute_in_stmt;
use crate::runtime::classes::ClassTable;
use crate::runtime::copy::deep_copy;
use crate::runtime::eval::{Env, EvalCtx, EvalError};
use crate::runtime::recv::{matching_bodies, value_to_expr};
use crate::runtime::state::{LocalHeap, State, RECEIVED_FIELD, SENT_FIELD};
use crate::runtime::value::{AtomTable, Object, Value};
use num_traits::ToPrimitive;
use serde::Serialize;
use std::collections::{BTreeMap, VecDeque};

/// Externally visible happenings, in execution order. Traces compare runs
/// of original and incrementalized programs, so only communication and the
/// explicit `mark` probes appear here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Send { from: Addr, to: Addr, msg: Value },
    Mark { proc: Addr, value: Value },
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Metrics {
    pub micro_steps: u64,
    pub unicast_sends: u64,
    pub sends_by_tag: BTreeMap<String, u64>,
    pub dropped_messages: u64,
    pub handled_messages: u64,
    pub await_evals: u64,
    pub await_inspections_total: u64,
    pub await_inspections_max: u64,
    pub max_received_len: usize,
    pub max_stored_elements: usize,
}

/// Result of one local micro step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalStatus {
    Progressed,
    AtYield,
    /// A send whose destination has no local heap yet; retried once the
    /// destination starts.
    Blocked,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcStatus {
    Runnable,
    AtYield,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AwaitOutcome {
    Fired,
    /// Every condition evaluated to false.
    Blocked { has_timeout: bool },
}

enum StepOut {
    Stepped(Stmt),
    Yield(Stmt),
    Blocked(Stmt),
}

pub struct Machine<'p> {
    pub program: &'p Program,
    pub classes: ClassTable<'p>,
    pub atoms: AtomTable,
    pub state: State,
    pub events: Vec<Event>,
    pub metrics: Metrics,
}

impl<'p> Machine<'p> {
    pub fn new(program: &'p Program) -> Machine<'p> {
        Machine {
            program,
            classes: ClassTable::new(program),
            atoms: AtomTable::new(&program.atoms),
            state: State::initial(),
            events: Vec::new(),
            metrics: Metrics::default(),
        }
    }

    pub fn status_of(&self, a: Addr) -> ProcStatus {
        let s = &self.state.stmts[&a];
        if matches!(s.kind, StmtKind::Skip) {
            return ProcStatus::Terminated;
        }
        match &spine_head(s).kind {
            StmtKind::Await(_) => ProcStatus::AtYield,
            _ => ProcStatus::Runnable,
        }
    }

    /// One micro step of process `a`. The state is untouched on error, so a
    /// stuck process can be inspected.
    pub fn step_process(&mut self, a: Addr) -> Result<LocalStatus, EvalError> {
        let s = self.state.stmts.remove(&a).expect("process is started");
        if matches!(s.kind, StmtKind::Skip) {
            self.state.stmts.insert(a, s);
            return Ok(LocalStatus::Terminated);
        }
        let backup = s.clone();
        match self.exec(a, s) {
            Ok(StepOut::Stepped(s)) => {
                self.state.stmts.insert(a, s);
                self.metrics.micro_steps += 1;
                self.sample(a);
                Ok(LocalStatus::Progressed)
            }
            Ok(StepOut::Yield(s)) => {
                self.state.stmts.insert(a, s);
                Ok(LocalStatus::AtYield)
            }
            Ok(StepOut::Blocked(s)) => {
                self.state.stmts.insert(a, s);
                Ok(LocalStatus::Blocked)
            }
            Err(e) => {
                self.state.stmts.insert(a, backup);
                Err(e)
            }
        }
    }

    fn exec(&mut self, a: Addr, s: Stmt) -> Result<StepOut, EvalError> {
        let pos = s.pos;
        match s.kind {
            StmtKind::Skip => Ok(StepOut::Stepped(Stmt::skip())),
            StmtKind::Seq(s1, s2) => {
                if matches!(s1.kind, StmtKind::Skip) {
                    return Ok(StepOut::Stepped(*s2));
                }
                match self.exec(a, *s1)? {
                    StepOut::Stepped(s1) => {
                        Ok(StepOut::Stepped(Stmt::at(pos, StmtKind::Seq(Box::new(s1), s2))))
                    }
                    StepOut::Yield(s1) => {
                        Ok(StepOut::Yield(Stmt::at(pos, StmtKind::Seq(Box::new(s1), s2))))
                    }
                    StepOut::Blocked(s1) => {
                        Ok(StepOut::Blocked(Stmt::at(pos, StmtKind::Seq(Box::new(s1), s2))))
                    }
                }
            }
            StmtKind::Assign(lv, e) => {
                let v = self.eval_in(a, &e)?;
                let (obj, field) = self.eval_lvalue(a, &lv)?;
                self.write_field(a, obj, &field, v)?;
                Ok(StepOut::Stepped(Stmt::skip()))
            }
            StmtKind::New(lv, class) => {
                let fresh = self.state.fresh_addr();
                self.state.types.insert(fresh, class.clone());
                let obj = new_object(&class);
                self.state.heaps.entry(a).or_default().insert(fresh, obj);
                let (target, field) = self.eval_lvalue(a, &lv)?;
                self.write_field(a, target, &field, Value::Addr(fresh))?;
                Ok(StepOut::Stepped(Stmt::skip()))
            }
            StmtKind::If(e, then, els) => {
                let cond = self.eval_bool_in(a, &e)?;
                Ok(StepOut::Stepped(if cond { *then } else { *els }))
            }
            StmtKind::While(e, body) => {
                let unrolled = Stmt::at(
                    pos,
                    StmtKind::If(
                        e.clone(),
                        Box::new(Stmt::seq(
                            (*body).clone(),
                            Stmt::at(pos, StmtKind::While(e, body)),
                        )),
                        Box::new(Stmt::skip()),
                    ),
                );
                Ok(StepOut::Stepped(unrolled))
            }
            StmtKind::For(pat, domain, body) => {
                let Pattern::Var(x) = pat else {
                    return Err(EvalError::NotAValue("pattern loop survived lowering"));
                };
                let items = self.collection_snapshot(a, &domain)?;
                let items = items.iter().map(value_to_expr).collect();
                Ok(StepOut::Stepped(Stmt::at(pos, StmtKind::ForItems(x, items, body))))
            }
            StmtKind::ForItems(x, mut items, body) => {
                if items.is_empty() {
                    return Ok(StepOut::Stepped(Stmt::skip()));
                }
                let first = items.remove(0);
                let mut inst = (*body).clone();
                substitute_in_stmt(&mut inst, &x, &first);
                let rest = Stmt::at(pos, StmtKind::ForItems(x, items, body));
                Ok(StepOut::Stepped(Stmt::seq(inst, rest)))
            }
            StmtKind::Call(target, m, args) => self.exec_call(a, pos, target, m, args),
            StmtKind::Send(msg, dest) => self.exec_send(a, pos, msg, dest),
            StmtKind::Await(aw) => Ok(StepOut::Yield(Stmt::at(pos, StmtKind::Await(aw)))),
            StmtKind::Compr(..) | StmtKind::NewMany(..) | StmtKind::Labeled(..) => {
                Err(EvalError::NotAValue("surface form survived lowering"))
            }
        }
    }

    fn exec_call(
        &mut self,
        a: Addr,
        pos: crate::diag::Pos,
        target: Expr,
        m: String,
        args: Vec<Expr>,
    ) -> Result<StepOut, EvalError> {
        let t = self.eval_in(a, &target)?.as_addr().ok_or(EvalError::NotAnAddress)?;
        let vals: Vec<Value> =
            args.iter().map(|e| self.eval_in(a, e)).collect::<Result<_, _>>()?;
        let arity = |want: usize| {
            if vals.len() == want {
                Ok(())
            } else {
                Err(EvalError::Arity(m.clone(), want))
            }
        };
        let class = self
            .state
            .class_of(t)
            .ok_or(EvalError::NoSuchObject(t))?
            .to_string();

        if m == "mark" && t == a {
            arity(1)?;
            self.events.push(Event::Mark { proc: a, value: vals[0].clone() });
            return Ok(StepOut::Stepped(Stmt::skip()));
        }
        if m == "start"
            && self.classes.is_process_class(&class)
            && self.classes.method(&class, "start").is_none()
        {
            arity(0)?;
            self.start_process(a, t)?;
            return Ok(StepOut::Stepped(Stmt::skip()));
        }
        match (class.as_str(), m.as_str()) {
            (SET_CLASS, "add") => {
                arity(1)?;
                let Some(Object::Set(s)) = self.local_object_mut(a, t) else {
                    return Err(EvalError::NoSuchObject(t));
                };
                s.insert(vals.into_iter().next().unwrap());
                Ok(StepOut::Stepped(Stmt::skip()))
            }
            (DS_CLASS, "add") => {
                arity(1)?;
                let Some(Object::Multi(m)) = self.local_object_mut(a, t) else {
                    return Err(EvalError::NoSuchObject(t));
                };
                *m.entry(vals.into_iter().next().unwrap()).or_insert(0) += 1;
                Ok(StepOut::Stepped(Stmt::skip()))
            }
            // deleting one instance of a duplicated key keeps the rest
            (DS_CLASS, "del") => {
                arity(1)?;
                let Some(Object::Multi(m)) = self.local_object_mut(a, t) else {
                    return Err(EvalError::NoSuchObject(t));
                };
                if let Some(n) = m.get_mut(&vals[0]) {
                    *n -= 1;
                    if *n == 0 {
                        m.remove(&vals[0]);
                    }
                }
                Ok(StepOut::Stepped(Stmt::skip()))
            }
            (SET_CLASS, "del") => {
                arity(1)?;
                let Some(Object::Set(s)) = self.local_object_mut(a, t) else {
                    return Err(EvalError::NoSuchObject(t));
                };
                s.remove(&vals[0]);
                Ok(StepOut::Stepped(Stmt::skip()))
            }
            (SEQUENCE_CLASS, "add") => {
                arity(1)?;
                let Some(Object::Seq(s)) = self.local_object_mut(a, t) else {
                    return Err(EvalError::NoSuchObject(t));
                };
                s.push(vals.into_iter().next().unwrap());
                Ok(StepOut::Stepped(Stmt::skip()))
            }
            _ => {
                // user-defined statement method; the target must live in the
                // caller's heap (self, or a not-yet-started process)
                if !self.state.heap_of(a).contains_key(&t) {
                    return Err(EvalError::NoSuchObject(t));
                }
                let (params, body) = self
                    .classes
                    .def_body(&class, &m)
                    .ok_or_else(|| EvalError::UnknownMethod(m.clone()))?;
                arity(params.len())?;
                let mut inst = body.clone();
                substitute_in_stmt(&mut inst, "self", &Expr::Addr(t));
                for (p, v) in params.iter().zip(&vals) {
                    substitute_in_stmt(&mut inst, p, &value_to_expr(v));
                }
                let _ = pos;
                Ok(StepOut::Stepped(inst))
            }
        }
    }

    fn exec_send(
        &mut self,
        a: Addr,
        pos: crate::diag::Pos,
        msg: Expr,
        dest: Expr,
    ) -> Result<StepOut, EvalError> {
        let v = self.eval_in(a, &msg)?;
        let d = self.eval_in(a, &dest)?.as_addr().ok_or(EvalError::NotAnAddress)?;
        let dclass = self.state.class_of(d).ok_or(EvalError::NoSuchObject(d))?.to_string();
        if self.classes.is_process_class(&dclass) {
            if !self.state.heaps.contains_key(&d) {
                // destination not started yet: the copy into its heap has
                // nowhere to go, so the send waits
                return Ok(StepOut::Blocked(Stmt::at(pos, StmtKind::Send(msg, dest))));
            }
            if self.program.uses_sent {
                let mut memo = BTreeMap::new();
                let copy = deep_copy(&mut self.state, &self.classes, a, a, &mut memo, &v);
                let pair = Value::Tuple(vec![copy, Value::Addr(d)]);
                self.append_history(a, SENT_FIELD, pair)?;
            }
            let mut memo = BTreeMap::new();
            let sent = deep_copy(&mut self.state, &self.classes, a, d, &mut memo, &v);
            self.state.channels.entry((a, d)).or_default().push_back(sent);
            self.metrics.unicast_sends += 1;
            if let Some(tag) = self.tag_of(&v) {
                *self.metrics.sends_by_tag.entry(tag).or_insert(0) += 1;
            }
            self.events.push(Event::Send { from: a, to: d, msg: v });
            Ok(StepOut::Stepped(Stmt::skip()))
        } else if dclass == SET_CLASS {
            // multicast: record one history pair for the whole group, then
            // unfold into per-member sends
            if self.program.uses_sent {
                let pair = Value::Tuple(vec![v.clone(), Value::Addr(d)]);
                self.append_history(a, SENT_FIELD, pair)?;
            }
            let members = self.collection_snapshot(a, &Expr::Addr(d))?;
            let sends = members
                .iter()
                .map(|m| {
                    Stmt::at(pos, StmtKind::Send(value_to_expr(&v), value_to_expr(m)))
                })
                .collect();
            Ok(StepOut::Stepped(Stmt::seq_all(sends)))
        } else {
            Err(EvalError::NotAnAddress)
        }
    }

    /// Starts `target`: moves its field record out of the creator's heap,
    /// deep-copies everything those fields reach into a fresh local heap,
    /// attaches empty history sequences, and sets the process running its
    /// `run` method.
    fn start_process(&mut self, creator: Addr, target: Addr) -> Result<(), EvalError> {
        let fields = match self.state.heaps.get_mut(&creator).and_then(|h| h.remove(&target)) {
            Some(Object::Fields(fs)) => fs,
            Some(_) => return Err(EvalError::NotARecord(target)),
            None => return Err(EvalError::NoSuchObject(target)),
        };
        self.state.heaps.insert(target, LocalHeap::new());
        let mut memo = BTreeMap::new();
        let mut copied = BTreeMap::new();
        for (k, v) in &fields {
            let c = deep_copy(&mut self.state, &self.classes, creator, target, &mut memo, v);
            copied.insert(k.clone(), c);
        }
        for (field, _) in [(RECEIVED_FIELD, 0), (SENT_FIELD, 1)] {
            let h = self.state.fresh_addr();
            self.state.types.insert(h, SEQUENCE_CLASS.into());
            self.state.heaps.get_mut(&target).unwrap().insert(h, Object::Seq(Vec::new()));
            copied.insert(field.into(), Value::Addr(h));
        }
        self.state.heaps.get_mut(&target).unwrap().insert(target, Object::Fields(copied));
        self.state.queues.insert(target, VecDeque::new());
        self.state.clocks.insert(target, 0);
        self.state.stmts.insert(
            target,
            Stmt::new(StmtKind::Call(Expr::Addr(target), "run".into(), Vec::new())),
        );
        Ok(())
    }

    /// Moves the message at `index` out of channel `(from, to)`; delivers it
    /// to the destination queue or drops it.
    pub fn arrive(&mut self, from: Addr, to: Addr, index: usize, deliver: bool) {
        let Some(q) = self.state.channels.get_mut(&(from, to)) else { return };
        let Some(msg) = q.remove(index) else { return };
        if q.is_empty() {
            self.state.channels.remove(&(from, to));
        }
        if deliver {
            self.state.queues.entry(to).or_default().push_back((msg, from));
        } else {
            self.metrics.dropped_messages += 1;
        }
    }

    /// Consumes one queued message at a yield point: appends a copy to the
    /// received history, merges the logical clock stamp, and prepends the
    /// bodies of all matching receive definitions. Returns false when the
    /// queue is empty.
    pub fn handle_message(&mut self, a: Addr) -> Result<bool, EvalError> {
        let Some((msg, sender)) = self.state.queues.get_mut(&a).and_then(|q| q.pop_front())
        else {
            return Ok(false);
        };
        if self.program.config.clock == ClockKind::Lamport {
            let pos = self.program.config.stamp_pos.unwrap_or(2) as usize;
            if let Value::Tuple(vs) = &msg {
                if let Some(stamp) =
                    vs.get(pos.saturating_sub(1)).and_then(|v| v.as_int()).and_then(|n| n.to_i64())
                {
                    let c = self.state.clocks.entry(a).or_insert(0);
                    *c = (*c).max(stamp);
                }
            }
        }
        if self.program.uses_received {
            let pair = Value::Tuple(vec![msg.clone(), Value::Addr(sender)]);
            let mut memo = BTreeMap::new();
            let copy = deep_copy(&mut self.state, &self.classes, a, a, &mut memo, &pair);
            self.append_history(a, RECEIVED_FIELD, copy)?;
        }
        let label = self
            .active_label(a)
            .ok_or(EvalError::NotAValue("message handling away from a yield point"))?;
        let class = self.state.class_of(a).unwrap_or_default().to_string();
        let heap = self.state.heap_of(a);
        let bodies = matching_bodies(
            &self.classes,
            &self.atoms,
            heap,
            &self.state.types,
            a,
            &class,
            &msg,
            sender,
            &label,
        );
        if !bodies.is_empty() {
            let mut body = Stmt::seq_all(bodies);
            substitute_in_stmt(&mut body, "self", &Expr::Addr(a));
            let old = self.state.stmts.remove(&a).expect("process is started");
            self.state.stmts.insert(a, Stmt::seq(body, old));
        }
        self.metrics.handled_messages += 1;
        self.sample(a);
        Ok(true)
    }

    /// Evaluates the conditions of the await at the yield point, committing
    /// to the first true clause.
    pub fn attempt_await(&mut self, a: Addr) -> Result<AwaitOutcome, EvalError> {
        let s = self.state.stmts.remove(&a).expect("process is started");
        let backup = s.clone();
        match self.attempt_rec(a, s) {
            Ok((s, out)) => {
                self.state.stmts.insert(a, s);
                if out == AwaitOutcome::Fired {
                    self.sample(a);
                }
                Ok(out)
            }
            Err(e) => {
                self.state.stmts.insert(a, backup);
                Err(e)
            }
        }
    }

    fn attempt_rec(&mut self, a: Addr, s: Stmt) -> Result<(Stmt, AwaitOutcome), EvalError> {
        let pos = s.pos;
        match s.kind {
            StmtKind::Seq(s1, s2) => {
                let (s1, out) = self.attempt_rec(a, *s1)?;
                Ok((Stmt::at(pos, StmtKind::Seq(Box::new(s1), s2)), out))
            }
            StmtKind::Await(aw) => {
                self.metrics.await_evals += 1;
                let heap = self.state.heaps.get(&a).ok_or(EvalError::NoSuchObject(a))?;
                let mut ctx = EvalCtx {
                    classes: &self.classes,
                    atoms: &self.atoms,
                    heap,
                    types: &self.state.types,
                    clock: self.state.clocks.get(&a).copied().unwrap_or(0),
                    inspections: 0,
                };
                let env = Env::new();
                let mut chosen = None;
                for (i, (cond, _)) in aw.clauses.iter().enumerate() {
                    if ctx.eval_bool(&env, cond)? {
                        chosen = Some(i);
                        break;
                    }
                }
                let insp = ctx.inspections;
                let clock = ctx.clock;
                self.state.clocks.insert(a, clock);
                self.metrics.await_inspections_total += insp;
                self.metrics.await_inspections_max = self.metrics.await_inspections_max.max(insp);
                match chosen {
                    Some(i) => {
                        let mut aw = *aw;
                        let (_, body) = aw.clauses.remove(i);
                        Ok((body, AwaitOutcome::Fired))
                    }
                    None => {
                        let has_timeout = aw.timeout.is_some();
                        Ok((
                            Stmt::at(pos, StmtKind::Await(aw)),
                            AwaitOutcome::Blocked { has_timeout },
                        ))
                    }
                }
            }
            _ => Err(EvalError::NotAValue("await attempt away from a yield point")),
        }
    }

    /// Takes the timeout branch of the await at the yield point. Only legal
    /// after an attempt reported a timeout is available.
    pub fn fire_timeout(&mut self, a: Addr) -> Result<(), EvalError> {
        fn go(s: Stmt) -> Result<Stmt, Stmt> {
            let pos = s.pos;
            match s.kind {
                StmtKind::Seq(s1, s2) => match go(*s1) {
                    Ok(s1) => Ok(Stmt::at(pos, StmtKind::Seq(Box::new(s1), s2))),
                    Err(s1) => Err(Stmt::at(pos, StmtKind::Seq(Box::new(s1), s2))),
                },
                StmtKind::Await(aw) => match aw.timeout {
                    Some((_, body)) => Ok(body),
                    None => Err(Stmt::at(pos, StmtKind::Await(aw))),
                },
                other => Err(Stmt::at(pos, other)),
            }
        }
        let s = self.state.stmts.remove(&a).expect("process is started");
        match go(s) {
            Ok(s) => {
                self.state.stmts.insert(a, s);
                Ok(())
            }
            Err(s) => {
                self.state.stmts.insert(a, s);
                Err(EvalError::NotAValue("timeout fired away from a timeout await"))
            }
        }
    }

    /// Label of the await at the yield point, if the process is at one.
    pub fn active_label(&self, a: Addr) -> Option<String> {
        match &spine_head(self.state.stmts.get(&a)?).kind {
            StmtKind::Await(aw) => Some(aw.label.clone()),
            _ => None,
        }
    }

    /// Whether the await at the yield point carries a timeout branch.
    pub fn at_timeout_await(&self, a: Addr) -> bool {
        match self.state.stmts.get(&a).map(|s| &spine_head(s).kind) {
            Some(StmtKind::Await(aw)) => aw.timeout.is_some(),
            _ => false,
        }
    }

    fn eval_in(&mut self, a: Addr, e: &Expr) -> Result<Value, EvalError> {
        let heap = self.state.heaps.get(&a).ok_or(EvalError::NoSuchObject(a))?;
        let mut ctx = EvalCtx {
            classes: &self.classes,
            atoms: &self.atoms,
            heap,
            types: &self.state.types,
            clock: self.state.clocks.get(&a).copied().unwrap_or(0),
            inspections: 0,
        };
        let env = Env::new();
        let out = ctx.eval(&env, e);
        let clock = ctx.clock;
        self.state.clocks.insert(a, clock);
        out
    }

    fn eval_bool_in(&mut self, a: Addr, e: &Expr) -> Result<bool, EvalError> {
        self.eval_in(a, e)?.truthy().ok_or(EvalError::NotABool)
    }

    /// Resolves an lvalue to (object address, field name).
    fn eval_lvalue(&mut self, a: Addr, lv: &LValue) -> Result<(Addr, String), EvalError> {
        match lv {
            LValue::Var(n) => Err(EvalError::UnboundVariable(n.clone())),
            LValue::Field(base, f) => {
                let obj = self.eval_in(a, base)?.as_addr().ok_or(EvalError::NotAnAddress)?;
                Ok((obj, f.clone()))
            }
        }
    }

    fn write_field(
        &mut self,
        proc: Addr,
        obj: Addr,
        field: &str,
        v: Value,
    ) -> Result<(), EvalError> {
        match self.state.heaps.get_mut(&proc).and_then(|h| h.get_mut(&obj)) {
            Some(Object::Fields(fs)) => {
                fs.insert(field.to_string(), v);
                Ok(())
            }
            Some(_) => Err(EvalError::NotARecord(obj)),
            None => Err(EvalError::NoSuchObject(obj)),
        }
    }

    fn local_object_mut(&mut self, proc: Addr, obj: Addr) -> Option<&mut Object> {
        self.state.heaps.get_mut(&proc).and_then(|h| h.get_mut(&obj))
    }

    fn append_history(&mut self, proc: Addr, field: &str, v: Value) -> Result<(), EvalError> {
        let addr = self
            .state
            .history_addr(proc, field)
            .ok_or(EvalError::NotAValue("history sequence missing"))?;
        match self.local_object_mut(proc, addr) {
            Some(Object::Seq(s)) => {
                s.push(v);
                Ok(())
            }
            _ => Err(EvalError::NoSuchObject(addr)),
        }
    }

    /// Elements of the collection `e` evaluates to, snapshotted: sets in
    /// their sorted order (a fixed linearization), sequences in order.
    fn collection_snapshot(&mut self, a: Addr, e: &Expr) -> Result<Vec<Value>, EvalError> {
        let addr = self.eval_in(a, e)?.as_addr().ok_or(EvalError::NotACollection)?;
        match self.state.heaps.get(&a).and_then(|h| h.get(&addr)) {
            Some(Object::Set(s)) => Ok(s.iter().cloned().collect()),
            Some(Object::Seq(s)) => Ok(s.clone()),
            Some(Object::Multi(m)) => Ok(m
                .iter()
                .flat_map(|(v, n)| std::iter::repeat(v.clone()).take(*n as usize))
                .collect()),
            Some(_) => Err(EvalError::NotACollection),
            None => Err(EvalError::NoSuchObject(addr)),
        }
    }

    fn tag_of(&self, v: &Value) -> Option<String> {
        match v {
            Value::Tuple(vs) => match vs.first() {
                Some(Value::Int(n)) => self.atoms.name_of(n).map(|s| s.to_string()),
                _ => None,
            },
            _ => None,
        }
    }

    fn sample(&mut self, a: Addr) {
        let received = self.state.history_len(a, RECEIVED_FIELD);
        self.metrics.max_received_len = self.metrics.max_received_len.max(received);
        let stored = self.state.stored_elements(a);
        self.metrics.max_stored_elements = self.metrics.max_stored_elements.max(stored);
    }
}

fn spine_head(s: &Stmt) -> &Stmt {
    match &s.kind {
        StmtKind::Seq(a, _) => spine_head(a),
        _ => s,
    }
}

fn new_object(class: &str) -> Object {
    match class {
        SET_CLASS => Object::Set(Default::default()),
        DS_CLASS => Object::Multi(Default::default()),
        SEQUENCE_CLASS => Object::Seq(Vec::new()),
        _ => Object::Fields(BTreeMap::new()),
    }
}
