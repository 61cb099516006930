//! Abstract syntax for the process language.
//!
//! The surface syntax is keyword-delimited (`:` ... `end`) and line-comment
//! friendly (`#`). Statements own a source position; expressions do not, so
//! structural comparison of transformed programs stays cheap.
//!
//! Sugar that the desugarer removes (labels on non-await statements, `and`,
//! `each`, aggregates, comprehensions, tuple-pattern iterators, `=`-prefixed
//! comprehension variables, wildcards) is part of this one AST. Await
//! conditions are deliberately kept in query form: the optimizer consumes
//! quantifications and the runtime evaluates them directly, because awaits
//! are re-evaluated and must stay side-effect free.

use crate::diag::Pos;
use num_bigint::BigInt;

pub type Name = String;

/// Heap address. Process addresses are global identifiers; whether an
/// address names a process is decided by the class it was allocated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Addr(pub u64);

impl std::fmt::Display for Addr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "@{}", self.0)
    }
}

/// Symbolic message tags (`'request'`) denote integers. Tags are collected
/// per program, sorted, and mapped to `ATOM_BASE + index`, so programs with
/// the same tag set agree on the encoding.
pub const ATOM_BASE: i64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelOrder {
    Fifo,
    Unordered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelReliability {
    Reliable,
    Unreliable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    None,
    Lamport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub order: ChannelOrder,
    pub reliability: ChannelReliability,
    pub clock: ClockKind,
    /// 1-based tuple component carrying the timestamp on every message,
    /// registered here so the runtime can merge clocks on message handling.
    /// Defaults to 2 (tag first, timestamp second) when a clock is configured.
    pub stamp_pos: Option<u32>,
}

impl Default for Configuration {
    fn default() -> Self {
        Configuration {
            order: ChannelOrder::Fifo,
            reliability: ChannelReliability::Reliable,
            clock: ClockKind::None,
            stamp_pos: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub config: Configuration,
    pub classes: Vec<ClassDef>,
    pub main: Method,
    /// Sorted symbolic tags appearing in the source.
    pub atoms: Vec<Name>,
    /// Cleared by dead-history elimination when no expression reads the
    /// corresponding history sequence; the runtime then skips its appends.
    pub uses_received: bool,
    pub uses_sent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDef {
    pub pos: Pos,
    pub name: Name,
    pub superclass: Name,
    pub methods: Vec<Method>,
    pub receives: Vec<ReceiveDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    /// Statement method, invoked as a statement.
    Def,
    /// Expression method, invoked inside expressions.
    Defun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub pos: Pos,
    pub kind: MethodKind,
    pub name: Name,
    pub params: Vec<Name>,
    pub body: MethodBody,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodBody {
    Stmt(Stmt),
    Expr(Expr),
}

/// One `receive` definition: several patterns, an optional `at` clause
/// restricting the yield points it handles, and one body.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiveDef {
    pub pos: Pos,
    pub arms: Vec<RecvArm>,
    /// `None` handles messages at every yield point.
    pub labels: Option<Vec<Name>>,
    pub body: Stmt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecvArm {
    pub pattern: Pattern,
    /// `from x` binds the sender.
    pub from: Option<Pattern>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    /// Binds, or constrains if the name is already bound in the same match.
    Var(Name),
    /// `=x`: must equal the current value of `x`.
    Bound(Name),
    Lit(Literal),
    Wildcard,
    Tuple(Vec<Pattern>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Bool(bool),
    Int(BigInt),
    /// Symbolic tag; erases to `ATOM_BASE + index` at runtime.
    Atom(Name),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub pos: Pos,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Skip,
    Assign(LValue, Expr),
    /// `x = new C`
    New(LValue, Name),
    /// `x = n new C`: sugar for a loop allocating `n` objects into a set.
    NewMany(LValue, Expr, Name),
    /// `x = { head : iters | cond }`: comprehension statement.
    Compr(LValue, Comprehension),
    Seq(Box<Stmt>, Box<Stmt>),
    If(Expr, Box<Stmt>, Box<Stmt>),
    For(Pattern, Expr, Box<Stmt>),
    /// Runtime-only unrolled loop over remaining items.
    ForItems(Name, Vec<Expr>, Box<Stmt>),
    While(Expr, Box<Stmt>),
    /// `target.m(args)` in statement position.
    Call(Expr, Name, Vec<Expr>),
    Send(Expr, Expr),
    Await(Box<AwaitStmt>),
    /// Label marker attached to a non-await statement (surface sugar).
    Labeled(Name, Box<Stmt>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AwaitStmt {
    /// Empty until label normalization runs.
    pub label: Name,
    pub clauses: Vec<(Expr, Stmt)>,
    pub timeout: Option<(Expr, Stmt)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LValue {
    /// Bare name; resolved to a field of `self` by the desugarer.
    Var(Name),
    Field(Expr, Name),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Literal),
    Var(Name),
    Field(Box<Expr>, Name),
    Tuple(Vec<Expr>),
    Call(Box<Expr>, Name, Vec<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    IsInstance(Box<Expr>, Name),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
    Quant(QuantKind, Vec<QIter>, Box<Expr>),
    /// Comprehension in expression position (await conditions and the
    /// converted aggregate forms).
    ComprExpr(Box<Comprehension>),
    Agg(AggOp, Box<Expr>),
    /// `{}`
    EmptySet,
    /// The `undefined` literal; uninitialized fields read as this value.
    Undefined,
    /// Runtime-only: an address plugged in by substitution.
    Addr(Addr),
    /// `logical_clock()`
    ClockRead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Not,
    IsTuple,
    Len,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    /// Identity on addresses, structural equality on literals and tuples.
    Is,
    Plus,
    Minus,
    Times,
    Lt,
    Le,
    Gt,
    Ge,
    /// `select(t, i)`: 1-based tuple component.
    Select,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggOp {
    Size,
    Sum,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantKind {
    Some,
    Each,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QIter {
    pub pattern: Pattern,
    pub domain: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comprehension {
    pub head: Expr,
    pub iters: Vec<QIter>,
    pub cond: Expr,
}

pub const PROCESS_CLASS: &str = "Process";
pub const SET_CLASS: &str = "Set";
pub const SEQUENCE_CLASS: &str = "Sequence";
/// Ordered structure used by incremental min/max maintenance under deletions.
pub const DS_CLASS: &str = "DS";

pub fn is_predefined_class(name: &str) -> bool {
    matches!(name, PROCESS_CLASS | SET_CLASS | SEQUENCE_CLASS | DS_CLASS)
}

impl Expr {
    pub fn self_var() -> Expr {
        Expr::Var("self".into())
    }

    pub fn self_field(name: &str) -> Expr {
        Expr::Field(Box::new(Expr::self_var()), name.into())
    }

    pub fn int(n: i64) -> Expr {
        Expr::Lit(Literal::Int(BigInt::from(n)))
    }

    pub fn bool(b: bool) -> Expr {
        Expr::Lit(Literal::Bool(b))
    }

    pub fn not(e: Expr) -> Expr {
        Expr::Unary(UnOp::Not, Box::new(e))
    }

    pub fn is(a: Expr, b: Expr) -> Expr {
        Expr::Binary(BinOp::Is, Box::new(a), Box::new(b))
    }

    /// `a != b`, represented as `not (a is b)`.
    pub fn neq(a: Expr, b: Expr) -> Expr {
        Expr::not(Expr::is(a, b))
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// Membership test `x in s` as the predefined `contains` call.
    pub fn contains(s: Expr, x: Expr) -> Expr {
        Expr::Call(Box::new(s), "contains".into(), vec![x])
    }
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Stmt {
        Stmt { pos: Pos::default(), kind }
    }

    pub fn at(pos: Pos, kind: StmtKind) -> Stmt {
        Stmt { pos, kind }
    }

    pub fn skip() -> Stmt {
        Stmt::new(StmtKind::Skip)
    }

    pub fn seq(a: Stmt, b: Stmt) -> Stmt {
        Stmt::new(StmtKind::Seq(Box::new(a), Box::new(b)))
    }

    /// Right-nested sequence of `stmts`; `skip` for an empty list.
    pub fn seq_all(stmts: Vec<Stmt>) -> Stmt {
        let mut it = stmts.into_iter().rev();
        let Some(last) = it.next() else {
            return Stmt::skip();
        };
        it.fold(last, |acc, s| Stmt::seq(s, acc))
    }

    /// Flattens nested `Seq` nodes into a list, dropping nothing.
    pub fn flatten(&self) -> Vec<&Stmt> {
        let mut out = Vec::new();
        fn go<'a>(s: &'a Stmt, out: &mut Vec<&'a Stmt>) {
            if let StmtKind::Seq(a, b) = &s.kind {
                go(a, out);
                go(b, out);
            } else {
                out.push(s);
            }
        }
        go(self, &mut out);
        out
    }
}

impl Pattern {
    /// Variables bound by this pattern, in left-to-right order, first
    /// occurrence only.
    pub fn binders(&self) -> Vec<Name> {
        let mut out = Vec::new();
        fn go(p: &Pattern, out: &mut Vec<Name>) {
            match p {
                Pattern::Var(n) => {
                    if !out.contains(n) {
                        out.push(n.clone());
                    }
                }
                Pattern::Tuple(ps) => ps.iter().for_each(|p| go(p, out)),
                Pattern::Bound(_) | Pattern::Lit(_) | Pattern::Wildcard => {}
            }
        }
        go(self, &mut out);
        out
    }

    /// The pattern as an expression, if it contains only variables,
    /// literals, and tuples.
    pub fn as_expr(&self) -> Option<Expr> {
        match self {
            Pattern::Var(n) => Some(Expr::Var(n.clone())),
            Pattern::Lit(l) => Some(Expr::Lit(l.clone())),
            Pattern::Tuple(ps) => ps
                .iter()
                .map(|p| p.as_expr())
                .collect::<Option<Vec<_>>>()
                .map(Expr::Tuple),
            Pattern::Bound(_) | Pattern::Wildcard => None,
        }
    }
}

/// Fresh-name supply: `__<kind><counter>` with one program-wide counter.
#[derive(Debug, Clone)]
pub struct Fresh {
    counter: u64,
}

impl Fresh {
    pub fn new() -> Self {
        Fresh { counter: 0 }
    }

    /// Starts above every `__<kind><n>` name already in `p`, so repeated
    /// pipeline stages never collide.
    pub fn seeded_from(p: &Program) -> Self {
        let mut max = 0u64;
        let mut scan = |name: &str| {
            if let Some(rest) = name.strip_prefix("__") {
                let digits: String =
                    rest.chars().skip_while(|c| c.is_ascii_alphabetic()).collect();
                if let Ok(n) = digits.parse::<u64>() {
                    max = max.max(n + 1);
                }
            }
        };
        for name in collect_names(p) {
            scan(&name);
        }
        Fresh { counter: max }
    }

    pub fn name(&mut self, kind: &str) -> Name {
        let n = self.counter;
        self.counter += 1;
        format!("__{kind}{n}")
    }
}

impl Default for Fresh {
    fn default() -> Self {
        Fresh::new()
    }
}

/// Every identifier appearing anywhere in the program (variables, fields,
/// labels, methods). Used to seed the fresh-name counter.
pub fn collect_names(p: &Program) -> Vec<Name> {
    let mut out = Vec::new();
    let mut on_name = |n: &Name| out.push(n.clone());
    for c in &p.classes {
        on_name(&c.name);
        for m in &c.methods {
            collect_method_names(m, &mut on_name);
        }
        for r in &c.receives {
            for arm in &r.arms {
                collect_pattern_names(&arm.pattern, &mut on_name);
                if let Some(f) = &arm.from {
                    collect_pattern_names(f, &mut on_name);
                }
            }
            if let Some(ls) = &r.labels {
                ls.iter().for_each(&mut on_name);
            }
            collect_stmt_names(&r.body, &mut on_name);
        }
    }
    collect_method_names(&p.main, &mut on_name);
    out
}

fn collect_method_names(m: &Method, on_name: &mut impl FnMut(&Name)) {
    on_name(&m.name);
    m.params.iter().for_each(&mut *on_name);
    match &m.body {
        MethodBody::Stmt(s) => collect_stmt_names(s, on_name),
        MethodBody::Expr(e) => collect_expr_names(e, on_name),
    }
}

fn collect_pattern_names(p: &Pattern, on_name: &mut impl FnMut(&Name)) {
    match p {
        Pattern::Var(n) | Pattern::Bound(n) => on_name(n),
        Pattern::Tuple(ps) => ps.iter().for_each(|p| collect_pattern_names(p, on_name)),
        Pattern::Lit(_) | Pattern::Wildcard => {}
    }
}

fn collect_lvalue_names(l: &LValue, on_name: &mut impl FnMut(&Name)) {
    match l {
        LValue::Var(n) => on_name(n),
        LValue::Field(e, n) => {
            collect_expr_names(e, on_name);
            on_name(n);
        }
    }
}

fn collect_stmt_names(s: &Stmt, on_name: &mut impl FnMut(&Name)) {
    match &s.kind {
        StmtKind::Skip => {}
        StmtKind::Assign(l, e) => {
            collect_lvalue_names(l, on_name);
            collect_expr_names(e, on_name);
        }
        StmtKind::New(l, c) => {
            collect_lvalue_names(l, on_name);
            on_name(c);
        }
        StmtKind::NewMany(l, e, c) => {
            collect_lvalue_names(l, on_name);
            collect_expr_names(e, on_name);
            on_name(c);
        }
        StmtKind::Compr(l, c) => {
            collect_lvalue_names(l, on_name);
            collect_compr_names(c, on_name);
        }
        StmtKind::Seq(a, b) => {
            collect_stmt_names(a, on_name);
            collect_stmt_names(b, on_name);
        }
        StmtKind::If(e, a, b) => {
            collect_expr_names(e, on_name);
            collect_stmt_names(a, on_name);
            collect_stmt_names(b, on_name);
        }
        StmtKind::For(p, e, b) => {
            collect_pattern_names(p, on_name);
            collect_expr_names(e, on_name);
            collect_stmt_names(b, on_name);
        }
        StmtKind::ForItems(n, es, b) => {
            on_name(n);
            es.iter().for_each(|e| collect_expr_names(e, on_name));
            collect_stmt_names(b, on_name);
        }
        StmtKind::While(e, b) => {
            collect_expr_names(e, on_name);
            collect_stmt_names(b, on_name);
        }
        StmtKind::Call(t, m, args) => {
            collect_expr_names(t, on_name);
            on_name(m);
            args.iter().for_each(|e| collect_expr_names(e, on_name));
        }
        StmtKind::Send(m, d) => {
            collect_expr_names(m, on_name);
            collect_expr_names(d, on_name);
        }
        StmtKind::Await(a) => {
            on_name(&a.label);
            for (e, s) in &a.clauses {
                collect_expr_names(e, on_name);
                collect_stmt_names(s, on_name);
            }
            if let Some((e, s)) = &a.timeout {
                collect_expr_names(e, on_name);
                collect_stmt_names(s, on_name);
            }
        }
        StmtKind::Labeled(l, b) => {
            on_name(l);
            collect_stmt_names(b, on_name);
        }
    }
}

fn collect_compr_names(c: &Comprehension, on_name: &mut impl FnMut(&Name)) {
    collect_expr_names(&c.head, on_name);
    for it in &c.iters {
        collect_pattern_names(&it.pattern, on_name);
        collect_expr_names(&it.domain, on_name);
    }
    collect_expr_names(&c.cond, on_name);
}

fn collect_expr_names(e: &Expr, on_name: &mut impl FnMut(&Name)) {
    match e {
        Expr::Lit(_) | Expr::EmptySet | Expr::Undefined | Expr::Addr(_) | Expr::ClockRead => {}
        Expr::Var(n) => on_name(n),
        Expr::Field(t, n) => {
            collect_expr_names(t, on_name);
            on_name(n);
        }
        Expr::Tuple(es) => es.iter().for_each(|e| collect_expr_names(e, on_name)),
        Expr::Call(t, m, args) => {
            collect_expr_names(t, on_name);
            on_name(m);
            args.iter().for_each(|e| collect_expr_names(e, on_name));
        }
        Expr::Unary(_, a) => collect_expr_names(a, on_name),
        Expr::Binary(_, a, b) => {
            collect_expr_names(a, on_name);
            collect_expr_names(b, on_name);
        }
        Expr::IsInstance(a, c) => {
            collect_expr_names(a, on_name);
            on_name(c);
        }
        Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
            collect_expr_names(a, on_name);
            collect_expr_names(b, on_name);
        }
        Expr::Quant(_, its, body) => {
            for it in its {
                collect_pattern_names(&it.pattern, on_name);
                collect_expr_names(&it.domain, on_name);
            }
            collect_expr_names(body, on_name);
        }
        Expr::ComprExpr(c) => collect_compr_names(c, on_name),
        Expr::Agg(_, a) => collect_expr_names(a, on_name),
    }
}
