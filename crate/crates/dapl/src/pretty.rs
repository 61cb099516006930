//! Canonical printer. `parse(print(parse(src)))` prints identically, so
//! printed output is the normal form used by golden and equality tests.
//!
//! Sugar is not reconstructed: calls always show their target (`self.m(...)`),
//! comprehensions always use the `head : iters` form, and awaits print the
//! clause form unless the body is exactly `skip` with no timeout.

use crate::ast::*;

pub fn program(p: &Program) -> String {
    let mut pr = Printer::new();
    pr.config(&p.config);
    for c in &p.classes {
        pr.blank();
        pr.class(c);
    }
    pr.blank();
    pr.method(&p.main);
    pr.out
}

pub fn stmt(s: &Stmt) -> String {
    let mut pr = Printer::new();
    pr.stmt(s);
    pr.out
}

pub fn expr(e: &Expr) -> String {
    let mut pr = Printer::new();
    pr.expr(e, 0);
    pr.out
}

pub fn pattern(p: &Pattern) -> String {
    let mut pr = Printer::new();
    pr.pattern(p);
    pr.out
}

struct Printer {
    out: String,
    indent: usize,
}

// binding strength, loosest first; operands needing >= strength get parens
const L_QUANT: u8 = 1;
const L_OR: u8 = 2;
const L_AND: u8 = 3;
const L_NOT: u8 = 4;
const L_CMP: u8 = 5;
const L_ADD: u8 = 6;
const L_MUL: u8 = 7;
const L_POST: u8 = 8;

impl Printer {
    fn new() -> Self {
        Printer { out: String::new(), indent: 0 }
    }

    fn push(&mut self, s: &str) {
        self.out.push_str(s);
    }

    fn line_start(&mut self) {
        for _ in 0..self.indent {
            self.out.push_str("  ");
        }
    }

    fn nl(&mut self) {
        self.out.push('\n');
    }

    fn blank(&mut self) {
        if !self.out.ends_with("\n\n") && !self.out.is_empty() {
            self.nl();
        }
    }

    fn config(&mut self, c: &Configuration) {
        self.push("configuration ");
        self.push(match c.order {
            ChannelOrder::Fifo => "fifo",
            ChannelOrder::Unordered => "unordered",
        });
        self.push(" ");
        self.push(match c.reliability {
            ChannelReliability::Reliable => "reliable",
            ChannelReliability::Unreliable => "unreliable",
        });
        if c.clock == ClockKind::Lamport {
            self.push(" lamport");
            if let Some(k) = c.stamp_pos {
                if k != 2 {
                    self.push(&format!(" stamp {k}"));
                }
            }
        } else if let Some(k) = c.stamp_pos {
            self.push(&format!(" stamp {k}"));
        }
        self.nl();
    }

    fn class(&mut self, c: &ClassDef) {
        self.line_start();
        self.push(&format!("class {} extends {}:", c.name, c.superclass));
        self.nl();
        self.indent += 1;
        let mut first = true;
        for m in &c.methods {
            if !first {
                self.nl();
            }
            first = false;
            self.method(m);
        }
        for r in &c.receives {
            if !first {
                self.nl();
            }
            first = false;
            self.receive(r);
        }
        self.indent -= 1;
        self.line_start();
        self.push("end");
        self.nl();
    }

    fn method(&mut self, m: &Method) {
        self.line_start();
        self.push(match m.kind {
            MethodKind::Def => "def ",
            MethodKind::Defun => "defun ",
        });
        self.push(&m.name);
        self.push("(");
        self.push(&m.params.join(", "));
        self.push("):");
        self.nl();
        self.indent += 1;
        match &m.body {
            MethodBody::Stmt(s) => self.stmt(s),
            MethodBody::Expr(e) => {
                self.line_start();
                self.expr(e, 0);
                self.nl();
            }
        }
        self.indent -= 1;
        self.line_start();
        self.push("end");
        self.nl();
    }

    fn receive(&mut self, r: &ReceiveDef) {
        self.line_start();
        self.push("receive ");
        for (i, arm) in r.arms.iter().enumerate() {
            if i > 0 {
                self.push(", ");
            }
            self.pattern(&arm.pattern);
            if let Some(f) = &arm.from {
                self.push(" from ");
                self.pattern(f);
            }
        }
        if let Some(labels) = &r.labels {
            self.push(" at ");
            self.push(&labels.join(", "));
        }
        self.push(":");
        self.nl();
        self.indent += 1;
        self.stmt(&r.body);
        self.indent -= 1;
        self.line_start();
        self.push("end");
        self.nl();
    }

    fn block(&mut self, s: &Stmt) {
        self.indent += 1;
        self.stmt(s);
        self.indent -= 1;
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Seq(a, b) => {
                self.stmt(a);
                self.stmt(b);
                return;
            }
            StmtKind::Labeled(l, inner) => {
                self.line_start();
                self.push(&format!("-- {l}"));
                self.nl();
                self.stmt(inner);
                return;
            }
            _ => {}
        }
        if let StmtKind::Await(a) = &s.kind {
            if !a.label.is_empty() {
                self.line_start();
                self.push(&format!("-- {}", a.label));
                self.nl();
            }
        }
        self.line_start();
        match &s.kind {
            StmtKind::Skip => self.push("skip"),
            StmtKind::Assign(lv, e) => {
                self.lvalue(lv);
                self.push(" = ");
                self.expr(e, 0);
            }
            StmtKind::New(lv, class) => {
                self.lvalue(lv);
                if class == SET_CLASS {
                    self.push(" = {}");
                } else {
                    self.push(&format!(" = new {class}"));
                }
            }
            StmtKind::NewMany(lv, n, class) => {
                self.lvalue(lv);
                self.push(" = ");
                self.expr(n, L_POST);
                self.push(&format!(" new {class}"));
            }
            StmtKind::Compr(lv, c) => {
                self.lvalue(lv);
                self.push(" = ");
                self.comprehension(c);
            }
            StmtKind::If(cond, then, els) => {
                self.push("if ");
                self.expr(cond, 0);
                self.push(":");
                self.nl();
                self.block(then);
                if els.kind != StmtKind::Skip {
                    self.line_start();
                    self.push("else:");
                    self.nl();
                    self.block(els);
                }
                self.line_start();
                self.push("end");
            }
            StmtKind::For(pat, domain, body) => {
                self.push("for ");
                self.pattern(pat);
                self.push(" in ");
                self.expr(domain, 0);
                self.push(":");
                self.nl();
                self.block(body);
                self.line_start();
                self.push("end");
            }
            StmtKind::ForItems(name, items, body) => {
                // residual form reached only during execution; shown for debug
                self.push(&format!("for {name} over <"));
                for (i, e) in items.iter().enumerate() {
                    if i > 0 {
                        self.push("; ");
                    }
                    self.expr(e, 0);
                }
                self.push(">:");
                self.nl();
                self.block(body);
                self.line_start();
                self.push("end");
            }
            StmtKind::While(cond, body) => {
                self.push("while ");
                self.expr(cond, 0);
                self.push(":");
                self.nl();
                self.block(body);
                self.line_start();
                self.push("end");
            }
            StmtKind::Call(target, m, args) => {
                self.expr(target, L_POST);
                self.push(&format!(".{m}("));
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    self.expr(a, 0);
                }
                self.push(")");
            }
            StmtKind::Send(msg, dest) => {
                self.push("send ");
                self.expr(msg, 0);
                self.push(" to ");
                self.expr(dest, 0);
            }
            StmtKind::Await(a) => {
                self.push("await ");
                let simple = a.clauses.len() == 1
                    && a.clauses[0].1.kind == StmtKind::Skip
                    && a.timeout.is_none();
                if simple {
                    self.expr(&a.clauses[0].0, 0);
                } else {
                    for (i, (cond, body)) in a.clauses.iter().enumerate() {
                        if i > 0 {
                            self.line_start();
                            self.push("or ");
                        }
                        self.expr(cond, 0);
                        self.push(":");
                        self.nl();
                        self.block(body);
                    }
                    if let Some((period, body)) = &a.timeout {
                        self.line_start();
                        self.push("timeout ");
                        self.expr(period, 0);
                        self.push(":");
                        self.nl();
                        self.block(body);
                    }
                    self.line_start();
                    self.push("end");
                }
            }
            StmtKind::Seq(..) | StmtKind::Labeled(..) => unreachable!(),
        }
        self.nl();
    }

    fn lvalue(&mut self, lv: &LValue) {
        match lv {
            LValue::Var(n) => self.push(n),
            LValue::Field(obj, f) => {
                self.expr(obj, L_POST);
                self.push(&format!(".{f}"));
            }
        }
    }

    fn pattern(&mut self, p: &Pattern) {
        match p {
            Pattern::Var(n) => self.push(n),
            Pattern::Bound(n) => self.push(&format!("={n}")),
            Pattern::Wildcard => self.push("_"),
            Pattern::Lit(l) => self.literal(l),
            Pattern::Tuple(ps) => {
                self.push("(");
                for (i, q) in ps.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    self.pattern(q);
                }
                if ps.len() == 1 {
                    self.push(",");
                }
                self.push(")");
            }
        }
    }

    fn literal(&mut self, l: &Literal) {
        match l {
            Literal::Bool(true) => self.push("true"),
            Literal::Bool(false) => self.push("false"),
            Literal::Int(n) => self.push(&n.to_string()),
            Literal::Atom(a) => self.push(&format!("'{a}'")),
        }
    }

    fn comprehension(&mut self, c: &Comprehension) {
        self.push("{ ");
        self.expr(&c.head, 0);
        self.push(" : ");
        for (i, it) in c.iters.iter().enumerate() {
            if i > 0 {
                self.push(", ");
            }
            self.pattern(&it.pattern);
            self.push(" in ");
            self.expr(&it.domain, L_AND);
        }
        if c.cond != Expr::bool(true) {
            self.push(" | ");
            self.expr(&c.cond, 0);
        }
        self.push(" }");
    }

    fn expr(&mut self, e: &Expr, min: u8) {
        let level = expr_level(e);
        if level < min {
            self.push("(");
            self.expr(e, 0);
            self.push(")");
            return;
        }
        match e {
            Expr::Lit(l) => self.literal(l),
            Expr::Var(n) => self.push(n),
            Expr::Undefined => self.push("undefined"),
            Expr::Addr(a) => self.push(&a.to_string()),
            Expr::ClockRead => self.push("logical_clock()"),
            Expr::EmptySet => self.push("{}"),
            Expr::Field(obj, f) => {
                self.expr(obj, L_POST);
                self.push(&format!(".{f}"));
            }
            Expr::Tuple(es) => {
                self.push("(");
                for (i, x) in es.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    self.expr(x, 0);
                }
                if es.len() == 1 {
                    self.push(",");
                }
                self.push(")");
            }
            Expr::Call(target, m, args) => {
                // `in` sugar for membership tests keeps printed queries short
                if m == "contains" && args.len() == 1 {
                    self.expr(&args[0], L_ADD);
                    self.push(" in ");
                    self.expr(target, L_ADD);
                    return;
                }
                self.expr(target, L_POST);
                self.push(&format!(".{m}("));
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    self.expr(a, 0);
                }
                self.push(")");
            }
            Expr::Unary(op, a) => match op {
                UnOp::Not => {
                    // `x != y` and `x not in s` render without the outer not
                    if let Expr::Binary(BinOp::Is, l, r) = a.as_ref() {
                        self.expr(l, L_ADD);
                        self.push(" != ");
                        self.expr(r, L_ADD);
                        return;
                    }
                    if let Expr::Call(t, m, args) = a.as_ref() {
                        if m == "contains" && args.len() == 1 {
                            self.expr(&args[0], L_ADD);
                            self.push(" not in ");
                            self.expr(t, L_ADD);
                            return;
                        }
                    }
                    self.push("not ");
                    self.expr(a, L_NOT);
                }
                UnOp::IsTuple => {
                    self.push("istuple(");
                    self.expr(a, 0);
                    self.push(")");
                }
                UnOp::Len => {
                    self.push("len(");
                    self.expr(a, 0);
                    self.push(")");
                }
            },
            Expr::Binary(op, l, r) => match op {
                BinOp::Select => {
                    self.push("select(");
                    self.expr(l, 0);
                    self.push(", ");
                    self.expr(r, 0);
                    self.push(")");
                }
                BinOp::Is => {
                    self.expr(l, L_ADD);
                    self.push(" == ");
                    self.expr(r, L_ADD);
                }
                BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                    self.expr(l, L_ADD);
                    self.push(match op {
                        BinOp::Lt => " < ",
                        BinOp::Le => " <= ",
                        BinOp::Gt => " > ",
                        BinOp::Ge => " >= ",
                        _ => unreachable!(),
                    });
                    self.expr(r, L_ADD);
                }
                BinOp::Plus | BinOp::Minus => {
                    self.expr(l, L_ADD);
                    self.push(if *op == BinOp::Plus { " + " } else { " - " });
                    self.expr(r, L_MUL);
                }
                BinOp::Times => {
                    self.expr(l, L_MUL);
                    self.push(" * ");
                    self.expr(r, L_POST);
                }
            },
            Expr::IsInstance(a, class) => {
                self.push("isinstance(");
                self.expr(a, 0);
                self.push(&format!(", {class})"));
            }
            Expr::And(l, r) => {
                self.expr(l, L_AND);
                self.push(" and ");
                self.expr(r, L_NOT);
            }
            Expr::Or(l, r) => {
                self.expr(l, L_OR);
                self.push(" or ");
                self.expr(r, L_AND);
            }
            Expr::Implies(l, r) => {
                self.expr(l, L_OR);
                self.push(" implies ");
                self.expr(r, L_QUANT);
            }
            Expr::Quant(kind, iters, body) => {
                self.push(match kind {
                    QuantKind::Some => "some ",
                    QuantKind::Each => "each ",
                });
                for (i, it) in iters.iter().enumerate() {
                    if i > 0 {
                        self.push(", ");
                    }
                    self.pattern(&it.pattern);
                    self.push(" in ");
                    self.expr(&it.domain, L_AND);
                }
                self.push(" | ");
                self.expr(body, L_QUANT);
            }
            Expr::ComprExpr(c) => self.comprehension(c),
            Expr::Agg(op, a) => {
                self.push(match op {
                    AggOp::Size => "size(",
                    AggOp::Sum => "sum(",
                    AggOp::Max => "max(",
                    AggOp::Min => "min(",
                });
                self.expr(a, 0);
                self.push(")");
            }
        }
    }
}

fn expr_level(e: &Expr) -> u8 {
    match e {
        Expr::Quant(..) | Expr::Implies(..) => L_QUANT,
        Expr::Or(..) => L_OR,
        Expr::And(..) => L_AND,
        Expr::Unary(UnOp::Not, inner) => match inner.as_ref() {
            Expr::Binary(BinOp::Is, ..) => L_CMP,
            Expr::Call(_, m, args) if m == "contains" && args.len() == 1 => L_CMP,
            _ => L_NOT,
        },
        Expr::Binary(op, ..) => match op {
            BinOp::Is | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => L_CMP,
            BinOp::Plus | BinOp::Minus => L_ADD,
            BinOp::Times => L_MUL,
            BinOp::Select => L_POST,
        },
        Expr::Call(_, m, args) if m == "contains" && args.len() == 1 => L_CMP,
        _ => L_POST,
    }
}
