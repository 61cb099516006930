//! Recursive-descent parser.
//!
//! Newlines are insignificant; statements are separated by structure (and
//! optionally `;`). Blocks open with `:` and close with `end`. A method body
//! may also be a single inline statement (`def main() skip`).
//!
//! Quantifier bodies extend maximally to the right, so conjunctions of
//! quantifications must be parenthesized. Inside multi-clause awaits, a
//! trailing expression statement should be terminated with `;` so a
//! following `or` reads as the next clause rather than a disjunction.

use crate::ast::*;
use crate::diag::{Diagnostic, Pos};
use crate::lexer::{lex, Spanned, Tok};

pub fn parse(src: &str) -> Result<Program, Diagnostic> {
    let toks = lex(src)?;
    let mut p = Parser { toks, i: 0 };
    p.program()
}

struct Parser {
    toks: Vec<Spanned>,
    i: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.i + 1).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].tok.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok) -> PResult<()> {
        if self.peek() == &t {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {t}, found {}", self.peek())))
        }
    }

    fn err(&self, msg: impl Into<String>) -> Diagnostic {
        Diagnostic::new(self.pos(), "parse", msg)
    }

    fn ident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.err(format!("expected identifier, found {other}"))),
        }
    }

    fn skip_semis(&mut self) {
        while self.eat(&Tok::Semi) {}
    }

    // ---- program structure ----

    fn program(&mut self) -> PResult<Program> {
        self.skip_semis();
        let config = self.configuration()?;
        let mut classes = Vec::new();
        self.skip_semis();
        while self.peek() == &Tok::Class {
            classes.push(self.class_def()?);
            self.skip_semis();
        }
        let main = if self.peek() == &Tok::Def {
            self.method(MethodKind::Def)?
        } else {
            return Err(self.err(format!(
                "expected top-level `def`, found {}",
                self.peek()
            )));
        };
        self.skip_semis();
        self.expect(Tok::Eof)?;
        let mut program = Program {
            config,
            classes,
            main,
            atoms: Vec::new(),
            uses_received: true,
            uses_sent: true,
        };
        program.atoms = collect_atoms(&program);
        Ok(program)
    }

    fn configuration(&mut self) -> PResult<Configuration> {
        if self.peek() != &Tok::Configuration {
            // default channels: ordered and lossless, no logical clock
            return Ok(Configuration {
                order: ChannelOrder::Fifo,
                reliability: ChannelReliability::Reliable,
                clock: ClockKind::None,
                stamp_pos: None,
            });
        }
        self.expect(Tok::Configuration)?;
        let mut order = None;
        let mut reliability = None;
        let mut clock = ClockKind::None;
        let mut stamp_pos = None;
        loop {
            match self.peek().clone() {
                Tok::Ident(word) => match word.as_str() {
                    "fifo" => {
                        self.bump();
                        order = Some(ChannelOrder::Fifo);
                    }
                    "unordered" => {
                        self.bump();
                        order = Some(ChannelOrder::Unordered);
                    }
                    "reliable" => {
                        self.bump();
                        reliability = Some(ChannelReliability::Reliable);
                    }
                    "unreliable" => {
                        self.bump();
                        reliability = Some(ChannelReliability::Unreliable);
                    }
                    "lamport" => {
                        self.bump();
                        clock = ClockKind::Lamport;
                    }
                    "stamp" => {
                        self.bump();
                        match self.bump() {
                            Tok::Int(n) => {
                                let k: u32 = n.to_string().parse().map_err(|_| {
                                    self.err("stamp position out of range")
                                })?;
                                if k == 0 {
                                    return Err(self.err("stamp position is 1-based"));
                                }
                                stamp_pos = Some(k);
                            }
                            _ => return Err(self.err("expected integer after `stamp`")),
                        }
                    }
                    _ => break,
                },
                _ => break,
            }
        }
        let order = order.ok_or_else(|| self.err("configuration must name a channel order (fifo|unordered)"))?;
        let reliability = reliability
            .ok_or_else(|| self.err("configuration must name a reliability (reliable|unreliable)"))?;
        if clock == ClockKind::Lamport && stamp_pos.is_none() {
            stamp_pos = Some(2);
        }
        Ok(Configuration { order, reliability, clock, stamp_pos })
    }

    fn class_def(&mut self) -> PResult<ClassDef> {
        let pos = self.pos();
        self.expect(Tok::Class)?;
        let name = self.ident()?;
        self.expect(Tok::Extends)?;
        let superclass = self.ident()?;
        self.expect(Tok::Colon)?;
        let mut methods = Vec::new();
        let mut receives = Vec::new();
        self.skip_semis();
        loop {
            match self.peek() {
                Tok::Def => methods.push(self.method(MethodKind::Def)?),
                Tok::Defun => methods.push(self.method(MethodKind::Defun)?),
                Tok::Receive => receives.push(self.receive_def()?),
                Tok::End => {
                    self.bump();
                    break;
                }
                other => {
                    return Err(self.err(format!(
                        "expected `def`, `defun`, `receive`, or `end`, found {other}"
                    )))
                }
            }
            self.skip_semis();
        }
        Ok(ClassDef { pos, name, superclass, methods, receives })
    }

    fn method(&mut self, kind: MethodKind) -> PResult<Method> {
        let pos = self.pos();
        self.bump(); // def | defun
        let name = self.ident()?;
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                params.push(self.ident()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        let body = match kind {
            MethodKind::Def => {
                if self.eat(&Tok::Colon) {
                    let body = self.block(&[Tok::End])?;
                    self.expect(Tok::End)?;
                    MethodBody::Stmt(body)
                } else {
                    MethodBody::Stmt(self.stmt()?)
                }
            }
            MethodKind::Defun => {
                if self.eat(&Tok::Colon) {
                    let e = self.expr()?;
                    self.expect(Tok::End)?;
                    MethodBody::Expr(e)
                } else {
                    MethodBody::Expr(self.expr()?)
                }
            }
        };
        Ok(Method { pos, kind, name, params, body })
    }

    fn receive_def(&mut self) -> PResult<ReceiveDef> {
        let pos = self.pos();
        self.expect(Tok::Receive)?;
        let mut arms = Vec::new();
        loop {
            let pattern = self.pattern()?;
            let from = if self.eat(&Tok::From) { Some(self.pattern()?) } else { None };
            arms.push(RecvArm { pattern, from });
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        let labels = if self.eat(&Tok::At) {
            let mut ls = vec![self.ident()?];
            while self.eat(&Tok::Comma) {
                ls.push(self.ident()?);
            }
            Some(ls)
        } else {
            None
        };
        let body = if self.eat(&Tok::Colon) {
            let b = self.block(&[Tok::End])?;
            self.expect(Tok::End)?;
            b
        } else {
            self.stmt()?
        };
        Ok(ReceiveDef { pos, arms, labels, body })
    }

    // ---- statements ----

    /// Statements until (not consuming) one of `stops`.
    fn block(&mut self, stops: &[Tok]) -> PResult<Stmt> {
        let mut stmts = Vec::new();
        self.skip_semis();
        while !stops.contains(self.peek()) {
            if self.peek() == &Tok::Eof {
                return Err(self.err("unexpected end of input inside block"));
            }
            stmts.push(self.stmt()?);
            self.skip_semis();
        }
        Ok(Stmt::seq_all(stmts))
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Marker => {
                self.bump();
                let label = self.ident().map_err(|_| {
                    Diagnostic::new(pos, "parse", "label marker `--` must be followed by a name")
                })?;
                let inner = self.stmt()?;
                if let StmtKind::Await(mut a) = inner.kind {
                    if !a.label.is_empty() {
                        return Err(Diagnostic::new(pos, "parse", "await already labeled"));
                    }
                    a.label = label;
                    Ok(Stmt::at(pos, StmtKind::Await(a)))
                } else {
                    Ok(Stmt::at(pos, StmtKind::Labeled(label, Box::new(inner))))
                }
            }
            Tok::Skip => {
                self.bump();
                Ok(Stmt::at(pos, StmtKind::Skip))
            }
            Tok::If => {
                self.bump();
                let cond = self.expr()?;
                self.expect(Tok::Colon)?;
                let then = self.block(&[Tok::Else, Tok::End])?;
                let els = if self.eat(&Tok::Else) {
                    self.expect(Tok::Colon)?;
                    self.block(&[Tok::End])?
                } else {
                    Stmt::skip()
                };
                self.expect(Tok::End)?;
                Ok(Stmt::at(pos, StmtKind::If(cond, Box::new(then), Box::new(els))))
            }
            Tok::For => {
                self.bump();
                let pat = self.pattern()?;
                self.expect(Tok::In)?;
                let domain = self.expr()?;
                self.expect(Tok::Colon)?;
                let body = self.block(&[Tok::End])?;
                self.expect(Tok::End)?;
                Ok(Stmt::at(pos, StmtKind::For(pat, domain, Box::new(body))))
            }
            Tok::While => {
                self.bump();
                let cond = self.expr()?;
                self.expect(Tok::Colon)?;
                let body = self.block(&[Tok::End])?;
                self.expect(Tok::End)?;
                Ok(Stmt::at(pos, StmtKind::While(cond, Box::new(body))))
            }
            Tok::Send => {
                self.bump();
                let msg = self.expr()?;
                self.expect(Tok::To)?;
                let dest = self.expr()?;
                Ok(Stmt::at(pos, StmtKind::Send(msg, dest)))
            }
            Tok::Await => {
                self.bump();
                self.await_stmt(pos)
            }
            _ => self.assign_or_call(pos),
        }
    }

    fn await_stmt(&mut self, pos: Pos) -> PResult<Stmt> {
        let first = self.expr()?;
        if !self.eat(&Tok::Colon) {
            // simple form: `await e` is `await e: skip` without `end`
            let a = AwaitStmt {
                label: String::new(),
                clauses: vec![(first, Stmt::skip())],
                timeout: None,
            };
            return Ok(Stmt::at(pos, StmtKind::Await(Box::new(a))));
        }
        let mut clauses = Vec::new();
        let mut timeout = None;
        let body = self.block(&[Tok::Or, Tok::Timeout, Tok::End])?;
        clauses.push((first, body));
        loop {
            if self.eat(&Tok::Or) {
                let cond = self.expr()?;
                self.expect(Tok::Colon)?;
                let body = self.block(&[Tok::Or, Tok::Timeout, Tok::End])?;
                clauses.push((cond, body));
            } else if self.eat(&Tok::Timeout) {
                let period = self.expr()?;
                self.expect(Tok::Colon)?;
                let body = self.block(&[Tok::End])?;
                timeout = Some((period, body));
                break;
            } else {
                break;
            }
        }
        self.expect(Tok::End)?;
        let a = AwaitStmt { label: String::new(), clauses, timeout };
        Ok(Stmt::at(pos, StmtKind::Await(Box::new(a))))
    }

    /// Assignment, object creation, comprehension statement, or call.
    fn assign_or_call(&mut self, pos: Pos) -> PResult<Stmt> {
        let target = self.postfix_expr()?;
        if self.eat(&Tok::Assign) {
            let lv = match target {
                Expr::Var(n) => LValue::Var(n),
                Expr::Field(obj, f) => LValue::Field(*obj, f),
                _ => return Err(Diagnostic::new(pos, "parse", "invalid assignment target")),
            };
            return self.assignment_rhs(pos, lv);
        }
        match target {
            Expr::Call(target, m, args) => Ok(Stmt::at(pos, StmtKind::Call(*target, m, args))),
            _ => Err(Diagnostic::new(
                pos,
                "parse",
                "expected a statement (assignment, call, or keyword form)",
            )),
        }
    }

    fn assignment_rhs(&mut self, pos: Pos, lv: LValue) -> PResult<Stmt> {
        if self.eat(&Tok::New) {
            let class = self.ident()?;
            return Ok(Stmt::at(pos, StmtKind::New(lv, class)));
        }
        if self.peek() == &Tok::LBrace {
            self.bump();
            if self.eat(&Tok::RBrace) {
                // `x = {}` allocates an empty set
                return Ok(Stmt::at(pos, StmtKind::New(lv, SET_CLASS.into())));
            }
            let compr = self.comprehension_body()?;
            return Ok(Stmt::at(pos, StmtKind::Compr(lv, compr)));
        }
        let e = self.expr()?;
        if self.eat(&Tok::New) {
            let class = self.ident()?;
            return Ok(Stmt::at(pos, StmtKind::NewMany(lv, e, class)));
        }
        Ok(Stmt::at(pos, StmtKind::Assign(lv, e)))
    }

    // ---- patterns ----

    fn pattern(&mut self) -> PResult<Pattern> {
        match self.peek().clone() {
            Tok::Assign => {
                self.bump();
                Ok(Pattern::Bound(self.ident()?))
            }
            Tok::Ident(n) => {
                self.bump();
                if n == "_" {
                    Ok(Pattern::Wildcard)
                } else {
                    Ok(Pattern::Var(n))
                }
            }
            Tok::Int(n) => {
                self.bump();
                Ok(Pattern::Lit(Literal::Int(n)))
            }
            Tok::True => {
                self.bump();
                Ok(Pattern::Lit(Literal::Bool(true)))
            }
            Tok::False => {
                self.bump();
                Ok(Pattern::Lit(Literal::Bool(false)))
            }
            Tok::Atom(a) => {
                self.bump();
                Ok(Pattern::Lit(Literal::Atom(a)))
            }
            Tok::LParen => {
                self.bump();
                let mut ps = Vec::new();
                if self.eat(&Tok::RParen) {
                    return Ok(Pattern::Tuple(ps));
                }
                loop {
                    ps.push(self.pattern()?);
                    if self.eat(&Tok::RParen) {
                        break;
                    }
                    self.expect(Tok::Comma)?;
                    if self.eat(&Tok::RParen) {
                        break; // trailing comma: singleton or n-tuple
                    }
                }
                Ok(Pattern::Tuple(ps))
            }
            other => Err(self.err(format!("expected pattern, found {other}"))),
        }
    }

    // ---- expressions ----

    fn expr(&mut self) -> PResult<Expr> {
        if matches!(self.peek(), Tok::Some | Tok::Each) {
            return self.quantifier();
        }
        let lhs = self.or_expr()?;
        if self.eat(&Tok::Implies) {
            let rhs = self.expr()?; // right associative, quantifier allowed
            return Ok(Expr::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn quantifier(&mut self) -> PResult<Expr> {
        let kind = match self.bump() {
            Tok::Some => QuantKind::Some,
            Tok::Each => QuantKind::Each,
            _ => unreachable!(),
        };
        let iters = self.quant_iters()?;
        self.expect(Tok::Pipe)?;
        let body = self.expr()?;
        Ok(Expr::Quant(kind, iters, Box::new(body)))
    }

    fn quant_iters(&mut self) -> PResult<Vec<QIter>> {
        let mut iters = vec![self.quant_iter()?];
        while self.eat(&Tok::Comma) {
            iters.push(self.quant_iter()?);
        }
        Ok(iters)
    }

    fn quant_iter(&mut self) -> PResult<QIter> {
        // `received(pat [from pat])` iterates (message, sender) pairs.
        if let Tok::Ident(name) = self.peek().clone() {
            if (name == "received" || name == "sent") && self.peek2() == &Tok::LParen {
                self.bump();
                self.bump();
                let pattern = self.history_pattern(&name)?;
                return Ok(QIter { pattern, domain: Expr::Var(name) });
            }
        }
        let pattern = self.pattern()?;
        self.expect(Tok::In)?;
        let domain = self.or_expr()?;
        Ok(QIter { pattern, domain })
    }

    /// After `received(` / `sent(`: comma-separated message patterns (more
    /// than one means a tuple message), then optional `from`/`to` partner,
    /// then `)`. Yields the (message, partner) pair pattern.
    fn history_pattern(&mut self, name: &str) -> PResult<Pattern> {
        let mut parts = vec![self.pattern()?];
        while self.eat(&Tok::Comma) {
            parts.push(self.pattern()?);
        }
        let msg = if parts.len() == 1 { parts.pop().unwrap() } else { Pattern::Tuple(parts) };
        let other = if self.eat(&Tok::From) {
            if name == "sent" {
                return Err(self.err("`sent` pairs use `to`, not `from`"));
            }
            self.pattern()?
        } else if self.eat(&Tok::To) {
            if name == "received" {
                return Err(self.err("`received` pairs use `from`, not `to`"));
            }
            self.pattern()?
        } else {
            Pattern::Wildcard
        };
        self.expect(Tok::RParen)?;
        Ok(Pattern::Tuple(vec![msg, other]))
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        // an `or` opening a new line separates await clauses, so the binary
        // operator only chains on the line it started on
        while self.peek() == &Tok::Or && self.same_line_as_prev() {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn same_line_as_prev(&self) -> bool {
        self.i > 0 && self.toks[self.i].pos.line == self.toks[self.i - 1].pos.line
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while self.eat(&Tok::And) {
            let rhs = self.not_expr()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::Not) {
            let e = self.not_expr()?;
            return Ok(Expr::not(e));
        }
        if matches!(self.peek(), Tok::Some | Tok::Each) {
            return self.quantifier();
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> PResult<Expr> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Tok::Is | Tok::EqEq => Some(BinOp::Is),
            Tok::Neq => {
                self.bump();
                let rhs = self.add_expr()?;
                return Ok(Expr::neq(lhs, rhs));
            }
            Tok::Lt => Some(BinOp::Lt),
            Tok::Le => Some(BinOp::Le),
            Tok::Gt => Some(BinOp::Gt),
            Tok::Ge => Some(BinOp::Ge),
            Tok::In => {
                self.bump();
                let s = self.add_expr()?;
                return Ok(Expr::contains(s, lhs));
            }
            Tok::Not if self.peek2() == &Tok::In => {
                self.bump();
                self.bump();
                let s = self.add_expr()?;
                return Ok(Expr::not(Expr::contains(s, lhs)));
            }
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let rhs = self.add_expr()?;
            return Ok(Expr::bin(op, lhs, rhs));
        }
        Ok(lhs)
    }

    fn add_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Plus,
                Tok::Minus => BinOp::Minus,
                _ => break,
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.postfix_expr()?;
        while self.eat(&Tok::Star) {
            let rhs = self.postfix_expr()?;
            lhs = Expr::bin(BinOp::Times, lhs, rhs);
        }
        Ok(lhs)
    }

    fn postfix_expr(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        while self.eat(&Tok::Dot) {
            let name = self.ident()?;
            if self.eat(&Tok::LParen) {
                let args = self.call_args()?;
                e = Expr::Call(Box::new(e), name, args);
            } else {
                e = Expr::Field(Box::new(e), name);
            }
        }
        Ok(e)
    }

    fn call_args(&mut self) -> PResult<Vec<Expr>> {
        let mut args = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat(&Tok::RParen) {
                break;
            }
            self.expect(Tok::Comma)?;
        }
        Ok(args)
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(Expr::Lit(Literal::Int(n)))
            }
            Tok::True => {
                self.bump();
                Ok(Expr::bool(true))
            }
            Tok::False => {
                self.bump();
                Ok(Expr::bool(false))
            }
            Tok::Undefined => {
                self.bump();
                Ok(Expr::Undefined)
            }
            Tok::Atom(a) => {
                self.bump();
                Ok(Expr::Lit(Literal::Atom(a)))
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek() == &Tok::LParen {
                    self.bump();
                    return self.bare_call(name);
                }
                Ok(Expr::Var(name))
            }
            Tok::LParen => {
                self.bump();
                if self.eat(&Tok::RParen) {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                let first = self.expr()?;
                if self.eat(&Tok::RParen) {
                    return Ok(first); // plain parentheses
                }
                self.expect(Tok::Comma)?;
                let mut items = vec![first];
                if self.eat(&Tok::RParen) {
                    return Ok(Expr::Tuple(items)); // `(e,)` singleton
                }
                loop {
                    items.push(self.expr()?);
                    if self.eat(&Tok::RParen) {
                        break;
                    }
                    self.expect(Tok::Comma)?;
                    if self.eat(&Tok::RParen) {
                        break;
                    }
                }
                Ok(Expr::Tuple(items))
            }
            Tok::LBrace => {
                self.bump();
                if self.eat(&Tok::RBrace) {
                    return Ok(Expr::EmptySet);
                }
                let compr = self.comprehension_body()?;
                Ok(Expr::ComprExpr(Box::new(compr)))
            }
            other => Err(self.err(format!("expected expression, found {other}"))),
        }
    }

    /// Call without an explicit target: intrinsic forms, or `self.m(args)`.
    fn bare_call(&mut self, name: String) -> PResult<Expr> {
        if name == "received" || name == "sent" {
            // membership shorthand: `received(m [from p])` is an existence
            // test over the (message, sender) pairs of the history sequence
            let pattern = self.history_pattern(&name)?;
            let it = QIter { pattern, domain: Expr::Var(name) };
            return Ok(Expr::Quant(QuantKind::Some, vec![it], Box::new(Expr::bool(true))));
        }
        if name == "isinstance" {
            let e = self.expr()?;
            self.expect(Tok::Comma)?;
            let class = self.ident()?;
            self.expect(Tok::RParen)?;
            return Ok(Expr::IsInstance(Box::new(e), class));
        }
        let mut args = self.call_args()?;
        match name.as_str() {
            "logical_clock" => {
                self.check_arity(&name, 0, args.len())?;
                Ok(Expr::ClockRead)
            }
            "istuple" => {
                self.check_arity(&name, 1, args.len())?;
                Ok(Expr::Unary(UnOp::IsTuple, Box::new(args.remove(0))))
            }
            "len" => {
                self.check_arity(&name, 1, args.len())?;
                Ok(Expr::Unary(UnOp::Len, Box::new(args.remove(0))))
            }
            "select" => {
                self.check_arity(&name, 2, args.len())?;
                let i = args.remove(1);
                let t = args.remove(0);
                Ok(Expr::bin(BinOp::Select, t, i))
            }
            "size" => {
                self.check_arity(&name, 1, args.len())?;
                Ok(Expr::Agg(AggOp::Size, Box::new(args.remove(0))))
            }
            "sum" => {
                self.check_arity(&name, 1, args.len())?;
                Ok(Expr::Agg(AggOp::Sum, Box::new(args.remove(0))))
            }
            "max" => {
                self.check_arity(&name, 1, args.len())?;
                Ok(Expr::Agg(AggOp::Max, Box::new(args.remove(0))))
            }
            "min" => {
                self.check_arity(&name, 1, args.len())?;
                Ok(Expr::Agg(AggOp::Min, Box::new(args.remove(0))))
            }
            _ => Ok(Expr::Call(Box::new(Expr::self_var()), name, args)),
        }
    }

    fn check_arity(&self, name: &str, want: usize, got: usize) -> PResult<()> {
        if want != got {
            Err(self.err(format!("`{name}` takes {want} argument(s), got {got}")))
        } else {
            Ok(())
        }
    }

    /// Inside `{ ... }`, after the opening brace: either `head : iters | cond`
    /// or the abbreviation `pat in domain | cond`.
    fn comprehension_body(&mut self) -> PResult<Comprehension> {
        let save = self.i;
        if let Ok(pat) = self.pattern() {
            if self.eat(&Tok::In) {
                let domain = self.or_expr()?;
                let mut iters = vec![QIter { pattern: pat.clone(), domain }];
                while self.eat(&Tok::Comma) {
                    iters.push(self.quant_iter()?);
                }
                let cond = if self.eat(&Tok::Pipe) { self.expr()? } else { Expr::bool(true) };
                self.expect(Tok::RBrace)?;
                let head = pat.as_expr().ok_or_else(|| {
                    self.err("comprehension pattern with `=`/wildcard needs an explicit head")
                })?;
                return Ok(Comprehension { head, iters, cond });
            }
        }
        self.i = save;
        let head = self.expr()?;
        self.expect(Tok::Colon)?;
        let iters = self.quant_iters()?;
        let cond = if self.eat(&Tok::Pipe) { self.expr()? } else { Expr::bool(true) };
        self.expect(Tok::RBrace)?;
        Ok(Comprehension { head, iters, cond })
    }
}

/// All symbolic tags in the program, sorted and deduplicated.
pub fn collect_atoms(p: &Program) -> Vec<Name> {
    let mut atoms = std::collections::BTreeSet::new();
    visit_literals(p, &mut |l| {
        if let Literal::Atom(a) = l {
            atoms.insert(a.clone());
        }
    });
    atoms.into_iter().collect()
}

fn visit_literals(p: &Program, f: &mut impl FnMut(&Literal)) {
    fn in_pattern(p: &Pattern, f: &mut impl FnMut(&Literal)) {
        match p {
            Pattern::Lit(l) => f(l),
            Pattern::Tuple(ps) => ps.iter().for_each(|p| in_pattern(p, f)),
            _ => {}
        }
    }
    fn in_expr(e: &Expr, f: &mut impl FnMut(&Literal)) {
        match e {
            Expr::Lit(l) => f(l),
            Expr::Field(t, _) => in_expr(t, f),
            Expr::Tuple(es) => es.iter().for_each(|e| in_expr(e, f)),
            Expr::Call(t, _, args) => {
                in_expr(t, f);
                args.iter().for_each(|e| in_expr(e, f));
            }
            Expr::Unary(_, a) | Expr::Agg(_, a) => in_expr(a, f),
            Expr::Binary(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
                in_expr(a, f);
                in_expr(b, f);
            }
            Expr::IsInstance(a, _) => in_expr(a, f),
            Expr::Quant(_, its, body) => {
                for it in its {
                    in_pattern(&it.pattern, f);
                    in_expr(&it.domain, f);
                }
                in_expr(body, f);
            }
            Expr::ComprExpr(c) => in_compr(c, f),
            _ => {}
        }
    }
    fn in_compr(c: &Comprehension, f: &mut impl FnMut(&Literal)) {
        in_expr(&c.head, f);
        for it in &c.iters {
            in_pattern(&it.pattern, f);
            in_expr(&it.domain, f);
        }
        in_expr(&c.cond, f);
    }
    fn in_lvalue(l: &LValue, f: &mut impl FnMut(&Literal)) {
        if let LValue::Field(e, _) = l {
            in_expr(e, f);
        }
    }
    fn in_stmt(s: &Stmt, f: &mut impl FnMut(&Literal)) {
        match &s.kind {
            StmtKind::Skip => {}
            StmtKind::Assign(l, e) => {
                in_lvalue(l, f);
                in_expr(e, f);
            }
            StmtKind::New(l, _) => in_lvalue(l, f),
            StmtKind::NewMany(l, e, _) => {
                in_lvalue(l, f);
                in_expr(e, f);
            }
            StmtKind::Compr(l, c) => {
                in_lvalue(l, f);
                in_compr(c, f);
            }
            StmtKind::Seq(a, b) => {
                in_stmt(a, f);
                in_stmt(b, f);
            }
            StmtKind::If(e, a, b) => {
                in_expr(e, f);
                in_stmt(a, f);
                in_stmt(b, f);
            }
            StmtKind::For(p, e, b) => {
                in_pattern(p, f);
                in_expr(e, f);
                in_stmt(b, f);
            }
            StmtKind::ForItems(_, es, b) => {
                es.iter().for_each(|e| in_expr(e, f));
                in_stmt(b, f);
            }
            StmtKind::While(e, b) => {
                in_expr(e, f);
                in_stmt(b, f);
            }
            StmtKind::Call(t, _, args) => {
                in_expr(t, f);
                args.iter().for_each(|e| in_expr(e, f));
            }
            StmtKind::Send(m, d) => {
                in_expr(m, f);
                in_expr(d, f);
            }
            StmtKind::Await(a) => {
                for (e, s) in &a.clauses {
                    in_expr(e, f);
                    in_stmt(s, f);
                }
                if let Some((e, s)) = &a.timeout {
                    in_expr(e, f);
                    in_stmt(s, f);
                }
            }
            StmtKind::Labeled(_, b) => in_stmt(b, f),
        }
    }
    fn in_method(m: &Method, f: &mut impl FnMut(&Literal)) {
        match &m.body {
            MethodBody::Stmt(s) => in_stmt(s, f),
            MethodBody::Expr(e) => in_expr(e, f),
        }
    }
    for c in &p.classes {
        for m in &c.methods {
            in_method(m, f);
        }
        for r in &c.receives {
            for arm in &r.arms {
                in_pattern(&arm.pattern, f);
                if let Some(fr) = &arm.from {
                    in_pattern(fr, f);
                }
            }
            in_stmt(&r.body, f);
        }
    }
    in_method(&p.main, f);
}
