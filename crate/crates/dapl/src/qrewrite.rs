//! Rewrites await-condition quantifications into aggregate queries the
//! incrementalizer can maintain as stored values.
//!
//! Four rule families drive the conversion:
//! * [`Rewriter::convert_single`]: one quantifier over one iterator becomes
//!   an emptiness or size comparison over a comprehension,
//! * [`Rewriter::convert_nested`]: directly nested quantifiers become size
//!   comparisons over joined iterator lists,
//! * [`Rewriter::convert_order`]: a quantified order comparison against a
//!   parameter becomes a min/max bound with an emptiness guard,
//! * [`Rewriter::decompose`]: boolean structure inside quantifier bodies is
//!   split or pushed into iterator domains until one of the above applies.
//!
//! [`Rewriter::select_conversion`] enumerates every applicable route for a
//! query, costs each against the program's [`UpdateProfile`], and keeps the
//! cheapest by maintenance time class, then space class. Ties keep the
//! earlier candidate, so insertion order encodes rule preference.

use crate::ast::{
    AggOp, BinOp, Comprehension, Expr, Fresh, Literal, LValue, Method, MethodBody, Name, Pattern,
    Program, QIter, QuantKind, Stmt, StmtKind, UnOp,
};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// A query lifted out of an await condition: the expression plus the names
/// that are already bound when it runs (self fields, histories, enclosing
/// binders). Everything else inside `expr` is bound by its own iterators.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryExpr {
    pub expr: Expr,
    pub params: BTreeSet<Name>,
}

/// How one named collection is updated across the program.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectionUpdates {
    pub may_add: bool,
    pub may_delete: bool,
    /// True when some other maintained invariant already stores this
    /// collection's size, making a size-comparison form cheaper to share.
    pub size_maintained: bool,
}

/// Update behavior of every collection and scalar a query may read.
/// Collections absent from the map are treated conservatively, as if they
/// could shrink.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateProfile {
    pub collections: BTreeMap<Name, CollectionUpdates>,
    pub scalars: BTreeMap<Name, bool>,
}

impl UpdateProfile {
    /// Scans statements for `add`/`del` calls and assignments. The first
    /// assignment to a name is its initialization; later assignments count
    /// as both additions and deletions since they can replace the contents
    /// wholesale. Histories only ever grow.
    pub fn from_program(p: &Program) -> Self {
        let mut prof = UpdateProfile::default();
        let grow_only = CollectionUpdates { may_add: true, ..Default::default() };
        prof.collections.insert("received".into(), grow_only);
        prof.collections.insert("sent".into(), grow_only);
        let mut initialized: BTreeSet<Name> = ["received".into(), "sent".into()].into();
        each_stmt(p, &mut |s| match &s.kind {
            StmtKind::Call(recv, name, _) => {
                if let Some(key) = collection_key(recv) {
                    let c = prof.collections.entry(key).or_default();
                    match name.as_str() {
                        "add" => c.may_add = true,
                        "del" => c.may_delete = true,
                        _ => {}
                    }
                }
            }
            StmtKind::Assign(lv, _)
            | StmtKind::New(lv, _)
            | StmtKind::NewMany(lv, _, _)
            | StmtKind::Compr(lv, _) => {
                if let Some(name) = lvalue_key(lv) {
                    prof.scalars.insert(name.clone(), true);
                    if initialized.insert(name.clone()) {
                        prof.collections.entry(name).or_default();
                    } else {
                        let c = prof.collections.entry(name).or_default();
                        c.may_add = true;
                        c.may_delete = true;
                    }
                }
            }
            _ => {}
        });
        prof
    }

    /// Whether the named collection is known never to shrink.
    pub fn additions_only(&self, name: &Name) -> bool {
        self.collections.get(name).is_some_and(|c| !c.may_delete)
    }

    fn size_maintained(&self, domain: &Expr) -> bool {
        collection_key(domain)
            .and_then(|n| self.collections.get(&n))
            .is_some_and(|c| c.size_maintained)
    }
}

/// Per-update maintenance cost of a converted form, coarsened to the classes
/// the selection strategy distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CostClass {
    Constant,
    Logarithmic,
    Linear,
    Quadratic,
}

impl fmt::Display for CostClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostClass::Constant => "O(1)",
            CostClass::Logarithmic => "O(log n)",
            CostClass::Linear => "O(n)",
            CostClass::Quadratic => "O(n^2)",
        })
    }
}

/// Identifies one conversion rule: the rule family table and the row in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleId {
    pub table: u8,
    pub row: u8,
}

const fn rid(table: u8, row: u8) -> RuleId {
    RuleId { table, row }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}.R{}", self.table, self.row)
    }
}

/// One way to convert a query: the resulting expression, the principal rule
/// that produced it, and every rule applied along the way in order
/// (decomposition steps first, `rule` among them).
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionChoice {
    pub rule: RuleId,
    pub via: Vec<RuleId>,
    pub expr: Expr,
    pub time: CostClass,
    pub space: CostClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteError {
    #[error("not a single quantification over one iterator")]
    NotSingle,
    #[error("not a directly nested quantification")]
    NotNested,
    #[error("body is not one order comparison against bound parameters")]
    NotOrderComparison,
    #[error("quantifier alternation deeper than one level is not supported")]
    Alternation,
    #[error("no conversion rule applies")]
    NoConversion,
}

/// Conversion engine. Holds the fresh-name supply used when a wildcard
/// pattern slot must become a named binder.
#[derive(Debug)]
pub struct Rewriter {
    fresh: Fresh,
}

impl Rewriter {
    pub fn new(fresh: Fresh) -> Self {
        Rewriter { fresh }
    }

    pub fn for_program(p: &Program) -> Self {
        Rewriter { fresh: Fresh::seeded_from(p) }
    }

    /// Single quantification over one iterator, body free of quantifiers.
    /// `some` yields the nonempty form; `each` yields both size forms, in
    /// row order. Preference between the two is applied during selection.
    pub fn convert_single(&mut self, q: &QueryExpr) -> Result<Vec<ConversionChoice>, RewriteError> {
        let Expr::Quant(kind, iters, body) = &q.expr else {
            return Err(RewriteError::NotSingle);
        };
        if iters.len() != 1 || contains_quant(body) {
            return Err(RewriteError::NotSingle);
        }
        let it = &iters[0];
        let choice = |rule, expr| ConversionChoice {
            rule,
            via: vec![rule],
            expr,
            time: CostClass::Constant,
            space: CostClass::Linear,
        };
        match kind {
            QuantKind::Some => {
                // size({x in s | bexp}) != 0
                let (pat, head) = self.head_for(&it.pattern, false);
                let compr = mk_compr(head, vec![retarget(it, pat)], (**body).clone());
                Ok(vec![choice(rid(1, 1), Expr::neq(size_of(compr), Expr::int(0)))])
            }
            QuantKind::Each => {
                // size({x in s | bexp}) == size(matching x in s)
                let (pat2, head2) = self.head_for(&it.pattern, true);
                let lhs2 = size_of(mk_compr(
                    head2.clone(),
                    vec![retarget(it, pat2.clone())],
                    (**body).clone(),
                ));
                let rhs2 = if matches!(it.pattern, Pattern::Var(_)) {
                    size_of(it.domain.clone())
                } else {
                    size_of(mk_compr(head2, vec![retarget(it, pat2)], Expr::bool(true)))
                };
                let r2 = choice(rid(1, 2), Expr::is(lhs2, rhs2));
                // size({x in s | not bexp}) == 0
                let (pat3, head3) = self.head_for(&it.pattern, false);
                let neg = simplify(&Expr::not((**body).clone()));
                let lhs3 = size_of(mk_compr(head3, vec![retarget(it, pat3)], neg));
                let r3 = choice(rid(1, 3), Expr::is(lhs3, Expr::int(0)));
                Ok(vec![r2, r3])
            }
        }
    }

    /// Directly nested quantifications: a same-kind chain joins all
    /// iterators into one comprehension; one alternation keeps the outer
    /// block's heads and joins the inner iterators as witnesses. More than
    /// one alternation is unsupported.
    pub fn convert_nested(&mut self, q: &QueryExpr) -> Result<ConversionChoice, RewriteError> {
        let mut cs = self.nested_choices(q)?;
        Ok(cs.remove(0))
    }

    fn nested_choices(&mut self, q: &QueryExpr) -> Result<Vec<ConversionChoice>, RewriteError> {
        let (blocks, body) = chain(&q.expr).ok_or(RewriteError::NotNested)?;
        let total: usize = blocks.iter().map(|(_, its)| its.len()).sum();
        if total < 2 || contains_quant(&body) {
            return Err(RewriteError::NotNested);
        }
        if blocks.len() > 2 {
            return Err(RewriteError::Alternation);
        }
        let all: Vec<QIter> = blocks.iter().flat_map(|(_, its)| its.iter().cloned()).collect();
        let choice = |rule, expr, space| ConversionChoice {
            rule,
            via: vec![rule],
            expr,
            time: CostClass::Linear,
            space,
        };
        if blocks.len() == 1 {
            let kind = blocks[0].0;
            match kind {
                QuantKind::Some => {
                    // size({(x, y) : x in s, y in t | bexp}) != 0
                    let (its, head) = self.joined_heads(&all, false);
                    let compr = mk_compr(head, its, body.clone());
                    let expr = Expr::neq(size_of(compr), Expr::int(0));
                    Ok(vec![choice(rid(2, 1), expr, CostClass::Quadratic)])
                }
                QuantKind::Each => {
                    // size({(x, y) : ... | bexp}) == size({(x, y) : ...})
                    let (its, head) = self.joined_heads(&all, true);
                    let lhs = size_of(mk_compr(head.clone(), its.clone(), body.clone()));
                    let rhs = size_of(mk_compr(head, its, Expr::bool(true)));
                    let r4 = choice(rid(2, 4), Expr::is(lhs, rhs), CostClass::Quadratic);
                    // size({(x, y) : ... | not bexp}) == 0
                    let (its5, head5) = self.joined_heads(&all, false);
                    let neg = simplify(&Expr::not(body.clone()));
                    let lhs5 = size_of(mk_compr(head5, its5, neg));
                    let r5 = choice(rid(2, 5), Expr::is(lhs5, Expr::int(0)), CostClass::Quadratic);
                    if negation_simplifies(&body) {
                        Ok(vec![r5, r4])
                    } else {
                        Ok(vec![r4, r5])
                    }
                }
            }
        } else {
            let (okind, oiters) = (blocks[0].0, blocks[0].1.clone());
            let (outs, ohead) = self.joined_heads(&oiters, true);
            let rhs = if oiters.len() == 1 && matches!(oiters[0].pattern, Pattern::Var(_)) {
                size_of(oiters[0].domain.clone())
            } else {
                size_of(mk_compr(ohead.clone(), outs.clone(), Expr::bool(true)))
            };
            let inners: Vec<QIter> = blocks[1].1.clone();
            let mut its = outs;
            its.extend(inners);
            match okind {
                // each-some: size({x : x in s, y in t | bexp}) == size(s)
                QuantKind::Each => {
                    let lhs = size_of(mk_compr(ohead, its, body.clone()));
                    Ok(vec![choice(rid(2, 2), Expr::is(lhs, rhs), CostClass::Linear)])
                }
                // some-each: size({x : x in s, y in t | not bexp}) != size(s)
                QuantKind::Some => {
                    let neg = simplify(&Expr::not(body.clone()));
                    let lhs = size_of(mk_compr(ohead, its, neg));
                    Ok(vec![choice(rid(2, 3), Expr::neq(lhs, rhs), CostClass::Linear)])
                }
            }
        }
    }

    /// Quantified order comparison against parameters: `some` becomes a
    /// nonempty guard plus a bound on max/min, `each` the dual with an
    /// empty-set escape. When the compared key is a projection of the
    /// pattern, the bound ranges over the extracted key comprehension.
    ///
    /// Cost classes here assume the underlying collection may shrink; the
    /// selection step re-costs against the actual update profile.
    pub fn convert_order(&mut self, q: &QueryExpr) -> Result<ConversionChoice, RewriteError> {
        Ok(self.order_choice(q, None)?.0)
    }

    /// Also returns the key collection so callers can check what it reads.
    fn order_choice(
        &mut self,
        q: &QueryExpr,
        up: Option<&UpdateProfile>,
    ) -> Result<(ConversionChoice, Expr), RewriteError> {
        let Expr::Quant(kind, iters, body) = &q.expr else {
            return Err(RewriteError::NotOrderComparison);
        };
        let [it] = iters.as_slice() else {
            return Err(RewriteError::NotOrderComparison);
        };
        let Expr::Binary(op, lhs, rhs) = body.as_ref() else {
            return Err(RewriteError::NotOrderComparison);
        };
        if !matches!(op, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge) {
            return Err(RewriteError::NotOrderComparison);
        }
        let binders: BTreeSet<Name> = it.pattern.binders().into_iter().collect();
        let lb = mentions_any(lhs, &binders);
        let rb = mentions_any(rhs, &binders);
        // Normalize to `y OP x` with y the parameter side; the flipped
        // operand form lands on the next row but converts identically.
        let (y, x, op_y, yform) = match (lb, rb) {
            (false, true) => (lhs.as_ref(), rhs.as_ref(), *op, true),
            (true, false) => (rhs.as_ref(), lhs.as_ref(), flip(*op), false),
            _ => return Err(RewriteError::NotOrderComparison),
        };
        let base = match (kind, op_y) {
            (QuantKind::Some, BinOp::Le) => 1,
            (QuantKind::Some, BinOp::Ge) => 3,
            (QuantKind::Some, BinOp::Lt) => 5,
            (QuantKind::Some, BinOp::Gt) => 7,
            (QuantKind::Each, BinOp::Le) => 9,
            (QuantKind::Each, BinOp::Ge) => 11,
            (QuantKind::Each, BinOp::Lt) => 13,
            (QuantKind::Each, BinOp::Gt) => 15,
            _ => unreachable!("comparison checked above"),
        };
        let row = base + u8::from(!yform);
        let direct = matches!(&it.pattern, Pattern::Var(n) if *x == Expr::Var(n.clone()));
        let k = if direct {
            it.domain.clone()
        } else {
            mk_compr(x.clone(), vec![it.clone()], Expr::bool(true))
        };
        // some needs a witness, so it bounds the extreme the comparison can
        // still reach; each must hold at the tightest element.
        let agg = match (kind, op_y) {
            (QuantKind::Some, BinOp::Le | BinOp::Lt) => AggOp::Max,
            (QuantKind::Some, _) => AggOp::Min,
            (QuantKind::Each, BinOp::Le | BinOp::Lt) => AggOp::Min,
            (QuantKind::Each, _) => AggOp::Max,
        };
        let cmp = Expr::bin(op_y, y.clone(), Expr::Agg(agg, Box::new(k.clone())));
        let expr = match kind {
            QuantKind::Some => {
                Expr::And(Box::new(Expr::neq(k.clone(), Expr::EmptySet)), Box::new(cmp))
            }
            QuantKind::Each => {
                Expr::Or(Box::new(Expr::is(k.clone(), Expr::EmptySet)), Box::new(cmp))
            }
        };
        let grow_only = up.is_some_and(|u| {
            collection_key(&it.domain).is_some_and(|n| u.additions_only(&n))
        });
        let (time, space) = if grow_only {
            (CostClass::Constant, CostClass::Constant)
        } else {
            (CostClass::Logarithmic, CostClass::Linear)
        };
        let rule = rid(3, row);
        Ok((ConversionChoice { rule, via: vec![rule], expr, time, space }, k))
    }

    /// Splits boolean structure out of quantifier bodies until every body is
    /// atomic: negations swap the quantifier, conjunctions and disjunctions
    /// split or move one side into the iterator domain, implications filter
    /// the domain by the antecedent. Runs to fixpoint; never fails.
    pub fn decompose(&mut self, q: &QueryExpr) -> QueryExpr {
        self.decompose_traced(q).0
    }

    pub fn decompose_traced(&mut self, q: &QueryExpr) -> (QueryExpr, Vec<RuleId>) {
        let mut expr = q.expr.clone();
        let mut fired = Vec::new();
        // every rule strictly shrinks the boolean structure remaining
        // inside quantifier bodies, so this terminates
        for _ in 0..10_000 {
            if !self.decomp_pass(&mut expr, &mut fired) {
                return (QueryExpr { expr, params: q.params.clone() }, fired);
            }
        }
        unreachable!("decomposition did not reach a fixpoint");
    }

    fn decomp_pass(&mut self, e: &mut Expr, fired: &mut Vec<RuleId>) -> bool {
        let mut changed = false;
        match e {
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) | Expr::Binary(_, a, b) => {
                changed |= self.decomp_pass(a, fired);
                changed |= self.decomp_pass(b, fired);
            }
            Expr::Unary(_, a) | Expr::Agg(_, a) => changed = self.decomp_pass(a, fired),
            Expr::Quant(_, _, body) => changed = self.decomp_pass(body, fired),
            _ => {}
        }
        if let Expr::Quant(kind, iters, body) = e {
            if let [it] = iters.as_slice() {
                if let Some((new, rule)) = self.decomp_rule(*kind, it, body) {
                    *e = new;
                    fired.push(rule);
                    changed = true;
                }
            }
        }
        changed
    }

    fn decomp_rule(&mut self, kind: QuantKind, it: &QIter, body: &Expr) -> Option<(Expr, RuleId)> {
        let quant = |k, i: QIter, b: Expr| Expr::Quant(k, vec![i], Box::new(b));
        // when only one operand still holds a quantifier, keep that one as
        // the body so conversion can reach it
        let split = |a: &Expr, b: &Expr| {
            if contains_quant(a) && !contains_quant(b) {
                (b.clone(), a.clone())
            } else {
                (a.clone(), b.clone())
            }
        };
        match (kind, body) {
            (QuantKind::Some, Expr::Unary(UnOp::Not, a)) => {
                Some((Expr::not(quant(QuantKind::Each, it.clone(), (**a).clone())), rid(4, 1)))
            }
            (QuantKind::Some, Expr::And(a, b)) => {
                let (into, keep) = split(a, b);
                Some((quant(QuantKind::Some, self.filtered(it, into), keep), rid(4, 2)))
            }
            (QuantKind::Some, Expr::Or(a, b)) => Some((
                Expr::Or(
                    Box::new(quant(QuantKind::Some, it.clone(), (**a).clone())),
                    Box::new(quant(QuantKind::Some, it.clone(), (**b).clone())),
                ),
                rid(4, 3),
            )),
            (QuantKind::Some, Expr::Implies(a, b)) => Some((
                Expr::Or(
                    Box::new(quant(QuantKind::Some, it.clone(), Expr::not((**a).clone()))),
                    Box::new(quant(QuantKind::Some, it.clone(), (**b).clone())),
                ),
                rid(4, 4),
            )),
            (QuantKind::Each, Expr::Unary(UnOp::Not, a)) => {
                Some((Expr::not(quant(QuantKind::Some, it.clone(), (**a).clone())), rid(4, 5)))
            }
            (QuantKind::Each, Expr::And(a, b)) => Some((
                Expr::And(
                    Box::new(quant(QuantKind::Each, it.clone(), (**a).clone())),
                    Box::new(quant(QuantKind::Each, it.clone(), (**b).clone())),
                ),
                rid(4, 6),
            )),
            (QuantKind::Each, Expr::Or(a, b)) => {
                let (into, keep) = split(a, b);
                let filtered = self.filtered(it, simplify(&Expr::not(into)));
                Some((quant(QuantKind::Each, filtered, keep), rid(4, 7)))
            }
            (QuantKind::Each, Expr::Implies(a, b)) => {
                Some((quant(QuantKind::Each, self.filtered(it, (**a).clone()), (**b).clone()), rid(4, 8)))
            }
            _ => None,
        }
    }

    /// Enumerates every applicable conversion for each quantification in the
    /// query, costs them against the update profile, and returns the
    /// cheapest combination.
    pub fn select_conversion(
        &mut self,
        q: &QueryExpr,
        up: &UpdateProfile,
    ) -> Result<ConversionChoice, RewriteError> {
        if !contains_quant(&q.expr) {
            return Err(RewriteError::NoConversion);
        }
        let conv = self.convert_expr(&q.expr, &q.params, up)?;
        if conv.via.is_empty() {
            return Err(RewriteError::NoConversion);
        }
        // the last non-decomposition entry is the rewrite that shaped the result
        let rule = *conv.via.iter().rev().find(|r| r.table != 4).unwrap_or(&conv.via[0]);
        Ok(ConversionChoice { rule, via: conv.via, expr: conv.expr, time: conv.time, space: conv.space })
    }

    /// Converts every quantification under a boolean skeleton, leaving other
    /// subexpressions in place.
    fn convert_expr(
        &mut self,
        e: &Expr,
        params: &BTreeSet<Name>,
        up: &UpdateProfile,
    ) -> Result<Converted, RewriteError> {
        match e {
            Expr::Quant(..) => {
                let c = self.quant_select(e, params, up)?;
                Ok(Converted { expr: c.expr, via: c.via, time: c.time, space: c.space })
            }
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
                let ca = self.convert_expr(a, params, up)?;
                let cb = self.convert_expr(b, params, up)?;
                let expr = match e {
                    Expr::And(..) => Expr::And(Box::new(ca.expr), Box::new(cb.expr)),
                    Expr::Or(..) => Expr::Or(Box::new(ca.expr), Box::new(cb.expr)),
                    _ => Expr::Implies(Box::new(ca.expr), Box::new(cb.expr)),
                };
                let mut via = ca.via;
                via.extend(cb.via);
                Ok(Converted { expr, via, time: ca.time.max(cb.time), space: ca.space.max(cb.space) })
            }
            Expr::Unary(UnOp::Not, a) => {
                let c = self.convert_expr(a, params, up)?;
                Ok(Converted { expr: Expr::not(c.expr), ..c })
            }
            _ => Ok(Converted {
                expr: e.clone(),
                via: Vec::new(),
                time: CostClass::Constant,
                space: CostClass::Constant,
            }),
        }
    }

    fn quant_select(
        &mut self,
        qexpr: &Expr,
        params: &BTreeSet<Name>,
        up: &UpdateProfile,
    ) -> Result<ConversionChoice, RewriteError> {
        let q = QueryExpr { expr: qexpr.clone(), params: params.clone() };
        let mut cands: Vec<ConversionChoice> = Vec::new();
        let mut alternation = false;

        if let Ok((c, _)) = self.order_choice(&q, Some(up)) {
            cands.push(c);
        }

        if let Ok(mut cs) = self.convert_single(&q) {
            if cs.len() == 2 {
                let Expr::Quant(_, iters, body) = &q.expr else { unreachable!() };
                // prefer the negated-emptiness row unless the negation does
                // not simplify and the domain size is already on hand
                let prefer_row2 = !negation_simplifies(body) && up.size_maintained(&iters[0].domain);
                if !prefer_row2 {
                    cs.swap(0, 1);
                }
            }
            cands.extend(cs);
        }

        let mut joined_quadratic = true;
        match self.nested_choices(&q) {
            Ok(cs) => {
                joined_quadratic = cs.iter().map(|c| c.space).min() == Some(CostClass::Quadratic);
                cands.extend(cs);
            }
            Err(RewriteError::Alternation) => alternation = true,
            Err(_) => {}
        }
        // extracting the inner comparison is only on the table when the
        // joined form would need quadratic space
        if joined_quadratic {
            if let Ok(c) = self.inner_order_route(&q, up) {
                cands.push(c);
            }
        }

        let (d, dvia) = self.decompose_traced(&q);
        if d.expr != q.expr {
            match self.convert_expr(&d.expr, params, up) {
                Ok(c) if !c.via.is_empty() => {
                    let rule = *c.via.iter().rev().find(|r| r.table != 4).unwrap_or(&c.via[0]);
                    let mut via = dvia;
                    via.extend(c.via);
                    cands.push(ConversionChoice {
                        rule,
                        via,
                        expr: c.expr,
                        time: c.time,
                        space: c.space,
                    });
                }
                Err(RewriteError::Alternation) => alternation = true,
                _ => {}
            }
        }

        if cands.is_empty() {
            return Err(if alternation { RewriteError::Alternation } else { RewriteError::NoConversion });
        }
        cands.sort_by_key(|c| (c.time, c.space));
        Ok(cands.swap_remove(0))
    }

    /// Two-level nesting whose inner body is an order comparison: convert
    /// the inner quantifier to a bound first, then the outer quantifier over
    /// the rewritten body. Rejected when the inner key collection reads the
    /// outer binding, since the bound would have to be kept per element.
    fn inner_order_route(
        &mut self,
        q: &QueryExpr,
        up: &UpdateProfile,
    ) -> Result<ConversionChoice, RewriteError> {
        let Expr::Quant(ok, oiters, obody) = &q.expr else {
            return Err(RewriteError::NotNested);
        };
        if !matches!(obody.as_ref(), Expr::Quant(..)) {
            return Err(RewriteError::NotNested);
        }
        let outer_binders: BTreeSet<Name> =
            oiters.iter().flat_map(|i| i.pattern.binders()).collect();
        let mut inner_params = q.params.clone();
        inner_params.extend(outer_binders.iter().cloned());
        let iq = QueryExpr { expr: (**obody).clone(), params: inner_params };
        let (ic, key) = self.order_choice(&iq, Some(up))?;
        if free_vars(&key).iter().any(|n| outer_binders.contains(n)) {
            return Err(RewriteError::NotOrderComparison);
        }
        let outer = Expr::Quant(*ok, oiters.clone(), Box::new(ic.expr));
        let oc = self.quant_select(&outer, &q.params, up)?;
        let mut via = ic.via;
        via.extend(oc.via.iter().copied());
        Ok(ConversionChoice {
            rule: oc.rule,
            via,
            expr: oc.expr,
            time: ic.time.max(oc.time),
            space: ic.space.max(oc.space),
        })
    }

    /// Rebuilt iterators plus one head expression per iterator, tupled.
    fn joined_heads(&mut self, iters: &[QIter], distinct: bool) -> (Vec<QIter>, Expr) {
        let mut its = Vec::with_capacity(iters.len());
        let mut heads = Vec::with_capacity(iters.len());
        for it in iters {
            let (pat, head) = self.head_for(&it.pattern, distinct);
            its.push(retarget(it, pat));
            heads.push(head);
        }
        let head = if heads.len() == 1 { heads.pop().unwrap() } else { Expr::Tuple(heads) };
        (its, head)
    }

    /// A pattern and a head expression for a comprehension standing in for
    /// `pat in domain`. `distinct` asks for heads in bijection with matching
    /// elements (needed when two sizes are compared); emptiness-only uses
    /// settle for the binder tuple and keep wildcards in place.
    fn head_for(&mut self, pat: &Pattern, distinct: bool) -> (Pattern, Expr) {
        if let Some(h) = head_expr(pat) {
            return (pat.clone(), h);
        }
        if distinct {
            let filled = self.fill_wildcards(pat);
            let h = head_expr(&filled).expect("no wildcards left");
            (filled, h)
        } else {
            let binders = pat.binders();
            let h = match binders.len() {
                0 => Expr::bool(true),
                1 => Expr::Var(binders.into_iter().next().unwrap()),
                _ => Expr::Tuple(binders.into_iter().map(Expr::Var).collect()),
            };
            (pat.clone(), h)
        }
    }

    fn fill_wildcards(&mut self, pat: &Pattern) -> Pattern {
        match pat {
            Pattern::Wildcard => Pattern::Var(self.fresh.name("w")),
            Pattern::Tuple(ps) => Pattern::Tuple(ps.iter().map(|p| self.fill_wildcards(p)).collect()),
            other => other.clone(),
        }
    }

    /// The iterator restricted to elements satisfying `cond`.
    fn filtered(&mut self, it: &QIter, cond: Expr) -> QIter {
        let (pat, head) = self.head_for(&it.pattern, true);
        QIter { pattern: pat, domain: mk_compr(head, vec![it.clone()], cond) }
    }
}

struct Converted {
    expr: Expr,
    via: Vec<RuleId>,
    time: CostClass,
    space: CostClass,
}

/// Report for one await conjunct: what it was and, when a quantification was
/// converted, the selected choice whose expression replaced it.
#[derive(Debug, Clone)]
pub struct ConjunctReport {
    pub label: Name,
    pub index: usize,
    pub before: Expr,
    pub choice: Option<ConversionChoice>,
}

/// Converts every await conjunct in place and reports what happened to each.
/// Conjuncts without quantifications, and those no rule covers, pass through
/// unchanged; an unsupported alternation is a hard error.
pub fn convert_awaits(p: &mut Program) -> Result<Vec<ConjunctReport>, RewriteError> {
    let up = UpdateProfile::from_program(p);
    let mut rw = Rewriter::for_program(p);
    let mut reports = Vec::new();
    let mut failure = None;
    each_stmt_mut(p, &mut |s| {
        let StmtKind::Await(aw) = &mut s.kind else { return };
        for (cond, _) in &mut aw.clauses {
            let conjs = split_and(cond);
            let mut rebuilt: Vec<Expr> = Vec::with_capacity(conjs.len());
            for (i, conj) in conjs.into_iter().enumerate() {
                let mut report = ConjunctReport {
                    label: aw.label.clone(),
                    index: i,
                    before: conj.clone(),
                    choice: None,
                };
                if contains_quant(&conj) && failure.is_none() {
                    let q = QueryExpr { expr: conj.clone(), params: free_vars(&conj) };
                    match rw.select_conversion(&q, &up) {
                        Ok(choice) => {
                            rebuilt.push(choice.expr.clone());
                            report.choice = Some(choice);
                            reports.push(report);
                            continue;
                        }
                        Err(RewriteError::Alternation) => failure = Some(RewriteError::Alternation),
                        Err(_) => {}
                    }
                }
                rebuilt.push(conj);
                reports.push(report);
            }
            *cond = join_and(rebuilt);
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(reports),
    }
}

/// Top-level conjuncts of an await condition, left to right.
pub fn split_and(e: &Expr) -> Vec<Expr> {
    fn go(e: &Expr, out: &mut Vec<Expr>) {
        if let Expr::And(a, b) = e {
            go(a, out);
            go(b, out);
        } else {
            out.push(e.clone());
        }
    }
    let mut out = Vec::new();
    go(e, &mut out);
    out
}

pub fn join_and(mut conjs: Vec<Expr>) -> Expr {
    let first = conjs.remove(0);
    conjs.into_iter().fold(first, |acc, c| Expr::And(Box::new(acc), Box::new(c)))
}

/// Boolean and comparison simplification, to fixpoint. Pushes negations
/// inward (flipping comparisons on the way), drops constant operands, and
/// merges `a != b and a >= b` into `a > b`. Deliberately has no reflexive
/// rules: forms like `x > x` must stay and evaluate at runtime.
pub fn simplify(e: &Expr) -> Expr {
    let mut cur = e.clone();
    for _ in 0..100 {
        let next = simp(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
    cur
}

/// Whether negating `body` simplifies beyond wrapping it in `not`, making
/// the negated-body conversion rows shorter than the positive ones.
pub fn negation_simplifies(body: &Expr) -> bool {
    simplify(&Expr::not(body.clone())) != Expr::not(simplify(body))
}

fn simp(e: &Expr) -> Expr {
    match e {
        Expr::Unary(UnOp::Not, a) => match simp(a) {
            Expr::Unary(UnOp::Not, b) => *b,
            Expr::Lit(Literal::Bool(v)) => Expr::bool(!v),
            Expr::Implies(p, q) => Expr::And(p, Box::new(Expr::not(*q))),
            Expr::And(p, q) => Expr::Or(Box::new(Expr::not(*p)), Box::new(Expr::not(*q))),
            Expr::Or(p, q) => Expr::And(Box::new(Expr::not(*p)), Box::new(Expr::not(*q))),
            Expr::Binary(BinOp::Lt, x, y) => Expr::Binary(BinOp::Ge, x, y),
            Expr::Binary(BinOp::Le, x, y) => Expr::Binary(BinOp::Gt, x, y),
            Expr::Binary(BinOp::Gt, x, y) => Expr::Binary(BinOp::Le, x, y),
            Expr::Binary(BinOp::Ge, x, y) => Expr::Binary(BinOp::Lt, x, y),
            other => Expr::not(other),
        },
        Expr::And(a, b) => {
            let (a, b) = (simp(a), simp(b));
            if a == Expr::bool(true) {
                b
            } else if b == Expr::bool(true) {
                a
            } else if a == Expr::bool(false) {
                Expr::bool(false)
            } else if let Some(m) = merge_ne_cmp(&a, &b).or_else(|| merge_ne_cmp(&b, &a)) {
                m
            } else {
                Expr::And(Box::new(a), Box::new(b))
            }
        }
        Expr::Or(a, b) => {
            let (a, b) = (simp(a), simp(b));
            if a == Expr::bool(false) {
                b
            } else if b == Expr::bool(false) {
                a
            } else if a == Expr::bool(true) {
                Expr::bool(true)
            } else {
                Expr::Or(Box::new(a), Box::new(b))
            }
        }
        Expr::Implies(a, b) => {
            let (a, b) = (simp(a), simp(b));
            if a == Expr::bool(true) {
                b
            } else if a == Expr::bool(false) {
                Expr::bool(true)
            } else {
                Expr::Implies(Box::new(a), Box::new(b))
            }
        }
        Expr::Unary(op, a) => Expr::Unary(*op, Box::new(simp(a))),
        Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(simp(a)), Box::new(simp(b))),
        Expr::Tuple(es) => Expr::Tuple(es.iter().map(simp).collect()),
        Expr::Call(r, n, args) => {
            Expr::Call(Box::new(simp(r)), n.clone(), args.iter().map(simp).collect())
        }
        Expr::Field(b, n) => Expr::Field(Box::new(simp(b)), n.clone()),
        Expr::IsInstance(a, n) => Expr::IsInstance(Box::new(simp(a)), n.clone()),
        Expr::Agg(op, a) => Expr::Agg(*op, Box::new(simp(a))),
        Expr::Quant(k, iters, body) => {
            let iters = iters
                .iter()
                .map(|i| QIter { pattern: i.pattern.clone(), domain: simp(&i.domain) })
                .collect();
            Expr::Quant(*k, iters, Box::new(simp(body)))
        }
        Expr::ComprExpr(c) => {
            let iters = c.iters.iter().map(|i| QIter { pattern: i.pattern.clone(), domain: simp(&i.domain) });
            Expr::ComprExpr(Box::new(Comprehension {
                head: simp(&c.head),
                iters: iters.collect(),
                cond: simp(&c.cond),
            }))
        }
        leaf => leaf.clone(),
    }
}

/// `a != b and a >= b` is `a > b` on a total order, for either operand
/// orientation of the inequality; likewise `<=` tightens to `<`.
fn merge_ne_cmp(ne: &Expr, cmp: &Expr) -> Option<Expr> {
    let Expr::Unary(UnOp::Not, inner) = ne else { return None };
    let Expr::Binary(BinOp::Is, p, q) = inner.as_ref() else { return None };
    let Expr::Binary(op, x, y) = cmp else { return None };
    let strict = match op {
        BinOp::Ge => BinOp::Gt,
        BinOp::Le => BinOp::Lt,
        _ => return None,
    };
    if (p == x && q == y) || (p == y && q == x) {
        Some(Expr::bin(strict, (**x).clone(), (**y).clone()))
    } else {
        None
    }
}

/// Comprehension constructor that flattens one comprehension iterating
/// another when the pattern re-extracts the inner head, and simplifies the
/// combined condition.
fn mk_compr(head: Expr, iters: Vec<QIter>, cond: Expr) -> Expr {
    let mut c = Comprehension { head, iters, cond };
    loop {
        let [it] = c.iters.as_slice() else { break };
        let Expr::ComprExpr(inner) = &it.domain else { break };
        if head_expr(&it.pattern).as_ref() != Some(&inner.head) {
            break;
        }
        let inner = (**inner).clone();
        c.cond = Expr::And(Box::new(inner.cond), Box::new(c.cond));
        c.iters = inner.iters;
    }
    c.cond = simplify(&c.cond);
    Expr::ComprExpr(Box::new(c))
}

fn retarget(it: &QIter, pattern: Pattern) -> QIter {
    QIter { pattern, domain: it.domain.clone() }
}

fn size_of(e: Expr) -> Expr {
    Expr::Agg(AggOp::Size, Box::new(e))
}

fn flip(op: BinOp) -> BinOp {
    match op {
        BinOp::Lt => BinOp::Gt,
        BinOp::Le => BinOp::Ge,
        BinOp::Gt => BinOp::Lt,
        BinOp::Ge => BinOp::Le,
        other => other,
    }
}

/// The pattern as a head expression. Bound slots read the variable they
/// compare against, so the head evaluates to exactly the matched element;
/// wildcards have no expression form.
fn head_expr(p: &Pattern) -> Option<Expr> {
    match p {
        Pattern::Var(n) | Pattern::Bound(n) => Some(Expr::Var(n.clone())),
        Pattern::Lit(l) => Some(Expr::Lit(l.clone())),
        Pattern::Wildcard => None,
        Pattern::Tuple(ps) => {
            ps.iter().map(head_expr).collect::<Option<Vec<_>>>().map(Expr::Tuple)
        }
    }
}

/// Chain of directly nested quantifier blocks. Adjacent same-kind levels
/// merge into one block; the innermost non-quantifier expression is the
/// body.
fn chain(e: &Expr) -> Option<(Vec<(QuantKind, Vec<QIter>)>, Expr)> {
    let Expr::Quant(k, iters, body) = e else { return None };
    let mut blocks: Vec<(QuantKind, Vec<QIter>)> = vec![(*k, iters.clone())];
    let mut cur = body.as_ref();
    while let Expr::Quant(k2, it2, b2) = cur {
        if blocks.last().unwrap().0 == *k2 {
            blocks.last_mut().unwrap().1.extend(it2.iter().cloned());
        } else {
            blocks.push((*k2, it2.clone()));
        }
        cur = b2;
    }
    Some((blocks, cur.clone()))
}

pub fn contains_quant(e: &Expr) -> bool {
    let mut found = false;
    walk_expr(e, &mut |x| found |= matches!(x, Expr::Quant(..)));
    found
}

fn mentions_any(e: &Expr, names: &BTreeSet<Name>) -> bool {
    free_vars(e).iter().any(|n| names.contains(n))
}

/// Free variable names of an expression. Iterator patterns bind their
/// variables for the rest of the comprehension or quantifier; bound-value
/// slots and everything else read outward.
pub fn free_vars(e: &Expr) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    let mut bound = BTreeSet::new();
    collect_free(e, &mut bound, &mut out);
    out
}

fn collect_free(e: &Expr, bound: &mut BTreeSet<Name>, out: &mut BTreeSet<Name>) {
    match e {
        Expr::Var(n) => {
            if !bound.contains(n) {
                out.insert(n.clone());
            }
        }
        Expr::Quant(_, iters, body) => {
            let added = collect_iters(iters, bound, out);
            collect_free(body, bound, out);
            for n in &added {
                bound.remove(n);
            }
        }
        Expr::ComprExpr(c) => {
            let added = collect_iters(&c.iters, bound, out);
            collect_free(&c.head, bound, out);
            collect_free(&c.cond, bound, out);
            for n in &added {
                bound.remove(n);
            }
        }
        Expr::Field(b, _) => collect_free(b, bound, out),
        Expr::Tuple(es) => es.iter().for_each(|x| collect_free(x, bound, out)),
        Expr::Call(r, _, args) => {
            collect_free(r, bound, out);
            args.iter().for_each(|x| collect_free(x, bound, out));
        }
        Expr::Unary(_, a) | Expr::Agg(_, a) | Expr::IsInstance(a, _) => collect_free(a, bound, out),
        Expr::Binary(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
            collect_free(a, bound, out);
            collect_free(b, bound, out);
        }
        Expr::Lit(_) | Expr::EmptySet | Expr::Undefined | Expr::Addr(_) | Expr::ClockRead => {}
    }
}

fn collect_iters(iters: &[QIter], bound: &mut BTreeSet<Name>, out: &mut BTreeSet<Name>) -> Vec<Name> {
    let mut added = Vec::new();
    for it in iters {
        collect_free(&it.domain, bound, out);
        pattern_refs(&it.pattern, bound, out);
        for b in it.pattern.binders() {
            if bound.insert(b.clone()) {
                added.push(b);
            }
        }
    }
    added
}

fn pattern_refs(p: &Pattern, bound: &BTreeSet<Name>, out: &mut BTreeSet<Name>) {
    match p {
        Pattern::Bound(n) => {
            if !bound.contains(n) {
                out.insert(n.clone());
            }
        }
        Pattern::Tuple(ps) => ps.iter().for_each(|p| pattern_refs(p, bound, out)),
        _ => {}
    }
}

fn walk_expr(e: &Expr, f: &mut impl FnMut(&Expr)) {
    f(e);
    match e {
        Expr::Field(b, _) => walk_expr(b, f),
        Expr::Tuple(es) => es.iter().for_each(|x| walk_expr(x, f)),
        Expr::Call(r, _, args) => {
            walk_expr(r, f);
            args.iter().for_each(|x| walk_expr(x, f));
        }
        Expr::Unary(_, a) | Expr::Agg(_, a) | Expr::IsInstance(a, _) => walk_expr(a, f),
        Expr::Binary(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
            walk_expr(a, f);
            walk_expr(b, f);
        }
        Expr::Quant(_, iters, body) => {
            iters.iter().for_each(|i| walk_expr(&i.domain, f));
            walk_expr(body, f);
        }
        Expr::ComprExpr(c) => {
            c.iters.iter().for_each(|i| walk_expr(&i.domain, f));
            walk_expr(&c.head, f);
            walk_expr(&c.cond, f);
        }
        _ => {}
    }
}

/// The collection name an expression denotes, when it is a plain self field
/// or one of the history sequences.
pub fn collection_key(e: &Expr) -> Option<Name> {
    match e {
        Expr::Var(n) => Some(n.clone()),
        Expr::Field(b, n) if matches!(b.as_ref(), Expr::Var(s) if s == "self") => Some(n.clone()),
        _ => None,
    }
}

fn lvalue_key(lv: &LValue) -> Option<Name> {
    match lv {
        LValue::Var(n) => Some(n.clone()),
        LValue::Field(obj, n) if matches!(obj, Expr::Var(s) if s == "self") => Some(n.clone()),
        LValue::Field(..) => None,
    }
}

fn each_method_stmt<'a>(m: &'a Method, f: &mut impl FnMut(&'a Stmt)) {
    if let MethodBody::Stmt(s) = &m.body {
        walk_stmt(s, f);
    }
}

fn walk_stmt<'a>(s: &'a Stmt, f: &mut impl FnMut(&'a Stmt)) {
    f(s);
    match &s.kind {
        StmtKind::Seq(a, b) => {
            walk_stmt(a, f);
            walk_stmt(b, f);
        }
        StmtKind::If(_, t, e) => {
            walk_stmt(t, f);
            walk_stmt(e, f);
        }
        StmtKind::For(_, _, b) | StmtKind::While(_, b) | StmtKind::Labeled(_, b) => walk_stmt(b, f),
        StmtKind::ForItems(_, _, b) => walk_stmt(b, f),
        StmtKind::Await(aw) => {
            aw.clauses.iter().for_each(|(_, b)| walk_stmt(b, f));
            if let Some((_, b)) = &aw.timeout {
                walk_stmt(b, f);
            }
        }
        _ => {}
    }
}

fn each_stmt<'a>(p: &'a Program, f: &mut impl FnMut(&'a Stmt)) {
    for class in &p.classes {
        for m in &class.methods {
            each_method_stmt(m, f);
        }
        for r in &class.receives {
            walk_stmt(&r.body, f);
        }
    }
    each_method_stmt(&p.main, f);
}

fn each_stmt_mut(p: &mut Program, f: &mut impl FnMut(&mut Stmt)) {
    fn go(s: &mut Stmt, f: &mut impl FnMut(&mut Stmt)) {
        f(s);
        match &mut s.kind {
            StmtKind::Seq(a, b) => {
                go(a, f);
                go(b, f);
            }
            StmtKind::If(_, t, e) => {
                go(t, f);
                go(e, f);
            }
            StmtKind::For(_, _, b) | StmtKind::While(_, b) | StmtKind::Labeled(_, b) => go(b, f),
            StmtKind::ForItems(_, _, b) => go(b, f),
            StmtKind::Await(aw) => {
                aw.clauses.iter_mut().for_each(|(_, b)| go(b, f));
                if let Some((_, b)) = &mut aw.timeout {
                    go(b, f);
                }
            }
            _ => {}
        }
    }
    for class in &mut p.classes {
        for m in &mut class.methods {
            if let MethodBody::Stmt(s) = &mut m.body {
                go(s, f);
            }
        }
        for r in &mut class.receives {
            go(&mut r.body, f);
        }
    }
    if let MethodBody::Stmt(s) = &mut p.main.body {
        go(s, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LAMPORT_AWAIT: &str = "(each ('request', c2, p2) in q | (c2, p2) != (c, self) implies (c, self) < (c2, p2)) and (each p2 in s | some received('ack', c2, =p2) | c2 > c)";

    fn prog(updates: &str, cond: &str) -> Program {
        let src = format!(
            "class P extends Process:
  def setup():
    self.q = {{}}
    self.s = {{}}
    self.t = {{}}
    self.u = {{}}
    self.c = 0
    self.y = 0
    self.z = 0
{updates}  end

  def m():
    await {cond}
  end

  def run():
    skip
  end
end

def main():
  skip
end
"
        );
        crate::compile(&src).unwrap_or_else(|ds| panic!("compile failed: {ds:?}\n{src}"))
    }

    /// Condition of the lone await in `P.m`.
    fn cond_of(p: &Program) -> Expr {
        let class = p.classes.iter().find(|c| c.name == "P").unwrap();
        let m = class.methods.iter().find(|m| m.name == "m").unwrap();
        let mut cond = None;
        if let MethodBody::Stmt(s) = &m.body {
            walk_stmt(s, &mut |s| {
                if let StmtKind::Await(aw) = &s.kind {
                    cond = Some(aw.clauses[0].0.clone());
                }
            });
        }
        cond.expect("no await in P.m")
    }

    fn expect(cond: &str) -> Expr {
        cond_of(&prog("", cond))
    }

    fn qx(e: Expr) -> QueryExpr {
        let params = free_vars(&e);
        QueryExpr { expr: e, params }
    }

    fn select(updates: &str, cond: &str) -> ConversionChoice {
        let p = prog(updates, cond);
        let up = UpdateProfile::from_program(&p);
        let mut rw = Rewriter::for_program(&p);
        rw.select_conversion(&qx(cond_of(&p)), &up).unwrap()
    }

    #[test]
    fn lamport_deferral_conjunct_picks_emptiness_form() {
        let p = prog("", LAMPORT_AWAIT);
        let conjs = split_and(&cond_of(&p));
        let up = UpdateProfile::from_program(&p);
        let mut rw = Rewriter::for_program(&p);
        let choice = rw.select_conversion(&qx(conjs[0].clone()), &up).unwrap();
        assert_eq!(choice.rule, rid(1, 3));
        assert_eq!(
            choice.expr,
            expect("size({('request', c2, p2) : ('request', c2, p2) in q | (c, self) > (c2, p2)}) == 0")
        );
        assert_eq!(choice.time, CostClass::Constant);
        assert_eq!(choice.space, CostClass::Linear);
    }

    #[test]
    fn lamport_ack_conjunct_joins_histories() {
        let p = prog("", LAMPORT_AWAIT);
        let conjs = split_and(&cond_of(&p));
        let up = UpdateProfile::from_program(&p);
        let mut rw = Rewriter::for_program(&p);
        let choice = rw.select_conversion(&qx(conjs[1].clone()), &up).unwrap();
        assert_eq!(choice.rule, rid(2, 2));
        assert_eq!(
            choice.expr,
            expect("size({p2 : p2 in s, received('ack', c2, =p2) | c2 > c}) == size(s)")
        );
    }

    #[test]
    fn single_some_counts_witnesses() {
        let p = prog("", "some x in s | x > y");
        let mut rw = Rewriter::for_program(&p);
        let cs = rw.convert_single(&qx(cond_of(&p))).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].rule, rid(1, 1));
        assert_eq!(cs[0].expr, expect("size({x : x in s | x > y}) != 0"));
    }

    #[test]
    fn each_rows_compare_matching_counts() {
        let p = prog("", "each ('a', v) in s | v > y");
        let mut rw = Rewriter::for_program(&p);
        let cs = rw.convert_single(&qx(cond_of(&p))).unwrap();
        assert_eq!([cs[0].rule, cs[1].rule], [rid(1, 2), rid(1, 3)]);
        // the pattern filters, so row 2 counts matching elements, not size(s)
        assert_eq!(
            cs[0].expr,
            expect("size({('a', v) : ('a', v) in s | v > y}) == size({('a', v) : ('a', v) in s})")
        );
        assert_eq!(cs[1].expr, expect("size({('a', v) : ('a', v) in s | v <= y}) == 0"));
    }

    #[test]
    fn order_rows_pair_up() {
        let mut rw = Rewriter::new(Fresh::new());
        let s = Expr::self_field("s");
        let y = Expr::self_field("y");
        for kind in [QuantKind::Some, QuantKind::Each] {
            for op in [BinOp::Le, BinOp::Ge, BinOp::Lt, BinOp::Gt] {
                let it = QIter { pattern: Pattern::Var("x".into()), domain: s.clone() };
                let yform = Expr::Quant(
                    kind,
                    vec![it.clone()],
                    Box::new(Expr::bin(op, y.clone(), Expr::Var("x".into()))),
                );
                let xform = Expr::Quant(
                    kind,
                    vec![it],
                    Box::new(Expr::bin(flip(op), Expr::Var("x".into()), y.clone())),
                );
                let cy = rw.convert_order(&qx(yform)).unwrap();
                let cx = rw.convert_order(&qx(xform)).unwrap();
                assert_eq!(cy.rule.table, 3);
                assert_eq!(cy.rule.row % 2, 1, "parameter-first form takes the odd row");
                assert_eq!(cx.rule.row, cy.rule.row + 1);
                assert_eq!(cy.expr, cx.expr, "flipped operands must convert identically");
            }
        }
    }

    #[test]
    fn order_bounds_use_the_reachable_extreme() {
        let some_le = select("", "some x in s | y <= x");
        assert_eq!(some_le.rule, rid(3, 1));
        assert_eq!(some_le.expr, expect("s != {} and y <= max(s)"));

        let each_gt = select("", "each x in s | y > x");
        assert_eq!(each_gt.rule, rid(3, 15));
        assert_eq!(each_gt.expr, expect("s == {} or y > max(s)"));
    }

    #[test]
    fn order_extracts_projection_keys() {
        let p = prog("", "some ('k', a, b) in s | (a, b) >= y");
        let mut rw = Rewriter::for_program(&p);
        let c = rw.convert_order(&qx(cond_of(&p))).unwrap();
        assert_eq!(c.rule, rid(3, 2));
        assert_eq!(
            c.expr,
            expect("{(a, b) : ('k', a, b) in s} != {} and y <= max({(a, b) : ('k', a, b) in s})")
        );
    }

    #[test]
    fn decompose_pushes_antecedents_into_domains() {
        let p = prog("", "each x in s | x > 0 implies y < x");
        let mut rw = Rewriter::for_program(&p);
        let (d, fired) = rw.decompose_traced(&qx(cond_of(&p)));
        assert_eq!(fired, vec![rid(4, 8)]);
        assert_eq!(d.expr, expect("each x in {x : x in s | x > 0} | y < x"));
        // already atomic: a second pass changes nothing
        let (d2, fired2) = rw.decompose_traced(&d);
        assert_eq!(d2.expr, d.expr);
        assert!(fired2.is_empty());
    }

    #[test]
    fn decompose_splits_disjunctions() {
        let p = prog("", "some x in s | x < y or x > z");
        let mut rw = Rewriter::for_program(&p);
        let (d, fired) = rw.decompose_traced(&qx(cond_of(&p)));
        assert_eq!(fired, vec![rid(4, 3)]);
        assert_eq!(d.expr, expect("(some x in s | x < y) or (some x in s | x > z)"));
    }

    #[test]
    fn min_variant_matches_two_step_derivation() {
        let p = prog("", LAMPORT_AWAIT);
        let conjs = split_and(&cond_of(&p));
        let mut rw = Rewriter::for_program(&p);
        let d = rw.decompose(&qx(conjs[0].clone()));
        let c = rw.convert_order(&d).unwrap();
        assert_eq!(c.rule, rid(3, 13));
        assert_eq!(
            c.expr,
            expect(
                "{(c2, p2) : ('request', c2, p2) in q | (c2, p2) != (c, self)} == {} or \
                 (c, self) < min({(c2, p2) : ('request', c2, p2) in q | (c2, p2) != (c, self)})"
            )
        );
    }

    #[test]
    fn selection_prefers_bounds_when_collection_only_grows() {
        let c = select("    s.add(1)\n", "each x in s | y > x");
        assert_eq!(c.rule, rid(3, 15));
        assert_eq!((c.time, c.space), (CostClass::Constant, CostClass::Constant));
    }

    #[test]
    fn selection_prefers_stored_count_under_deletions() {
        let c = select("    s.add(1)\n    s.del(1)\n", "each x in s | y > x");
        assert_eq!(c.rule, rid(1, 3));
        assert_eq!(c.expr, expect("size({x : x in s | y <= x}) == 0"));
        assert_eq!((c.time, c.space), (CostClass::Constant, CostClass::Linear));
    }

    #[test]
    fn nested_some_each_uses_shortfall() {
        let c = select("", "some x in s | each ('v', c2, =x) in t | c2 >= x");
        assert_eq!(c.rule, rid(2, 3));
        assert_eq!(
            c.expr,
            expect("size({x : x in s, ('v', c2, =x) in t | c2 < x}) != size(s)")
        );
    }

    #[test]
    fn same_kind_chain_joins_iterators() {
        let c = select("", "some x in s | some y in t | x != y");
        assert_eq!(c.rule, rid(2, 1));
        assert_eq!(c.expr, expect("size({(x, y) : x in s, y in t | x != y}) != 0"));
    }

    #[test]
    fn quadratic_join_falls_back_to_extracted_bounds() {
        let c = select("    s.add(1)\n    t.add(2)\n", "each x in s | each y in t | x < y");
        assert_eq!(c.via[0], rid(3, 13), "inner bound extracted first");
        assert_eq!(c.rule, rid(1, 3));
        assert!(c.space < CostClass::Quadratic);
        assert_eq!(c.expr, expect("size({x : x in s | t != {} and x >= min(t)}) == 0"));
    }

    #[test]
    fn alternation_depth_rejected() {
        let p = prog("", "some x in s | each y in t | some z in u | x < z");
        let up = UpdateProfile::from_program(&p);
        let mut rw = Rewriter::for_program(&p);
        let err = rw.select_conversion(&qx(cond_of(&p)), &up).unwrap_err();
        assert_eq!(err, RewriteError::Alternation);
    }

    #[test]
    fn simplify_merges_strict_bounds() {
        let x = || Expr::Var("x".into());
        let y = || Expr::Var("y".into());
        let body = Expr::Implies(
            Box::new(Expr::neq(x(), y())),
            Box::new(Expr::bin(BinOp::Lt, x(), y())),
        );
        assert_eq!(simplify(&Expr::not(body)), Expr::bin(BinOp::Gt, x(), y()));
        assert_eq!(simplify(&Expr::not(Expr::not(x()))), x());
        let disj = Expr::Or(
            Box::new(Expr::bin(BinOp::Lt, x(), y())),
            Box::new(Expr::bin(BinOp::Ge, y(), x())),
        );
        assert_eq!(
            simplify(&Expr::not(disj)),
            Expr::And(
                Box::new(Expr::bin(BinOp::Ge, x(), y())),
                Box::new(Expr::bin(BinOp::Lt, y(), x())),
            )
        );
    }

    #[test]
    fn profile_tracks_growth_and_shrink() {
        let p = prog("    q.add(1)\n    q.del(1)\n    s.add(1)\n", "y > 0");
        let up = UpdateProfile::from_program(&p);
        assert!(!up.additions_only(&"q".to_string()));
        assert!(up.additions_only(&"s".to_string()));
        assert!(up.additions_only(&"received".to_string()));
        assert_eq!(up.scalars.get("c"), Some(&true));
    }

    #[test]
    fn convert_awaits_rewrites_in_place() {
        let mut p = prog("", LAMPORT_AWAIT);
        let reports = convert_awaits(&mut p).unwrap();
        assert_eq!(reports.len(), 2);
        let rules: Vec<RuleId> = reports.iter().map(|r| r.choice.as_ref().unwrap().rule).collect();
        assert_eq!(rules, vec![rid(1, 3), rid(2, 2)]);
        let cond = cond_of(&p);
        let conjs = split_and(&cond);
        assert!(!contains_quant(&conjs[0]));
        assert_eq!(conjs[1], reports[1].choice.as_ref().unwrap().expr);
    }
}
