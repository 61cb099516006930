//! Property tests for the two invariants everything else leans on: the
//! cross-heap copy judgment producing isomorphic, fresh object graphs, and
//! the lowering pass being a projection (running it twice changes nothing,
//! and its output contains no surface forms).

use dapl::ast::{
    Addr, Pattern, Program, Stmt, StmtKind, SEQUENCE_CLASS, SET_CLASS,
};
use dapl::runtime::classes::ClassTable;
use dapl::runtime::copy::{deep_copy, verify_copy};
use dapl::runtime::state::State;
use dapl::runtime::value::{Object, Value};
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

// ---- object graphs for the copy judgment ----

#[derive(Debug, Clone)]
enum GenLeaf {
    Int(i8),
    Bool(bool),
    Undef,
    Ref(prop::sample::Index),
}

#[derive(Debug, Clone)]
enum GenElem {
    Leaf(GenLeaf),
    Pair(GenLeaf, GenLeaf),
}

#[derive(Debug, Clone)]
enum GenKind {
    Record,
    Set,
    Seq,
}

#[derive(Debug, Clone)]
struct GenNode {
    kind: GenKind,
    elems: Vec<GenElem>,
}

fn scalar_strategy() -> impl Strategy<Value = GenLeaf> {
    prop_oneof![
        any::<i8>().prop_map(GenLeaf::Int),
        any::<bool>().prop_map(GenLeaf::Bool),
        Just(GenLeaf::Undef),
    ]
}

fn leaf_strategy() -> impl Strategy<Value = GenLeaf> {
    prop_oneof![
        scalar_strategy(),
        any::<prop::sample::Index>().prop_map(GenLeaf::Ref),
    ]
}

/// Records and sequences may point anywhere (cycles and sharing included);
/// sets hold scalars only, matching both the corpus and the domain on which
/// the shape oracle is exact (set canonicalization is element-ordered, so
/// renumbered member addresses could permute it).
fn node_strategy() -> impl Strategy<Value = GenNode> {
    let elem = prop_oneof![
        leaf_strategy().prop_map(GenElem::Leaf),
        (leaf_strategy(), leaf_strategy()).prop_map(|(a, b)| GenElem::Pair(a, b)),
    ];
    let scalar_elem = prop_oneof![
        scalar_strategy().prop_map(GenElem::Leaf),
        (scalar_strategy(), scalar_strategy()).prop_map(|(a, b)| GenElem::Pair(a, b)),
    ];
    prop_oneof![
        prop::collection::vec(elem.clone(), 0..4)
            .prop_map(|elems| GenNode { kind: GenKind::Record, elems }),
        prop::collection::vec(scalar_elem, 0..4)
            .prop_map(|elems| GenNode { kind: GenKind::Set, elems }),
        prop::collection::vec(elem, 0..4)
            .prop_map(|elems| GenNode { kind: GenKind::Seq, elems }),
    ]
}

/// Installs the generated graph in `proc`'s heap; `Ref` indices wrap around
/// the node count, so cycles and shared substructure arise freely.
fn install(st: &mut State, proc_addr: Addr, nodes: &[GenNode]) -> Vec<Addr> {
    let addrs: Vec<Addr> = nodes.iter().map(|_| st.fresh_addr()).collect();
    let leaf = |l: &GenLeaf| match l {
        GenLeaf::Int(n) => Value::int(*n as i64),
        GenLeaf::Bool(b) => Value::Bool(*b),
        GenLeaf::Undef => Value::Undefined,
        GenLeaf::Ref(i) => Value::Addr(addrs[i.index(addrs.len())]),
    };
    let value = |e: &GenElem| match e {
        GenElem::Leaf(l) => leaf(l),
        GenElem::Pair(a, b) => Value::Tuple(vec![leaf(a), leaf(b)]),
    };
    for (node, &addr) in nodes.iter().zip(&addrs) {
        let (class, obj) = match node.kind {
            GenKind::Record => {
                let fields: BTreeMap<_, _> = node
                    .elems
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (format!("f{i}"), value(e)))
                    .collect();
                ("R".to_string(), Object::Fields(fields))
            }
            GenKind::Set => (
                SET_CLASS.to_string(),
                Object::Set(node.elems.iter().map(value).collect()),
            ),
            GenKind::Seq => (
                SEQUENCE_CLASS.to_string(),
                Object::Seq(node.elems.iter().map(value).collect()),
            ),
        };
        st.types.insert(addr, class);
        st.heaps.entry(proc_addr).or_default().insert(addr, obj);
    }
    addrs
}

/// Local (non-process) addresses reachable from `v` in `heap`.
fn reachable(v: &Value, heap: &BTreeMap<Addr, Object>) -> BTreeSet<Addr> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![v.clone()];
    while let Some(v) = stack.pop() {
        match v {
            Value::Tuple(vs) => stack.extend(vs),
            Value::Addr(a) => {
                if !seen.insert(a) {
                    continue;
                }
                match heap.get(&a) {
                    Some(Object::Fields(fs)) => stack.extend(fs.values().cloned()),
                    Some(Object::Set(s)) => stack.extend(s.iter().cloned()),
                    Some(Object::Seq(s)) => stack.extend(s.iter().cloned()),
                    Some(Object::Multi(m)) => stack.extend(m.keys().cloned()),
                    None => {}
                }
            }
            _ => {}
        }
    }
    seen
}

fn empty_program() -> Program {
    dapl::compile("def main():\n  skip\nend\n").expect("trivial program compiles")
}

proptest! {
    /// Copying any object graph yields an isomorphic graph made entirely of
    /// fresh addresses, and a second copy through the same memo aliases the
    /// first instead of duplicating it.
    #[test]
    fn deep_copy_is_iso_and_fresh(nodes in prop::collection::vec(node_strategy(), 1..7)) {
        let prog = empty_program();
        let classes = ClassTable::new(&prog);
        let mut st = State::initial();
        let root = State::root();
        let addrs = install(&mut st, root, &nodes);
        let original = Value::Tuple(vec![
            Value::Addr(addrs[0]),
            Value::Addr(addrs[addrs.len() / 2]),
        ]);

        let mut memo = BTreeMap::new();
        let copy = deep_copy(&mut st, &classes, root, root, &mut memo, &original);

        let heap = st.heap_of(root);
        prop_assert!(verify_copy(&original, heap, &copy, heap, &st.types, &classes));

        let from = reachable(&original, heap);
        let to = reachable(&copy, heap);
        prop_assert!(from.is_disjoint(&to), "copy reused a source address");
        prop_assert_eq!(from.len(), to.len(), "copy changed the node count");

        let again = deep_copy(&mut st, &classes, root, root, &mut memo, &original);
        prop_assert_eq!(copy, again, "same memo must alias, not re-copy");
    }
}

// ---- generated surface programs for the lowering pass ----

fn stmt_strategy() -> impl Strategy<Value = String> {
    let j = 0..4u8;
    let k = 0..9u8;
    prop_oneof![
        (j.clone(), k.clone()).prop_map(|(j, k)| format!("x{j} = {k}")),
        (j.clone(), k.clone()).prop_map(|(j, k)| format!("self.f = x{j} + {k}")),
        k.clone().prop_map(|k| format!("s.add({k})")),
        j.clone().prop_map(|j| format!("n{j} = size(s)")),
        j.clone().prop_map(|j| format!("m{j} = max(s)")),
        (j.clone(), k.clone())
            .prop_map(|(j, k)| format!("t{j} = sum({{ v : v in s | v > {k} }})")),
        (j.clone(), k.clone()).prop_map(|(j, k)| format!("b{j} = some v in s | v == {k}")),
        (j.clone(), k.clone()).prop_map(|(j, k)| format!("b{j} = each v in s | v > {k}")),
        j.clone().prop_map(|j| format!("for v in s:\n    x{j} = v\n  end")),
        j.clone()
            .prop_map(|j| format!("for (a, b) in s:\n    x{j} = a\n  end")),
        (j.clone(), k.clone())
            .prop_map(|(j, k)| format!("if x{j} > {k} and x{j} < 9:\n    skip\n  end")),
        (j.clone(), k.clone())
            .prop_map(|(j, k)| format!("while x{j} > {k}:\n    x{j} = x{j} - 1\n  end")),
        (j.clone(), k.clone()).prop_map(|(j, k)| format!("await x{j} > {k}")),
        (j.clone(), k.clone()).prop_map(|(j, k)| {
            format!(
                "await x{j} > {k}:\n    skip\n  or x{j} < 0:\n    skip\n  timeout {k}:\n    skip\n  end"
            )
        }),
        k.clone().prop_map(|k| format!("send ('t', {k}) to s")),
        (j, k).prop_map(|(j, k)| format!("-- l{j}\n  await x{j} > {k}")),
    ]
}

fn program_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(stmt_strategy(), 1..6).prop_map(|stmts| {
        let mut src = String::from(
            "configuration fifo reliable\n\
             class P extends Process:\n  def run():\n    skip\n  end\nend\n\
             def main():\n  self.s = {}\n",
        );
        for s in &stmts {
            src.push_str("  ");
            src.push_str(s);
            src.push('\n');
        }
        src.push_str("end\n");
        src
    })
}

/// No comprehension, multi-new, label marker, or pattern loop survives
/// lowering; those are exactly the forms the runtime refuses to execute.
fn assert_core(s: &Stmt) -> Result<(), TestCaseError> {
    match &s.kind {
        StmtKind::Compr(..) => prop_assert!(false, "comprehension survived lowering"),
        StmtKind::NewMany(..) => prop_assert!(false, "multi-new survived lowering"),
        StmtKind::Labeled(..) => prop_assert!(false, "label marker survived lowering"),
        StmtKind::For(pat, _, body) => {
            prop_assert!(matches!(pat, Pattern::Var(_)), "pattern loop survived lowering");
            assert_core(body)?;
        }
        StmtKind::Seq(a, b) => {
            assert_core(a)?;
            assert_core(b)?;
        }
        StmtKind::If(_, a, b) => {
            assert_core(a)?;
            assert_core(b)?;
        }
        StmtKind::While(_, body) | StmtKind::ForItems(_, _, body) => assert_core(body)?,
        StmtKind::Await(a) => {
            for (_, body) in &a.clauses {
                assert_core(body)?;
            }
            if let Some((_, body)) = &a.timeout {
                assert_core(body)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn for_each_stmt(p: &Program, f: &mut impl FnMut(&Stmt) -> Result<(), TestCaseError>) -> Result<(), TestCaseError> {
    if let dapl::ast::MethodBody::Stmt(s) = &p.main.body {
        f(s)?;
    }
    for c in &p.classes {
        for m in &c.methods {
            if let dapl::ast::MethodBody::Stmt(s) = &m.body {
                f(s)?;
            }
        }
        for r in &c.receives {
            f(&r.body)?;
        }
    }
    Ok(())
}

proptest! {
    /// Lowering is a projection: its output is in the core language and a
    /// second run leaves the program exactly as it was.
    #[test]
    fn lowering_is_a_projection_into_the_core(src in program_strategy()) {
        let once = dapl::compile(&src)
            .map_err(|ds| TestCaseError::fail(format!("{ds:?}\n{src}")))?;

        for_each_stmt(&once, &mut assert_core)?;

        let mut twice = once.clone();
        dapl::desugar::desugar(&mut twice)
            .map_err(|ds| TestCaseError::fail(format!("relower: {ds:?}")))?;
        prop_assert_eq!(
            dapl::pretty::program(&once),
            dapl::pretty::program(&twice),
            "second lowering changed the program"
        );
    }
}
