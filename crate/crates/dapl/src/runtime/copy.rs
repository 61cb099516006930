//! Deep copies of values across local heaps, modeling the address-renaming
//! copy judgment used by message sends and process startup.
//!
//! Process addresses are global names and copy unchanged. Every other
//! address reachable from the value gets a fresh address in the destination
//! heap and its object is copied structurally; shared substructure stays
//! shared because the old-to-new mapping is a bijection.

use crate::ast::{Addr, Name};
use crate::runtime::classes::ClassTable;
use crate::runtime::state::State;
use crate::runtime::value::{Object, Value};
use std::collections::BTreeMap;

/// Copies `v` from `src`'s heap into `dst`'s heap, allocating as needed.
/// `src` and `dst` may be the same process (history appends copy locally).
/// `memo` carries the old-to-new address mapping; reuse one memo across
/// several copies to preserve sharing between them.
pub fn deep_copy(
    st: &mut State,
    classes: &ClassTable,
    src: Addr,
    dst: Addr,
    memo: &mut BTreeMap<Addr, Addr>,
    v: &Value,
) -> Value {
    match v {
        Value::Undefined | Value::Bool(_) | Value::Int(_) => v.clone(),
        Value::Tuple(vs) => Value::Tuple(
            vs.iter().map(|v| deep_copy(st, classes, src, dst, memo, v)).collect(),
        ),
        Value::Addr(a) => {
            let class = st.class_of(*a).unwrap_or("").to_string();
            if classes.is_process_class(&class) {
                return v.clone();
            }
            if let Some(new) = memo.get(a) {
                return Value::Addr(*new);
            }
            let new = st.fresh_addr();
            st.types.insert(new, class);
            // Registered before descending so cycles resolve via the memo.
            memo.insert(*a, new);
            let obj = st
                .heaps
                .get(&src)
                .and_then(|h| h.get(a))
                .cloned()
                .unwrap_or(Object::Fields(BTreeMap::new()));
            let copied = match obj {
                Object::Fields(fs) => Object::Fields(
                    fs.iter()
                        .map(|(k, v)| (k.clone(), deep_copy(st, classes, src, dst, memo, v)))
                        .collect(),
                ),
                Object::Set(s) => Object::Set(
                    s.iter().map(|v| deep_copy(st, classes, src, dst, memo, v)).collect(),
                ),
                Object::Seq(s) => Object::Seq(
                    s.iter().map(|v| deep_copy(st, classes, src, dst, memo, v)).collect(),
                ),
                Object::Multi(m) => Object::Multi(
                    m.iter()
                        .map(|(v, n)| (deep_copy(st, classes, src, dst, memo, v), *n))
                        .collect(),
                ),
            };
            st.heaps.entry(dst).or_default().insert(new, copied);
            Value::Addr(new)
        }
    }
}

/// Canonical form of the object graph reachable from a value: non-process
/// addresses are replaced by discovery indices with contents inlined (and
/// back-references for cycles). Two values are copies of each other exactly
/// when their canonical forms agree.
///
/// Set contents are canonicalized in element order, so the check is exact
/// whenever sets hold no locally allocated addresses (true throughout the
/// corpus; only field records and sequences nest collections there).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Shape {
    Undef,
    Bool(bool),
    Int(num_bigint::BigInt),
    ProcessAddr(Addr),
    Tuple(Vec<Shape>),
    Object(usize, Name, Box<ObjShape>),
    Back(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ObjShape {
    Fields(Vec<(Name, Shape)>),
    Set(Vec<Shape>),
    Seq(Vec<Shape>),
    Multi(Vec<(Shape, u64)>),
}

pub fn shape(
    v: &Value,
    heap: &BTreeMap<Addr, Object>,
    types: &BTreeMap<Addr, Name>,
    classes: &ClassTable,
) -> Shape {
    fn go(
        v: &Value,
        heap: &BTreeMap<Addr, Object>,
        types: &BTreeMap<Addr, Name>,
        classes: &ClassTable,
        seen: &mut BTreeMap<Addr, usize>,
    ) -> Shape {
        match v {
            Value::Undefined => Shape::Undef,
            Value::Bool(b) => Shape::Bool(*b),
            Value::Int(n) => Shape::Int(n.clone()),
            Value::Tuple(vs) => {
                Shape::Tuple(vs.iter().map(|v| go(v, heap, types, classes, seen)).collect())
            }
            Value::Addr(a) => {
                let class = types.get(a).cloned().unwrap_or_default();
                if classes.is_process_class(&class) {
                    return Shape::ProcessAddr(*a);
                }
                if let Some(idx) = seen.get(a) {
                    return Shape::Back(*idx);
                }
                let idx = seen.len();
                seen.insert(*a, idx);
                let contents = match heap.get(a) {
                    Some(Object::Fields(fs)) => ObjShape::Fields(
                        fs.iter()
                            .map(|(k, v)| (k.clone(), go(v, heap, types, classes, seen)))
                            .collect(),
                    ),
                    Some(Object::Set(s)) => ObjShape::Set(
                        s.iter().map(|v| go(v, heap, types, classes, seen)).collect(),
                    ),
                    Some(Object::Seq(s)) => ObjShape::Seq(
                        s.iter().map(|v| go(v, heap, types, classes, seen)).collect(),
                    ),
                    Some(Object::Multi(m)) => ObjShape::Multi(
                        m.iter()
                            .map(|(v, n)| (go(v, heap, types, classes, seen), *n))
                            .collect(),
                    ),
                    None => ObjShape::Fields(vec![("<dangling>".into(), Shape::Undef)]),
                };
                Shape::Object(idx, class, Box::new(contents))
            }
        }
    }
    go(v, heap, types, classes, &mut BTreeMap::new())
}

/// Checks that `copy` in `dst_heap` is a faithful copy of `original` in
/// `src_heap`: isomorphic object graphs with process addresses preserved.
pub fn verify_copy(
    original: &Value,
    src_heap: &BTreeMap<Addr, Object>,
    copy: &Value,
    dst_heap: &BTreeMap<Addr, Object>,
    types: &BTreeMap<Addr, Name>,
    classes: &ClassTable,
) -> bool {
    shape(original, src_heap, types, classes) == shape(copy, dst_heap, types, classes)
}
