//! Runtime values and heap objects.
//!
//! The value domain is booleans, unbounded integers, addresses, and tuples.
//! Symbolic tags erase to integers (`ATOM_BASE` + index into the program's
//! sorted tag list), and `Undefined` is the result of reading a field that
//! was never assigned; programs may test for it but any other use of it is a
//! runtime error.

use crate::ast::{Addr, Literal, Name, ATOM_BASE};
use num_bigint::BigInt;
use num_traits::ToPrimitive;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Undefined,
    Bool(bool),
    Int(BigInt),
    Addr(Addr),
    Tuple(Vec<Value>),
}

impl Value {
    pub fn int(n: i64) -> Value {
        Value::Int(BigInt::from(n))
    }

    pub fn truthy(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_addr(&self) -> Option<Addr> {
        match self {
            Value::Addr(a) => Some(*a),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<&BigInt> {
        match self {
            Value::Int(n) => Some(n),
            _ => None,
        }
    }
}

/// Heap objects: a field record, a set, a sequence, or the ordered multiset
/// backing `DS`. The multiset keeps a count per element so deleting one
/// instance of a duplicated key leaves the extremes intact, which plain set
/// semantics would not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Object {
    Fields(BTreeMap<Name, Value>),
    Set(BTreeSet<Value>),
    Seq(Vec<Value>),
    Multi(BTreeMap<Value, u64>),
}

impl Object {
    /// Element count of a collection; field records have no size.
    pub fn len(&self) -> Option<usize> {
        match self {
            Object::Fields(_) => None,
            Object::Set(s) => Some(s.len()),
            Object::Seq(s) => Some(s.len()),
            Object::Multi(m) => Some(m.values().map(|n| *n as usize).sum()),
        }
    }
}

/// Two-way mapping between symbolic tags and their integer encodings.
#[derive(Debug, Clone)]
pub struct AtomTable {
    by_name: BTreeMap<Name, i64>,
    names: Vec<Name>,
}

impl AtomTable {
    /// `atoms` must be sorted; programs collect tags in sorted order so that
    /// equal tag sets get equal encodings.
    pub fn new(atoms: &[Name]) -> AtomTable {
        let by_name = atoms
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), ATOM_BASE + i as i64))
            .collect();
        AtomTable { by_name, names: atoms.to_vec() }
    }

    pub fn intern(&self, name: &str) -> Option<i64> {
        self.by_name.get(name).copied()
    }

    pub fn name_of(&self, code: &BigInt) -> Option<&str> {
        let code = code.to_i64()?;
        let idx = code.checked_sub(ATOM_BASE)?;
        if idx < 0 {
            return None;
        }
        self.names.get(idx as usize).map(|s| s.as_str())
    }

    pub fn literal(&self, lit: &Literal) -> Option<Value> {
        match lit {
            Literal::Bool(b) => Some(Value::Bool(*b)),
            Literal::Int(n) => Some(Value::Int(n.clone())),
            Literal::Atom(name) => self.intern(name).map(Value::int),
        }
    }
}

/// Renders a value for traces and diffs: atoms print symbolically, tuples
/// parenthesize, addresses keep their `@n` form.
pub fn render(v: &Value, atoms: &AtomTable) -> String {
    match v {
        Value::Undefined => "undefined".into(),
        Value::Bool(b) => b.to_string(),
        Value::Int(n) => match atoms.name_of(n) {
            Some(name) => format!("'{name}'"),
            None => n.to_string(),
        },
        Value::Addr(a) => a.to_string(),
        Value::Tuple(vs) => {
            let inner: Vec<String> = vs.iter().map(|v| render(v, atoms)).collect();
            format!("({})", inner.join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atom_codes_follow_sorted_name_order() {
        let t = AtomTable::new(&["ack".into(), "request".into()]);
        assert_eq!(t.intern("ack"), Some(ATOM_BASE));
        assert_eq!(t.intern("request"), Some(ATOM_BASE + 1));
        assert_eq!(t.name_of(&BigInt::from(ATOM_BASE + 1)), Some("request"));
        assert_eq!(t.name_of(&BigInt::from(7)), None);
    }

    #[test]
    fn value_order_is_total_and_stable() {
        let mut s = BTreeSet::new();
        s.insert(Value::Tuple(vec![Value::int(2), Value::Addr(Addr(1))]));
        s.insert(Value::Tuple(vec![Value::int(1), Value::Addr(Addr(2))]));
        let first = s.iter().next().unwrap();
        assert_eq!(first, &Value::Tuple(vec![Value::int(1), Value::Addr(Addr(2))]));
    }
}
