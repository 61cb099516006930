//! Global machine state: per-process programs, heaps, channels, queues.
//!
//! Every process owns a local heap; the only inter-process edges are process
//! addresses, which are global names. Channels are per ordered sender,
//! receiver pair and deliver into per-process message queues of
//! (message, sender) pairs. Logical clocks live in a side table so the
//! language itself stays clock-agnostic.

use crate::ast::{Addr, Expr, Name, Stmt, StmtKind, PROCESS_CLASS, SEQUENCE_CLASS};
use crate::runtime::value::{Object, Value};
use std::collections::{BTreeMap, VecDeque};

pub type LocalHeap = BTreeMap<Addr, Object>;

pub const RECEIVED_FIELD: &str = "received";
pub const SENT_FIELD: &str = "sent";

#[derive(Debug, Clone)]
pub struct State {
    /// Program counter of each started process; absent once never started,
    /// `skip` once terminated.
    pub stmts: BTreeMap<Addr, Stmt>,
    /// Class of every allocated object (global by convention; the
    /// information is per-process in a real deployment).
    pub types: BTreeMap<Addr, Name>,
    pub heaps: BTreeMap<Addr, LocalHeap>,
    pub channels: BTreeMap<(Addr, Addr), VecDeque<Value>>,
    pub queues: BTreeMap<Addr, VecDeque<(Value, Addr)>>,
    pub clocks: BTreeMap<Addr, i64>,
    next_addr: u64,
}

impl State {
    /// One `Process` instance poised to invoke the top-level method.
    pub fn initial() -> State {
        let mut st = State {
            stmts: BTreeMap::new(),
            types: BTreeMap::new(),
            heaps: BTreeMap::new(),
            channels: BTreeMap::new(),
            queues: BTreeMap::new(),
            clocks: BTreeMap::new(),
            next_addr: 0,
        };
        let root = st.fresh_addr();
        let received = st.fresh_addr();
        let sent = st.fresh_addr();
        st.types.insert(root, PROCESS_CLASS.into());
        st.types.insert(received, SEQUENCE_CLASS.into());
        st.types.insert(sent, SEQUENCE_CLASS.into());
        let mut heap = LocalHeap::new();
        let mut fields = BTreeMap::new();
        fields.insert(RECEIVED_FIELD.to_string(), Value::Addr(received));
        fields.insert(SENT_FIELD.to_string(), Value::Addr(sent));
        heap.insert(root, Object::Fields(fields));
        heap.insert(received, Object::Seq(Vec::new()));
        heap.insert(sent, Object::Seq(Vec::new()));
        st.heaps.insert(root, heap);
        st.queues.insert(root, VecDeque::new());
        st.clocks.insert(root, 0);
        st.stmts.insert(
            root,
            Stmt::new(StmtKind::Call(Expr::Addr(root), "main".into(), Vec::new())),
        );
        st
    }

    pub fn root() -> Addr {
        Addr(0)
    }

    pub fn fresh_addr(&mut self) -> Addr {
        let a = Addr(self.next_addr);
        self.next_addr += 1;
        a
    }

    pub fn class_of(&self, a: Addr) -> Option<&str> {
        self.types.get(&a).map(|n| n.as_str())
    }

    /// Started process addresses, in address order.
    pub fn processes(&self) -> Vec<Addr> {
        self.stmts.keys().copied().collect()
    }

    pub fn heap_of(&self, proc: Addr) -> &LocalHeap {
        self.heaps.get(&proc).expect("process has a local heap")
    }

    pub fn heap_of_mut(&mut self, proc: Addr) -> &mut LocalHeap {
        self.heaps.get_mut(&proc).expect("process has a local heap")
    }

    /// Address of a history sequence (`received` or `sent`) of `proc`.
    pub fn history_addr(&self, proc: Addr, field: &str) -> Option<Addr> {
        match self.heap_of(proc).get(&proc)? {
            Object::Fields(fs) => fs.get(field)?.as_addr(),
            _ => None,
        }
    }

    /// Total element count of collections reachable from `proc`'s fields,
    /// excluding the message histories. Reachability keeps snapshots that
    /// lowering discarded from counting: this is the stored-state metric
    /// used to compare space behavior of original and incrementalized
    /// programs.
    pub fn stored_elements(&self, proc: Addr) -> usize {
        let Some(heap) = self.heaps.get(&proc) else { return 0 };
        let skip: Vec<Addr> = [RECEIVED_FIELD, SENT_FIELD]
            .iter()
            .filter_map(|f| self.history_addr(proc, f))
            .collect();
        fn addrs_in(v: &Value, out: &mut Vec<Addr>) {
            match v {
                Value::Addr(a) => out.push(*a),
                Value::Tuple(vs) => vs.iter().for_each(|v| addrs_in(v, out)),
                _ => {}
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![proc];
        let mut total = 0;
        while let Some(a) = stack.pop() {
            if !seen.insert(a) || skip.contains(&a) {
                continue;
            }
            let Some(obj) = heap.get(&a) else { continue };
            let mut next = Vec::new();
            match obj {
                Object::Fields(fs) => fs.values().for_each(|v| addrs_in(v, &mut next)),
                Object::Set(s) => {
                    total += s.len();
                    s.iter().for_each(|v| addrs_in(v, &mut next));
                }
                Object::Seq(s) => {
                    total += s.len();
                    s.iter().for_each(|v| addrs_in(v, &mut next));
                }
                Object::Multi(m) => {
                    total += m.values().map(|n| *n as usize).sum::<usize>();
                    m.keys().for_each(|v| addrs_in(v, &mut next));
                }
            }
            stack.extend(next);
        }
        total
    }

    pub fn history_len(&self, proc: Addr, field: &str) -> usize {
        self.history_addr(proc, field)
            .and_then(|a| self.heap_of(proc).get(&a))
            .and_then(|o| o.len())
            .unwrap_or(0)
    }
}
