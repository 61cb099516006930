//! A simulated runtime for core programs: values and per-process heaps,
//! deep message copying, expression evaluation, receive-definition matching,
//! and the statement transition rules.

pub mod classes;
pub mod copy;
pub mod eval;
pub mod recv;
pub mod rules;
pub mod state;
pub mod value;
