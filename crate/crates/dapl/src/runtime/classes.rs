//! Class table: method and receive-definition lookup with inheritance.
//!
//! The table attaches the program's top-level `main` to the pre-defined
//! `Process` class, since the initial process is a plain `Process` instance
//! and starts by invoking `main` on itself.

use crate::ast::{
    is_predefined_class, ClassDef, Method, MethodBody, MethodKind, Name, Program, ReceiveDef,
    Stmt, PROCESS_CLASS,
};
use std::collections::BTreeMap;

pub struct ClassTable<'p> {
    classes: BTreeMap<&'p str, &'p ClassDef>,
    main: &'p Method,
}

impl<'p> ClassTable<'p> {
    pub fn new(p: &'p Program) -> ClassTable<'p> {
        let classes = p.classes.iter().map(|c| (c.name.as_str(), c)).collect();
        ClassTable { classes, main: &p.main }
    }

    /// Superclass chain starting at `class` itself, ending at a pre-defined
    /// class. Unknown names yield just the name itself.
    pub fn chain<'a>(&'a self, class: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut cur = class;
        loop {
            out.push(cur);
            if is_predefined_class(cur) {
                break;
            }
            match self.classes.get(cur) {
                Some(c) => cur = &c.superclass,
                None => break,
            }
        }
        out
    }

    pub fn extends(&self, class: &str, ancestor: &str) -> bool {
        self.chain(class).contains(&ancestor)
    }

    pub fn is_process_class(&self, class: &str) -> bool {
        self.extends(class, PROCESS_CLASS)
    }

    /// Nearest definition of `name` along the superclass chain. The program's
    /// `main` is visible as a method of `Process`.
    pub fn method(&self, class: &str, name: &str) -> Option<&'p Method> {
        for c in self.chain(class) {
            if let Some(cd) = self.classes.get(c) {
                if let Some(m) = cd.methods.iter().find(|m| m.name == name) {
                    return Some(m);
                }
            }
            if c == PROCESS_CLASS && name == self.main.name {
                return Some(self.main);
            }
        }
        None
    }

    /// Statement method body, for call statements.
    pub fn def_body(&self, class: &str, name: &str) -> Option<(&'p [Name], &'p Stmt)> {
        let m = self.method(class, name)?;
        match (&m.kind, &m.body) {
            (MethodKind::Def, MethodBody::Stmt(s)) => Some((&m.params, s)),
            _ => None,
        }
    }

    /// Receive definitions handled by instances of `class`, own class first,
    /// then inherited ones.
    pub fn receives(&self, class: &str) -> Vec<&'p ReceiveDef> {
        let mut out = Vec::new();
        for c in self.chain(class) {
            if let Some(cd) = self.classes.get(c) {
                out.extend(cd.receives.iter());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    #[test]
    fn method_lookup_walks_superclass_chain() {
        let src = "
class A extends Process:
  def ping():
    skip
  end
end
class B extends A:
  def pong():
    skip
  end
end
def main():
  skip
end
";
        let p = parse(src).unwrap();
        let t = ClassTable::new(&p);
        assert!(t.method("B", "ping").is_some());
        assert!(t.method("B", "pong").is_some());
        assert!(t.method("A", "pong").is_none());
        assert!(t.method(PROCESS_CLASS, "main").is_some());
        assert!(t.is_process_class("B"));
        assert!(!t.is_process_class("Set"));
    }
}
