//! Diagnostics shared by the frontend, desugarer, and optimizer.

use serde::Serialize;

/// Source position, 1-based. `(0, 0)` marks synthesized nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl Pos {
    pub fn new(line: u32, col: u32) -> Self {
        Pos { line, col }
    }
}

impl std::fmt::Display for Pos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// One reported problem. Serialized as a JSON line by the CLI.
#[derive(Debug, Clone, Serialize, thiserror::Error)]
#[error("{rule} at {line}:{col}: {message}")]
pub struct Diagnostic {
    pub schema: u32,
    pub line: u32,
    pub col: u32,
    /// Stable rule id, e.g. "parse", "wf1", "wf2", "wf3", "desugar-rmi".
    pub rule: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(pos: Pos, rule: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            schema: 1,
            line: pos.line,
            col: pos.col,
            rule: rule.to_string(),
            message: message.into(),
        }
    }
}
