//! Compiler, incrementalizing optimizer, and simulated runtime for a small
//! language for distributed algorithms: process classes that exchange
//! messages through configurable channels, synchronize at labeled yield
//! points, and block on `await` conditions written as logic quantifications
//! over message histories.
//!
//! Pipeline: [`parser`] -> [`wf`] -> [`desugar`] -> optional [`qrewrite`] +
//! [`incr`] -> [`runtime`] driven by [`sim`].

pub mod ast;
pub mod diag;
pub mod lexer;
pub mod parser;
pub mod pretty;
pub mod wf;
pub mod desugar;
pub mod qrewrite;
pub mod runtime;
pub mod sim;
pub mod batch;

/// Front half of the pipeline: parse, check well-formedness, lower to core.
pub fn compile(src: &str) -> Result<ast::Program, Vec<diag::Diagnostic>> {
    let mut p = parser::parse(src).map_err(|d| vec![d])?;
    wf::check(&p)?;
    desugar::desugar(&mut p)?;
    Ok(p)
}
