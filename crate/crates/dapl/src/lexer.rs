//! Hand-rolled lexer. Newlines are not significant; `#` starts a line
//! comment; `--` introduces a yield-point label marker.

use crate::diag::{Diagnostic, Pos};
use num_bigint::BigInt;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(BigInt),
    /// `'request'`: symbolic tag.
    Atom(String),
    // keywords
    Configuration,
    Class,
    Extends,
    Def,
    Defun,
    Receive,
    At,
    From,
    Await,
    Timeout,
    Or,
    And,
    Not,
    Implies,
    Is,
    In,
    New,
    Skip,
    If,
    Else,
    For,
    While,
    Send,
    To,
    Each,
    Some,
    True,
    False,
    Undefined,
    End,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Semi,
    Dot,
    Assign,
    EqEq,
    Neq,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Pipe,
    /// `--`
    Marker,
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Int(n) => write!(f, "integer `{n}`"),
            Tok::Atom(s) => write!(f, "tag `'{s}'`"),
            Tok::Eof => write!(f, "end of input"),
            other => {
                let s = match other {
                    Tok::Configuration => "configuration",
                    Tok::Class => "class",
                    Tok::Extends => "extends",
                    Tok::Def => "def",
                    Tok::Defun => "defun",
                    Tok::Receive => "receive",
                    Tok::At => "at",
                    Tok::From => "from",
                    Tok::Await => "await",
                    Tok::Timeout => "timeout",
                    Tok::Or => "or",
                    Tok::And => "and",
                    Tok::Not => "not",
                    Tok::Implies => "implies",
                    Tok::Is => "is",
                    Tok::In => "in",
                    Tok::New => "new",
                    Tok::Skip => "skip",
                    Tok::If => "if",
                    Tok::Else => "else",
                    Tok::For => "for",
                    Tok::While => "while",
                    Tok::Send => "send",
                    Tok::To => "to",
                    Tok::Each => "each",
                    Tok::Some => "some",
                    Tok::True => "true",
                    Tok::False => "false",
                    Tok::Undefined => "undefined",
                    Tok::End => "end",
                    Tok::LParen => "(",
                    Tok::RParen => ")",
                    Tok::LBrace => "{",
                    Tok::RBrace => "}",
                    Tok::Comma => ",",
                    Tok::Colon => ":",
                    Tok::Semi => ";",
                    Tok::Dot => ".",
                    Tok::Assign => "=",
                    Tok::EqEq => "==",
                    Tok::Neq => "!=",
                    Tok::Lt => "<",
                    Tok::Le => "<=",
                    Tok::Gt => ">",
                    Tok::Ge => ">=",
                    Tok::Plus => "+",
                    Tok::Minus => "-",
                    Tok::Star => "*",
                    Tok::Pipe => "|",
                    Tok::Marker => "--",
                    _ => unreachable!(),
                };
                write!(f, "`{s}`")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub pos: Pos,
}

fn keyword(s: &str) -> Option<Tok> {
    Some(match s {
        "configuration" => Tok::Configuration,
        "class" => Tok::Class,
        "extends" => Tok::Extends,
        "def" => Tok::Def,
        "defun" => Tok::Defun,
        "receive" => Tok::Receive,
        "at" => Tok::At,
        "from" => Tok::From,
        "await" => Tok::Await,
        "timeout" => Tok::Timeout,
        "or" => Tok::Or,
        "and" => Tok::And,
        "not" => Tok::Not,
        "implies" => Tok::Implies,
        "is" => Tok::Is,
        "in" => Tok::In,
        "new" => Tok::New,
        "skip" => Tok::Skip,
        "if" => Tok::If,
        "else" => Tok::Else,
        "for" => Tok::For,
        "while" => Tok::While,
        "send" => Tok::Send,
        "to" => Tok::To,
        "each" => Tok::Each,
        "some" => Tok::Some,
        "true" => Tok::True,
        "false" => Tok::False,
        "undefined" => Tok::Undefined,
        "end" => Tok::End,
        _ => return None,
    })
}

pub fn lex(src: &str) -> Result<Vec<Spanned>, Diagnostic> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos::new(line, col);
        match c {
            ' ' | '\t' | '\r' | '\n' => bump!(),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    bump!();
                }
            }
            '(' => {
                out.push(Spanned { tok: Tok::LParen, pos });
                bump!();
            }
            ')' => {
                out.push(Spanned { tok: Tok::RParen, pos });
                bump!();
            }
            '{' => {
                out.push(Spanned { tok: Tok::LBrace, pos });
                bump!();
            }
            '}' => {
                out.push(Spanned { tok: Tok::RBrace, pos });
                bump!();
            }
            ',' => {
                out.push(Spanned { tok: Tok::Comma, pos });
                bump!();
            }
            ':' => {
                out.push(Spanned { tok: Tok::Colon, pos });
                bump!();
            }
            ';' => {
                out.push(Spanned { tok: Tok::Semi, pos });
                bump!();
            }
            '.' => {
                out.push(Spanned { tok: Tok::Dot, pos });
                bump!();
            }
            '|' => {
                out.push(Spanned { tok: Tok::Pipe, pos });
                bump!();
            }
            '+' => {
                out.push(Spanned { tok: Tok::Plus, pos });
                bump!();
            }
            '*' => {
                out.push(Spanned { tok: Tok::Star, pos });
                bump!();
            }
            '-' => {
                bump!();
                if i < chars.len() && chars[i] == '-' {
                    bump!();
                    out.push(Spanned { tok: Tok::Marker, pos });
                } else {
                    out.push(Spanned { tok: Tok::Minus, pos });
                }
            }
            '=' => {
                bump!();
                if i < chars.len() && chars[i] == '=' {
                    bump!();
                    out.push(Spanned { tok: Tok::EqEq, pos });
                } else {
                    out.push(Spanned { tok: Tok::Assign, pos });
                }
            }
            '!' => {
                bump!();
                if i < chars.len() && chars[i] == '=' {
                    bump!();
                    out.push(Spanned { tok: Tok::Neq, pos });
                } else {
                    return Err(Diagnostic::new(pos, "parse", "expected `!=`"));
                }
            }
            '<' => {
                bump!();
                if i < chars.len() && chars[i] == '=' {
                    bump!();
                    out.push(Spanned { tok: Tok::Le, pos });
                } else {
                    out.push(Spanned { tok: Tok::Lt, pos });
                }
            }
            '>' => {
                bump!();
                if i < chars.len() && chars[i] == '=' {
                    bump!();
                    out.push(Spanned { tok: Tok::Ge, pos });
                } else {
                    out.push(Spanned { tok: Tok::Gt, pos });
                }
            }
            '\'' => {
                bump!();
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    bump!();
                }
                if i >= chars.len() || chars[i] != '\'' {
                    return Err(Diagnostic::new(pos, "parse", "unterminated tag literal"));
                }
                let name: String = chars[start..i].iter().collect();
                bump!();
                if name.is_empty() {
                    return Err(Diagnostic::new(pos, "parse", "empty tag literal"));
                }
                out.push(Spanned { tok: Tok::Atom(name), pos });
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    bump!();
                }
                let digits: String = chars[start..i].iter().collect();
                let n: BigInt = digits.parse().expect("digits parse as BigInt");
                out.push(Spanned { tok: Tok::Int(n), pos });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    bump!();
                }
                let word: String = chars[start..i].iter().collect();
                let tok = keyword(&word).unwrap_or(Tok::Ident(word));
                out.push(Spanned { tok, pos });
            }
            other => {
                return Err(Diagnostic::new(
                    pos,
                    "parse",
                    format!("unexpected character `{other}`"),
                ));
            }
        }
    }
    out.push(Spanned { tok: Tok::Eof, pos: Pos::new(line, col) });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_vs_minus() {
        let toks = lex("a - b -- l").unwrap();
        let kinds: Vec<&Tok> = toks.iter().map(|t| &t.tok).collect();
        assert!(matches!(kinds[1], Tok::Minus));
        assert!(matches!(kinds[3], Tok::Marker));
    }

    #[test]
    fn atoms_and_comments() {
        let toks = lex("'request' # trailing\n'ack'").unwrap();
        assert_eq!(toks[0].tok, Tok::Atom("request".into()));
        assert_eq!(toks[1].tok, Tok::Atom("ack".into()));
        assert_eq!(toks[1].pos.line, 2);
    }

    #[test]
    fn comparison_tokens() {
        let toks = lex("<= >= == != < >").unwrap();
        let kinds: Vec<&Tok> = toks.iter().map(|t| &t.tok).collect();
        assert!(matches!(kinds[0], Tok::Le));
        assert!(matches!(kinds[1], Tok::Ge));
        assert!(matches!(kinds[2], Tok::EqEq));
        assert!(matches!(kinds[3], Tok::Neq));
        assert!(matches!(kinds[4], Tok::Lt));
        assert!(matches!(kinds[5], Tok::Gt));
    }
}
