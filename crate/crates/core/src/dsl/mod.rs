//! Front end for the tile DSL: lexing, parsing, printing, constant binding.

pub mod ast;
pub mod bind;
pub mod lexer;
pub mod parser;
pub mod printer;

use std::fmt;

pub use ast::Program;
pub use bind::{bind_constants, BindError, BoundProgram};
pub use parser::{parse, parse_fragment};
pub use printer::print_program;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    /// Byte offset into the source.
    pub offset: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected one of: {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}
