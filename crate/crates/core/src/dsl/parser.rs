//! Recursive-descent parser.

use super::ast::*;
use super::lexer::{tokenize, TokKind, Token};
use super::ParseError;

pub fn parse(src: &str) -> Result<Program, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    p.skip_newlines();
    let prog = p.kernel()?;
    p.skip_newlines();
    p.expect_kind(&TokKind::Eof, "end of input")?;
    Ok(prog)
}

/// Parses a sequence of top-level statements without a kernel header.
pub fn parse_fragment(src: &str) -> Result<Vec<Stmt>, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut out = Vec::new();
    loop {
        p.skip_newlines();
        if p.at(&TokKind::Eof) {
            break;
        }
        if p.at(&TokKind::Indent) {
            return Err(p.error("unexpected indent", &["statement"]));
        }
        out.push(p.stmt()?);
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

const KEYWORDS: [&str; 9] = [
    "def", "for", "forall", "in", "assert", "if", "else", "pass", "range",
];

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, n: usize) -> &TokKind {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].kind
    }

    fn at(&self, k: &TokKind) -> bool {
        &self.peek().kind == k
    }

    fn at_punct(&self, p: &str) -> bool {
        matches!(&self.peek().kind, TokKind::Punct(q) if *q == p)
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().kind, TokKind::Ident(s) if s == kw)
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: &str, expected: &[&str]) -> ParseError {
        let t = self.peek();
        ParseError {
            line: t.line,
            col: t.col,
            offset: t.offset,
            message: format!("{msg}, found {}", t.kind.describe()),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn expect_kind(&mut self, k: &TokKind, what: &str) -> Result<Token, ParseError> {
        if self.at(k) {
            Ok(self.bump())
        } else {
            Err(self.error(&format!("expected {what}"), &[what]))
        }
    }

    fn expect_punct(&mut self, p: &'static str) -> Result<Token, ParseError> {
        if self.at_punct(p) {
            Ok(self.bump())
        } else {
            let want = format!("`{p}`");
            Err(self.error(&format!("expected {want}"), &[&want]))
        }
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.at_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_kw(kw) {
            self.bump();
            Ok(())
        } else {
            let want = format!("`{kw}`");
            Err(self.error(&format!("expected {want}"), &[&want]))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match &self.peek().kind {
            TokKind::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error("expected identifier", &["identifier"])),
        }
    }

    fn skip_newlines(&mut self) {
        while self.at(&TokKind::Newline) {
            self.bump();
        }
    }

    fn kernel(&mut self) -> Result<Program, ParseError> {
        self.expect_kw("def")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        while !self.at_punct(")") {
            params.push(self.param()?);
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        self.expect_punct(":")?;
        let body = if self.at(&TokKind::Newline) {
            self.bump();
            self.skip_newlines();
            if self.at(&TokKind::Indent) {
                self.block()?
            } else {
                Vec::new()
            }
        } else {
            self.simple_suite()?
        };
        Ok(Program { name, params, body })
    }

    fn param(&mut self) -> Result<Param, ParseError> {
        let name = self.ident()?;
        self.expect_punct(":")?;
        if self.at_kw("const") {
            self.bump();
            let default = if self.eat_punct("=") {
                Some(self.expr()?)
            } else {
                None
            };
            return Ok(Param {
                name,
                kind: ParamKind::Const { default },
            });
        }
        if self.at_kw("Tensor") {
            self.bump();
            self.expect_punct("(")?;
            let shape = match self.expr()? {
                Expr::Tuple(items) => items,
                other => vec![other],
            };
            self.expect_punct(",")?;
            let dtype = self.ident()?;
            self.expect_punct(")")?;
            return Ok(Param {
                name,
                kind: ParamKind::Tensor { shape, dtype },
            });
        }
        Err(self.error("expected parameter kind", &["`const`", "`Tensor`"]))
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect_kind(&TokKind::Indent, "indent")?;
        let mut out = Vec::new();
        loop {
            self.skip_newlines();
            if self.at(&TokKind::Dedent) || self.at(&TokKind::Eof) {
                break;
            }
            if self.at_kw("pass") {
                self.bump();
                self.end_of_stmt()?;
                continue;
            }
            out.push(self.stmt()?);
        }
        if self.at(&TokKind::Dedent) {
            self.bump();
        }
        Ok(out)
    }

    fn simple_suite(&mut self) -> Result<Vec<Stmt>, ParseError> {
        if self.at_kw("pass") {
            self.bump();
            self.end_of_stmt()?;
            return Ok(Vec::new());
        }
        Ok(vec![self.stmt()?])
    }

    fn suite(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect_punct(":")?;
        if self.at(&TokKind::Newline) {
            self.bump();
            self.skip_newlines();
            if !self.at(&TokKind::Indent) {
                return Err(self.error("expected an indented block", &["indent"]));
            }
            self.block()
        } else {
            self.simple_suite()
        }
    }

    fn end_of_stmt(&mut self) -> Result<(), ParseError> {
        if self.at(&TokKind::Newline) {
            self.bump();
            Ok(())
        } else if self.at(&TokKind::Eof) || self.at(&TokKind::Dedent) {
            Ok(())
        } else {
            Err(self.error("expected end of statement", &["newline"]))
        }
    }

    fn range_call(&mut self) -> Result<Expr, ParseError> {
        self.expect_kw("range")?;
        self.expect_punct("(")?;
        let e = self.expr()?;
        self.expect_punct(")")?;
        Ok(e)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let start = self.peek().clone();
        let (line, col) = (start.line, start.col);
        if self.at_kw("for") || self.at_kw("forall") {
            let is_forall = self.at_kw("forall");
            self.bump();
            let var = self.ident()?;
            self.expect_kw("in")?;
            let count = self.range_call()?;
            let body = self.suite()?;
            let kind = if is_forall {
                StmtKind::Forall { var, count, body }
            } else {
                StmtKind::For { var, count, body }
            };
            return Ok(Stmt::new(line, col, kind));
        }
        if self.at_kw("assert") {
            self.bump();
            let a = self.assertion()?;
            self.end_of_stmt()?;
            return Ok(Stmt::new(line, col, StmtKind::Assert(a)));
        }
        if let TokKind::Ident(name) = &start.kind {
            if matches!(self.peek_at(1), TokKind::Punct("(")) {
                let name = name.clone();
                if name == "syncthreads" {
                    self.bump();
                    self.expect_punct("(")?;
                    self.expect_punct(")")?;
                    self.end_of_stmt()?;
                    return Ok(Stmt::new(line, col, StmtKind::Sync));
                }
                if name == "reset" {
                    self.bump();
                    self.expect_punct("(")?;
                    let tile = self.ident()?;
                    self.expect_punct(")")?;
                    self.end_of_stmt()?;
                    return Ok(Stmt::new(line, col, StmtKind::Reset(tile)));
                }
                if ANNOTATIONS.contains(&name.as_str()) {
                    self.bump();
                    let args = self.call_args()?;
                    self.end_of_stmt()?;
                    return Ok(Stmt::new(line, col, StmtKind::Annotation { name, args }));
                }
            }
        }
        let mut targets = vec![self.postfix()?];
        while self.eat_punct(",") {
            targets.push(self.postfix()?);
        }
        self.expect_punct("=")?;
        let mut values = vec![self.value()?];
        while self.eat_punct(",") {
            values.push(self.value()?);
        }
        if values.len() != targets.len() {
            return Err(ParseError {
                line,
                col,
                offset: start.offset,
                message: format!(
                    "{} assignment targets but {} values",
                    targets.len(),
                    values.len()
                ),
                expected: Vec::new(),
            });
        }
        self.end_of_stmt()?;
        Ok(Stmt::new(line, col, StmtKind::Assign { targets, values }))
    }

    fn value(&mut self) -> Result<Expr, ParseError> {
        let at = self.peek().clone();
        let e = self.expr()?;
        if !self.at_punct("->") {
            return Ok(e);
        }
        let arrow = self.bump();
        let (tensor, vars) = match e {
            Expr::Index { base, indices } => match *base {
                Expr::Name(t) => {
                    let mut vars = Vec::new();
                    for ix in indices {
                        match ix {
                            Expr::Name(v) => vars.push(v),
                            _ => {
                                return Err(ParseError {
                                    line: at.line,
                                    col: at.col,
                                    offset: at.offset,
                                    message: "tag function coordinates must be plain names"
                                        .into(),
                                    expected: vec!["identifier".into()],
                                })
                            }
                        }
                    }
                    (t, vars)
                }
                _ => return Err(bad_tag_head(&arrow)),
            },
            _ => return Err(bad_tag_head(&arrow)),
        };
        self.expect_punct("(")?;
        let mut tuple = Vec::new();
        while !self.at_punct(")") {
            tuple.push(self.expr()?);
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        Ok(Expr::TagFn {
            tensor,
            vars,
            tuple,
        })
    }

    fn assertion(&mut self) -> Result<Assertion, ParseError> {
        let left = self.tag_access()?;
        let kind = if self.eat_punct("==") {
            AssertKind::Conform
        } else if self.eat_punct("!=") {
            AssertKind::NonConform
        } else {
            return Err(self.error("expected comparison", &["`==`", "`!=`"]));
        };
        let right = self.tag_access()?;
        let mut quants = Vec::new();
        while self.at_kw("for") {
            self.bump();
            let v = self.ident()?;
            self.expect_kw("in")?;
            let n = self.range_call()?;
            quants.push((v, n));
        }
        Ok(Assertion {
            kind,
            left,
            right,
            quants,
        })
    }

    fn tag_access(&mut self) -> Result<TagAccess, ParseError> {
        if !self.at_kw("tag") {
            return Err(self.error("expected `tag(...)`", &["`tag`"]));
        }
        self.bump();
        self.expect_punct("(")?;
        let tile = self.ident()?;
        let mut indices = Vec::new();
        if self.eat_punct("[") {
            indices = self.index_list()?;
        }
        self.expect_punct(")")?;
        Ok(TagAccess { tile, indices })
    }

    fn index_list(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut out = Vec::new();
        while !self.at_punct("]") {
            out.push(self.expr()?);
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct("]")?;
        Ok(out)
    }

    fn call_args(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        while !self.at_punct(")") {
            let e = self.expr()?;
            if args.is_empty() && self.at_kw("for") {
                self.bump();
                let var = self.ident()?;
                self.expect_kw("in")?;
                let count = self.range_call()?;
                args.push(Expr::Gen {
                    elt: Box::new(e),
                    var,
                    count: Box::new(count),
                });
                break;
            }
            args.push(e);
            if !self.eat_punct(",") {
                break;
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        let then = self.binary(2)?;
        if self.at_kw("if") {
            self.bump();
            let cond = self.binary(2)?;
            self.expect_kw("else")?;
            let otherwise = self.expr()?;
            return Ok(Expr::Cond {
                then: Box::new(then),
                cond: Box::new(cond),
                otherwise: Box::new(otherwise),
            });
        }
        Ok(then)
    }

    fn binop(&self) -> Option<BinOp> {
        let TokKind::Punct(p) = &self.peek().kind else {
            return None;
        };
        Some(match *p {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Mod,
            "&" => BinOp::And,
            "|" => BinOp::Or,
            "^" => BinOp::Xor,
            "<<" => BinOp::Shl,
            ">>" => BinOp::Shr,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            self.bump();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_punct("-") {
            let e = self.unary()?;
            return Ok(match e {
                Expr::Int(v) if v >= 0 => Expr::Int(-v),
                Expr::Float(v) if v.is_sign_positive() => Expr::Float(-v),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        loop {
            if self.at_punct("[") {
                self.bump();
                let indices = self.index_list()?;
                e = Expr::Index {
                    base: Box::new(e),
                    indices,
                };
            } else if self.at_punct(".") {
                self.bump();
                let field = self.ident()?;
                if self.at_punct("(") {
                    let args = self.call_args()?;
                    e = Expr::Method {
                        base: Box::new(e),
                        name: field,
                        args,
                    };
                } else {
                    e = Expr::Attr {
                        base: Box::new(e),
                        field,
                    };
                }
            } else if self.at_punct("(") {
                let Expr::Name(func) = e else {
                    return Err(self.error("only named functions can be called", &[]));
                };
                let args = self.call_args()?;
                e = Expr::Call { func, args };
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().kind.clone() {
            TokKind::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            TokKind::Float(v) => {
                self.bump();
                Ok(Expr::Float(v))
            }
            TokKind::Ident(s) if !KEYWORDS.contains(&s.as_str()) || s == "range" => {
                self.bump();
                Ok(Expr::Name(s))
            }
            TokKind::Punct("(") => {
                self.bump();
                if self.eat_punct(")") {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                let first = self.expr()?;
                if self.at_punct(",") {
                    let mut items = vec![first];
                    while self.eat_punct(",") {
                        if self.at_punct(")") {
                            break;
                        }
                        items.push(self.expr()?);
                    }
                    self.expect_punct(")")?;
                    return Ok(Expr::Tuple(items));
                }
                self.expect_punct(")")?;
                Ok(first)
            }
            _ => Err(self.error(
                "expected expression",
                &["identifier", "number", "`(`", "`-`"],
            )),
        }
    }
}

fn bad_tag_head(t: &Token) -> ParseError {
    ParseError {
        line: t.line,
        col: t.col,
        offset: t.offset,
        message: "`->` must follow a subscripted tensor name".into(),
        expected: Vec::new(),
    }
}
