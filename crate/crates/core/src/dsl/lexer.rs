//! Tokenizer with Python-style indentation tokens.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokKind {
    Ident(String),
    Int(i64),
    Float(f64),
    Punct(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokKind,
    pub line: u32,
    pub col: u32,
    pub offset: usize,
}

impl TokKind {
    pub fn describe(&self) -> String {
        match self {
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Int(v) => format!("integer `{v}`"),
            TokKind::Float(v) => format!("float `{v:?}`"),
            TokKind::Punct(p) => format!("`{p}`"),
            TokKind::Newline => "newline".into(),
            TokKind::Indent => "indent".into(),
            TokKind::Dedent => "dedent".into(),
            TokKind::Eof => "end of input".into(),
        }
    }
}

const PUNCTS: [&str; 29] = [
    "->", "<<", ">>", "<=", ">=", "==", "!=", "(", ")", "[", "]", ",", ":", ".", "=", "+", "-",
    "*", "/", "%", "&", "|", "^", "<", ">", "~", "{", "}", "@",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut indents: Vec<u32> = vec![0];
    let mut open: Vec<(usize, u32, usize, &'static str)> = Vec::new();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut line_start = 0usize;
    let mut at_line_start = true;

    let err = |msg: String, off: usize, line: u32, line_start: usize| ParseError {
        line,
        col: (off - line_start) as u32 + 1,
        offset: off,
        message: msg,
        expected: Vec::new(),
    };

    while i < bytes.len() {
        if at_line_start && open.is_empty() {
            let mut j = i;
            let mut width = 0u32;
            while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t') {
                width += 1;
                j += 1;
            }
            if j >= bytes.len() {
                break;
            }
            if bytes[j] == b'\n' || bytes[j] == b'#' || bytes[j] == b'\r' {
                while j < bytes.len() && bytes[j] != b'\n' {
                    j += 1;
                }
                i = j + 1;
                line += 1;
                line_start = i;
                continue;
            }
            let top = *indents.last().unwrap();
            let tok = |kind| Token {
                kind,
                line,
                col: width + 1,
                offset: j,
            };
            if width > top {
                indents.push(width);
                toks.push(tok(TokKind::Indent));
            } else {
                while width < *indents.last().unwrap() {
                    indents.pop();
                    toks.push(tok(TokKind::Dedent));
                }
                if width != *indents.last().unwrap() {
                    return Err(err("inconsistent dedent".into(), j, line, line_start));
                }
            }
            at_line_start = false;
            i = j;
            continue;
        }
        let c = bytes[i];
        let col = (i - line_start) as u32 + 1;
        match c {
            b' ' | b'\t' | b'\r' => i += 1,
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'\n' => {
                if open.is_empty() {
                    toks.push(Token {
                        kind: TokKind::Newline,
                        line,
                        col,
                        offset: i,
                    });
                    at_line_start = true;
                }
                i += 1;
                line += 1;
                line_start = i;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let mut is_float = false;
                if i < bytes.len()
                    && bytes[i] == b'.'
                    && i + 1 < bytes.len()
                    && bytes[i + 1].is_ascii_digit()
                {
                    is_float = true;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let kind = if is_float {
                    TokKind::Float(text.parse().map_err(|_| {
                        err(format!("bad float `{text}`"), start, line, line_start)
                    })?)
                } else {
                    TokKind::Int(text.parse().map_err(|_| {
                        err(format!("integer `{text}` out of range"), start, line, line_start)
                    })?)
                };
                toks.push(Token {
                    kind,
                    line,
                    col,
                    offset: start,
                });
            }
            c if c == b'_' || c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && (bytes[i] == b'_' || bytes[i].is_ascii_alphanumeric()) {
                    i += 1;
                }
                toks.push(Token {
                    kind: TokKind::Ident(src[start..i].to_string()),
                    line,
                    col,
                    offset: start,
                });
            }
            _ => {
                let rest = &src[i..];
                let Some(p) = PUNCTS.iter().find(|p| rest.starts_with(**p)) else {
                    let ch = rest.chars().next().unwrap();
                    return Err(err(format!("unexpected character `{ch}`"), i, line, line_start));
                };
                match *p {
                    "(" | "[" | "{" => open.push((i, line, line_start, p)),
                    ")" | "]" | "}" => {
                        let want = match *p {
                            ")" => "(",
                            "]" => "[",
                            _ => "{",
                        };
                        match open.pop() {
                            Some((_, _, _, o)) if o == want => {}
                            _ => {
                                return Err(err(format!("unbalanced `{p}`"), i, line, line_start))
                            }
                        }
                    }
                    _ => {}
                }
                toks.push(Token {
                    kind: TokKind::Punct(p),
                    line,
                    col,
                    offset: i,
                });
                i += p.len();
            }
        }
    }
    if let Some(&(off, l, ls, p)) = open.last() {
        return Err(err(format!("unclosed `{p}`"), off, l, ls));
    }
    let col = (bytes.len() - line_start) as u32 + 1;
    let end = |kind| Token {
        kind,
        line,
        col,
        offset: bytes.len(),
    };
    if !matches!(
        toks.last().map(|t| &t.kind),
        None | Some(TokKind::Newline)
    ) {
        toks.push(end(TokKind::Newline));
    }
    while indents.len() > 1 {
        indents.pop();
        toks.push(end(TokKind::Dedent));
    }
    toks.push(end(TokKind::Eof));
    Ok(toks)
}
