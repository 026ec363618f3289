//! Tokenizer and recursive-descent parser for the statement language.
//!
//! ```text
//! file   := stmt ((";" | newline) stmt)*
//! stmt   := "dim" INT | "mode" WORD | "name" WORD | "param" IDENT "=" expr
//!         | IDENT "=" expr
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := "-" factor | base ("^" factor)?
//! base   := NUMBER | "k" | "s" | "pi" | x<i> | y<i> | PARAM
//!         | "(" expr ")" | FUNC "(" expr ("," expr)? ")"
//! ```
//!
//! `#` starts a comment that runs to the end of the line.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::ast::{BinOp, Expr, Func};
use super::DslError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Assign,
    Sep,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Assign => "`=`".into(),
            Tok::Sep => "end of statement".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, DslError> {
    let mut out = Vec::new();
    for (li, raw_line) in src.lines().enumerate() {
        let line = li + 1;
        let text = raw_line.split('#').next().unwrap_or("");
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let simple = match c {
                '+' => Some(Tok::Plus),
                '-' => Some(Tok::Minus),
                '*' => Some(Tok::Star),
                '/' => Some(Tok::Slash),
                '^' => Some(Tok::Caret),
                '(' => Some(Tok::LParen),
                ')' => Some(Tok::RParen),
                ',' => Some(Tok::Comma),
                '=' => Some(Tok::Assign),
                ';' => Some(Tok::Sep),
                _ => None,
            };
            if let Some(tok) = simple {
                out.push(Token { tok, line, column });
                i += 1;
                continue;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_digit() || c == '.' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit: String = chars[start..i].iter().collect();
                let value = lit.parse::<f64>().map_err(|_| DslError::Syntax {
                    line,
                    column,
                    expected: vec!["number".into()],
                    found: format!("`{lit}`"),
                })?;
                out.push(Token {
                    tok: Tok::Num(value),
                    line,
                    column,
                });
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line,
                    column,
                });
                continue;
            }
            return Err(DslError::Syntax {
                line,
                column,
                expected: vec!["expression".into()],
                found: format!("`{c}`"),
            });
        }
        out.push(Token {
            tok: Tok::Sep,
            line,
            column: chars.len() + 1,
        });
    }
    let line = out.last().map_or(1, |t| t.line);
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: 1,
    });
    Ok(out)
}

/// One parsed top-level statement.
#[derive(Debug, Clone)]
pub(crate) enum Stmt {
    Dim(usize),
    Mode(String),
    Name(String),
    Assign { name: String, expr: Expr },
}

#[derive(Debug, Clone)]
pub(crate) struct Located<T> {
    pub item: T,
    pub line: usize,
    pub column: usize,
}

/// What kind of variables a statement's right-hand side may reference.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scope {
    pub other: bool,
    pub arg: bool,
}

pub(crate) struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    pub dim: Option<usize>,
    params: HashMap<String, f64>,
    scope_for: &'a dyn Fn(&str) -> Scope,
}

impl<'a> Parser<'a> {
    pub fn new(toks: &'a [Token], scope_for: &'a dyn Fn(&str) -> Scope) -> Self {
        Self {
            toks,
            pos: 0,
            dim: None,
            params: HashMap::new(),
            scope_for,
        }
    }

    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> DslError {
        let t = self.peek();
        DslError::Syntax {
            line: t.line,
            column: t.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, DslError> {
        if self.peek().tok == tok {
            Ok(self.bump())
        } else {
            Err(self.error(&[what]))
        }
    }

    pub fn statements(&mut self) -> Result<Vec<Located<Stmt>>, DslError> {
        let mut out = Vec::new();
        loop {
            while self.peek().tok == Tok::Sep {
                self.bump();
            }
            if self.peek().tok == Tok::Eof {
                return Ok(out);
            }
            let stmt = self.statement()?;
            out.push(stmt);
            match self.peek().tok {
                Tok::Sep | Tok::Eof => {}
                _ => return Err(self.error(&["`;`", "newline", "operator"])),
            }
        }
    }

    fn statement(&mut self) -> Result<Located<Stmt>, DslError> {
        let head = self.bump();
        let (line, column) = (head.line, head.column);
        let name = match head.tok {
            Tok::Ident(s) => s,
            other => {
                return Err(DslError::Syntax {
                    line,
                    column,
                    expected: vec!["statement".into()],
                    found: other.describe(),
                })
            }
        };
        let item = match name.as_str() {
            "dim" => {
                let t = self.bump();
                match t.tok {
                    Tok::Num(v) if v >= 1.0 && v.fract() == 0.0 => {
                        let n = v as usize;
                        self.dim = Some(n);
                        Stmt::Dim(n)
                    }
                    other => {
                        return Err(DslError::Syntax {
                            line: t.line,
                            column: t.column,
                            expected: vec!["positive integer".into()],
                            found: other.describe(),
                        })
                    }
                }
            }
            "mode" | "name" => {
                let t = self.bump();
                let word = match t.tok {
                    Tok::Ident(w) => w,
                    other => {
                        return Err(DslError::Syntax {
                            line: t.line,
                            column: t.column,
                            expected: vec!["word".into()],
                            found: other.describe(),
                        })
                    }
                };
                if name == "mode" {
                    Stmt::Mode(word)
                } else {
                    Stmt::Name(word)
                }
            }
            "param" => {
                let t = self.bump();
                let pname = match t.tok {
                    Tok::Ident(w) => w,
                    other => {
                        return Err(DslError::Syntax {
                            line: t.line,
                            column: t.column,
                            expected: vec!["parameter name".into()],
                            found: other.describe(),
                        })
                    }
                };
                self.expect(Tok::Assign, "`=`")?;
                let expr = self.expr(Scope {
                    other: false,
                    arg: false,
                })?;
                let value = expr.constant_value().ok_or_else(|| DslError::Syntax {
                    line: t.line,
                    column: t.column,
                    expected: vec!["constant parameter value".into()],
                    found: format!("`{expr}`"),
                })?;
                self.params.insert(pname.clone(), value);
                Stmt::Assign {
                    name: format!("param:{pname}"),
                    expr: Expr::Param(pname, value),
                }
            }
            _ => {
                self.expect(Tok::Assign, "`=`")?;
                let scope = (self.scope_for)(&name);
                let expr = self.expr(scope)?;
                Stmt::Assign { name, expr }
            }
        };
        Ok(Located { item, line, column })
    }

    fn expr(&mut self, scope: Scope) -> Result<Expr, DslError> {
        let mut lhs = self.term(scope)?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term(scope)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self, scope: Scope) -> Result<Expr, DslError> {
        let mut lhs = self.factor(scope)?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor(scope)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self, scope: Scope) -> Result<Expr, DslError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.factor(scope)?)));
        }
        let base = self.base(scope)?;
        if self.peek().tok == Tok::Caret {
            self.bump();
            let exp = self.factor(scope)?;
            return Ok(Expr::binary(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn base(&mut self, scope: Scope) -> Result<Expr, DslError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr(scope)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some(func) = Func::from_name(&name) {
                    self.expect(Tok::LParen, "`(`")?;
                    let mut args = vec![self.expr(scope)?];
                    while self.peek().tok == Tok::Comma {
                        self.bump();
                        args.push(self.expr(scope)?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    if args.len() != func.arity() {
                        return Err(DslError::Syntax {
                            line: t.line,
                            column: t.column,
                            expected: vec![format!("{} argument(s) to {}", func.arity(), func.name())],
                            found: format!("{} argument(s)", args.len()),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                self.variable(&name, scope, t.line, t.column)
            }
            _ => Err(self.error(&["number", "variable", "`(`", "function call", "`-`"])),
        }
    }

    fn variable(&self, name: &str, scope: Scope, line: usize, column: usize) -> Result<Expr, DslError> {
        let unknown = || DslError::UnknownIdentifier {
            name: name.to_string(),
            line,
            column,
        };
        match name {
            "k" => return Ok(Expr::Time),
            "pi" => return Ok(Expr::Const(PI)),
            "s" if scope.arg => return Ok(Expr::Arg),
            _ => {}
        }
        if let Some(v) = self.params.get(name) {
            return Ok(Expr::Param(name.to_string(), *v));
        }
        let (prefix, digits) = name.split_at(1);
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) && !digits.starts_with('0') {
            let idx: usize = digits.parse().map_err(|_| unknown())?;
            if let Some(n) = self.dim {
                if idx > n {
                    return Err(unknown());
                }
            }
            match prefix {
                "x" => return Ok(Expr::State(idx - 1)),
                "y" if scope.other => return Ok(Expr::Other(idx - 1)),
                _ => {}
            }
        }
        Err(unknown())
    }
}
