//! Text definitions of systems, metrics and Lyapunov candidates.
//!
//! A system file declares its dimension and one map component per line:
//!
//! ```text
//! dim 1
//! f1 = x1 / sqrt(x1^2 + 1)
//! ```
//!
//! Optional `jIJ` entries give an analytic Jacobian and `thIJ` entries a
//! metric `Θ(k, x)`. For dimensions above nine the indices are written with
//! an underscore, `j10_3`. Candidate files declare a `mode`, a function `V`
//! and either class-K monomials `a1..a3 = c*s^p` or quadratic constants
//! `c1..c3`.

pub mod ast;
pub mod eval;
mod parser;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
pub use ast::{BinOp, Expr, Func};
pub use eval::{Dual, Env, EvalError, Scalar};
use parser::{Located, Parser, Scope, Stmt};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("syntax error at {line}:{column}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        line: usize,
        column: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown identifier `{name}` at {line}:{column}")]
    UnknownIdentifier { name: String, line: usize, column: usize },
    #[error("`{name}` must have a positive coefficient, got {value}")]
    NonPositiveCoefficient { name: String, value: f64 },
    #[error("`{name}` must be a monomial c*s^p with p >= 1: {detail}")]
    InvalidClassK { name: String, detail: String },
    #[error("duplicate definition of `{name}` at line {line}")]
    Duplicate { name: String, line: usize },
    #[error("missing definition: {0}")]
    Missing(String),
    #[error("unknown mode `{0}` (expected incremental, convergent or contraction)")]
    UnknownMode(String),
    #[error("analytic Jacobian disagrees with automatic differentiation at k={k}, x={x:?}: entry ({row},{col}) analytic {analytic} vs AD {ad}")]
    JacobianMismatch {
        k: i64,
        x: Vec<f64>,
        row: usize,
        col: usize,
        analytic: f64,
        ad: f64,
    },
}

/// Evaluated Jacobian together with the kink marker.
#[derive(Debug, Clone)]
pub struct JacobianEval {
    pub matrix: Matrix,
    /// Set when some non-differentiable point was crossed; the entries then
    /// hold one-sided derivatives.
    pub non_smooth: bool,
}

/// A discrete-time system `x(k+1) = f(k, x(k))` on `Rⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDef {
    pub name: String,
    pub n: usize,
    pub f: Vec<Expr>,
    pub jacobian: Option<Vec<Vec<Expr>>>,
    pub theta: Option<Vec<Vec<Expr>>>,
    pub params: Vec<(String, f64)>,
}

impl SystemDef {
    pub fn new(name: impl Into<String>, f: Vec<Expr>) -> Self {
        Self {
            name: name.into(),
            n: f.len(),
            f,
            jacobian: None,
            theta: None,
            params: Vec::new(),
        }
    }

    fn check_len(&self, x: &[f64]) -> Result<(), EvalError> {
        if x.len() != self.n {
            return Err(EvalError::Shape {
                expected: self.n,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `f(k, x)`.
    pub fn eval_map(&self, k: i64, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.check_len(x)?;
        let env = Env {
            k: k as f64,
            x,
            y: &[],
            s: 0.0,
        };
        let mut kink = false;
        self.f.iter().map(|e| eval::eval(e, &env, &mut kink)).collect()
    }

    /// `∂f/∂x(k, x)` by forward-mode dual numbers, one seeded direction per
    /// column.
    pub fn eval_jacobian_ad(&self, k: i64, x: &[f64]) -> Result<JacobianEval, EvalError> {
        self.check_len(x)?;
        let n = self.n;
        let mut m = Matrix::zeros(n, n);
        let mut non_smooth = false;
        let mut duals: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
        for col in 0..n {
            duals[col].d = 1.0;
            let env = Env {
                k: k as f64,
                x: &duals,
                y: &[],
                s: Dual::constant(0.0),
            };
            for (row, e) in self.f.iter().enumerate() {
                let mut kink = false;
                let out = eval::eval(e, &env, &mut kink)?;
                non_smooth |= kink;
                m[(row, col)] = out.d;
            }
            duals[col].d = 0.0;
        }
        Ok(JacobianEval { matrix: m, non_smooth })
    }

    /// Analytic Jacobian from the `jIJ` entries, when declared.
    pub fn eval_jacobian_analytic(&self, k: i64, x: &[f64]) -> Option<Result<Matrix, EvalError>> {
        self.jacobian.as_ref().map(|grid| eval_grid(grid, k, x, self.n))
    }

    /// Metric `Θ(k, x)` from the `thIJ` entries, when declared.
    pub fn eval_theta(&self, k: i64, x: &[f64]) -> Option<Result<Matrix, EvalError>> {
        self.theta.as_ref().map(|grid| eval_grid(grid, k, x, self.n))
    }

    /// Source text that parses back to this definition.
    pub fn to_source(&self) -> String {
        let mut out = format!("dim {}\n", self.n);
        if !self.name.is_empty() {
            out.push_str(&format!("name {}\n", self.name));
        }
        for (p, v) in &self.params {
            out.push_str(&format!("param {p} = {v:?}\n"));
        }
        for (i, e) in self.f.iter().enumerate() {
            out.push_str(&format!("f{} = {e}\n", i + 1));
        }
        for (prefix, grid) in [("j", &self.jacobian), ("th", &self.theta)] {
            if let Some(grid) = grid {
                for (i, row) in grid.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        out.push_str(&format!("{} = {e}\n", grid_name(prefix, i, j, self.n)));
                    }
                }
            }
        }
        out
    }

    /// Checks the analytic Jacobian against automatic differentiation at 100
    /// pseudo-random points of `[-1,1]ⁿ × {-10..10}`. Points where either
    /// evaluation fails or a kink is crossed are skipped.
    pub fn validate_jacobian(&self) -> Result<(), DslError> {
        if self.jacobian.is_none() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x6a61_636f_6269);
        for _ in 0..100 {
            let k: i64 = rng.random_range(-10..=10);
            let x: Vec<f64> = (0..self.n).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let (Some(Ok(analytic)), Ok(ad)) = (self.eval_jacobian_analytic(k, &x), self.eval_jacobian_ad(k, &x))
            else {
                continue;
            };
            if ad.non_smooth {
                continue;
            }
            let scale = 1.0 + ad.matrix.frobenius();
            for row in 0..self.n {
                for col in 0..self.n {
                    let (a, d) = (analytic[(row, col)], ad.matrix[(row, col)]);
                    if (a - d).abs() > 1e-8 * scale {
                        return Err(DslError::JacobianMismatch {
                            k,
                            x,
                            row,
                            col,
                            analytic: a,
                            ad: d,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_source())
    }
}

fn eval_grid(grid: &[Vec<Expr>], k: i64, x: &[f64], n: usize) -> Result<Matrix, EvalError> {
    if x.len() != n {
        return Err(EvalError::Shape {
            expected: n,
            found: x.len(),
        });
    }
    let env = Env {
        k: k as f64,
        x,
        y: &[],
        s: 0.0,
    };
    let mut m = Matrix::zeros(n, n);
    let mut kink = false;
    for (i, row) in grid.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            m[(i, j)] = eval::eval(e, &env, &mut kink)?;
        }
    }
    Ok(m)
}

fn grid_name(prefix: &str, i: usize, j: usize, n: usize) -> String {
    if n <= 9 {
        format!("{prefix}{}{}", i + 1, j + 1)
    } else {
        format!("{prefix}{}_{}", i + 1, j + 1)
    }
}

/// Splits `j12` / `th3_4` style names into zero-based indices.
fn grid_index(rest: &str, n: usize) -> Option<(usize, usize)> {
    let (a, b) = if let Some((a, b)) = rest.split_once('_') {
        (a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)
    } else {
        if n > 9 || rest.len() != 2 || !rest.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let d: Vec<usize> = rest.chars().map(|c| c as usize - '0' as usize).collect();
        (d[0], d[1])
    };
    (a >= 1 && b >= 1 && a <= n && b <= n).then(|| (a - 1, b - 1))
}

fn component_index(rest: &str, n: usize) -> Option<usize> {
    if rest.starts_with('0') {
        return None;
    }
    let i: usize = rest.parse().ok()?;
    (i >= 1 && i <= n).then_some(i - 1)
}

fn parse_statements(
    text: &str,
    scope_for: &dyn Fn(&str) -> Scope,
) -> Result<(Vec<Located<Stmt>>, Option<usize>), DslError> {
    let toks = parser::tokenize(text)?;
    let mut p = Parser::new(&toks, scope_for);
    let stmts = p.statements()?;
    Ok((stmts, p.dim))
}

fn unknown(name: &str, line: usize, column: usize) -> DslError {
    DslError::UnknownIdentifier {
        name: name.to_string(),
        line,
        column,
    }
}

/// Parses a system definition.
pub fn parse_system(text: &str) -> Result<SystemDef, DslError> {
    let scope = |_: &str| Scope {
        other: false,
        arg: false,
    };
    let (stmts, _) = parse_statements(text, &scope)?;
    let mut iter = stmts.into_iter();
    let n = match iter.next() {
        Some(Located { item: Stmt::Dim(n), .. }) => n,
        Some(other) => {
            return Err(DslError::Syntax {
                line: other.line,
                column: other.column,
                expected: vec!["`dim` header".into()],
                found: "statement".into(),
            })
        }
        None => return Err(DslError::Missing("`dim` header".into())),
    };

    let mut name = String::new();
    let mut params = Vec::new();
    let mut f: Vec<Option<Expr>> = vec![None; n];
    let mut jac: BTreeMap<(usize, usize), Expr> = BTreeMap::new();
    let mut theta: BTreeMap<(usize, usize), Expr> = BTreeMap::new();

    for Located { item, line, column } in iter {
        match item {
            Stmt::Dim(_) => {
                return Err(DslError::Duplicate {
                    name: "dim".into(),
                    line,
                })
            }
            Stmt::Name(w) => name = w,
            Stmt::Mode(_) => return Err(unknown("mode", line, column)),
            Stmt::Assign { name: lhs, expr } => {
                if let Some(p) = lhs.strip_prefix("param:") {
                    params.push((p.to_string(), expr.constant_value().unwrap_or(f64::NAN)));
                    continue;
                }
                let dup = || DslError::Duplicate {
                    name: lhs.clone(),
                    line,
                };
                if let Some(i) = lhs.strip_prefix('f').and_then(|r| component_index(r, n)) {
                    if f[i].replace(expr).is_some() {
                        return Err(dup());
                    }
                } else if let Some(ij) = lhs.strip_prefix("th").and_then(|r| grid_index(r, n)) {
                    if theta.insert(ij, expr).is_some() {
                        return Err(dup());
                    }
                } else if let Some(ij) = lhs.strip_prefix('j').and_then(|r| grid_index(r, n)) {
                    if jac.insert(ij, expr).is_some() {
                        return Err(dup());
                    }
                } else {
                    return Err(unknown(&lhs, line, column));
                }
            }
        }
    }

    let missing: Vec<String> = f
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_none())
        .map(|(i, _)| format!("f{}", i + 1))
        .collect();
    if !missing.is_empty() {
        return Err(DslError::DimensionMismatch(format!(
            "dim {n} needs f1..f{n}; missing {}",
            missing.join(", ")
        )));
    }
    let to_grid = |m: BTreeMap<(usize, usize), Expr>, what: &str| -> Result<Option<Vec<Vec<Expr>>>, DslError> {
        if m.is_empty() {
            return Ok(None);
        }
        if m.len() != n * n {
            return Err(DslError::DimensionMismatch(format!(
                "{what} needs all {} entries, found {}",
                n * n,
                m.len()
            )));
        }
        let mut rows = vec![Vec::with_capacity(n); n];
        for ((i, _), e) in m {
            rows[i].push(e);
        }
        Ok(Some(rows))
    };
    let def = SystemDef {
        name,
        n,
        f: f.into_iter().map(|e| e.expect("checked above")).collect(),
        jacobian: to_grid(jac, "Jacobian")?,
        theta: to_grid(theta, "metric theta")?,
        params,
    };
    def.validate_jacobian()?;
    Ok(def)
}

/// What a Lyapunov candidate is meant to certify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateMode {
    Incremental,
    Convergent,
    Contraction,
}

impl CandidateMode {
    pub fn is_two_copy(self) -> bool {
        !matches!(self, CandidateMode::Convergent)
    }
}

/// Class-K∞ monomial `coef · s^exp`, `coef > 0`, `exp ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub exp: f64,
}

impl Monomial {
    pub fn new(coef: f64, exp: f64) -> Result<Self, DslError> {
        if !(coef > 0.0) || !coef.is_finite() {
            return Err(DslError::NonPositiveCoefficient {
                name: "monomial".into(),
                value: coef,
            });
        }
        if !(exp >= 1.0) || !exp.is_finite() {
            return Err(DslError::InvalidClassK {
                name: "monomial".into(),
                detail: format!("exponent {exp} < 1"),
            });
        }
        Ok(Self { coef, exp })
    }

    pub fn quadratic(coef: f64) -> Result<Self, DslError> {
        Self::new(coef, 2.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        if self.exp == 2.0 {
            self.coef * s * s
        } else {
            self.coef * s.powf(self.exp)
        }
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}*s^{:?}", self.coef, self.exp)
    }
}

/// Lyapunov candidate with its comparison functions.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateV {
    pub mode: CandidateMode,
    /// Declared dimension, or the largest state index referenced.
    pub n: usize,
    pub v: Expr,
    /// `α₁, α₂, α₃`.
    pub alpha: [Monomial; 3],
    /// True when the bounds were given as quadratic constants `c1..c3`.
    pub quadratic: bool,
    /// Declared bound `c` on `V(k, 0)` (convergent candidates).
    pub origin_bound: Option<f64>,
}

impl CandidateV {
    /// `V(k, x, y)`; `y` is ignored by convergent candidates.
    pub fn eval(&self, k: i64, x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
        let env = Env {
            k: k as f64,
            x,
            y,
            s: 0.0,
        };
        let mut kink = false;
        eval::eval(&self.v, &env, &mut kink)
    }
}

fn classify_monomial(name: &str, expr: &Expr) -> Result<Monomial, DslError> {
    let bad = |detail: &str| DslError::InvalidClassK {
        name: name.to_string(),
        detail: detail.to_string(),
    };
    let power = |e: &Expr| -> Option<f64> {
        match e {
            Expr::Arg => Some(1.0),
            Expr::Binary(BinOp::Pow, b, p) if **b == Expr::Arg => p.constant_value(),
            _ => None,
        }
    };
    let (coef, exp) = if let Some(p) = power(expr) {
        (1.0, p)
    } else {
        match expr {
            Expr::Binary(BinOp::Mul, a, b) => {
                if let (Some(c), Some(p)) = (a.constant_value(), power(b)) {
                    (c, p)
                } else if let (Some(p), Some(c)) = (power(a), b.constant_value()) {
                    (c, p)
                } else {
                    return Err(bad("expected c*s^p"));
                }
            }
            Expr::Neg(inner) => match power(inner) {
                Some(p) => (-1.0, p),
                None => return Err(bad("expected c*s^p")),
            },
            _ => return Err(bad("expected c*s^p")),
        }
    };
    if !(coef > 0.0) {
        return Err(DslError::NonPositiveCoefficient {
            name: name.to_string(),
            value: coef,
        });
    }
    if !(exp >= 1.0) {
        return Err(bad(&format!("exponent {exp} < 1")));
    }
    Ok(Monomial { coef, exp })
}

/// Parses a Lyapunov candidate definition.
pub fn parse_candidate(text: &str) -> Result<CandidateV, DslError> {
    let scope = |name: &str| Scope {
        other: name == "V",
        arg: matches!(name, "a1" | "a2" | "a3"),
    };
    let (stmts, dim) = parse_statements(text, &scope)?;

    let mut mode = None;
    let mut v = None;
    let mut alphas: [Option<Monomial>; 3] = [None; 3];
    let mut consts: [Option<f64>; 3] = [None; 3];
    let mut origin_bound = None;

    for Located { item, line, column } in stmts {
        match item {
            Stmt::Dim(_) | Stmt::Name(_) => {}
            Stmt::Mode(w) => {
                mode = Some(match w.as_str() {
                    "incremental" => CandidateMode::Incremental,
                    "convergent" => CandidateMode::Convergent,
                    "contraction" => CandidateMode::Contraction,
                    _ => return Err(DslError::UnknownMode(w)),
                })
            }
            Stmt::Assign { name, expr } => {
                if name.starts_with("param:") {
                    continue;
                }
                let dup = DslError::Duplicate {
                    name: name.clone(),
                    line,
                };
                match name.as_str() {
                    "V" => {
                        if v.replace(expr).is_some() {
                            return Err(dup);
                        }
                    }
                    "a1" | "a2" | "a3" => {
                        let i = name.as_bytes()[1] as usize - b'1' as usize;
                        let m = classify_monomial(&name, &expr)?;
                        if alphas[i].replace(m).is_some() {
                            return Err(dup);
                        }
                    }
                    "c0" | "c1" | "c2" | "c3" => {
                        let value = expr.constant_value().ok_or_else(|| DslError::Syntax {
                            line,
                            column,
                            expected: vec!["constant".into()],
                            found: format!("`{expr}`"),
                        })?;
                        if name == "c0" {
                            if !(value >= 0.0) {
                                return Err(DslError::NonPositiveCoefficient { name, value });
                            }
                            origin_bound = Some(value);
                            continue;
                        }
                        if !(value > 0.0) {
                            return Err(DslError::NonPositiveCoefficient { name, value });
                        }
                        let i = name.as_bytes()[1] as usize - b'1' as usize;
                        if consts[i].replace(value).is_some() {
                            return Err(dup);
                        }
                    }
                    _ => return Err(unknown(&name, line, column)),
                }
            }
        }
    }

    let mode = mode.ok_or_else(|| DslError::Missing("`mode` declaration".into()))?;
    let v = v.ok_or_else(|| DslError::Missing("`V = ...`".into()))?;
    if !mode.is_two_copy() && v.uses_other() {
        return Err(DslError::DimensionMismatch(
            "convergent candidates are functions of (k, x) only; found a y variable".into(),
        ));
    }
    let have_alpha = alphas.iter().any(Option::is_some);
    let have_const = consts.iter().any(Option::is_some);
    let (alpha, quadratic) = match (have_alpha, have_const) {
        (true, true) => {
            return Err(DslError::DimensionMismatch(
                "give either a1..a3 or c1..c3, not both".into(),
            ))
        }
        (true, false) => {
            let [Some(a1), Some(a2), Some(a3)] = alphas else {
                return Err(DslError::Missing("all of a1, a2, a3".into()));
            };
            ([a1, a2, a3], false)
        }
        (false, true) => {
            let [Some(c1), Some(c2), Some(c3)] = consts else {
                return Err(DslError::Missing("all of c1, c2, c3".into()));
            };
            (
                [
                    Monomial::quadratic(c1)?,
                    Monomial::quadratic(c2)?,
                    Monomial::quadratic(c3)?,
                ],
                true,
            )
        }
        (false, false) => return Err(DslError::Missing("comparison functions a1..a3 or c1..c3".into())),
    };
    let n = dim.unwrap_or_else(|| v.max_state()).max(1);
    Ok(CandidateV {
        mode,
        n,
        v,
        alpha,
        quadratic,
        origin_bound,
    })
}
