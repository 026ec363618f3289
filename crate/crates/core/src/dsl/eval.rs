//! Evaluation of expression trees over plain floats and forward-mode dual
//! numbers.

use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::Serialize;
use thiserror::Error;

use super::ast::{BinOp, Expr, Func};

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum EvalError {
    #[error("domain error in `{node}`: {reason}")]
    Domain { node: String, reason: String },
    #[error("`{node}` evaluated to a non-finite value")]
    NonFinite { node: String },
    #[error("expected a state of length {expected}, got {found}")]
    Shape { expected: usize, found: usize },
}

fn domain(node: &Expr, reason: &str) -> EvalError {
    EvalError::Domain {
        node: node.to_string(),
        reason: reason.to_string(),
    }
}

/// Values of the free variables during one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a, T> {
    pub k: f64,
    pub x: &'a [T],
    pub y: &'a [T],
    pub s: T,
}

/// Dual number `v + d·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }

    pub fn variable(v: f64) -> Self {
        Dual { v, d: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, d: -self.d }
    }
}

/// Number types the evaluator runs over.
///
/// `kink` is raised whenever a non-differentiable point of `abs`, `min`,
/// `max`, `floor` or `sqrt` is hit; the derivative returned there is the
/// one-sided derivative in the seeded direction.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn lift(v: f64) -> Self;
    fn value(self) -> f64;
    fn powi(self, p: i32) -> Self;
    fn powf(self, p: f64) -> Self;
    fn pow(self, p: Self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self, kink: &mut bool) -> Self;
    fn abs(self, kink: &mut bool) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn min(self, o: Self, kink: &mut bool) -> Self;
    fn max(self, o: Self, kink: &mut bool) -> Self;
    fn floor(self, kink: &mut bool) -> Self;
}

impl Scalar for f64 {
    fn lift(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn powi(self, p: i32) -> Self {
        f64::powi(self, p)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn pow(self, p: Self) -> Self {
        f64::powf(self, p)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self, _: &mut bool) -> Self {
        f64::sqrt(self)
    }
    fn abs(self, _: &mut bool) -> Self {
        f64::abs(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn min(self, o: Self, _: &mut bool) -> Self {
        f64::min(self, o)
    }
    fn max(self, o: Self, _: &mut bool) -> Self {
        f64::max(self, o)
    }
    fn floor(self, _: &mut bool) -> Self {
        f64::floor(self)
    }
}

impl Scalar for Dual {
    fn lift(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn powi(self, p: i32) -> Self {
        let d = if p == 0 {
            0.0
        } else {
            p as f64 * self.v.powi(p - 1) * self.d
        };
        Dual { v: self.v.powi(p), d }
    }
    fn powf(self, p: f64) -> Self {
        let d = if self.d == 0.0 {
            0.0
        } else {
            p * self.v.powf(p - 1.0) * self.d
        };
        Dual { v: self.v.powf(p), d }
    }
    fn pow(self, p: Self) -> Self {
        let v = self.v.powf(p.v);
        let mut d = 0.0;
        if p.d != 0.0 {
            d += v * self.v.ln() * p.d;
        }
        if self.d != 0.0 {
            d += p.v * self.v.powf(p.v - 1.0) * self.d;
        }
        Dual { v, d }
    }
    fn sin(self) -> Self {
        Dual {
            v: self.v.sin(),
            d: self.v.cos() * self.d,
        }
    }
    fn cos(self) -> Self {
        Dual {
            v: self.v.cos(),
            d: -self.v.sin() * self.d,
        }
    }
    fn sqrt(self, kink: &mut bool) -> Self {
        let v = self.v.sqrt();
        if self.v == 0.0 {
            *kink = true;
            let d = if self.d == 0.0 { 0.0 } else { f64::INFINITY };
            return Dual { v, d };
        }
        Dual {
            v,
            d: self.d / (2.0 * v),
        }
    }
    fn abs(self, kink: &mut bool) -> Self {
        if self.v > 0.0 {
            self
        } else if self.v < 0.0 {
            -self
        } else {
            *kink = true;
            Dual {
                v: 0.0,
                d: self.d.abs(),
            }
        }
    }
    fn exp(self) -> Self {
        let v = self.v.exp();
        Dual { v, d: v * self.d }
    }
    fn ln(self) -> Self {
        Dual {
            v: self.v.ln(),
            d: self.d / self.v,
        }
    }
    fn min(self, o: Self, kink: &mut bool) -> Self {
        if self.v < o.v {
            self
        } else if o.v < self.v {
            o
        } else {
            *kink = true;
            Dual {
                v: self.v,
                d: self.d.min(o.d),
            }
        }
    }
    fn max(self, o: Self, kink: &mut bool) -> Self {
        if self.v > o.v {
            self
        } else if o.v > self.v {
            o
        } else {
            *kink = true;
            Dual {
                v: self.v,
                d: self.d.max(o.d),
            }
        }
    }
    fn floor(self, kink: &mut bool) -> Self {
        if self.v.fract() == 0.0 && self.d != 0.0 {
            *kink = true;
        }
        Dual {
            v: self.v.floor(),
            d: 0.0,
        }
    }
}

/// Evaluates `expr` in `env`. Domain violations (square root of a negative,
/// logarithm of a non-positive, division by zero, non-finite results) are
/// reported with the offending subexpression.
pub fn eval<T: Scalar>(expr: &Expr, env: &Env<'_, T>, kink: &mut bool) -> Result<T, EvalError> {
    let out = match expr {
        Expr::Const(v) | Expr::Param(_, v) => T::lift(*v),
        Expr::Time => T::lift(env.k),
        Expr::State(i) => *env.x.get(*i).ok_or(EvalError::Shape {
            expected: i + 1,
            found: env.x.len(),
        })?,
        Expr::Other(i) => *env.y.get(*i).ok_or(EvalError::Shape {
            expected: i + 1,
            found: env.y.len(),
        })?,
        Expr::Arg => env.s,
        Expr::Neg(e) => -eval(e, env, kink)?,
        Expr::Binary(op, a, b) => {
            let lhs = eval(a, env, kink)?;
            if *op == BinOp::Pow {
                pow(expr, lhs, b, env, kink)?
            } else {
                let rhs = eval(b, env, kink)?;
                match op {
                    BinOp::Add => lhs + rhs,
                    BinOp::Sub => lhs - rhs,
                    BinOp::Mul => lhs * rhs,
                    BinOp::Div => {
                        if rhs.value() == 0.0 {
                            return Err(domain(expr, "division by zero"));
                        }
                        lhs / rhs
                    }
                    BinOp::Pow => unreachable!(),
                }
            }
        }
        Expr::Call(func, args) => {
            let a = eval(&args[0], env, kink)?;
            match func {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Sqrt => {
                    if a.value() < 0.0 {
                        return Err(domain(expr, "square root of a negative number"));
                    }
                    a.sqrt(kink)
                }
                Func::Abs => a.abs(kink),
                Func::Exp => a.exp(),
                Func::Log => {
                    if a.value() <= 0.0 {
                        return Err(domain(expr, "logarithm of a non-positive number"));
                    }
                    a.ln()
                }
                Func::Min => a.min(eval(&args[1], env, kink)?, kink),
                Func::Max => a.max(eval(&args[1], env, kink)?, kink),
                Func::Floor => a.floor(kink),
            }
        }
    };
    if !out.value().is_finite() {
        return Err(EvalError::NonFinite { node: expr.to_string() });
    }
    Ok(out)
}

fn pow<T: Scalar>(node: &Expr, base: T, exp: &Expr, env: &Env<'_, T>, kink: &mut bool) -> Result<T, EvalError> {
    if let Some(p) = exp.constant_value() {
        if p.fract() == 0.0 && p.abs() <= 1024.0 {
            if p < 0.0 && base.value() == 0.0 {
                return Err(domain(node, "zero raised to a negative power"));
            }
            return Ok(base.powi(p as i32));
        }
        if base.value() < 0.0 {
            return Err(domain(node, "negative base with non-integer exponent"));
        }
        if base.value() == 0.0 && p < 1.0 {
            if p < 0.0 {
                return Err(domain(node, "zero raised to a negative power"));
            }
            *kink = true;
        }
        return Ok(base.powf(p));
    }
    let e = eval(exp, env, kink)?;
    if base.value() <= 0.0 {
        return Err(domain(node, "variable exponent needs a positive base"));
    }
    Ok(base.pow(e))
}
