use std::fmt;

/// Functions accepted by the expression language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Sqrt,
    Abs,
    Exp,
    Log,
    Min,
    Max,
    Floor,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "min" => Func::Min,
            "max" => Func::Max,
            "floor" => Func::Floor,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Min => "min",
            Func::Max => "max",
            Func::Floor => "floor",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Expression tree. State indices are zero-based (`x1` is `State(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Named constant declared with `param`; carries its value.
    Param(String, f64),
    Time,
    State(usize),
    /// Second-copy state `y_i`, used by incremental candidates.
    Other(usize),
    /// Argument `s` of a class-K monomial.
    Arg,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Neg(e) => 1 + e.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
            Expr::Call(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
            _ => 1,
        }
    }

    /// Largest state index referenced (one-based), 0 when none.
    pub fn max_state(&self) -> usize {
        self.fold(0, &|acc, e| match e {
            Expr::State(i) | Expr::Other(i) => acc.max(i + 1),
            _ => acc,
        })
    }

    pub fn uses_other(&self) -> bool {
        self.fold(false, &|acc, e| acc || matches!(e, Expr::Other(_)))
    }

    pub fn uses_arg(&self) -> bool {
        self.fold(false, &|acc, e| acc || matches!(e, Expr::Arg))
    }

    pub fn uses_time(&self) -> bool {
        self.fold(false, &|acc, e| acc || matches!(e, Expr::Time))
    }

    pub fn uses_state(&self) -> bool {
        self.fold(false, &|acc, e| acc || matches!(e, Expr::State(_)))
    }

    fn fold<T>(&self, init: T, f: &dyn Fn(T, &Expr) -> T) -> T {
        let acc = f(init, self);
        match self {
            Expr::Neg(e) => e.fold(acc, f),
            Expr::Binary(_, a, b) => {
                let acc = a.fold(acc, f);
                b.fold(acc, f)
            }
            Expr::Call(_, args) => args.iter().fold(acc, |acc, a| a.fold(acc, f)),
            _ => acc,
        }
    }

    /// Value of a subtree free of variables, if it is one.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Const(v) | Expr::Param(_, v) => Some(*v),
            Expr::Neg(e) => e.constant_value().map(|v| -v),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.constant_value()?, b.constant_value()?);
                Some(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                })
            }
            _ => None,
        }
    }
}

/// Fully parenthesised rendering; re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) if v.is_sign_negative() => write!(f, "({v:?})"),
            Expr::Const(v) => write!(f, "{v:?}"),
            Expr::Param(name, _) => f.write_str(name),
            Expr::Time => f.write_str("k"),
            Expr::State(i) => write!(f, "x{}", i + 1),
            Expr::Other(i) => write!(f, "y{}", i + 1),
            Expr::Arg => f.write_str("s"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
