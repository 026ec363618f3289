//! Solutions `φ(k; k₀, ξ)`, Jacobians along them, the two-copy augmented
//! system and transfer matrices of the displacement dynamics
//! `δ(k+1) = ∂f/∂x(k, x(k)) δ(k)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{EvalError, Expr, SystemDef};
use crate::matrix::{self, Matrix, MatrixError};

/// States with a component above this magnitude end a trajectory.
pub const OVERFLOW_LIMIT: f64 = 1e150;
/// Longest horizon [`simulate`] accepts.
pub const MAX_HORIZON: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("state has length {found}, system dimension is {expected}")]
    Shape { expected: usize, found: usize },
    #[error("horizon {0} exceeds the limit of {MAX_HORIZON} steps")]
    HorizonTooLong(usize),
    #[error("vector of odd length {0} is not a two-copy state")]
    InvalidShape(usize),
    #[error("Jacobian requested at a non-differentiable point k={k}, x={x:?}")]
    NonSmooth { k: i64, x: Vec<f64> },
    #[error("system has no analytic Jacobian")]
    MissingAnalyticJacobian,
    #[error("trajectory overflowed at k={at_k}; transfer matrix unavailable")]
    TransferUnavailable { at_k: i64 },
    #[error("final time {k} precedes initial time {k0}")]
    NegativeSpan { k0: i64, k: i64 },
}

/// Where and why a trajectory was cut short.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverflowMark {
    /// Time at which the offending state would have been reached.
    pub at_k: i64,
    pub reason: String,
}

/// The stored solution `x(k₀), …, x(k₀ + K)`, possibly truncated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub k0: i64,
    pub states: Vec<Vec<f64>>,
    pub overflow: Option<OverflowMark>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Last time index with a stored state.
    pub fn end_k(&self) -> i64 {
        self.k0 + self.states.len() as i64 - 1
    }

    pub fn at(&self, k: i64) -> Option<&[f64]> {
        if k < self.k0 {
            return None;
        }
        self.states.get((k - self.k0) as usize).map(Vec::as_slice)
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory holds its initial state")
    }

    pub fn is_truncated(&self) -> bool {
        self.overflow.is_some()
    }

    /// Largest Euclidean norm along the stored states.
    pub fn sup_norm(&self) -> f64 {
        self.states.iter().map(|s| matrix::norm(s)).fold(0.0, f64::max)
    }
}

/// Forward iteration of `x(k+1) = f(k, x(k))` for `horizon` steps.
///
/// A state that is non-finite or exceeds [`OVERFLOW_LIMIT`] is not stored;
/// the trajectory ends with an [`OverflowMark`] instead.
pub fn simulate(def: &SystemDef, k0: i64, xi: &[f64], horizon: usize) -> Result<Trajectory, DynamicsError> {
    if xi.len() != def.n {
        return Err(DynamicsError::Shape {
            expected: def.n,
            found: xi.len(),
        });
    }
    if horizon > MAX_HORIZON {
        return Err(DynamicsError::HorizonTooLong(horizon));
    }
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(xi.to_vec());
    let mut overflow = None;
    for step in 0..horizon {
        let k = k0 + step as i64;
        let next = match def.eval_map(k, &states[step]) {
            Ok(v) => v,
            Err(EvalError::NonFinite { node }) => {
                overflow = Some(OverflowMark {
                    at_k: k + 1,
                    reason: format!("`{node}` overflowed"),
                });
                break;
            }
            Err(e) => return Err(e.into()),
        };
        if next.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_LIMIT) {
            overflow = Some(OverflowMark {
                at_k: k + 1,
                reason: format!("state magnitude exceeded {OVERFLOW_LIMIT:e}"),
            });
            break;
        }
        states.push(next);
    }
    Ok(Trajectory { k0, states, overflow })
}

/// Simulates many initial conditions in parallel; results keep input order.
pub fn simulate_many(
    def: &SystemDef,
    starts: &[(i64, Vec<f64>)],
    horizon: usize,
) -> Vec<Result<Trajectory, DynamicsError>> {
    starts
        .par_iter()
        .map(|(k0, xi)| simulate(def, *k0, xi, horizon))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMethod {
    Analytic,
    #[default]
    Ad,
    Fd,
}

/// `∂f/∂x(k, x)` by the chosen method. With `strict`, points where automatic
/// differentiation crossed a kink are rejected.
pub fn jacobian(
    def: &SystemDef,
    k: i64,
    x: &[f64],
    method: JacobianMethod,
    strict: bool,
) -> Result<Matrix, DynamicsError> {
    match method {
        JacobianMethod::Analytic => def
            .eval_jacobian_analytic(k, x)
            .ok_or(DynamicsError::MissingAnalyticJacobian)?
            .map_err(Into::into),
        JacobianMethod::Ad => {
            let j = def.eval_jacobian_ad(k, x)?;
            if strict && j.non_smooth {
                return Err(DynamicsError::NonSmooth { k, x: x.to_vec() });
            }
            Ok(j.matrix)
        }
        JacobianMethod::Fd => fd_jacobian(def, k, x),
    }
}

/// Central differences with step `1e-6·max(1, |xⱼ|)` per coordinate.
pub fn fd_jacobian(def: &SystemDef, k: i64, x: &[f64]) -> Result<Matrix, DynamicsError> {
    let n = def.n;
    if x.len() != n {
        return Err(DynamicsError::Shape {
            expected: n,
            found: x.len(),
        });
    }
    let mut m = Matrix::zeros(n, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let plus = def.eval_map(k, &probe)?;
        probe[j] = x[j] - h;
        let minus = def.eval_map(k, &probe)?;
        probe[j] = x[j];
        for i in 0..n {
            m[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(m)
}

/// Two independent copies of `def` driven by the same time, on `R²ⁿ`.
pub fn augment(def: &SystemDef) -> SystemDef {
    let n = def.n;
    let mut f = def.f.clone();
    f.extend(def.f.iter().map(|e| shift_states(e, n)));
    let jacobian = def.jacobian.as_ref().map(|grid| {
        (0..2 * n)
            .map(|i| {
                (0..2 * n)
                    .map(|j| match (i < n, j < n) {
                        (true, true) => grid[i][j].clone(),
                        (false, false) => shift_states(&grid[i - n][j - n], n),
                        _ => Expr::Const(0.0),
                    })
                    .collect()
            })
            .collect()
    });
    SystemDef {
        name: format!("{}_augmented", def.name),
        n: 2 * n,
        f,
        jacobian,
        theta: None,
        params: def.params.clone(),
    }
}

fn shift_states(e: &Expr, by: usize) -> Expr {
    match e {
        Expr::State(i) => Expr::State(i + by),
        Expr::Neg(a) => Expr::Neg(Box::new(shift_states(a, by))),
        Expr::Binary(op, a, b) => Expr::binary(*op, shift_states(a, by), shift_states(b, by)),
        Expr::Call(func, args) => Expr::Call(*func, args.iter().map(|a| shift_states(a, by)).collect()),
        other => other.clone(),
    }
}

/// Distance of `z = (x₁, x₂)` to the diagonal `{(x, x)}`, `|x₁ − x₂| / √2`.
pub fn diagonal_distance(z: &[f64]) -> Result<f64, DynamicsError> {
    if !z.len().is_multiple_of(2) {
        return Err(DynamicsError::InvalidShape(z.len()));
    }
    let (a, b) = z.split_at(z.len() / 2);
    Ok(matrix::distance(a, b) / std::f64::consts::SQRT_2)
}

/// `Φ(k, k₀; ξ)`, the product of Jacobians along `φ(·; k₀, ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferMatrix {
    pub k0: i64,
    pub k: i64,
    pub xi: Vec<f64>,
    pub matrix: Matrix,
}

/// Transfer matrix of the displacement dynamics from `k0` to `k` along the
/// solution through `(k0, xi)`.
pub fn transfer_matrix(
    def: &SystemDef,
    k0: i64,
    k: i64,
    xi: &[f64],
    method: JacobianMethod,
) -> Result<TransferMatrix, DynamicsError> {
    if k < k0 {
        return Err(DynamicsError::NegativeSpan { k0, k });
    }
    let traj = simulate(def, k0, xi, (k - k0) as usize)?;
    if let Some(mark) = &traj.overflow {
        return Err(DynamicsError::TransferUnavailable { at_k: mark.at_k });
    }
    let matrix = transfer_along(def, &traj, k0, k, method)?;
    Ok(TransferMatrix {
        k0,
        k,
        xi: xi.to_vec(),
        matrix,
    })
}

/// `Φ(to, from)` using the states stored in `traj`.
pub fn transfer_along(
    def: &SystemDef,
    traj: &Trajectory,
    from: i64,
    to: i64,
    method: JacobianMethod,
) -> Result<Matrix, DynamicsError> {
    let mut phi = Matrix::identity(def.n);
    for j in from..to {
        let x = traj.at(j).ok_or(DynamicsError::TransferUnavailable { at_k: j })?;
        let jac = jacobian(def, j, x, method, false)?;
        phi = jac.matmul(&phi);
    }
    Ok(phi)
}
