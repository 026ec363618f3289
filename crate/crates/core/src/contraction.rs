//! Contraction metrics and the Demidovič condition: metric bounds, the
//! contraction margin of `F = Θ(k+1,x)·∂f/∂x·Θ(k,x)⁻¹`, quadratic `P`
//! certificates and their search, the transfer-matrix metric `Q(k, ξ)` and
//! curve lengths measured in it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convergent::{BOUNDED_LIMIT, FAR_TIMES};
use crate::dsl::SystemDef;
use crate::dynamics::{jacobian, simulate, transfer_along, DynamicsError, JacobianMethod};
use crate::error::AnalysisError;
use crate::matrix::{
    cholesky, lambda_max, psd_margin, psd_tolerance, sym_eig, triangular_inverse, Matrix, MatrixError, SymMatrix,
};
use crate::sampling::{index_rng, Grid};
use crate::verdict::{PointIssue, Verdict, Witness};

/// Smallest accepted `λmin(ΘᵀΘ)`.
pub const ETA_FLOOR: f64 = 1e-9;
/// Largest accepted `λmax(ΘᵀΘ)`.
pub const RHO_CEILING: f64 = 1e9;
/// Tolerance on the truncated tail of `Q` when the horizon is derived.
pub const Q_TAIL_TOL: f64 = 1e-9;
/// Horizon used for `Q` when no exponential bound is declared.
pub const Q_DEFAULT_HORIZON: usize = 200;
/// Contraction factors tried by [`demidovic_sweep`], largest first.
pub const RHO_SWEEP: [f64; 5] = [0.9, 0.7, 0.5, 0.3, 0.1];
/// Half-width of the dense time sweep used for `sup |f(k, 0)|`.
pub const ORIGIN_SWEEP: i64 = 65_536;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractionError {
    #[error("system has no theta declaration")]
    MissingTheta,
    #[error("metric is singular at k = {k}, x = {x:?}")]
    MetricSingular { k: i64, x: Vec<f64> },
    #[error("P is not positive definite (smallest eigenvalue {0:e})")]
    InvalidP(f64),
    #[error("metric unavailable: trajectory overflowed at k = {at_k}")]
    Unavailable { at_k: i64 },
    #[error("truncated Q did not settle: last term {last:e} against total {total:e}")]
    Truncation { last: f64, total: f64 },
    #[error("metric failed at quadrature nodes {0:?}")]
    NodeFailures(Vec<f64>),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl From<DynamicsError> for ContractionError {
    fn from(e: DynamicsError) -> Self {
        ContractionError::Analysis(e.into())
    }
}

impl From<MatrixError> for ContractionError {
    fn from(e: MatrixError) -> Self {
        ContractionError::Analysis(e.into())
    }
}

/// Where `Θ(k, x)` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricField {
    /// The `theta` grid declared in the system file.
    Expression,
    /// The same `Θ` at every point.
    Constant(Matrix),
    /// `Θ` as the Cholesky factor of the truncated transfer-matrix sum.
    QBuilder {
        horizon: Option<usize>,
        rate: Option<(f64, f64)>,
    },
}

impl MetricField {
    pub fn identity(n: usize) -> Self {
        MetricField::Constant(Matrix::identity(n))
    }

    pub fn theta(&self, def: &SystemDef, k: i64, x: &[f64]) -> Result<Matrix, ContractionError> {
        match self {
            MetricField::Expression => Ok(def
                .eval_theta(k, x)
                .ok_or(ContractionError::MissingTheta)?
                .map_err(AnalysisError::from)?),
            MetricField::Constant(m) => Ok(m.clone()),
            MetricField::QBuilder { horizon, rate } => {
                let q = build_q(def, x, k, *horizon, *rate)?;
                Ok(theta_from_q(&q.q)?)
            }
        }
    }

    /// `Θ(k, x)⁻¹`; singular metrics are reported with the point.
    pub fn theta_inverse(&self, def: &SystemDef, k: i64, x: &[f64]) -> Result<Matrix, ContractionError> {
        let theta = self.theta(def, k, x)?;
        let inv = match self {
            MetricField::QBuilder { .. } => triangular_inverse(&theta),
            _ => theta.inverse(),
        };
        inv.map_err(|_| ContractionError::MetricSingular { k, x: x.to_vec() })
    }

    /// `Q(k, x) = Θ(k, x)ᵀ Θ(k, x)`.
    pub fn q(&self, def: &SystemDef, k: i64, x: &[f64]) -> Result<SymMatrix, ContractionError> {
        match self {
            MetricField::QBuilder { horizon, rate } => Ok(build_q(def, x, k, *horizon, *rate)?.q),
            _ => Ok(self.theta(def, k, x)?.gram()),
        }
    }
}

/// A grid point, as reported in certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: i64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBounds {
    /// `min λmin(ΘᵀΘ)` over the grid.
    pub eta: f64,
    /// `max λmax(ΘᵀΘ)` over the grid.
    pub rho: f64,
    /// The same extrema after adding far times for every grid state.
    pub eta_extended: f64,
    pub rho_extended: f64,
    pub verdict: Verdict,
}

/// Bounds `η̂ I ⪯ ΘᵀΘ ⪯ ρ̂ I` over the grid.
///
/// Each grid state is also evaluated at the times in [`FAR_TIMES`], so a
/// metric that degenerates as `|k|` grows is caught even on a short window.
/// A violation is reported with `observed = 1/λmin` against
/// `allowed = 1/η_floor` for the lower bound, and `λmax` against the
/// ceiling for the upper bound.
pub fn metric_bounds(def: &SystemDef, metric: &MetricField, grid: &Grid) -> Result<MetricBounds, ContractionError> {
    if grid.is_empty() {
        return Err(AnalysisError::InvalidInput("empty grid".into()).into());
    }
    let mut points: Vec<(i64, Vec<f64>, bool)> = grid.points.iter().map(|(k, x)| (*k, x.clone(), false)).collect();
    let mut states: Vec<&Vec<f64>> = grid.points.iter().map(|(_, x)| x).collect();
    states.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    states.dedup();
    for x in states {
        points.extend(FAR_TIMES.iter().map(|&k| (k, x.clone(), true)));
    }

    let evaluated: Vec<Result<(f64, f64), ContractionError>> = points
        .par_iter()
        .map(|(k, x, _)| {
            let theta = metric.theta(def, *k, x)?;
            let e = sym_eig(&theta.gram())?;
            let singular = match metric {
                MetricField::QBuilder { .. } => triangular_inverse(&theta).is_err(),
                _ => theta.inverse().is_err(),
            };
            Ok(if singular { (0.0, e.max()) } else { (e.min(), e.max()) })
        })
        .collect();

    let (mut eta, mut rho) = (f64::INFINITY, 0.0f64);
    let (mut eta_ext, mut rho_ext) = (f64::INFINITY, 0.0f64);
    let mut worst: Option<(f64, Witness)> = None;
    let mut issues = Vec::new();
    let mut used = 0;
    for ((k, x, far), r) in points.iter().zip(evaluated) {
        let (lo, hi) = match r {
            Ok(v) => v,
            Err(ContractionError::Analysis(AnalysisError::Eval(e))) => {
                issues.push(PointIssue {
                    k: *k,
                    x: x.clone(),
                    message: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        used += 1;
        if !far {
            eta = eta.min(lo);
            rho = rho.max(hi);
        }
        eta_ext = eta_ext.min(lo);
        rho_ext = rho_ext.max(hi);
        let lower = if lo > 0.0 { 1.0 / lo } else { f64::INFINITY };
        let candidates = [
            (
                lower / (1.0 / ETA_FLOOR),
                lower,
                1.0 / ETA_FLOOR,
                "lower metric bound eta fails: 1/lambda_min(Theta'Theta) exceeds 1/eta_floor",
            ),
            (
                hi / RHO_CEILING,
                hi,
                RHO_CEILING,
                "upper metric bound rho fails: lambda_max(Theta'Theta) exceeds the ceiling",
            ),
        ];
        for (ratio, observed, allowed, note) in candidates {
            if observed >= allowed && worst.as_ref().is_none_or(|(r, _)| ratio > *r) {
                worst = Some((
                    ratio,
                    Witness {
                        xi1: x.clone(),
                        xi2: None,
                        k0: *k,
                        k: *k,
                        observed: if observed == allowed { f64::INFINITY } else { observed },
                        allowed,
                        note: note.into(),
                    },
                ));
            }
        }
    }
    let mut verdict = match worst {
        Some((_, w)) => Verdict::falsified(w, used),
        None if used == 0 => Verdict::inconclusive(0),
        None => Verdict::certified([("eta", eta), ("rho", rho)], used),
    };
    verdict.issues = issues;
    Ok(MetricBounds {
        eta,
        rho,
        eta_extended: eta_ext,
        rho_extended: rho_ext,
        verdict,
    })
}

/// Grid-relative contraction evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub eta: f64,
    pub rho: f64,
    /// `min (1 − λmax(FᵀF))` over the grid.
    pub mu: f64,
    pub grid_size: usize,
    pub grid: String,
    pub worst_point: GridPoint,
    pub verdict: Verdict,
}

/// `1 − λmax(FᵀF)` at one point, with `F = Θ(k+1,x)·J·Θ(k,x)⁻¹`.
pub fn margin_at(def: &SystemDef, metric: &MetricField, k: i64, x: &[f64]) -> Result<f64, ContractionError> {
    let j = jacobian(def, k, x, JacobianMethod::Ad, true)?;
    let f = metric
        .theta(def, k + 1, x)?
        .matmul(&j)
        .matmul(&metric.theta_inverse(def, k, x)?);
    Ok(1.0 - lambda_max(&f.gram())?)
}

/// Contraction margin over the grid, combined with [`metric_bounds`].
///
/// Points where automatic differentiation crosses a kink are rejected with
/// [`DynamicsError::NonSmooth`]; a singular metric is an error.
pub fn contraction_margin(
    def: &SystemDef,
    metric: &MetricField,
    grid: &Grid,
) -> Result<ContractionCertificate, ContractionError> {
    if grid.is_empty() {
        return Err(AnalysisError::InvalidInput("empty grid".into()).into());
    }
    let margins: Vec<Result<f64, ContractionError>> = grid
        .points
        .par_iter()
        .map(|(k, x)| margin_at(def, metric, *k, x))
        .collect();
    let mut mu = f64::INFINITY;
    let mut worst = 0;
    let mut issues = Vec::new();
    let mut used = 0;
    for (i, ((k, x), r)) in grid.points.iter().zip(margins).enumerate() {
        match r {
            Ok(m) => {
                used += 1;
                if m < mu {
                    mu = m;
                    worst = i;
                }
            }
            Err(ContractionError::Analysis(AnalysisError::Eval(e))) => issues.push(PointIssue {
                k: *k,
                x: x.clone(),
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let bounds = metric_bounds(def, metric, grid)?;
    let (wk, wx) = &grid.points[worst];
    let mut verdict = if used == 0 {
        Verdict::inconclusive(0)
    } else if mu <= 0.0 {
        Verdict::falsified(
            Witness {
                xi1: wx.clone(),
                xi2: None,
                k0: *wk,
                k: wk + 1,
                observed: 1.0 - mu,
                allowed: 1.0,
                note: "lambda_max(F'F) is not below 1".into(),
            },
            used,
        )
    } else if bounds.verdict.is_falsified() {
        let mut v = bounds.verdict.clone();
        v.samples_used = used;
        v
    } else {
        Verdict::certified([("eta", bounds.eta), ("rho", bounds.rho), ("mu", mu)], used)
    };
    verdict.issues.extend(issues);
    Ok(ContractionCertificate {
        eta: bounds.eta,
        rho: bounds.rho,
        mu,
        grid_size: grid.len(),
        grid: grid.description.clone(),
        worst_point: GridPoint { k: *wk, x: wx.clone() },
        verdict,
    })
}

/// Grid-relative evidence for the Demidovič condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemidovicCertificate {
    #[serde(rename = "P")]
    pub p: SymMatrix,
    pub rho_d: f64,
    /// `max λmax(JᵀPJ − ρP)` over the grid.
    pub worst_margin: f64,
    /// `sup |f(k, 0)|` over the sampled times, absent when not requested or
    /// when it exceeds the boundedness limit.
    pub c: Option<f64>,
    pub c_bounded: bool,
    pub grid_size: usize,
    pub grid: String,
    pub worst_point: GridPoint,
    /// Certified on the grid with a finite `c`.
    pub convergence_upgrade: bool,
    pub verdict: Verdict,
}

/// `sup |f(k, 0)|` over `k ∈ [−65536, 65536]` and the far times.
pub fn origin_sup(def: &SystemDef) -> Result<f64, ContractionError> {
    let zero = vec![0.0; def.n];
    let times: Vec<i64> = (-ORIGIN_SWEEP..=ORIGIN_SWEEP).chain(FAR_TIMES).collect();
    let values: Vec<Result<f64, ContractionError>> = times
        .par_chunks(4096)
        .map(|chunk| {
            let mut m = 0.0f64;
            for &k in chunk {
                let f = def.eval_map(k, &zero).map_err(AnalysisError::from)?;
                m = m.max(crate::matrix::norm(&f));
            }
            Ok(m)
        })
        .collect();
    let mut m = 0.0f64;
    for v in values {
        m = m.max(v?);
    }
    Ok(m)
}

fn grid_jacobians(def: &SystemDef, grid: &Grid) -> Vec<Result<Matrix, DynamicsError>> {
    grid.points
        .par_iter()
        .map(|(k, x)| jacobian(def, *k, x, JacobianMethod::Ad, false))
        .collect()
}

fn demidovic_value(p: &SymMatrix, rho: f64, j: &Matrix) -> Result<f64, MatrixError> {
    lambda_max(&p.congruence(j).sub(&p.scale(rho)))
}

/// Checks `JᵀPJ − ρP ⪯ 0` at every grid point and, with `check_origin`,
/// reports `c = sup |f(k, 0)|`.
pub fn demidovic_certify(
    def: &SystemDef,
    p: &SymMatrix,
    rho: f64,
    grid: &Grid,
    check_origin: bool,
) -> Result<DemidovicCertificate, ContractionError> {
    let c = if check_origin { Some(origin_sup(def)?) } else { None };
    demidovic_with_c(def, p, rho, grid, c)
}

fn demidovic_with_c(
    def: &SystemDef,
    p: &SymMatrix,
    rho: f64,
    grid: &Grid,
    c: Option<f64>,
) -> Result<DemidovicCertificate, ContractionError> {
    if p.n() != def.n {
        return Err(AnalysisError::DimensionMismatch {
            expected: def.n,
            found: p.n(),
        }
        .into());
    }
    let lmin = psd_margin(p)?;
    if lmin <= 0.0 {
        return Err(ContractionError::InvalidP(lmin));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(AnalysisError::InvalidInput(format!("rho must lie in (0, 1), got {rho}")).into());
    }
    if grid.is_empty() {
        return Err(AnalysisError::InvalidInput("empty grid".into()).into());
    }
    let values: Vec<Result<f64, ContractionError>> = grid_jacobians(def, grid)
        .into_par_iter()
        .map(|j| Ok(demidovic_value(p, rho, &j?)?))
        .collect();
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst = 0;
    let mut issues = Vec::new();
    let mut used = 0;
    for (i, ((k, x), r)) in grid.points.iter().zip(values).enumerate() {
        match r {
            Ok(v) => {
                used += 1;
                if v > worst_margin {
                    worst_margin = v;
                    worst = i;
                }
            }
            Err(ContractionError::Analysis(AnalysisError::Dynamics(DynamicsError::Eval(e)))) => {
                issues.push(PointIssue {
                    k: *k,
                    x: x.clone(),
                    message: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    let tol = psd_tolerance(p);
    let (wk, wx) = &grid.points[worst];
    let c_bounded = c.is_some_and(|c| c <= BOUNDED_LIMIT);
    let mut verdict = if used == 0 {
        Verdict::inconclusive(0)
    } else if worst_margin > tol {
        Verdict::falsified(
            Witness {
                xi1: wx.clone(),
                xi2: None,
                k0: *wk,
                k: wk + 1,
                observed: worst_margin,
                allowed: tol,
                note: "lambda_max(J'PJ - rho P) is positive".into(),
            },
            used,
        )
    } else {
        let mut v = Verdict::certified(
            [("rho_d", rho), ("worst_margin", worst_margin), ("lambda_min_P", lmin)],
            used,
        );
        if let Some(c) = c.filter(|_| c_bounded) {
            v.constants.insert("c".into(), c);
        }
        v
    };
    verdict.issues = issues;
    let certified = verdict.is_certified();
    Ok(DemidovicCertificate {
        p: p.clone(),
        rho_d: rho,
        worst_margin,
        c: c.filter(|_| c_bounded),
        c_bounded,
        grid_size: grid.len(),
        grid: grid.description.clone(),
        worst_point: GridPoint { k: *wk, x: wx.clone() },
        convergence_upgrade: certified && c_bounded,
        verdict,
    })
}

/// Runs [`demidovic_certify`] for each `ρ` in [`RHO_SWEEP`] and returns the
/// certificate with the smallest certified `ρ`, or the failure at the
/// largest `ρ` when none certifies.
pub fn demidovic_sweep(
    def: &SystemDef,
    p: &SymMatrix,
    grid: &Grid,
    check_origin: bool,
) -> Result<DemidovicCertificate, ContractionError> {
    let c = if check_origin { Some(origin_sup(def)?) } else { None };
    let mut best: Option<DemidovicCertificate> = None;
    for rho in RHO_SWEEP {
        let cert = demidovic_with_c(def, p, rho, grid, c)?;
        if !cert.verdict.is_certified() {
            if best.is_none() {
                return Ok(cert);
            }
            break;
        }
        best = Some(cert);
    }
    Ok(best.expect("loop returns or certifies at least once"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PSearch {
    #[serde(rename = "P")]
    pub p: SymMatrix,
    /// `max λmax(JᵀPJ − ρP)` over the grid at the returned `P`.
    pub g: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchFailure {
    #[error("no P found: best max eigenvalue {} after {} iterations", .0.g, .0.iterations)]
    NotFound(PSearch),
    #[error(transparent)]
    Contraction(#[from] ContractionError),
}

/// Subgradient search for `P ≻ 0` with `trace P = n` and
/// `JᵀPJ − ρP ⪯ 0` on the grid.
///
/// Each step moves along `(Jv)(Jv)ᵀ − ρvvᵀ` at the worst point, where `v` is
/// the top eigenvector, with step `1/(10+t)`, then clamps eigenvalues at
/// `1e-6` and rescales the trace. `seed` perturbs the starting point `I`.
pub fn search_p(def: &SystemDef, grid: &Grid, rho: f64, iters: usize, seed: u64) -> Result<PSearch, SearchFailure> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(ContractionError::from(AnalysisError::InvalidInput(format!(
            "rho must lie in (0, 1), got {rho}"
        )))
        .into());
    }
    if grid.is_empty() {
        return Err(ContractionError::from(AnalysisError::InvalidInput("empty grid".into())).into());
    }
    let n = def.n;
    let mut jacs = Vec::with_capacity(grid.len());
    for r in grid_jacobians(def, grid) {
        match r {
            Ok(j) => jacs.push(j),
            Err(DynamicsError::Eval(_)) => {}
            Err(e) => return Err(ContractionError::from(e).into()),
        }
    }
    if jacs.is_empty() {
        return Err(
            ContractionError::from(AnalysisError::InvalidInput("no grid point could be evaluated".into())).into(),
        );
    }
    let mut rng = index_rng(seed, 0);
    let noise = Matrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -1e-3..=1e-3));
    let mut p =
        project(&SymMatrix::identity(n).add(&SymMatrix::symmetrize(&noise)), n).map_err(ContractionError::from)?;
    let mut best = PSearch {
        p: p.clone(),
        g: f64::INFINITY,
        iterations: 0,
    };
    for t in 0..=iters {
        let values: Vec<Result<f64, MatrixError>> = jacs.par_iter().map(|j| demidovic_value(&p, rho, j)).collect();
        let mut g = f64::NEG_INFINITY;
        let mut wi = 0;
        for (i, v) in values.into_iter().enumerate() {
            let v = v.map_err(ContractionError::from)?;
            if v > g {
                g = v;
                wi = i;
            }
        }
        if g < best.g {
            best = PSearch {
                p: p.clone(),
                g,
                iterations: t,
            };
        }
        if g <= psd_tolerance(&p) {
            return Ok(best);
        }
        if t == iters {
            break;
        }
        let j = &jacs[wi];
        let m = p.congruence(j).sub(&p.scale(rho));
        let e = sym_eig(&m).map_err(ContractionError::from)?;
        let v = e.vector(n - 1);
        let jv = j.mul_vec(&v);
        let dir = SymMatrix::from_upper(&Matrix::from_fn(n, n, |a, b| jv[a] * jv[b] - rho * v[a] * v[b]));
        p = project(&p.sub(&dir.scale(1.0 / (10.0 + t as f64))), n).map_err(ContractionError::from)?;
    }
    Err(SearchFailure::NotFound(best))
}

const P_FLOOR: f64 = 1e-6;

fn project(p: &SymMatrix, n: usize) -> Result<SymMatrix, MatrixError> {
    let clamp = |s: &SymMatrix| -> Result<SymMatrix, MatrixError> {
        let e = sym_eig(s)?;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let lam = e.values[i].max(P_FLOOR);
            let v = e.vector(i);
            for a in 0..n {
                for b in 0..n {
                    out[(a, b)] += lam * v[a] * v[b];
                }
            }
        }
        Ok(SymMatrix::symmetrize(&out))
    };
    let c = clamp(p)?;
    let scaled = c.scale(n as f64 / c.trace());
    if psd_margin(&scaled)? >= P_FLOOR {
        Ok(scaled)
    } else {
        clamp(&scaled)
    }
}

/// Truncated `Q(k, ξ) = Σ_{j=k}^{k+M} Φ(j,k;ξ)ᵀ Φ(j,k;ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBuild {
    pub q: SymMatrix,
    pub horizon: usize,
    /// `κ²·λ^(−2M)·λ²/(λ²−1)·n` when an exponential bound was declared.
    pub tail_bound: Option<f64>,
}

/// Horizon that brings the declared tail bound below `tol`.
pub fn q_horizon(kappa: f64, lambda: f64, tol: f64) -> usize {
    let l2 = lambda * lambda;
    let m = (tol * (l2 - 1.0) / (kappa * kappa * l2)).ln() / (-2.0 * lambda.ln());
    m.ceil().max(0.0) as usize
}

/// Builds `Q(k, ξ)` from the transfer matrices along `φ(·; k, ξ)`.
///
/// The horizon is `horizon` when given, otherwise derived from the declared
/// `(κ, λ)`, otherwise [`Q_DEFAULT_HORIZON`] with a check that the last term
/// is negligible.
pub fn build_q(
    def: &SystemDef,
    xi: &[f64],
    k: i64,
    horizon: Option<usize>,
    rate: Option<(f64, f64)>,
) -> Result<QBuild, ContractionError> {
    if let Some((kappa, lambda)) = rate {
        if !(lambda > 1.0) || !(kappa >= 1.0) {
            return Err(AnalysisError::InvalidInput(format!(
                "declared bound needs kappa >= 1 and lambda > 1, got ({kappa}, {lambda})"
            ))
            .into());
        }
    }
    let m = horizon
        .or_else(|| rate.map(|(kappa, lambda)| q_horizon(kappa, lambda, Q_TAIL_TOL)))
        .unwrap_or(Q_DEFAULT_HORIZON);
    let traj = simulate(def, k, xi, m)?;
    if let Some(mark) = &traj.overflow {
        return Err(ContractionError::Unavailable { at_k: mark.at_k });
    }
    let n = def.n;
    let mut phi = Matrix::identity(n);
    let mut q = SymMatrix::identity(n);
    let mut last = q.frobenius();
    for j in 0..m {
        let kj = k + j as i64;
        let jac = jacobian(def, kj, &traj.states[j], JacobianMethod::Ad, false)?;
        phi = jac.matmul(&phi);
        if !phi.is_finite() {
            return Err(ContractionError::Unavailable { at_k: kj + 1 });
        }
        let term = phi.gram();
        last = term.frobenius();
        q = q.add(&term);
    }
    if horizon.is_none() && rate.is_none() && m > 0 && last > 1e-12 * q.frobenius() {
        return Err(ContractionError::Truncation {
            last,
            total: q.frobenius(),
        });
    }
    let tail_bound = rate.map(|(kappa, lambda)| {
        let l2 = lambda * lambda;
        kappa * kappa * lambda.powi(-2 * m as i32) * l2 / (l2 - 1.0) * n as f64
    });
    Ok(QBuild {
        q,
        horizon: m,
        tail_bound,
    })
}

/// Upper-triangular `Θ` with `ΘᵀΘ = Q`.
pub fn theta_from_q(q: &SymMatrix) -> Result<Matrix, MatrixError> {
    cholesky(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveLength {
    pub k0: i64,
    pub k: i64,
    pub length: f64,
    pub nodes: usize,
}

/// `l(k) = ∫₀¹ √(γ'ᵀ Q γ') ds` along `γ_k(s) = φ(k; k₀, sξ₁ + (1−s)ξ₂)`,
/// by Gauss–Legendre quadrature with `quad_n` nodes.
pub fn curve_length(
    def: &SystemDef,
    metric: &MetricField,
    xi1: &[f64],
    xi2: &[f64],
    k0: i64,
    k: i64,
    quad_n: usize,
) -> Result<CurveLength, ContractionError> {
    if quad_n < 2 {
        return Err(AnalysisError::InvalidInput("curve length needs at least two nodes".into()).into());
    }
    if k < k0 {
        return Err(ContractionError::from(DynamicsError::NegativeSpan { k0, k }));
    }
    let delta: Vec<f64> = xi1.iter().zip(xi2).map(|(a, b)| a - b).collect();
    let (nodes, weights) = gauss_legendre(quad_n);
    let values: Vec<Result<f64, ContractionError>> = nodes
        .par_iter()
        .zip(&weights)
        .map(|(&s, &w)| {
            let start: Vec<f64> = xi1.iter().zip(xi2).map(|(a, b)| s * a + (1.0 - s) * b).collect();
            let traj = simulate(def, k0, &start, (k - k0) as usize)?;
            if let Some(mark) = &traj.overflow {
                return Err(ContractionError::Unavailable { at_k: mark.at_k });
            }
            let phi = transfer_along(def, &traj, k0, k, JacobianMethod::Ad)?;
            let tangent = phi.mul_vec(&delta);
            let q = metric.q(def, k, traj.last())?;
            Ok(w * q.quad_form(&tangent).max(0.0).sqrt())
        })
        .collect();
    let mut total = 0.0;
    let mut failed = Vec::new();
    for (v, s) in values.into_iter().zip(&nodes) {
        match v {
            Ok(v) => total += v,
            Err(_) => failed.push(*s),
        }
    }
    if !failed.is_empty() {
        return Err(ContractionError::NodeFailures(failed));
    }
    Ok(CurveLength {
        k0,
        k,
        length: total,
        nodes: quad_n,
    })
}

/// Gauss–Legendre nodes and weights on `[0, 1]`, by Newton iteration on
/// the Legendre polynomial.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}
