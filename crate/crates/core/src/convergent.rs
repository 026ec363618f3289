//! Convergent dynamics: a bounded reference solution found by washout,
//! attraction of other solutions to it, uniqueness probes and Lyapunov
//! candidate checks against the reference.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{CandidateMode, CandidateV, SystemDef};
use crate::dynamics::{simulate, DynamicsError, Trajectory};
use crate::error::AnalysisError;
use crate::incremental::{
    default_window, falsify_series, fit_exp_rate, require_mode, Envelope, Inequality, RateFit, SeparationSeries,
    DEFAULT_GROWTH_THRESHOLD,
};
use crate::matrix::{distance, norm};
use crate::sampling::{Grid, StateBox, TimeRange};
use crate::verdict::{PointIssue, Verdict, Witness};

/// Largest sup-norm still accepted as bounded.
pub const BOUNDED_LIMIT: f64 = 1e6;

/// Far times at which the washed-out reference must also stay bounded.
pub const FAR_TIMES: [i64; 10] = [
    1_000,
    -1_000,
    10_000,
    -10_000,
    100_000,
    -100_000,
    1_000_000,
    -1_000_000,
    10_000_000,
    -10_000_000,
];

/// Bounded solution `x̄` restricted to a finite window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub trajectory: Trajectory,
    /// `sup |x̄(k)|` over the window.
    pub bound: f64,
    pub washout: usize,
    /// Largest pairwise distance between probes at the window start.
    pub agreement: f64,
    pub tol: f64,
    /// Index of the probe whose continuation is stored.
    pub probe: usize,
}

impl ReferenceTrajectory {
    pub fn window(&self) -> TimeRange {
        TimeRange {
            start: self.trajectory.k0,
            end: self.trajectory.end_k(),
        }
    }

    pub fn at(&self, k: i64) -> Option<&[f64]> {
        self.trajectory.at(k)
    }

    /// Rows `k, x1, …, xn` with a header line.
    pub fn to_csv_string(&self) -> String {
        let n = self.trajectory.states.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        w.write_record(&header).expect("writing to memory");
        for (i, s) in self.trajectory.states.iter().enumerate() {
            let mut row = vec![(self.trajectory.k0 + i as i64).to_string()];
            row.extend(s.iter().map(|v| format!("{v:e}")));
            w.write_record(&row).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("csv output is utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceFailure {
    #[error("probe {probe} overflowed during washout at k = {at_k}")]
    DivergedProbes { probe: usize, at_k: i64 },
    #[error("probes did not agree: max pairwise distance {0:e} at the window start")]
    NoAgreement(f64),
    #[error("reference is unbounded: |x| = {norm:e} at k = {k}")]
    Unbounded { k: i64, norm: f64 },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl From<DynamicsError> for ReferenceFailure {
    fn from(e: DynamicsError) -> Self {
        ReferenceFailure::Analysis(e.into())
    }
}

/// The origin plus up to eight points on the boundary of `[-r, r]ⁿ`: axis
/// points first, then corners.
pub fn default_probes(n: usize, r: f64) -> Vec<Vec<f64>> {
    let mut probes = vec![vec![0.0; n]];
    let axis_points = (0..n).flat_map(|i| {
        [r, -r].map(|v| {
            let mut p = vec![0.0; n];
            p[i] = v;
            p
        })
    });
    let corners = (0u64..1 << n.min(16)).map(|bits| {
        (0..n)
            .map(|i| if i < 64 && bits >> i & 1 == 1 { -r } else { r })
            .collect::<Vec<f64>>()
    });
    for p in axis_points.chain(corners) {
        if probes.len() == 9 {
            break;
        }
        if !probes.contains(&p) {
            probes.push(p);
        }
    }
    probes
}

/// Washes out every probe from `k_start − m`, requires agreement within
/// `tol` at `k_start`, and keeps the continuation of the median-norm probe.
///
/// Boundedness is checked over the window and again at each of
/// [`FAR_TIMES`], where a probe is washed out over `m` steps ending there.
pub fn find_reference(
    def: &SystemDef,
    window: TimeRange,
    washout: usize,
    probes: &[Vec<f64>],
    tol: f64,
) -> Result<ReferenceTrajectory, ReferenceFailure> {
    if washout == 0 {
        return Err(AnalysisError::InvalidInput("washout must be at least 1".into()).into());
    }
    if probes.is_empty() {
        return Err(AnalysisError::InvalidInput("no probes given".into()).into());
    }
    let span = (window.end - window.start) as usize;
    let runs: Vec<Result<Trajectory, DynamicsError>> = probes
        .par_iter()
        .map(|p| simulate(def, window.start - washout as i64, p, washout + span))
        .collect();
    let mut trajs = Vec::with_capacity(runs.len());
    for (i, r) in runs.into_iter().enumerate() {
        let t = r?;
        if let Some(mark) = &t.overflow {
            if mark.at_k <= window.start {
                return Err(ReferenceFailure::DivergedProbes {
                    probe: i,
                    at_k: mark.at_k,
                });
            }
            return Err(ReferenceFailure::Unbounded {
                k: mark.at_k,
                norm: f64::INFINITY,
            });
        }
        trajs.push(t);
    }
    let starts: Vec<&[f64]> = trajs.iter().map(|t| &t.states[washout][..]).collect();
    let mut agreement = 0.0f64;
    for i in 0..starts.len() {
        for j in i + 1..starts.len() {
            agreement = agreement.max(distance(starts[i], starts[j]));
        }
    }
    if !(agreement <= tol) {
        return Err(ReferenceFailure::NoAgreement(agreement));
    }
    let mut order: Vec<usize> = (0..starts.len()).collect();
    order.sort_by(|&a, &b| norm(starts[a]).total_cmp(&norm(starts[b])).then(a.cmp(&b)));
    let probe = order[(order.len() - 1) / 2];
    let trajectory = Trajectory {
        k0: window.start,
        states: trajs[probe].states[washout..].to_vec(),
        overflow: None,
    };
    let (bound, k_max) = sup_with_time(&trajectory);
    if bound > BOUNDED_LIMIT {
        return Err(ReferenceFailure::Unbounded { k: k_max, norm: bound });
    }
    let far: Vec<Result<(i64, f64), DynamicsError>> = FAR_TIMES
        .par_iter()
        .map(|&k| {
            let t = simulate(def, k - washout as i64, &probes[probe], washout)?;
            Ok(if t.is_truncated() {
                (k, f64::INFINITY)
            } else {
                (k, norm(t.last()))
            })
        })
        .collect();
    for r in far {
        let (k, v) = r?;
        if !(v <= BOUNDED_LIMIT) {
            return Err(ReferenceFailure::Unbounded { k, norm: v });
        }
    }
    Ok(ReferenceTrajectory {
        trajectory,
        bound,
        washout,
        agreement,
        tol,
        probe,
    })
}

fn sup_with_time(t: &Trajectory) -> (f64, i64) {
    t.states
        .iter()
        .enumerate()
        .map(|(i, s)| (norm(s), t.k0 + i as i64))
        .fold((0.0, t.k0), |acc, v| if v.0 > acc.0 { v } else { acc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub verdict: Verdict,
    pub envelope: Envelope,
    pub fit: Option<RateFit>,
    #[serde(skip)]
    pub series: Vec<SeparationSeries>,
}

impl ConvergenceReport {
    /// Largest deviation at each lag over all samples.
    pub fn lag_maxima(&self) -> Vec<f64> {
        (0..self.envelope.lags())
            .map(|d| self.envelope.table[d].last().copied().unwrap_or(0.0))
            .collect()
    }

    /// CSV with header `lag,max_deviation`.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lag", "max_deviation"]).expect("writing to memory");
        for (d, v) in self.lag_maxima().into_iter().enumerate() {
            w.write_record([d.to_string(), format!("{v:e}")])
                .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("csv output is utf-8")
    }
}

/// Deviation series `|φ(k; k₀, ξ) − x̄(k)|` for every sample.
///
/// The series reuse [`SeparationSeries`] with `xi2 = x̄(k₀)`. The result is
/// falsified by the same witnesses as [`crate::incremental::falsify_pairs`],
/// certified on the samples when every deviation is non-increasing and
/// ends strictly below a positive start, and inconclusive otherwise.
pub fn check_convergence(
    def: &SystemDef,
    reference: &ReferenceTrajectory,
    samples: &[(i64, Vec<f64>)],
    horizon: usize,
) -> Result<ConvergenceReport, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::InvalidInput("no samples to analyse".into()));
    }
    let window = reference.window();
    for (k0, _) in samples {
        if *k0 < window.start || *k0 + horizon as i64 > window.end {
            return Err(AnalysisError::InvalidInput(format!(
                "start time {k0} with horizon {horizon} leaves the reference window [{}, {}]",
                window.start, window.end
            )));
        }
    }
    let runs: Vec<Result<Trajectory, DynamicsError>> = samples
        .par_iter()
        .map(|(k0, xi)| simulate(def, *k0, xi, horizon))
        .collect();
    let mut series = Vec::with_capacity(samples.len());
    for ((k0, xi), r) in samples.iter().zip(runs) {
        let t = r?;
        let seps = t
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| distance(s, reference.at(k0 + i as i64).expect("inside window")))
            .collect();
        series.push(SeparationSeries {
            xi1: xi.clone(),
            xi2: reference.at(*k0).expect("inside window").to_vec(),
            k0: *k0,
            seps,
            overflow: t.is_truncated(),
        });
    }
    let envelope = Envelope::from_series(&series, horizon);
    let fit = if horizon >= 1 {
        fit_exp_rate(&series, default_window(horizon)).ok()
    } else {
        None
    };
    let verdict = match falsify_series(&series, horizon, DEFAULT_GROWTH_THRESHOLD) {
        Some(w) => Verdict::falsified(w, series.len()),
        None if horizon >= 1 && series.iter().all(attracted) => {
            let max_ratio = series
                .iter()
                .filter(|s| s.initial() > 0.0)
                .map(|s| s.seps[horizon] / s.initial())
                .fold(0.0, f64::max);
            let mut v = Verdict::certified([("max_ratio", max_ratio)], series.len());
            if let Some(f) = fit.as_ref().filter(|f| !f.degenerate) {
                v.constants.insert("kappa".into(), f.kappa);
                v.constants.insert("lambda".into(), f.lambda);
                v.constants.insert("fit_residual".into(), f.residual);
            }
            v
        }
        None => Verdict::inconclusive(series.len()),
    };
    Ok(ConvergenceReport {
        verdict,
        envelope,
        fit,
        series,
    })
}

const MONOTONE_RTOL: f64 = 1e-12;

fn attracted(s: &SeparationSeries) -> bool {
    if s.overflow {
        return false;
    }
    let scale = s.initial().max(f64::MIN_POSITIVE);
    let monotone = s.seps.windows(2).all(|w| w[1] <= w[0] + MONOTONE_RTOL * scale);
    let last = *s.seps.last().expect("series holds lag 0");
    monotone && (s.initial() == 0.0 || last < s.initial())
}

/// Starts each alternative probe `L` steps before the window and measures
/// its distance to `x̄` at the window start.
pub fn uniqueness_probe(
    def: &SystemDef,
    reference: &ReferenceTrajectory,
    alt_probes: &[Vec<f64>],
    lookback: usize,
    tol: f64,
) -> Result<Verdict, AnalysisError> {
    if lookback == 0 {
        return Err(AnalysisError::InvalidInput("lookback must be at least 1".into()));
    }
    let k_start = reference.trajectory.k0;
    let target = &reference.trajectory.states[0];
    let k0 = k_start - lookback as i64;
    let runs: Vec<Result<Trajectory, DynamicsError>> =
        alt_probes.par_iter().map(|p| simulate(def, k0, p, lookback)).collect();
    let mut issues = Vec::new();
    let mut worst: Option<(f64, usize)> = None;
    let mut used = 0;
    for (i, r) in runs.into_iter().enumerate() {
        let t = r?;
        if t.is_truncated() || norm(t.last()) > BOUNDED_LIMIT {
            issues.push(PointIssue {
                k: k0,
                x: alt_probes[i].clone(),
                message: "probe did not stay bounded".into(),
            });
            continue;
        }
        used += 1;
        let res = distance(t.last(), target);
        if worst.is_none_or(|(w, _)| res > w) {
            worst = Some((res, i));
        }
    }
    let mut verdict = match worst {
        None => Verdict::inconclusive(0),
        Some((res, _)) if res <= tol => Verdict::certified([("max_residual", res)], used),
        Some((res, i)) => Verdict::falsified(
            Witness {
                xi1: alt_probes[i].clone(),
                xi2: Some(target.clone()),
                k0,
                k: k_start,
                observed: res,
                allowed: tol,
                note: "a bounded probe did not reach the reference".into(),
            },
            used,
        ),
    };
    verdict.issues = issues;
    Ok(verdict)
}

/// Checks, at every grid point, `α₁(|x−x̄(k)|) ≤ V(k,x) ≤ α₂(|x−x̄(k)|)`,
/// `V(k+1, f(k,x)) − V(k,x) ≤ −α₃(|x−x̄(k)|)`, and, for each grid time,
/// `V(k,0) ≤ c` when the candidate declares `c0`.
pub fn verify_convergent_lyapunov(
    def: &SystemDef,
    cand: &CandidateV,
    reference: &ReferenceTrajectory,
    grid: &Grid,
) -> Result<Verdict, AnalysisError> {
    require_mode(cand, CandidateMode::Convergent)?;
    if cand.n > def.n {
        return Err(AnalysisError::DimensionMismatch {
            expected: def.n,
            found: cand.n,
        });
    }
    let window = reference.window();
    if let Some((k, _)) = grid.points.iter().find(|(k, _)| *k < window.start || *k >= window.end) {
        return Err(AnalysisError::InvalidInput(format!(
            "grid time {k} is outside the reference window [{}, {})",
            window.start, window.end
        )));
    }
    let evaluated: Vec<Result<[Inequality; 3], String>> = grid
        .points
        .par_iter()
        .map(|(k, x)| {
            convergent_point(def, cand, *k, x, reference.at(*k).expect("inside window")).map_err(|e| e.to_string())
        })
        .collect();

    let mut issues = Vec::new();
    let mut worst: Option<(f64, Witness)> = None;
    let mut min_slack = f64::INFINITY;
    let mut checked = 0;
    for ((k, x), r) in grid.points.iter().zip(evaluated) {
        let ineqs = match r {
            Ok(v) => v,
            Err(message) => {
                issues.push(PointIssue {
                    k: *k,
                    x: x.clone(),
                    message,
                });
                continue;
            }
        };
        checked += 1;
        for q in ineqs {
            let excess = q.excess();
            min_slack = min_slack.min(-excess);
            if excess > 0.0 && worst.as_ref().is_none_or(|(e, _)| excess > *e) {
                worst = Some((
                    excess,
                    Witness {
                        xi1: x.clone(),
                        xi2: None,
                        k0: *k,
                        k: k + 1,
                        observed: q.observed,
                        allowed: q.allowed,
                        note: q.label.to_string(),
                    },
                ));
            }
        }
    }

    let zero = vec![0.0; def.n];
    let times: BTreeSet<i64> = grid.points.iter().map(|(k, _)| *k).collect();
    let mut max_origin = f64::NEG_INFINITY;
    for &k in &times {
        match cand.eval(k, &zero, &[]) {
            Ok(v) => {
                max_origin = max_origin.max(v);
                if let Some(c) = cand.origin_bound {
                    let q = Inequality {
                        observed: v,
                        allowed: c,
                        scale: v.abs().max(c.abs()),
                        label: "origin bound V(k,0) <= c fails",
                    };
                    let excess = q.excess();
                    if excess > 0.0 && worst.as_ref().is_none_or(|(e, _)| excess > *e) {
                        worst = Some((
                            excess,
                            Witness {
                                xi1: zero.clone(),
                                xi2: None,
                                k0: k,
                                k,
                                observed: v,
                                allowed: c,
                                note: q.label.to_string(),
                            },
                        ));
                    }
                }
            }
            Err(e) => issues.push(PointIssue {
                k,
                x: zero.clone(),
                message: e.to_string(),
            }),
        }
    }

    let mut verdict = match worst {
        Some((_, w)) => Verdict::falsified(w, checked),
        None if checked == 0 => Verdict::inconclusive(0),
        None => {
            let mut v = Verdict::certified([("min_relative_slack", min_slack)], checked);
            if max_origin.is_finite() {
                v.constants.insert("max_v_at_origin".into(), max_origin);
            }
            v.constants.insert("reference_bound".into(), reference.bound);
            v
        }
    };
    verdict.issues = issues;
    Ok(verdict)
}

fn convergent_point(
    def: &SystemDef,
    cand: &CandidateV,
    k: i64,
    x: &[f64],
    xbar: &[f64],
) -> Result<[Inequality; 3], AnalysisError> {
    let s = distance(x, xbar);
    let v0 = cand.eval(k, x, &[])?;
    let fx = def.eval_map(k, x)?;
    let v1 = cand.eval(k + 1, &fx, &[])?;
    let [a1, a2, a3] = cand.alpha.map(|a| a.eval(s));
    let scale = v0.abs().max(v1.abs()).max(a2);
    Ok([
        Inequality {
            observed: a1,
            allowed: v0,
            scale,
            label: "lower bound alpha1(|x-xbar(k)|) <= V fails",
        },
        Inequality {
            observed: v0,
            allowed: a2,
            scale,
            label: "upper bound V <= alpha2(|x-xbar(k)|) fails",
        },
        Inequality {
            observed: v1 - v0,
            allowed: -a3,
            scale,
            label: "decrease V(k+1) - V(k) <= -alpha3(|x-xbar(k)|) fails",
        },
    ])
}

/// Convenience: uniform random `(k, ξ)` samples whose start times leave room
/// for `horizon` steps inside the reference window.
pub fn convergence_samples(
    reference: &ReferenceTrajectory,
    bx: &StateBox,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(i64, Vec<f64>)>, AnalysisError> {
    let w = reference.window();
    let last = w.end - horizon as i64;
    let times = TimeRange::new(w.start, last)?;
    Ok(Grid::random(bx, count, times, seed).points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_candidate, parse_system};
    use crate::verdict::Status;

    fn affine() -> SystemDef {
        parse_system("dim 1; f1 = 0.5*x1 + sin(k)").unwrap()
    }

    fn ex1() -> SystemDef {
        parse_system(
            "dim 2\n\
             f1 = 0.5*(cos(sqrt(x1^2+x2^2))*x1 - sin(sqrt(x1^2+x2^2))*x2)\n\
             f2 = 0.5*(sin(sqrt(x1^2+x2^2))*x1 + cos(sqrt(x1^2+x2^2))*x2)",
        )
        .unwrap()
    }

    fn ex3() -> SystemDef {
        parse_system("dim 1; f1 = x1/sqrt(x1^2+1)").unwrap()
    }

    fn affine_oracle(k: i64) -> f64 {
        (1..=80)
            .map(|j| 0.5f64.powi(j - 1) * ((k - j as i64) as f64).sin())
            .sum()
    }

    #[test]
    fn affine_reference_matches_series() {
        let probes = vec![vec![-10.0], vec![0.0], vec![10.0]];
        let r = find_reference(&affine(), TimeRange::new(0, 50).unwrap(), 60, &probes, 1e-9).unwrap();
        assert_eq!(r.trajectory.len(), 51);
        for k in 0..=50 {
            assert!((r.at(k).unwrap()[0] - affine_oracle(k)).abs() < 1e-9, "k={k}");
        }
        assert_eq!(r.probe, 1);
        assert!(r.bound <= 2.0);
    }

    #[test]
    fn example_two_has_no_bounded_solution() {
        let def = parse_system("dim 1; f1 = -k/2 - 1 + x1/2").unwrap();
        let probes = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let r = find_reference(&def, TimeRange::new(0, 100).unwrap(), 100, &probes, 1e-7);
        assert!(matches!(r, Err(ReferenceFailure::Unbounded { .. })), "{r:?}");
    }

    #[test]
    fn example_three_reference_is_zero() {
        let probes = default_probes(1, 1.0);
        let r = find_reference(&ex3(), TimeRange::new(0, 100).unwrap(), 100, &probes, 0.25).unwrap();
        assert!(r.bound < 0.11);
        let probes = vec![vec![0.0]];
        let r = find_reference(&ex3(), TimeRange::new(0, 10).unwrap(), 10, &probes, 1e-12).unwrap();
        assert!(r.trajectory.states.iter().all(|s| s[0] == 0.0));
    }

    #[test]
    fn washout_too_short_for_identity() {
        let def = parse_system("dim 1; f1 = x1").unwrap();
        let r = find_reference(&def, TimeRange::new(0, 10).unwrap(), 10, &[vec![0.0], vec![1.0]], 1e-6);
        assert!(matches!(r, Err(ReferenceFailure::NoAgreement(d)) if (d - 1.0).abs() < 1e-12));
    }

    #[test]
    fn example_three_deviations() {
        let reference = find_reference(&ex3(), TimeRange::new(0, 10).unwrap(), 5, &[vec![0.0]], 1e-12).unwrap();
        let rep = check_convergence(&ex3(), &reference, &[(0, vec![1.0])], 4).unwrap();
        let want = [1.0, 0.5f64.sqrt(), (1.0f64 / 3.0).sqrt(), 0.5, 0.2f64.sqrt()];
        for (a, b) in rep.series[0].seps.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(rep.verdict.status, Status::Certified);
    }

    #[test]
    fn example_one_halves() {
        let reference = find_reference(
            &ex1(),
            TimeRange::new(0, 60).unwrap(),
            100,
            &default_probes(2, 1.0),
            1e-7,
        )
        .unwrap();
        let samples = convergence_samples(&reference, &StateBox::cube(2, 7.0), 20, 200, 3).unwrap();
        let rep = check_convergence(&ex1(), &reference, &samples, 20).unwrap();
        for s in &rep.series {
            for (d, v) in s.seps.iter().enumerate() {
                let want = norm(&s.xi1) / 2f64.powi(d as i32);
                assert!((v - want).abs() <= 1e-12 * norm(&s.xi1) + 1e-20);
            }
        }
        assert_eq!(rep.verdict.status, Status::Certified);
        let fit = rep.fit.as_ref().unwrap();
        assert!((fit.lambda - 2.0).abs() < 1e-6 && fit.exponential);
        assert!(rep.to_csv_string().starts_with("lag,max_deviation\n"));
    }

    #[test]
    fn on_reference_deviation_is_zero() {
        let reference = find_reference(
            &affine(),
            TimeRange::new(0, 30).unwrap(),
            60,
            &[vec![0.0], vec![1.0]],
            1e-9,
        )
        .unwrap();
        let xi = reference.at(5).unwrap().to_vec();
        let rep = check_convergence(&affine(), &reference, &[(5, xi)], 10).unwrap();
        assert!(rep.series[0].seps.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn uniqueness() {
        let reference = find_reference(
            &affine(),
            TimeRange::new(0, 30).unwrap(),
            60,
            &[vec![0.0], vec![1.0]],
            1e-9,
        )
        .unwrap();
        let v = uniqueness_probe(&affine(), &reference, &[vec![-100.0], vec![100.0]], 60, 1e-12).unwrap();
        assert!(v.is_certified());
        assert!(v.constants["max_residual"] <= 100.0 * 0.5f64.powi(60) + 1e-15);

        let reference = find_reference(&ex3(), TimeRange::new(0, 10).unwrap(), 5, &[vec![0.0]], 1e-12).unwrap();
        let v = uniqueness_probe(&ex3(), &reference, &[vec![-0.5], vec![0.5]], 10_000, 0.011).unwrap();
        assert!(v.is_certified());
        let res = v.constants["max_residual"];
        assert!(res > 0.009 && res <= 0.01, "{res}");

        let v = uniqueness_probe(&ex3(), &reference, &[vec![0.5]], 10_000, 1e-3).unwrap();
        assert!(v.is_falsified());
    }

    #[test]
    fn convergent_candidates() {
        let grid = Grid::random(&StateBox::cube(2, 10.0), 10_000, TimeRange::new(0, 9).unwrap(), 1);
        let zero_ref = |def: &SystemDef| {
            find_reference(def, TimeRange::new(0, 10).unwrap(), 200, &[vec![0.0; def.n]], 1e-12).unwrap()
        };
        let cand = parse_candidate("mode convergent; V = x1^2 + x2^2; a1 = s^2; a2 = s^2; a3 = 0.75*s^2").unwrap();
        let v = verify_convergent_lyapunov(&ex1(), &cand, &zero_ref(&ex1()), &grid).unwrap();
        assert_eq!(v.status, Status::Certified);

        let grid1 = Grid::tensor(&StateBox::cube(1, 1.0), 201, TimeRange::single(0));
        let cand = parse_candidate("mode convergent; V = x1^2; a1 = s^2; a2 = s^2; a3 = 0.75*s^2").unwrap();
        let v = verify_convergent_lyapunov(&ex3(), &cand, &zero_ref(&ex3()), &grid1).unwrap();
        assert_eq!(v.status, Status::Falsified);
        assert!(v.witness.as_ref().unwrap().note.contains("decrease"));

        let cand = parse_candidate("mode convergent; V = x1^2; a1 = s^2; a2 = s^2; a3 = 0.5*s^4").unwrap();
        let v = verify_convergent_lyapunov(&ex3(), &cand, &zero_ref(&ex3()), &grid1).unwrap();
        assert_eq!(v.status, Status::Certified);
    }

    #[test]
    fn origin_bound_is_checked() {
        let def = parse_system("dim 1; f1 = 0.5*x1").unwrap();
        let reference = find_reference(&def, TimeRange::new(0, 10).unwrap(), 10, &[vec![0.0]], 1e-12).unwrap();
        let grid = Grid::tensor(&StateBox::cube(1, 1.0), 11, TimeRange::new(0, 3).unwrap());
        let ok = parse_candidate("mode convergent; V = x1^2; a1 = s^2; a2 = s^2; a3 = 0.75*s^2; c0 = 0").unwrap();
        assert!(verify_convergent_lyapunov(&def, &ok, &reference, &grid)
            .unwrap()
            .is_certified());
        let incr = parse_candidate("mode incremental; V = (x1-y1)^2; a1 = s^2; a2 = s^2; a3 = s^2").unwrap();
        assert!(verify_convergent_lyapunov(&def, &incr, &reference, &grid).is_err());
    }
}
