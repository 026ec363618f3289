//! Evidence for and against uniform (exponential) incremental stability:
//! pairwise separation sampling, empirical KL envelopes, exponential rate
//! fits and incremental Lyapunov candidate checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{CandidateMode, CandidateV, SystemDef};
use crate::dynamics::simulate;
use crate::error::AnalysisError;
use crate::matrix::{distance, norm};
use crate::sampling::{index_rng, PairGrid, StateBox, TimeRange};
use crate::verdict::{PointIssue, Status, Verdict, Witness};

/// Default factor by which a pair must outgrow its initial separation before
/// it can serve as a witness.
pub const DEFAULT_GROWTH_THRESHOLD: f64 = 10.0;

const TIE_RTOL: f64 = 1e-9;

/// Relative tolerance applied to Lyapunov inequalities.
pub const LYAPUNOV_RTOL: f64 = 1e-9;

/// One initial pair and start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub k0: i64,
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
}

/// `|φ(k; k₀, ξ₁) − φ(k; k₀, ξ₂)|` for `k = k₀ … k₀ + K`.
///
/// When either solution overflows, `seps` stops early and `overflow` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationSeries {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    pub k0: i64,
    pub seps: Vec<f64>,
    pub overflow: bool,
}

impl SeparationSeries {
    pub fn initial(&self) -> f64 {
        self.seps[0]
    }

    /// Separation at lag `d`, infinite past an overflow.
    pub fn at(&self, d: usize) -> f64 {
        match self.seps.get(d) {
            Some(v) => *v,
            None if self.overflow => f64::INFINITY,
            None => f64::NAN,
        }
    }
}

/// Builds the separation series of one pair.
pub fn separation_series(def: &SystemDef, pair: &PairSpec, horizon: usize) -> Result<SeparationSeries, AnalysisError> {
    let a = simulate(def, pair.k0, &pair.xi1, horizon)?;
    let b = simulate(def, pair.k0, &pair.xi2, horizon)?;
    let len = a.len().min(b.len());
    let seps = (0..len).map(|i| distance(&a.states[i], &b.states[i])).collect();
    Ok(SeparationSeries {
        xi1: pair.xi1.clone(),
        xi2: pair.xi2.clone(),
        k0: pair.k0,
        seps,
        overflow: a.is_truncated() || b.is_truncated(),
    })
}

/// Stratified pair sample: even indices draw a base point anywhere in the
/// box and a partner within unit distance of it; odd indices draw two
/// independent points.
pub fn sample_pairs(bx: &StateBox, k0_range: TimeRange, budget: usize, seed: u64) -> Vec<PairSpec> {
    (0..budget)
        .map(|i| {
            let mut rng = index_rng(seed, i as u64);
            let k0 = k0_range.sample(&mut rng);
            let xi1 = bx.sample(&mut rng);
            let xi2 = if i % 2 == 0 {
                let mut dir: Vec<f64> = (0..bx.dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let len = norm(&dir);
                if len == 0.0 {
                    dir[0] = 1.0;
                } else {
                    dir.iter_mut().for_each(|v| *v /= len);
                }
                let r: f64 = rng.random_range(0.0..=1.0);
                xi1.iter().zip(&dir).map(|(a, d)| a + r * d).collect()
            } else {
                bx.sample(&mut rng)
            };
            PairSpec { k0, xi1, xi2 }
        })
        .collect()
}

use rand::Rng;

/// Empirical KL envelope `e(s, d)`: the largest separation at lag `d` over
/// all sampled pairs whose initial separation is at most `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Initial separations, ascending.
    pub s_values: Vec<f64>,
    /// `table[d][i] = max { sep_j(d) : s_j ≤ s_values[i] }`.
    pub table: Vec<Vec<f64>>,
}

impl Envelope {
    pub fn from_series(series: &[SeparationSeries], horizon: usize) -> Self {
        let mut order: Vec<usize> = (0..series.len()).collect();
        order.sort_by(|&a, &b| series[a].initial().total_cmp(&series[b].initial()));
        let s_values = order.iter().map(|&i| series[i].initial()).collect();
        let table = (0..=horizon)
            .map(|d| {
                let mut running = 0.0f64;
                order
                    .iter()
                    .map(|&i| {
                        let v = series[i].at(d);
                        if !v.is_nan() {
                            running = running.max(v);
                        }
                        running
                    })
                    .collect()
            })
            .collect();
        Self { s_values, table }
    }

    pub fn lags(&self) -> usize {
        self.table.len()
    }

    /// `e(s, d)`; zero when no sampled pair starts within `s`.
    pub fn eval(&self, s: f64, d: usize) -> f64 {
        let idx = self.s_values.partition_point(|v| *v <= s);
        if idx == 0 || d >= self.table.len() {
            return 0.0;
        }
        self.table[d][idx - 1]
    }

    /// Geometric bucket edges between the smallest positive and the largest
    /// sampled initial separation.
    pub fn buckets(&self, count: usize) -> Vec<f64> {
        let positive: Vec<f64> = self.s_values.iter().copied().filter(|v| *v > 0.0).collect();
        let (Some(&lo), Some(&hi)) = (positive.first(), positive.last()) else {
            return Vec::new();
        };
        if count <= 1 || lo == hi {
            return vec![hi];
        }
        let ratio = (hi / lo).ln();
        let mut edges: Vec<f64> = (0..count)
            .map(|i| lo * (ratio * i as f64 / (count - 1) as f64).exp())
            .collect();
        *edges.last_mut().expect("count > 1") = hi;
        edges
    }

    /// Rows `(s_bucket, lag, max_sep)`.
    pub fn rows(&self, buckets: usize) -> Vec<(f64, usize, f64)> {
        let edges = self.buckets(buckets);
        (0..self.lags())
            .flat_map(|d| edges.iter().map(move |&s| (s, d, self.eval(s, d))))
            .collect()
    }

    /// CSV with header `s_bucket,lag,max_sep`.
    pub fn write_csv<W: std::io::Write>(&self, out: W, buckets: usize) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s_bucket", "lag", "max_sep"])?;
        for (s, d, v) in self.rows(buckets) {
            w.write_record([format!("{s:e}"), d.to_string(), format!("{v:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, buckets: usize) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, buckets).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalReport {
    pub verdict: Verdict,
    pub envelope: Envelope,
    #[serde(skip)]
    pub series: Vec<SeparationSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifyConfig {
    pub bx: StateBox,
    pub k0_range: TimeRange,
    pub horizon: usize,
    pub budget: usize,
    pub seed: u64,
    pub growth_threshold: f64,
}

impl FalsifyConfig {
    pub fn new(bx: StateBox, horizon: usize, budget: usize, seed: u64) -> Self {
        Self {
            bx,
            k0_range: TimeRange::single(0),
            horizon,
            budget,
            seed,
            growth_threshold: DEFAULT_GROWTH_THRESHOLD,
        }
    }
}

/// Samples pairs from the configured box and looks for a pair that no KL
/// envelope can accommodate. Sampling alone never certifies: without a
/// witness the result is `Inconclusive` together with the empirical
/// envelope.
pub fn falsify_incremental(def: &SystemDef, cfg: &FalsifyConfig) -> Result<IncrementalReport, AnalysisError> {
    if cfg.budget == 0 {
        return Err(AnalysisError::InvalidInput("budget must be at least 1".into()));
    }
    if cfg.bx.dim() != def.n {
        return Err(AnalysisError::DimensionMismatch {
            expected: def.n,
            found: cfg.bx.dim(),
        });
    }
    let pairs = sample_pairs(&cfg.bx, cfg.k0_range, cfg.budget, cfg.seed);
    falsify_pairs(def, &pairs, cfg.horizon, cfg.growth_threshold)
}

/// Same analysis as [`falsify_incremental`] over an explicit pair list.
///
/// A pair `A` is a witness at lag `d` when either
/// * one of its solutions overflows, or its separation grows strictly over
///   the last half of the horizon and ends above `growth_threshold · s_A`;
/// * `sep_A(d) > growth_threshold · s_A` while some pair `B` with
///   `s_B ≥ s_A` has `sep_B(d) < sep_A(d)`.
pub fn falsify_pairs(
    def: &SystemDef,
    pairs: &[PairSpec],
    horizon: usize,
    growth_threshold: f64,
) -> Result<IncrementalReport, AnalysisError> {
    if pairs.is_empty() {
        return Err(AnalysisError::InvalidInput("no pairs to analyse".into()));
    }
    let results: Vec<_> = pairs.par_iter().map(|p| separation_series(def, p, horizon)).collect();
    let mut series = Vec::with_capacity(pairs.len());
    let mut issues = Vec::new();
    for (p, r) in pairs.iter().zip(results) {
        match r {
            Ok(s) => series.push(s),
            Err(AnalysisError::Dynamics(crate::dynamics::DynamicsError::Eval(e))) => issues.push(PointIssue {
                k: p.k0,
                x: p.xi1.clone(),
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let envelope = Envelope::from_series(&series, horizon);
    let witness = falsify_series(&series, horizon, growth_threshold);
    let mut verdict = match witness {
        Some(w) => Verdict::falsified(w, series.len()),
        None => Verdict::inconclusive(series.len()),
    };
    verdict.issues = issues;
    Ok(IncrementalReport {
        verdict,
        envelope,
        series,
    })
}

/// Witness search shared by pair and reference analyses: divergence first,
/// then the cross-pair comparison.
pub fn falsify_series(series: &[SeparationSeries], horizon: usize, growth_threshold: f64) -> Option<Witness> {
    divergence_witness(series, horizon, growth_threshold)
        .or_else(|| cross_pair_witness(series, horizon, growth_threshold))
}

fn witness_for(s: &SeparationSeries, d: usize, observed: f64, allowed: f64, note: &str) -> Witness {
    Witness {
        xi1: s.xi1.clone(),
        xi2: Some(s.xi2.clone()),
        k0: s.k0,
        k: s.k0 + d as i64,
        observed,
        allowed,
        note: note.to_string(),
    }
}

fn divergence_witness(series: &[SeparationSeries], horizon: usize, growth: f64) -> Option<Witness> {
    let mut best: Option<(f64, Witness)> = None;
    for s in series {
        let s0 = s.initial();
        if s0 == 0.0 {
            continue;
        }
        if s.overflow {
            let d = s.seps.len();
            return Some(witness_for(
                s,
                d,
                f64::INFINITY,
                growth * s0,
                "solution overflowed: separation diverges",
            ));
        }
        let tail = horizon.div_ceil(2).max(1);
        if horizon == 0 || s.seps.len() <= tail {
            continue;
        }
        let last = s.seps.len() - 1;
        let growing = s.seps[last - tail..].windows(2).all(|w| w[1] > w[0]);
        let ratio = s.seps[last] / (growth * s0);
        if growing && ratio > 1.0 && best.as_ref().is_none_or(|(r, _)| ratio > *r) {
            best = Some((
                ratio,
                witness_for(
                    s,
                    last,
                    s.seps[last],
                    growth * s0,
                    "separation grows monotonically over the last half of the horizon",
                ),
            ));
        }
    }
    best.map(|(_, w)| w)
}

fn cross_pair_witness(series: &[SeparationSeries], horizon: usize, growth: f64) -> Option<Witness> {
    let mut order: Vec<usize> = (0..series.len()).filter(|&i| series[i].initial() > 0.0).collect();
    order.sort_by(|&a, &b| series[a].initial().total_cmp(&series[b].initial()));
    let s_sorted: Vec<f64> = order.iter().map(|&i| series[i].initial()).collect();
    let mut best: Option<(f64, Witness)> = None;
    for d in 1..=horizon {
        // suffix_min[p] = min sep(d) over sorted positions ≥ p
        let mut suffix_min = vec![f64::INFINITY; order.len() + 1];
        for p in (0..order.len()).rev() {
            let v = series[order[p]].at(d);
            suffix_min[p] = if v.is_nan() {
                suffix_min[p + 1]
            } else {
                suffix_min[p + 1].min(v)
            };
        }
        for (p, &i) in order.iter().enumerate() {
            let s = &series[i];
            let sep = s.at(d);
            let allowed = growth * s.initial();
            if !(sep > allowed) {
                continue;
            }
            // initial separations equal up to rounding count as ties
            let first_equal = s_sorted[..=p].partition_point(|v| *v < s.initial() * (1.0 - TIE_RTOL));
            if suffix_min[first_equal] < sep {
                let ratio = sep / allowed;
                if best.as_ref().is_none_or(|(r, _)| ratio > *r) {
                    best = Some((
                        ratio,
                        witness_for(
                            s,
                            d,
                            sep,
                            allowed,
                            "separation outgrew its initial value while a pair with larger initial separation ended closer",
                        ),
                    ));
                }
            }
        }
    }
    best.map(|(_, w)| w)
}

/// Least-squares fit of `sep(d) ≈ κ·s₀·λ^(−d)` pooled over series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Overshoot constant, reported as `max(1, exp(intercept))`.
    pub kappa: f64,
    /// Decay factor per step; `+∞` when separations vanish exactly.
    pub lambda: f64,
    /// Root-mean-square error of the log fit.
    pub residual: f64,
    pub window: (usize, usize),
    pub exponential: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("fit window [{0}, {1}] needs at least two lags")]
    WindowTooShort(usize, usize),
    #[error("no series covers the fit window")]
    NoData,
    #[error("a separation in the fit window is not finite")]
    NonFinite,
}

/// Minimum decay factor for the "exponential" label.
pub const EXPONENTIAL_LAMBDA: f64 = 1.05;
/// Largest log-RMS residual for the "exponential" label.
pub const EXPONENTIAL_RESIDUAL: f64 = 0.1;

pub fn fit_exp_rate(series: &[SeparationSeries], window: (usize, usize)) -> Result<RateFit, FitError> {
    let (lo, hi) = window;
    if hi <= lo {
        return Err(FitError::WindowTooShort(lo, hi));
    }
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for s in series {
        let s0 = s.initial();
        if s0 == 0.0 {
            continue;
        }
        for d in lo..=hi {
            let v = s.at(d);
            if v.is_nan() {
                break;
            }
            if !v.is_finite() {
                return Err(FitError::NonFinite);
            }
            if v == 0.0 {
                return Ok(RateFit {
                    kappa: 1.0,
                    lambda: f64::INFINITY,
                    residual: 0.0,
                    window,
                    exponential: true,
                    degenerate: true,
                });
            }
            pts.push((d as f64, (v / s0).ln()));
        }
    }
    if pts.len() < 2 {
        return Err(FitError::NoData);
    }
    let m = pts.len() as f64;
    let mean_d = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sdd: f64 = pts.iter().map(|p| (p.0 - mean_d).powi(2)).sum();
    if sdd == 0.0 {
        return Err(FitError::WindowTooShort(lo, hi));
    }
    let sdy: f64 = pts.iter().map(|p| (p.0 - mean_d) * (p.1 - mean_y)).sum();
    let slope = sdy / sdd;
    let intercept = mean_y - slope * mean_d;
    let residual = (pts
        .iter()
        .map(|(d, y)| (y - (intercept + slope * d)).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    let lambda = (-slope).exp();
    Ok(RateFit {
        kappa: intercept.exp().max(1.0),
        lambda,
        residual,
        window,
        exponential: lambda >= EXPONENTIAL_LAMBDA && residual <= EXPONENTIAL_RESIDUAL,
        degenerate: false,
    })
}

/// Default fit window: the last half of the horizon.
pub fn default_window(horizon: usize) -> (usize, usize) {
    (horizon / 2, horizon)
}

/// One inequality `observed ≤ allowed` evaluated at a grid point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Inequality {
    pub observed: f64,
    pub allowed: f64,
    pub scale: f64,
    pub label: &'static str,
}

impl Inequality {
    /// Positive when violated beyond the rounding tolerance.
    pub fn excess(&self) -> f64 {
        (self.observed - self.allowed - LYAPUNOV_RTOL * self.scale.max(1.0)) / self.scale.max(1.0)
    }
}

/// Checks the incremental Lyapunov inequalities at every grid point:
/// `α₁(|x₁−x₂|) ≤ V(k,x₁,x₂) ≤ α₂(|x₁−x₂|)` and
/// `V(k+1, f(k,x₁), f(k,x₂)) − V(k,x₁,x₂) ≤ −α₃(|x₁−x₂|)`.
pub fn verify_incremental_lyapunov(
    def: &SystemDef,
    cand: &CandidateV,
    grid: &PairGrid,
) -> Result<Verdict, AnalysisError> {
    if !cand.mode.is_two_copy() {
        return Err(AnalysisError::WrongMode {
            expected: "incremental or contraction",
            found: cand.mode,
        });
    }
    if cand.n > def.n {
        return Err(AnalysisError::DimensionMismatch {
            expected: def.n,
            found: cand.n,
        });
    }
    let evaluated: Vec<Result<[Inequality; 3], String>> = grid
        .points
        .par_iter()
        .map(|(k, x1, x2)| incremental_point(def, cand, *k, x1, x2).map_err(|e| e.to_string()))
        .collect();

    let mut issues = Vec::new();
    let mut worst: Option<(f64, Witness)> = None;
    let mut min_slack = f64::INFINITY;
    let mut checked = 0;
    for ((k, x1, x2), r) in grid.points.iter().zip(evaluated) {
        let ineqs = match r {
            Ok(v) => v,
            Err(message) => {
                issues.push(PointIssue {
                    k: *k,
                    x: x1.iter().chain(x2).copied().collect(),
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
                        xi1: x1.clone(),
                        xi2: Some(x2.clone()),
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
    let mut verdict = match worst {
        Some((_, w)) => Verdict::falsified(w, checked),
        None if checked == 0 => Verdict::inconclusive(0),
        None => Verdict::certified([("min_relative_slack", min_slack)], checked),
    };
    verdict.issues = issues;
    Ok(verdict)
}

fn incremental_point(
    def: &SystemDef,
    cand: &CandidateV,
    k: i64,
    x1: &[f64],
    x2: &[f64],
) -> Result<[Inequality; 3], AnalysisError> {
    let s = distance(x1, x2);
    let v0 = cand.eval(k, x1, x2)?;
    let f1 = def.eval_map(k, x1)?;
    let f2 = def.eval_map(k, x2)?;
    let v1 = cand.eval(k + 1, &f1, &f2)?;
    let [a1, a2, a3] = cand.alpha.map(|a| a.eval(s));
    let scale = v0.abs().max(v1.abs()).max(a2);
    Ok([
        Inequality {
            observed: a1,
            allowed: v0,
            scale,
            label: "lower bound alpha1(|x1-x2|) <= V fails",
        },
        Inequality {
            observed: v0,
            allowed: a2,
            scale,
            label: "upper bound V <= alpha2(|x1-x2|) fails",
        },
        Inequality {
            observed: v1 - v0,
            allowed: -a3,
            scale,
            label: "decrease V(k+1) - V(k) <= -alpha3(|x1-x2|) fails",
        },
    ])
}

/// Ensures the candidate mode is the expected one for contraction checks.
pub fn require_mode(cand: &CandidateV, mode: CandidateMode) -> Result<(), AnalysisError> {
    if cand.mode != mode {
        return Err(AnalysisError::WrongMode {
            expected: match mode {
                CandidateMode::Incremental => "incremental",
                CandidateMode::Convergent => "convergent",
                CandidateMode::Contraction => "contraction",
            },
            found: cand.mode,
        });
    }
    Ok(())
}

impl IncrementalReport {
    pub fn status(&self) -> Status {
        self.verdict.status
    }
}
