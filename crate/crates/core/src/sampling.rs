//! State boxes, evaluation grids and index-seeded random streams.
//!
//! Every random draw is taken from a stream derived from `(seed, index)`, so
//! results do not depend on how work is split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
}

/// Random stream for work item `index`.
pub fn index_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Axis-aligned box `[lo₁, hi₁] × … × [loₙ, hiₙ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl StateBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DomainError> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(DomainError::InvalidDomain(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !a.is_finite() || !b.is_finite() || a > b {
                return Err(DomainError::InvalidDomain(format!(
                    "axis {} has bounds [{a}, {b}]",
                    i + 1
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[-r, r]ⁿ`.
    pub fn cube(n: usize, r: f64) -> Self {
        Self::new(vec![-r; n], vec![r; n]).expect("symmetric cube is valid")
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| if a == b { a } else { rng.random_range(a..=b) })
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| a <= v && v <= b)
    }

    /// Largest Euclidean norm attained in the box.
    pub fn radius(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| a.abs().max(b.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Evenly spaced points per axis, `points ≥ 1` (a single point is the
    /// box centre).
    pub fn axis(&self, i: usize, points: usize) -> Vec<f64> {
        let (a, b) = (self.lo[i], self.hi[i]);
        if points <= 1 {
            return vec![0.5 * (a + b)];
        }
        (0..points)
            .map(|j| a + (b - a) * j as f64 / (points - 1) as f64)
            .collect()
    }
}

/// Inclusive integer time range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn new(start: i64, end: i64) -> Result<Self, DomainError> {
        if start > end {
            return Err(DomainError::InvalidDomain(format!(
                "time range [{start}, {end}] is empty"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn single(k: i64) -> Self {
        Self { start: k, end: k }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        self.start..=self.end
    }

    pub fn sample(&self, rng: &mut impl Rng) -> i64 {
        rng.random_range(self.start..=self.end)
    }
}

/// A finite set of `(k, x)` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub points: Vec<(i64, Vec<f64>)>,
    pub description: String,
}

impl Grid {
    pub fn from_points(points: Vec<(i64, Vec<f64>)>) -> Self {
        let description = format!("{} explicit points", points.len());
        Self { points, description }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Full tensor product of `points_per_axis` values on every axis with
    /// every time in `times`.
    pub fn tensor(bx: &StateBox, points_per_axis: usize, times: TimeRange) -> Self {
        let axes: Vec<Vec<f64>> = (0..bx.dim()).map(|i| bx.axis(i, points_per_axis)).collect();
        let mut states: Vec<Vec<f64>> = vec![Vec::new()];
        for axis in &axes {
            states = states
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        let points = times
            .iter()
            .flat_map(|k| states.iter().map(move |x| (k, x.clone())))
            .collect();
        Self {
            points,
            description: format!(
                "tensor grid, {points_per_axis} points per axis, k in [{}, {}]",
                times.start, times.end
            ),
        }
    }

    /// Latin-hypercube sample of `count` states, each paired with a uniformly
    /// drawn time.
    pub fn latin_hypercube(bx: &StateBox, count: usize, times: TimeRange, seed: u64) -> Self {
        let n = bx.dim();
        let mut rng = index_rng(seed, u64::MAX);
        let mut perms: Vec<Vec<usize>> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut p: Vec<usize> = (0..count).collect();
            for i in (1..count).rev() {
                let j = rng.random_range(0..=i);
                p.swap(i, j);
            }
            perms.push(p);
        }
        let points = (0..count)
            .map(|i| {
                let mut r = index_rng(seed, i as u64);
                let x = (0..n)
                    .map(|d| {
                        let u: f64 = r.random();
                        let cell = (perms[d][i] as f64 + u) / count as f64;
                        bx.lo[d] + (bx.hi[d] - bx.lo[d]) * cell
                    })
                    .collect();
                (times.sample(&mut r), x)
            })
            .collect();
        Self {
            points,
            description: format!(
                "latin hypercube, {count} samples, k in [{}, {}], seed {seed}",
                times.start, times.end
            ),
        }
    }

    /// Uniform random sample of `count` points.
    pub fn random(bx: &StateBox, count: usize, times: TimeRange, seed: u64) -> Self {
        let points = (0..count)
            .map(|i| {
                let mut r = index_rng(seed, i as u64);
                let x = bx.sample(&mut r);
                (times.sample(&mut r), x)
            })
            .collect();
        Self {
            points,
            description: format!(
                "uniform random, {count} samples, k in [{}, {}], seed {seed}",
                times.start, times.end
            ),
        }
    }

    /// Tensor grid (41 points per axis) for `n ≤ 2`, otherwise 4096 Latin
    /// hypercube samples.
    pub fn default_for(bx: &StateBox, times: TimeRange, seed: u64) -> Self {
        if bx.dim() <= 2 {
            Self::tensor(bx, 41, times)
        } else {
            Self::latin_hypercube(bx, 4096, times, seed)
        }
    }
}

/// Random `(k, x₁, x₂)` samples for two-copy checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGrid {
    pub points: Vec<(i64, Vec<f64>, Vec<f64>)>,
}

impl PairGrid {
    pub fn random(bx: &StateBox, count: usize, times: TimeRange, seed: u64) -> Self {
        let points = (0..count)
            .map(|i| {
                let mut r = index_rng(seed, i as u64);
                let x1 = bx.sample(&mut r);
                let x2 = bx.sample(&mut r);
                (times.sample(&mut r), x1, x2)
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
