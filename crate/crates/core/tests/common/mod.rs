//! Property suites shared by the property tests and the acceptance target.
//! Each suite runs a fixed number of randomized cases and returns the first
//! failure, already shrunk by proptest.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use converge::config::{ConfigFile, Property};
use converge::dsl::{parse_system, SystemDef};
use converge::dynamics::{fd_jacobian, jacobian, simulate, transfer_matrix, JacobianMethod};
use converge::incremental::{sample_pairs, separation_series, Envelope};
use converge::matrix::{cholesky, sym_eig, Matrix, SymMatrix};
use converge::registry::Registry;
use converge::report::{resolve_file, run_with_threads};
use converge::sampling::{StateBox, TimeRange};

pub const CASES: u32 = 1000;

/// Smooth systems used by the dynamics suites.
pub fn smooth_systems() -> Vec<SystemDef> {
    let reg = Registry::builtin();
    let mut out: Vec<SystemDef> = ["ex2", "ex3"]
        .iter()
        .map(|n| reg.get(n).unwrap().system_def().unwrap())
        .collect();
    for src in [
        include_str!("../../data/systems/affine.dsys"),
        include_str!("../../data/systems/lti2.dsys"),
        include_str!("../../data/systems/pendulum.dsys"),
        "dim 2\nname mixed\nf1 = exp(-x1^2)*x2 + 0.3*sin(x1*k/10)\nf2 = x1*x2/(1 + x1^2) - 0.2*log(1 + x2^2)",
        "dim 3\nname chain\nf1 = 0.4*x1 + 0.1*cos(x2)\nf2 = 0.3*x2 + 0.2*sin(x3 + k)\nf3 = 0.5*x3/sqrt(1 + x1^2)",
    ] {
        out.push(parse_system(src).unwrap());
    }
    out
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    // Fixed seed so the acceptance run is reproducible.
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]))
}

fn report<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn state(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

fn system_and_state(r: f64) -> impl Strategy<Value = (usize, Vec<f64>)> {
    let systems = smooth_systems();
    let dims: Vec<usize> = systems.iter().map(|s| s.n).collect();
    (0..dims.len()).prop_flat_map(move |i| (Just(i), state(dims[i], r)))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

/// `φ(k0+a+b; k0, ξ) = φ(k0+a+b; k0+a, φ(k0+a; k0, ξ))`, bit for bit.
pub fn semigroup(cases: u32) -> Result<(), String> {
    let systems = smooth_systems();
    report(runner(cases).run(
        &(system_and_state(5.0), -50i64..50, 0usize..20, 0usize..20),
        |((i, xi), k0, a, b)| {
            let def = &systems[i];
            let whole = simulate(def, k0, &xi, a + b).unwrap();
            let first = simulate(def, k0, &xi, a).unwrap();
            let rest = simulate(def, k0 + a as i64, first.last(), b).unwrap();
            prop_assert_eq!(whole.last(), rest.last());
            prop_assert_eq!(whole.states.len(), a + b + 1);
            Ok(())
        },
    ))
}

/// `Φ(k2, k0) = Φ(k2, k1) Φ(k1, k0)` along the same solution.
pub fn cocycle(cases: u32) -> Result<(), String> {
    let systems = smooth_systems();
    report(runner(cases).run(
        &(system_and_state(3.0), -30i64..30, 0i64..10, 0i64..10),
        |((i, xi), k0, a, b)| {
            let def = &systems[i];
            let k1 = k0 + a;
            let k2 = k1 + b;
            let whole = transfer_matrix(def, k0, k2, &xi, JacobianMethod::Ad).unwrap().matrix;
            let x1 = simulate(def, k0, &xi, a as usize).unwrap();
            let first = transfer_matrix(def, k0, k1, &xi, JacobianMethod::Ad).unwrap().matrix;
            let second = transfer_matrix(def, k1, k2, x1.last(), JacobianMethod::Ad)
                .unwrap()
                .matrix;
            let composed = second.matmul(&first);
            let scale = 1.0 + whole.max_abs();
            prop_assert!(whole.sub(&composed).max_abs() <= 1e-10 * scale);
            Ok(())
        },
    ))
}

/// Forward-mode derivatives agree with central differences.
pub fn ad_vs_fd(cases: u32) -> Result<(), String> {
    let systems = smooth_systems();
    report(
        runner(cases).run(&(system_and_state(4.0), -100i64..100), |((i, x), k)| {
            let def = &systems[i];
            let ad = jacobian(def, k, &x, JacobianMethod::Ad, true).unwrap();
            let fd = fd_jacobian(def, k, &x).unwrap();
            for r in 0..def.n {
                for c in 0..def.n {
                    let (a, b) = (ad.row(r)[c], fd.row(r)[c]);
                    prop_assert!(
                        (a - b).abs() <= 1e-6 * (1.0 + a.abs()),
                        "{}: J[{r}][{c}] ad {a} fd {b}",
                        def.name
                    );
                }
            }
            Ok(())
        }),
    )
}

fn symmetric(max_n: usize) -> impl Strategy<Value = SymMatrix> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-10.0f64..10.0, n * n)
            .prop_map(move |v| SymMatrix::symmetrize(&Matrix::from_fn(n, n, |i, j| v[i * n + j])))
    })
}

/// `S v = λ v` for every pair, orthonormal vectors and `Σλ = trace S`.
pub fn eigen(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&symmetric(8), |s| {
        let n = s.n();
        let e = sym_eig(&s).unwrap();
        let scale = 1.0 + s.frobenius();
        for i in 0..n {
            let v = e.vector(i);
            let sv = s.as_matrix().mul_vec(&v);
            let res: f64 = sv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - e.values[i] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            prop_assert!(res <= 1e-9 * scale, "residual {res}");
        }
        let vtv = e.vectors.transpose().matmul(&e.vectors);
        prop_assert!(vtv.sub(&Matrix::identity(n)).max_abs() <= 1e-10);
        let sum: f64 = e.values.iter().sum();
        prop_assert!((sum - s.trace()).abs() <= 1e-9 * scale);
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        Ok(())
    }))
}

/// `ΘᵀΘ = Q` for `Q = BᵀB + δI`, with `Θ` upper triangular.
pub fn cholesky_round_trip(cases: u32) -> Result<(), String> {
    let strat = (1usize..=8).prop_flat_map(|n| {
        (prop::collection::vec(-3.0f64..3.0, n * n), 1e-3f64..1.0).prop_map(move |(v, d)| {
            let b = Matrix::from_fn(n, n, |i, j| v[i * n + j]);
            b.gram().shift(d)
        })
    });
    report(runner(cases).run(&strat, |q| {
        let theta = cholesky(&q).unwrap();
        let n = q.n();
        for i in 0..n {
            prop_assert!(theta.row(i)[i] > 0.0);
            for j in 0..i {
                prop_assert_eq!(theta.row(i)[j], 0.0);
            }
        }
        let back = theta.gram();
        prop_assert!(back.sub(&q).frobenius() <= 1e-12 * (1.0 + q.frobenius()) * n as f64);
        Ok(())
    }))
}

/// The envelope is non-decreasing in the initial separation and bounds
/// every observed separation.
pub fn envelope_monotone(cases: u32) -> Result<(), String> {
    let systems = smooth_systems();
    report(runner(cases).run(
        &(
            0..systems.len(),
            any::<u64>(),
            1usize..12,
            2usize..40,
            prop::collection::vec(0.0f64..30.0, 8),
        ),
        |(i, seed, horizon, budget, probes)| {
            let def = &systems[i];
            let pairs = sample_pairs(
                &StateBox::cube(def.n, 5.0),
                TimeRange::new(-10, 10).unwrap(),
                budget,
                seed,
            );
            let series: Vec<_> = pairs
                .iter()
                .map(|p| separation_series(def, p, horizon).unwrap())
                .collect();
            let env = Envelope::from_series(&series, horizon);
            for d in 0..=horizon {
                let mut sorted = probes.clone();
                sorted.sort_by(f64::total_cmp);
                let vals: Vec<f64> = sorted.iter().map(|&s| env.eval(s, d)).collect();
                prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]), "lag {d}: {vals:?}");
                for s in &series {
                    let sep = s.at(d);
                    if sep.is_finite() {
                        prop_assert!(sep <= env.eval(s.initial(), d));
                    }
                }
            }
            Ok(())
        },
    ))
}

/// Cheap run settings for the determinism suite.
pub fn small_config(example: &str, property: Property, seed: u64) -> ConfigFile {
    ConfigFile {
        system: Some(example.into()),
        property: Some(property),
        seed: Some(seed),
        budget: Some(32),
        samples: Some(32),
        grid_points: Some(5),
        k_min: Some(0),
        k_max: Some(2),
        washout: Some(200),
        lookback: Some(200),
        window_end: Some(150),
        horizon: Some(15),
        p_iters: Some(10),
        ..ConfigFile::default()
    }
}

/// The report does not depend on the worker count.
pub fn report_determinism(cases: u32) -> Result<(), String> {
    let props = [
        Property::Incremental,
        Property::ExponentialIncremental,
        Property::Convergent,
        Property::Contraction,
    ];
    report(
        runner(cases).run(&(0usize..4, 0usize..props.len(), any::<u64>()), |(e, p, seed)| {
            let name = format!("ex{}", e + 1);
            let cfg = resolve_file(small_config(&name, props[p], seed)).unwrap();
            let one = run_with_threads(&cfg, 1).unwrap().deterministic_json();
            let four = run_with_threads(&cfg, 4).unwrap().deterministic_json();
            prop_assert_eq!(
                serde_json::to_string(&one).unwrap(),
                serde_json::to_string(&four).unwrap()
            );
            Ok(())
        }),
    )
}

pub type Suite = (&'static str, fn(u32) -> Result<(), String>);

pub const SUITES: [Suite; 7] = [
    ("semigroup", semigroup),
    ("cocycle", cocycle),
    ("AD vs FD Jacobian", ad_vs_fd),
    ("eigensolver residual/trace", eigen),
    ("Cholesky round trip", cholesky_round_trip),
    ("envelope monotonicity", envelope_monotone),
    ("report determinism, threads 1 vs 4", report_determinism),
];
