//! Invariants that tie the modules together: linear cross-checks, exact
//! fits, reference construction, metric and curve-length identities.

use proptest::prelude::*;

use converge::contraction::{build_q, contraction_margin, curve_length, demidovic_certify, margin_at, MetricField};
use converge::convergent::{
    check_convergence, convergence_samples, find_reference, uniqueness_probe, verify_convergent_lyapunov,
};
use converge::dsl::{parse_candidate, parse_system, Monomial, SystemDef};
use converge::dynamics::{augment, diagonal_distance, jacobian, simulate, transfer_matrix, JacobianMethod};
use converge::incremental::{fit_exp_rate, sample_pairs, separation_series, PairSpec, SeparationSeries};
use converge::matrix::{distance, induced_norm, norm, psd_margin, Matrix, SymMatrix};
use converge::registry::Registry;
use converge::sampling::{Grid, StateBox, TimeRange};
use converge::verdict::Status;

fn builtin(name: &str) -> SystemDef {
    Registry::builtin().get(name).unwrap().system_def().unwrap()
}

fn affine() -> SystemDef {
    parse_system(include_str!("../data/systems/affine.dsys")).unwrap()
}

fn lti2() -> SystemDef {
    parse_system(include_str!("../data/systems/lti2.dsys")).unwrap()
}

/// Random expression over `x1` and `k`, as source text together with the
/// source of its derivative in `x1`, built by the usual rules.
fn expr_with_derivative() -> impl Strategy<Value = (String, String)> {
    let leaf = prop_oneof![
        Just(("x1".to_string(), "1".to_string())),
        Just(("k".to_string(), "0".to_string())),
        (-3.0f64..3.0).prop_map(|c| (format!("({c:?})"), "0".to_string())),
    ];
    leaf.prop_recursive(6, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|((a, da), (b, db))| (format!("({a} + {b})"), format!("({da} + {db})"))),
            (inner.clone(), inner.clone())
                .prop_map(|((a, da), (b, db))| (format!("({a} - {b})"), format!("({da} - {db})"))),
            (inner.clone(), inner.clone())
                .prop_map(|((a, da), (b, db))| (format!("({a} * {b})"), format!("({da}*{b} + {a}*{db})"))),
            (inner.clone(), inner.clone()).prop_map(|((a, da), (b, db))| (
                format!("({a} / (1 + {b}^2))"),
                format!("(({da}*(1 + {b}^2) - {a}*2*{b}*{db}) / (1 + {b}^2)^2)")
            )),
            inner
                .clone()
                .prop_map(|(a, da)| (format!("sin({a})"), format!("(cos({a})*{da})"))),
            inner
                .clone()
                .prop_map(|(a, da)| (format!("cos({a})"), format!("(0 - sin({a})*{da})"))),
            inner
                .clone()
                .prop_map(|(a, da)| (format!("exp(sin({a}))"), format!("(exp(sin({a}))*cos({a})*{da})"))),
            inner
                .clone()
                .prop_map(|(a, da)| (format!("sqrt(1 + {a}^2)"), format!("({a}*{da}/sqrt(1 + {a}^2))"))),
            inner
                .clone()
                .prop_map(|(a, da)| (format!("log(1 + {a}^2)"), format!("(2*{a}*{da}/(1 + {a}^2))"))),
            inner.prop_map(|(a, da)| (format!("({a})^2"), format!("(2*({a})*{da})"))),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn printed_systems_reparse((src, _) in expr_with_derivative(), (src2, _) in expr_with_derivative()) {
        let def = parse_system(&format!("dim 2\nname rt\nparam a = 0.25\nf1 = a*{src}\nf2 = {src2} - x2")).unwrap();
        let again = parse_system(&def.to_source()).unwrap();
        prop_assert_eq!(def, again);
    }

    #[test]
    fn dual_numbers_follow_the_chain_rule((src, dsrc) in expr_with_derivative(), x in -1.5f64..1.5, k in -5i64..5) {
        let f = parse_system(&format!("dim 1\nf1 = {src}")).unwrap();
        let df = parse_system(&format!("dim 1\nf1 = {dsrc}")).unwrap();
        let ad = jacobian(&f, k, &[x], JacobianMethod::Ad, true).unwrap().row(0)[0];
        let symbolic = df.eval_map(k, &[x]).unwrap()[0];
        prop_assert!((ad - symbolic).abs() <= 1e-9 * (1.0 + symbolic.abs()), "{src}: ad {ad} symbolic {symbolic}");
    }

    #[test]
    fn monomials_increase(c in 1e-3f64..100.0, p in 1.0f64..4.0, mut s in prop::collection::vec(0.0f64..50.0, 2..20)) {
        let m = Monomial::new(c, p).unwrap();
        prop_assert_eq!(m.eval(0.0), 0.0);
        s.sort_by(f64::total_cmp);
        s.dedup();
        prop_assert!(s.windows(2).all(|w| m.eval(w[0]) < m.eval(w[1])));
    }

    #[test]
    fn induced_norm_bounds_samples(v in prop::collection::vec(-5.0f64..5.0, 9), n in 1usize..=3, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let a = Matrix::from_fn(n, n, |i, j| v[i * 3 + j]);
        let nrm = induced_norm(&a).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut best: f64 = 0.0;
        for _ in 0..1000 {
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = norm(&u);
            if len > 0.0 {
                best = best.max(norm(&a.mul_vec(&u)) / len);
            }
        }
        prop_assert!(best <= nrm * (1.0 + 1e-6) + 1e-12);
        if n == 1 {
            prop_assert!((best - nrm).abs() <= 1e-6 * (1.0 + nrm));
        }
    }

    #[test]
    fn psd_margin_shifts(v in prop::collection::vec(-10.0f64..10.0, 16), delta in -5.0f64..5.0) {
        let s = SymMatrix::symmetrize(&Matrix::from_fn(4, 4, |i, j| v[i * 4 + j]));
        let shifted = psd_margin(&s.shift(delta)).unwrap();
        prop_assert!((shifted - psd_margin(&s).unwrap() - delta).abs() <= 1e-10 * (1.0 + s.frobenius()));
    }

    #[test]
    fn linear_separations_match_transfer_matrices(
        coef in prop::collection::vec(-1.2f64..1.2, 4),
        xi1 in prop::collection::vec(-10.0f64..10.0, 2),
        xi2 in prop::collection::vec(-10.0f64..10.0, 2),
        k0 in -20i64..20,
    ) {
        let src = format!(
            "dim 2\nf1 = {:?}*x1 + {:?}*x2\nf2 = {:?}*x1 + {:?}*x2 + 0.1*sin(k)",
            coef[0], coef[1], coef[2], coef[3]
        );
        let def = parse_system(&src).unwrap();
        let series = separation_series(&def, &PairSpec { k0, xi1: xi1.clone(), xi2: xi2.clone() }, 15).unwrap();
        let diff: Vec<f64> = xi1.iter().zip(&xi2).map(|(a, b)| a - b).collect();
        for d in 0..=15 {
            let phi = transfer_matrix(&def, k0, k0 + d as i64, &xi1, JacobianMethod::Ad).unwrap().matrix;
            let expected = norm(&phi.mul_vec(&diff));
            prop_assert!((series.at(d) - expected).abs() <= 1e-9 * (1.0 + expected));
        }
    }

    #[test]
    fn augmented_copies_measure_half_root_two(xi1 in prop::collection::vec(-3.0f64..3.0, 2), xi2 in prop::collection::vec(-3.0f64..3.0, 2), k0 in -10i64..10) {
        let def = parse_system(include_str!("../data/systems/pendulum.dsys")).unwrap();
        let aug = augment(&def);
        let z: Vec<f64> = xi1.iter().chain(&xi2).copied().collect();
        let zt = simulate(&aug, k0, &z, 20).unwrap();
        let t1 = simulate(&def, k0, &xi1, 20).unwrap();
        let t2 = simulate(&def, k0, &xi2, 20).unwrap();
        for i in 0..=20 {
            let sep = distance(&t1.states[i], &t2.states[i]);
            let dd = diagonal_distance(&zt.states[i]).unwrap();
            prop_assert!((dd - sep / std::f64::consts::SQRT_2).abs() <= 1e-12 * (1.0 + sep));
        }
    }

    #[test]
    fn rate_fit_is_exact_on_exponential_series(kappa in 1.0f64..10.0, lambda in 1.1f64..3.0, s0 in prop::collection::vec(1e-3f64..100.0, 1..5)) {
        let series: Vec<SeparationSeries> = s0
            .iter()
            .map(|&s| SeparationSeries {
                xi1: vec![s],
                xi2: vec![0.0],
                k0: 0,
                seps: (0..=20).map(|d| if d == 0 { s } else { kappa * s * lambda.powi(-d) }).collect(),
                overflow: false,
            })
            .collect();
        let fit = fit_exp_rate(&series, (5, 20)).unwrap();
        prop_assert!(fit.residual <= 1e-10, "residual {}", fit.residual);
        prop_assert!((fit.lambda - lambda).abs() <= 1e-9 * lambda);
        prop_assert!((fit.kappa - kappa).abs() <= 1e-8 * kappa);
    }
}

#[test]
fn washout_never_worsens_agreement() {
    let probes = vec![vec![-10.0], vec![0.0], vec![10.0]];
    let w = TimeRange::new(0, 50).unwrap();
    let agreement: Vec<f64> = [20, 40, 80]
        .iter()
        .map(|&m| find_reference(&affine(), w, m, &probes, 1e-3).unwrap().agreement)
        .collect();
    assert!(agreement.windows(2).all(|p| p[1] <= p[0]), "{agreement:?}");
    assert!(agreement[0] > 0.0);
}

#[test]
fn reference_satisfies_the_dynamics() {
    for (def, washout) in [(affine(), 200), (builtin("ex3"), 10_000)] {
        let probes = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let reference = find_reference(&def, TimeRange::new(0, 60).unwrap(), washout, &probes, 0.05).unwrap();
        let t = &reference.trajectory;
        for (i, x) in t.states.iter().enumerate().step_by(7) {
            let k = t.k0 + i as i64;
            let again = simulate(&def, k, x, t.states.len() - 1 - i).unwrap();
            assert_eq!(&again.states[..], &t.states[i..]);
        }
    }
}

#[test]
fn uniqueness_residual_respects_the_fitted_rate() {
    let def = affine();
    let probes = vec![vec![-10.0], vec![0.0], vec![10.0]];
    let reference = find_reference(&def, TimeRange::new(0, 50).unwrap(), 60, &probes, 1e-9).unwrap();
    let samples = convergence_samples(&reference, &StateBox::cube(1, 10.0), 20, 200, 3).unwrap();
    let conv = check_convergence(&def, &reference, &samples, 20).unwrap();
    assert_eq!(conv.verdict.status, Status::Certified);
    let fit = conv.fit.as_ref().unwrap();
    let alts = vec![vec![-40.0], vec![25.0], vec![60.0]];
    let spread = 100.0;
    for lookback in [5usize, 10, 20] {
        let v = uniqueness_probe(&def, &reference, &alts, lookback, 1e9).unwrap();
        let residual = v.constants["max_residual"];
        let bound = fit.kappa * spread * fit.lambda.powi(-(lookback as i32));
        assert!(residual <= bound, "L = {lookback}: {residual} > {bound}");
    }
}

#[test]
fn certified_candidate_bounds_v_at_origin() {
    let def = builtin("ex1");
    let cand = parse_candidate(include_str!("../data/candidates/ex1_norm.lyap")).unwrap();
    let reference = find_reference(
        &def,
        TimeRange::new(0, 20).unwrap(),
        50,
        &[vec![0.0, 0.0], vec![1.0, 1.0]],
        1e-9,
    )
    .unwrap();
    let grid = Grid::random(&StateBox::cube(2, 100.0), 2000, TimeRange::new(0, 19).unwrap(), 5);
    let v = verify_convergent_lyapunov(&def, &cand, &reference, &grid).unwrap();
    assert_eq!(v.status, Status::Certified);
    for k in 0..20 {
        let xbar = reference.at(k).unwrap();
        let v0 = cand.eval(k, &[0.0, 0.0], &[]).unwrap();
        let a2 = cand.alpha[1];
        assert!(0.0 <= v0);
        assert!(v0 <= a2.eval(norm(xbar)) + 1e-12);
        assert!(a2.eval(norm(xbar)) <= a2.eval(reference.bound) + 1e-12);
    }
}

#[test]
fn discrete_lyapunov_identity() {
    let scalar = parse_system("dim 1\nf1 = 0.5*x1").unwrap();
    for (def, a) in [
        (scalar, Matrix::from_rows(&[[0.5]])),
        (lti2(), Matrix::from_rows(&[[0.5, 0.4], [0.0, 0.5]])),
    ] {
        let n = def.n;
        let built = build_q(&def, &vec![0.3; n], 4, Some(200), None).unwrap();
        let residual = built.q.congruence(&a).sub(&built.q).shift(1.0).frobenius();
        assert!(residual <= 1e-8, "{}: {residual}", def.name);

        // With a declared rate the residual stays under the reported tail bound.
        let lambda: f64 = 1.5;
        let mut power = Matrix::identity(n);
        let mut kappa: f64 = 1.0;
        for d in 0..400 {
            kappa = kappa.max(induced_norm(&power).unwrap() * lambda.powi(d));
            power = a.matmul(&power);
        }
        let built = build_q(&def, &vec![0.0; n], 0, None, Some((kappa, lambda))).unwrap();
        let residual = built.q.congruence(&a).sub(&built.q).shift(1.0).frobenius();
        assert!(
            residual <= built.tail_bound.unwrap(),
            "{residual} > {:?}",
            built.tail_bound
        );
    }
}

#[test]
fn contraction_certificate_bounds_trajectory_ratios() {
    for (def, k_range) in [
        (builtin("ex2"), TimeRange::new(-20, 20).unwrap()),
        (affine(), TimeRange::new(0, 40).unwrap()),
    ] {
        let bx = StateBox::cube(1, 10.0);
        let grid = Grid::tensor(&bx, 41, k_range);
        let cert = contraction_margin(&def, &MetricField::identity(1), &grid).unwrap();
        assert_eq!(cert.verdict.status, Status::Certified);
        let bound = ((1.0 - cert.mu) * cert.rho / cert.eta).sqrt() + 1e-6;
        for p in sample_pairs(&bx, k_range, 300, 9) {
            let s = separation_series(&def, &p, 1).unwrap();
            if s.initial() > 0.0 {
                assert!(s.at(1) / s.initial() <= bound);
            }
        }
    }
}

#[test]
fn demidovic_certificate_implies_fitted_rate() {
    let cases = [
        (affine(), SymMatrix::identity(1), 0.25, 1),
        (
            lti2(),
            SymMatrix::from_rows(&[[0.876, -0.0078], [-0.0078, 1.124]]),
            0.5,
            2,
        ),
    ];
    for (def, p, rho, n) in cases {
        let bx = StateBox::cube(n, 10.0);
        let grid = Grid::tensor(&bx, 11, TimeRange::new(0, 10).unwrap());
        let cert = demidovic_certify(&def, &p, rho, &grid, false).unwrap();
        assert_eq!(cert.verdict.status, Status::Certified, "{}", def.name);
        let pairs = sample_pairs(&bx, TimeRange::new(0, 10).unwrap(), 200, 4);
        let series: Vec<_> = pairs.iter().map(|p| separation_series(&def, p, 30).unwrap()).collect();
        let fit = fit_exp_rate(&series, (15, 30)).unwrap();
        assert!(
            fit.lambda >= 1.0 / rho.sqrt() - 1e-3,
            "{}: lambda {}",
            def.name,
            fit.lambda
        );
    }
}

#[test]
fn scalar_metric_value_cancels() {
    let def = parse_system("dim 1\nf1 = 0.6*x1 + cos(k)").unwrap();
    let plain = margin_at(&def, &MetricField::identity(1), 3, &[0.7]).unwrap();
    for theta in [0.01, 2.0, 300.0] {
        let m = margin_at(&def, &MetricField::Constant(Matrix::from_rows(&[[theta]])), 3, &[0.7]).unwrap();
        assert!((m - plain).abs() <= 1e-12);
    }
}

#[test]
fn curve_length_quadrature_converges() {
    let q = MetricField::QBuilder {
        horizon: Some(50),
        rate: None,
    };
    for (name, xi1, xi2) in [("ex2", 3.0, -1.0), ("ex3", 2.0, 0.5), ("ex4", 0.5, -0.2)] {
        let def = builtin(name);
        for k in [0, 2, 4] {
            let coarse = curve_length(&def, &q, &[xi1], &[xi2], 0, k, 32);
            let fine = curve_length(&def, &q, &[xi1], &[xi2], 0, k, 64);
            let (coarse, fine) = match (coarse, fine) {
                (Ok(c), Ok(f)) => (c.length, f.length),
                // ex4 grows too fast for Q to exist; nothing to compare.
                (Err(_), Err(_)) if name == "ex4" => continue,
                other => panic!("{name} at k = {k}: {other:?}"),
            };
            assert!(
                (coarse - fine).abs() <= 1e-6 * fine,
                "{name} at k = {k}: {coarse} vs {fine}"
            );
        }
    }
}
