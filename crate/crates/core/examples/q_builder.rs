// Builds the metric Q from transfer matrices and measures how the length
// of a curve of initial conditions shrinks under ex2.

use std::error::Error;

use converge::contraction::{build_q, curve_length, q_horizon, MetricField};
use converge::dsl::parse_system;
use converge::matrix::Matrix;
use converge::registry::Registry;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let scalar = parse_system("dim 1\nf1 = 0.5*x1")?;
    let q = build_q(&scalar, &[1.0], 0, Some(200), None)?;
    println!("x -> x/2: Q = {:.12} (series sum 4/3)", q.q.get(0, 0));

    let lti = parse_system(include_str!("../data/systems/lti2.dsys"))?;
    let built = build_q(&lti, &[0.0, 0.0], 0, Some(200), None)?;
    let a = Matrix::from_rows(&[[0.5, 0.4], [0.0, 0.5]]);
    let lyap = built.q.congruence(&a).sub(&built.q).shift(1.0);
    println!("lti2: Q = {:?}", built.q.as_matrix().to_rows());
    println!("  |A'QA - Q + I| = {:.2e}", lyap.frobenius());
    println!(
        "  horizon for kappa = 2, lambda = 1.5, tol 1e-9: {}",
        q_horizon(2.0, 1.5, 1e-9)
    );

    let ex2 = Registry::builtin().get("ex2").ok_or("ex2 missing")?.system_def()?;
    let metric = MetricField::QBuilder {
        horizon: Some(60),
        rate: None,
    };
    let mut prev = None;
    for k in 0..5 {
        let l = curve_length(&ex2, &metric, &[3.0], &[-1.0], 0, k, 16)?;
        match prev {
            Some(p) => println!("  l({k}) = {:.10}  ratio {:.10}", l.length, l.length / p),
            None => println!("  l({k}) = {:.10}", l.length),
        }
        prev = Some(l.length);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
