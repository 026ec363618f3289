// Checks Lyapunov candidates on sampled points: a convergence candidate for
// ex1, an incremental one for ex2, and a candidate that does not fit the
// affine system.

use std::error::Error;

use converge::convergent::{find_reference, verify_convergent_lyapunov};
use converge::dsl::{parse_candidate, parse_system};
use converge::dynamics::simulate;
use converge::incremental::verify_incremental_lyapunov;
use converge::registry::Registry;
use converge::sampling::{Grid, PairGrid, StateBox, TimeRange};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let registry = Registry::builtin();

    let ex1 = registry.get("ex1").ok_or("ex1 missing")?.system_def()?;
    let cand = parse_candidate(include_str!("../data/candidates/ex1_norm.lyap"))?;
    let zero = simulate(&ex1, -1, &[0.0, 0.0], 11)?;
    let reference = find_reference(&ex1, TimeRange::new(0, 10)?, 1, &[vec![0.0, 0.0]], 1e-12)?;
    let grid = Grid::random(&StateBox::cube(2, 1000.0), 10_000, TimeRange::single(0), 2);
    let v = verify_convergent_lyapunov(&ex1, &cand, &reference, &grid)?;
    println!(
        "ex1, V = |x|^2: {:?} on {} points (origin stays at {:?})",
        v.status,
        v.samples_used,
        zero.last()
    );

    let ex2 = registry.get("ex2").ok_or("ex2 missing")?.system_def()?;
    let cand = parse_candidate(include_str!("../data/candidates/ex2_incremental.lyap"))?;
    let pairs = PairGrid::random(&StateBox::cube(1, 100.0), 5000, TimeRange::new(-50, 50)?, 3);
    let v = verify_incremental_lyapunov(&ex2, &cand, &pairs)?;
    println!("ex2, V = (x-y)^2: {:?} on {} pairs", v.status, v.samples_used);

    let affine = parse_system(include_str!("../data/systems/affine.dsys"))?;
    let cand = parse_candidate(include_str!("../data/candidates/affine_naive.lyap"))?;
    let probes = vec![vec![-10.0], vec![0.0], vec![10.0]];
    let reference = find_reference(&affine, TimeRange::new(0, 50)?, 60, &probes, 1e-9)?;
    let grid = Grid::random(&StateBox::cube(1, 10.0), 1000, TimeRange::new(0, 49)?, 4);
    let v = verify_convergent_lyapunov(&affine, &cand, &reference, &grid)?;
    println!("affine, V = x^2: {:?}", v.status);
    if let Some(w) = &v.witness {
        println!(
            "  at x = {:?}, k = {}: {:.3} > {:.3} ({})",
            w.xi1, w.k0, w.observed, w.allowed, w.note
        );
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
