// Locates the bounded reference solution of a forced affine system and
// checks that sampled solutions approach it. The same search on ex2 finds
// no bounded solution.

use std::error::Error;

use converge::convergent::{
    check_convergence, convergence_samples, default_probes, find_reference, uniqueness_probe, ReferenceFailure,
};
use converge::dsl::parse_system;
use converge::registry::Registry;
use converge::sampling::{StateBox, TimeRange};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let affine = parse_system(include_str!("../data/systems/affine.dsys"))?;
    let probes = vec![vec![-10.0], vec![0.0], vec![10.0]];
    let reference = find_reference(&affine, TimeRange::new(0, 50)?, 60, &probes, 1e-9)?;
    println!(
        "affine reference: bound {:.4}, probe agreement {:.1e}",
        reference.bound, reference.agreement
    );
    for k in [0, 10, 20] {
        let oracle: f64 = (1..=60)
            .map(|j| 0.5f64.powi(j - 1) * ((k - j as i64) as f64).sin())
            .sum();
        println!(
            "  xbar({k:>2}) = {:+.12}  series {:+.12}",
            reference.at(k).ok_or("outside window")?[0],
            oracle
        );
    }

    let samples = convergence_samples(&reference, &StateBox::cube(1, 10.0), 20, 256, 1)?;
    let conv = check_convergence(&affine, &reference, &samples, 20)?;
    println!("convergence on 256 samples: {:?}", conv.verdict.status);
    if let Some(fit) = &conv.fit {
        println!("  deviation rate lambda = {:.4}", fit.lambda);
    }
    let unique = uniqueness_probe(&affine, &reference, &[vec![50.0], vec![-50.0]], 60, 1e-9)?;
    println!("uniqueness probe: {:?}", unique.status);

    let ex2 = Registry::builtin().get("ex2").ok_or("ex2 missing")?.system_def()?;
    match find_reference(&ex2, TimeRange::new(0, 100)?, 100, &default_probes(1, 10.0), 1e-7) {
        Err(ReferenceFailure::Unbounded { k, norm }) => {
            println!("ex2: no bounded solution, |x({k})| = {norm:.3e}")
        }
        other => return Err(format!("ex2 should be unbounded, got {other:?}").into()),
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
