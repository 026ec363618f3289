// Demidovich certificates: a fixed P for the affine system, a searched P
// for a non-normal linear system, and the failure on ex3.

use std::error::Error;

use converge::contraction::{demidovic_certify, demidovic_sweep, search_p, SearchFailure};
use converge::dsl::parse_system;
use converge::matrix::{sym_eig, SymMatrix};
use converge::registry::Registry;
use converge::sampling::{Grid, StateBox, TimeRange};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let affine = parse_system(include_str!("../data/systems/affine.dsys"))?;
    let grid = Grid::tensor(&StateBox::cube(1, 10.0), 21, TimeRange::new(0, 50)?);
    let cert = demidovic_certify(&affine, &SymMatrix::identity(1), 0.25, &grid, true)?;
    println!(
        "affine, P = 1, rho = 0.25: {:?}, worst margin {:.1e}, c = {:?}",
        cert.verdict.status, cert.worst_margin, cert.c
    );

    // With P = I the linear system fails at rho = 0.5 because of the
    // off-diagonal coupling; a weighted P succeeds.
    let lti = parse_system(include_str!("../data/systems/lti2.dsys"))?;
    let grid = Grid::tensor(&StateBox::cube(2, 1.0), 5, TimeRange::single(0));
    let plain = demidovic_certify(&lti, &SymMatrix::identity(2), 0.5, &grid, false)?;
    println!("lti2, P = I, rho = 0.5: {:?}", plain.verdict.status);
    match search_p(&lti, &grid, 0.5, 500, 1) {
        Ok(found) => {
            let eig = sym_eig(&found.p)?;
            println!(
                "  search found P = {:?} (eigenvalues {:.3?}) after {} iterations, g = {:.2e}",
                found.p.as_matrix().to_rows(),
                eig.values,
                found.iterations,
                found.g
            );
        }
        Err(SearchFailure::NotFound(best)) => println!("  search failed, best g = {:.3e}", best.g),
        Err(e) => return Err(e.into()),
    }

    let ex3 = Registry::builtin().get("ex3").ok_or("ex3 missing")?.system_def()?;
    let grid = Grid::tensor(&StateBox::cube(1, 1.0), 41, TimeRange::single(0));
    let sweep = demidovic_sweep(&ex3, &SymMatrix::identity(1), &grid, false)?;
    let at = sweep.worst_point.x[0];
    println!(
        "ex3 sweep: {:?} at x = {at}, worst margin {:.3}",
        sweep.verdict.status, sweep.worst_margin
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
