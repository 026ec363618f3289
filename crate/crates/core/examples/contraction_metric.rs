// Contraction margin of ex2 under the identity metric, and the metric
// declared for ex4, whose lower bound degenerates.

use std::error::Error;

use converge::contraction::{contraction_margin, metric_bounds, MetricField};
use converge::registry::Registry;
use converge::sampling::{Grid, StateBox, TimeRange};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let registry = Registry::builtin();
    let ex2 = registry.get("ex2").ok_or("ex2 missing")?.system_def()?;
    let grid = Grid::tensor(&StateBox::cube(1, 10.0), 41, TimeRange::new(-20, 20)?);
    let cert = contraction_margin(&ex2, &MetricField::identity(1), &grid)?;
    println!(
        "ex2 with Theta = 1: eta {}, rho {}, mu {} on {} points -> {:?}",
        cert.eta, cert.rho, cert.mu, cert.grid_size, cert.verdict.status
    );

    let ex4 = registry.get("ex4").ok_or("ex4 missing")?.system_def()?;
    let grid = Grid::tensor(&StateBox::cube(1, 1.0), 11, TimeRange::new(0, 100)?);
    let bounds = metric_bounds(&ex4, &MetricField::Expression, &grid)?;
    println!(
        "ex4 with Theta = 1/(k^2+1): eta {:.3e} on the grid, {:.3e} at far times -> {:?}",
        bounds.eta, bounds.eta_extended, bounds.verdict.status
    );
    if let Some(w) = &bounds.verdict.witness {
        println!("  {} at k = {}", w.note, w.k);
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
