// Simulates ex2 from a few initial conditions and compares the transfer
// matrix computed by automatic differentiation with finite differences.

use std::error::Error;

use converge::dsl::parse_system;
use converge::dynamics::{simulate, transfer_matrix, JacobianMethod};
use converge::registry::Registry;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let ex2 = Registry::builtin().get("ex2").ok_or("ex2 missing")?.system_def()?;
    for xi in [-5.0, 0.0, 5.0] {
        let t = simulate(&ex2, 0, &[xi], 6)?;
        let xs: Vec<String> = t.states.iter().map(|s| format!("{:.4}", s[0])).collect();
        println!("ex2 from {xi:>4}: {}", xs.join(" "));
    }

    // A system that blows up is truncated instead of producing inf.
    let blowup = parse_system("dim 1\nf1 = x1^2 + 1")?;
    let t = simulate(&blowup, 0, &[2.0], 50)?;
    if let Some(mark) = &t.overflow {
        println!(
            "x -> x^2 + 1 overflows at k = {} after {} states",
            mark.at_k,
            t.states.len()
        );
    }

    let pendulum = parse_system(include_str!("../data/systems/pendulum.dsys"))?;
    let xi = [0.3, -0.2];
    let ad = transfer_matrix(&pendulum, 0, 20, &xi, JacobianMethod::Ad)?;
    let fd = transfer_matrix(&pendulum, 0, 20, &xi, JacobianMethod::Fd)?;
    let gap = ad.matrix.sub(&fd.matrix).max_abs();
    println!("pendulum transfer matrix over 20 steps: {:?}", ad.matrix.to_rows());
    println!("  max |AD - FD| = {gap:.2e}");
    if gap > 1e-5 {
        return Err("AD and finite differences disagree".into());
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
