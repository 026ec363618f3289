// Searches for pairs of solutions of ex1 that drift apart, then fits an
// exponential rate to the separations of ex2.

use std::error::Error;

use converge::incremental::{falsify_incremental, fit_exp_rate, sample_pairs, separation_series, FalsifyConfig};
use converge::registry::Registry;
use converge::sampling::{StateBox, TimeRange};
use converge::verdict::Status;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let registry = Registry::builtin();
    let ex1 = registry.get("ex1").ok_or("ex1 missing")?.system_def()?;
    let cfg = FalsifyConfig::new(StateBox::cube(2, 1000.0), 10, 2000, 7);
    let report = falsify_incremental(&ex1, &cfg)?;
    println!(
        "ex1: {:?} after {} pairs",
        report.verdict.status, report.verdict.samples_used
    );
    if let Some(w) = &report.verdict.witness {
        println!("  witness {:?} / {:?} at k0 = {}", w.xi1, w.xi2, w.k0);
        println!(
            "  separation {:.3} at k = {} against {:.3} allowed ({})",
            w.observed, w.k, w.allowed, w.note
        );
    }
    print!(
        "{}",
        report
            .envelope
            .to_csv_string(4)
            .lines()
            .take(6)
            .collect::<Vec<_>>()
            .join("\n")
    );
    println!();
    if report.verdict.status != Status::Falsified {
        return Err("ex1 should be falsified".into());
    }

    let ex2 = registry.get("ex2").ok_or("ex2 missing")?.system_def()?;
    let pairs = sample_pairs(&StateBox::cube(1, 10.0), TimeRange::new(-20, 20)?, 200, 3);
    let series = pairs
        .iter()
        .map(|p| separation_series(&ex2, p, 20))
        .collect::<Result<Vec<_>, _>>()?;
    let fit = fit_exp_rate(&series, (5, 20))?;
    println!(
        "ex2 rate fit: kappa = {:.6}, lambda = {:.6}, residual = {:.1e}",
        fit.kappa, fit.lambda, fit.residual
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
