// Runs every builtin example against every property through the report
// layer and prints the observed verdicts next to the expected ones.

use std::error::Error;

use converge::config::{ConfigFile, Property};
use converge::registry::Registry;
use converge::report::run_file;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let registry = Registry::builtin();
    print!("{}", registry.table());
    let violations = registry.rule_violations();
    println!("rule violations: {}", violations.len());

    for ex in &registry.examples {
        for property in [Property::Incremental, Property::Convergent, Property::Contraction] {
            let cfg = ConfigFile {
                system: Some(ex.name.clone()),
                property: Some(property),
                budget: Some(200),
                samples: Some(256),
                ..ConfigFile::default()
            };
            let report = run_file(cfg)?;
            let check = report
                .expectation
                .as_ref()
                .map(|e| format!("{:?} (expected {}, observed {})", e.result, e.expected, e.observed))
                .unwrap_or_default();
            println!(
                "{:<4} {:<12} {:<13} {check}",
                ex.name,
                property.name(),
                format!("{:?}", report.status)
            );
        }
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
