mod simulate_and_transfer {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/simulate_and_transfer.rs"
    ));
}

#[test]
fn simulate_and_transfer_runs() {
    simulate_and_transfer::run_example().expect("simulate_and_transfer example should run");
}

mod incremental_falsify {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/incremental_falsify.rs"));
}

#[test]
fn incremental_falsify_runs() {
    incremental_falsify::run_example().expect("incremental_falsify example should run");
}

mod convergent_reference {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/convergent_reference.rs"));
}

#[test]
fn convergent_reference_runs() {
    convergent_reference::run_example().expect("convergent_reference example should run");
}

mod contraction_metric {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/contraction_metric.rs"));
}

#[test]
fn contraction_metric_runs() {
    contraction_metric::run_example().expect("contraction_metric example should run");
}

mod demidovic_search {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/demidovic_search.rs"));
}

#[test]
fn demidovic_search_runs() {
    demidovic_search::run_example().expect("demidovic_search example should run");
}

mod q_builder {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/q_builder.rs"));
}

#[test]
fn q_builder_runs() {
    q_builder::run_example().expect("q_builder example should run");
}

mod lyapunov_check {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/lyapunov_check.rs"));
}

#[test]
fn lyapunov_check_runs() {
    lyapunov_check::run_example().expect("lyapunov_check example should run");
}

mod registry_run {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/registry_run.rs"));
}

#[test]
fn registry_run_runs() {
    registry_run::run_example().expect("registry_run example should run");
}
