use std::path::PathBuf;

use resiot_core::harness::{run_scenario, Scenario};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    Scenario::load(&path).unwrap()
}

#[test]
fn bundled_scenarios_meet_expectations() {
    for name in [
        "rsf_gs_happy.toml",
        "rsf_gs_faults.toml",
        "rsf_abe_access.toml",
        "rsf_gs_zero_latency.toml",
    ] {
        let report = run_scenario(&scenario(name)).unwrap();
        for r in &report.runs {
            assert!(r.matched, "{name} run {}: {:?}", r.index, r.outcome);
        }
    }
}

#[test]
fn happy_path_elapsed_matches_cost_model() {
    let report = run_scenario(&scenario("rsf_gs_happy.toml")).unwrap();
    let elapsed = report.runs[0].elapsed_ms;
    assert!((elapsed - (509.837 + 526.037)).abs() < 1e-6, "{elapsed}");
}
