use potr_core::harness::ExperimentConfig;
use potr_core::verify;

#[test]
fn sampler_matches_single_gaussian_moments() {
    let c = verify::sampler_moments(10_000, 7);
    assert!(c.passed, "{c}");
}

#[test]
fn naive_without_delay_solves_the_unimodal_task() {
    let c = verify::oracle_consistency(&ExperimentConfig::default(), 200);
    assert!(c.passed, "{c}");
}

#[test]
fn quick_suite_passes() {
    let cfg = ExperimentConfig {
        episodes_per_cell: 2,
        ..ExperimentConfig::default()
    };
    for c in verify::run_all(verify::Level::Quick, &cfg) {
        assert!(c.passed, "{c}");
    }
}
