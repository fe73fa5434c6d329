mod common;

#[test]
fn every_layer_matches_central_differences() {
    let results = common::gradcases::run_suite(100, 7);
    for r in &results {
        println!(
            "{:<24} cases={} worst_rel={:.3e}",
            r.name, r.cases, r.worst_rel
        );
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    assert!(failed.is_empty(), "gradient mismatch: {failed:?}");
    assert!(results.iter().all(|r| r.cases == 100));
}
