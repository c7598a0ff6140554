use depthnet::gradcheck::GRAD_TOL;
use depthnet::probe::{gradient_suite, SuiteDims};

#[test]
fn every_op_and_module_matches_finite_differences() {
    let reports = gradient_suite(SuiteDims::default()).unwrap();
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed(GRAD_TOL)).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    for name in ["conv_depthwise_9x9_d4", "glkam", "gbpm", "ppm", "decoder_stage", "full_model_glkam_on_gbpm_on"] {
        assert!(reports.iter().any(|r| r.name == name), "missing {name}");
    }
}

#[test]
fn suite_is_seed_stable() {
    let a = gradient_suite(SuiteDims { seed: 3, ..SuiteDims::default() }).unwrap();
    assert!(a.iter().all(|r| r.passed(GRAD_TOL)));
}
