//! Finite-difference checks of every differentiable operation at 64-bit.

use fvsr_tensor::gradcheck::{op_catalogue, run_case, DEFAULT_EPS};

const INSTANCES: usize = 100;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

#[test]
fn every_op_matches_central_differences() {
    let mut failures = Vec::new();
    for (i, case) in op_catalogue().iter().enumerate() {
        let report = run_case(case, INSTANCES, 1000 + i as u64, DEFAULT_EPS, FLOOR).unwrap();
        println!(
            "{:<22} max rel err {:.3e} over {} components",
            case.name, report.max_rel_err, report.checked
        );
        if report.max_rel_err > TOL {
            failures.push((case.name, report));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
