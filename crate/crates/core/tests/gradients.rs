mod common;

use common::{model_case, module_cases, op_cases, Case};

fn assert_cases(cases: &[Case]) {
    let mut failed = Vec::new();
    for c in cases {
        println!("{}", c.line());
        if !c.passes() {
            println!("  worst {:?}", c.worst);
            failed.push(c.name.clone());
        }
    }
    assert!(failed.is_empty(), "gradient mismatch in {failed:?}");
}

#[test]
fn every_op_matches_central_differences() {
    assert_cases(&op_cases());
}

#[test]
fn every_module_matches_central_differences() {
    assert_cases(&module_cases());
}

#[test]
fn one_phase_model_matches_central_differences() {
    assert_cases(&[model_case(6)]);
}
