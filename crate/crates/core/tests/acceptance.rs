//! Acceptance battery: one test per exit criterion, all driven by the shared
//! report so the measured values print once and every criterion gets its own
//! verdict. Run with `--nocapture` to see the measured lines on success.

use causalqm::verify::{run_all, VerifyConfig, VerifyReport};
use std::sync::OnceLock;

fn report() -> &'static VerifyReport {
    static REPORT: OnceLock<VerifyReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let report = run_all(&VerifyConfig::default());
        println!("{}", report.render());
        report
    })
}

fn assert_criterion(index: usize) {
    let report = report();
    let c = report
        .criteria
        .iter()
        .find(|c| c.index == index)
        .expect("criterion missing from the report");
    let mut detail = String::new();
    if let Some(err) = &c.error {
        detail.push_str(&format!("\n  error: {err}"));
    }
    for l in &c.lines {
        let mark = if l.passed { "ok  " } else { "FAIL" };
        detail.push_str(&format!("\n  [{mark}] {}: {}", l.label, l.detail));
    }
    assert!(c.passed, "criterion {index} ({}) failed:{detail}", c.name);
}

#[test]
fn criterion_1_marginal_reproduction() {
    assert_criterion(1);
}

#[test]
fn criterion_2_one_dimensional_closed_form() {
    assert_criterion(2);
}

#[test]
fn criterion_3_continuity_constraint() {
    assert_criterion(3);
}

#[test]
fn criterion_4_w_field_solution() {
    assert_criterion(4);
}

#[test]
fn criterion_5_dbb_degeneracy() {
    assert_criterion(5);
}

#[test]
fn criterion_6_hamiltonian_existence() {
    assert_criterion(6);
}

#[test]
fn criterion_7_equivariance() {
    assert_criterion(7);
}

#[test]
fn criterion_8_collapse_and_divergence() {
    assert_criterion(8);
}

#[test]
fn criterion_9_determinism() {
    assert_criterion(9);
}
