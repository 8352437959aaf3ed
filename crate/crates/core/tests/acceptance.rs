//! Acceptance suite. Each test prints one PASS/FAIL line (bypassing output
//! capture) and fails if its criterion does not hold.

use pint_mk::acceptance::{self, Criterion};
use std::io::Write;
use std::sync::Mutex;

// heavy criteria share the single machine; run them one at a time
static SERIAL: Mutex<()> = Mutex::new(());

fn check(f: fn() -> pint_mk::Result<Criterion>) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = std::time::Instant::now();
    let c = f().expect("criterion ran");
    let line = format!("{c} [{:.1}s]\n", start.elapsed().as_secs_f64());
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(c.passed, "{c}");
}

#[test]
fn pinned_tolerances() {
    assert_eq!(acceptance::TABLE2_ITERATION_TOL, 1);
    assert_eq!(acceptance::TABLE1_KAPPA_REL_TOL, 0.05);
    assert_eq!(acceptance::TABLE1_COURANT_SPREAD, 0.02);
    assert_eq!(acceptance::RESIDUAL_TOL, 1e-6);
    assert_eq!(acceptance::ORACLE_TOL, 1e-4);
    assert_eq!(acceptance::ITERAND_TOL, 1e-10);
    assert_eq!(acceptance::IDENTITY_TOL, 1e-12);
    assert_eq!(acceptance::SPECTRAL_TOL, 1e-8);
    assert_eq!(acceptance::TABLE3_ITERATION_TOL, 1);
    assert_eq!(acceptance::CGS_FRACTION_RANGE, (0.85, 0.98));
    assert_eq!(acceptance::COURANT_ITERATION_SPREAD, 2);
    assert_eq!(acceptance::FRACTION_REL_TOL, 0.15);
    assert_eq!(acceptance::criteria().len(), 9);
}

#[test]
fn criterion_1_table2_iteration_counts() {
    check(acceptance::table2_iterations);
}

#[test]
fn criterion_2_table1_condition_numbers() {
    check(acceptance::table1_condition_numbers);
}

#[test]
fn criterion_3_oracle_equivalence() {
    check(acceptance::oracle_equivalence);
}

#[test]
fn criterion_4_parareal_two_grid_iterands() {
    check(acceptance::parareal_two_grid_equality);
}

#[test]
fn criterion_5_algebraic_identities() {
    check(acceptance::algebraic_identities);
}

#[test]
fn criterion_6_spectral_equalities() {
    check(acceptance::spectral_equalities);
}

#[test]
fn criterion_7_table3_multilevel() {
    check(acceptance::table3_multilevel);
}

#[test]
fn criterion_8_courant_independence() {
    check(acceptance::courant_independence);
}

#[test]
fn criterion_9_cost_formula_consistency() {
    check(acceptance::cost_formula_consistency);
}
