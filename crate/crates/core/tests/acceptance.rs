use focf::acceptance::{AcceptanceConfig, CriterionResult, Suite};
use std::sync::OnceLock;

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| Suite::new(AcceptanceConfig::default()))
}

fn check(id: u32) {
    let r: CriterionResult = suite().criterion(id);
    println!("{r}");
    assert!(r.pass, "{r}");
}

#[test]
fn c01_gradient_identity() {
    check(1);
}

#[test]
fn c02_curvature_pipeline() {
    check(2);
}

#[test]
fn c03_volume_law() {
    check(3);
}

#[test]
fn c04_dissipation_identity() {
    check(4);
}

#[test]
fn c05_product_spheres() {
    check(5);
}

#[test]
fn c06_smoothing_monitor() {
    check(6);
}

#[test]
fn c07_estimate_checks() {
    check(7);
}

#[test]
fn c08_local_sobolev() {
    check(8);
}

#[test]
fn c09_rescaling_correspondence() {
    check(9);
}

#[test]
fn c10_principal_symbol() {
    check(10);
}

#[test]
fn c11_classifier() {
    check(11);
}
