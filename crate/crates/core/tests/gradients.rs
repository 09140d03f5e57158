use rsn_core::arch::FusionMode;
use rsn_core::verify::{check_primitive, check_prm, check_rsb, CaseResult, Primitive, SuiteConfig};

fn assert_ok(r: CaseResult) {
    assert!(r.passed(), "{}: {:.3e} at {}", r.name, r.max_rel_err, r.worst);
    assert_eq!(r.shapes, 20);
}

#[test]
fn primitives() {
    let cfg = SuiteConfig::default();
    for p in Primitive::ALL {
        assert_ok(check_primitive(p, &cfg).unwrap());
    }
}

fn blocks(fusion: FusionMode) {
    let cfg = SuiteConfig::default();
    for b in 2..=6 {
        assert_ok(check_rsb(b, fusion, &cfg).unwrap());
    }
}

#[test]
fn rsn_blocks() {
    blocks(FusionMode::Rsn);
}

#[test]
fn baseline1_blocks() {
    blocks(FusionMode::Baseline1);
}

#[test]
fn baseline2_blocks() {
    blocks(FusionMode::Baseline2);
}

#[test]
fn refine_machine() {
    assert_ok(check_prm(&SuiteConfig::default()).unwrap());
}
