use std::f64::consts::PI;

use blochgap::floquet::Operator;
use blochgap::gauge::GaugeConfig;
use blochgap::lattice::LatticePair;
use blochgap::symbols::{Perturbation, SymbolModel};
use blochgap::xisearch::{run_steps, XiSearchConfig};

fn circle_op(d: usize, h: f64, eps: f64) -> Operator {
    Operator::new(
        LatticePair::cubic(d, 2.0 * PI).unwrap(),
        SymbolModel::power(d, 2.0).unwrap(),
        Perturbation::cosines(d, 1.0).unwrap(),
        h,
        eps,
    )
    .unwrap()
}

fn d2_config() -> XiSearchConfig {
    XiSearchConfig { seed: 7, gauge: GaugeConfig { rho: Some(0.3), ..Default::default() }, ..Default::default() }
}

#[test]
fn unperturbed_search_certifies() {
    let op = circle_op(2, 0.1, 0.0);
    let r = run_steps(&op, &d2_config()).unwrap();
    assert!(r.certified(), "{:?}", r.failure);
    assert!(r.upsilon_formula.is_none());
    assert_eq!(r.gauge.residual, 0.0);
    let c = r.certification.unwrap();
    assert!(c.center_residual <= 1e-9);
    // with ε = 0 the band value is A0 itself
    let v = op.symbol.value(&r.xi_star);
    assert!((v - 1.0).abs() <= 1e-9);
}

#[test]
fn search_is_deterministic() {
    let op = circle_op(2, 0.2, 0.04);
    let a = run_steps(&op, &d2_config()).unwrap();
    let b = run_steps(&op, &d2_config()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn perturbed_search_reports_steps() {
    let h: f64 = 0.2;
    let op = circle_op(2, h, h * h);
    let r = run_steps(&op, &d2_config()).unwrap();
    assert_eq!(r.per_step.len(), 1);
    let s = &r.per_step[0];
    assert!(s.r_hat > 0.0);
    assert!(s.upsilon > 0.0 && s.upsilon <= s.upsilon_target);
    assert!(s.t_range.0 <= s.t_star && s.t_star <= s.t_range.1);
    for (a, b) in &s.excluded {
        assert!(!(a..=b).contains(&&s.t_star) || a == b);
    }
    if r.certified() {
        let c = r.certification.as_ref().unwrap();
        assert!(c.separation_margin >= 0.0 && c.coverage_low_margin >= 0.0 && c.coverage_high_margin >= 0.0);
    }
}

#[test]
fn three_dimensional_coarse_search() {
    // desk-sized d = 3: a small θ ball and window, ε = h²
    let h: f64 = 0.3;
    let op = circle_op(3, h, h * h);
    let mut cfg = XiSearchConfig {
        seed: 7,
        rho_star: 0.02,
        t_points: 401,
        certify_rings: 0,
        certify_random: 0,
        diameter_points: 3,
        ..Default::default()
    };
    cfg.resonance.k_mult = 1.0;
    cfg.resonance.omega_abs = 2.0;
    cfg.resonance.c_window = 1.0;
    cfg.window.margin_shells = 1.0;
    cfg.window.c1 = 0.3;
    let r = run_steps(&op, &cfg).unwrap();
    assert_eq!(r.per_step.len(), 2);
    assert!(r.per_step.iter().all(|s| s.upsilon > 0.0));
    assert!(r.per_step[1].upsilon < r.per_step[0].upsilon);
    assert!(r.certified(), "{:?}", r.failure);
}
