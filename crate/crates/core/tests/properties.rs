use std::f64::consts::PI;

use blochgap::floquet::{self, BandTable, GridSpec, Operator, SweepSpec, WindowConfig};
use blochgap::lattice::LatticePair;
use blochgap::linalg;
use blochgap::manifest::{parse_eps_rule, parse_lattice_spec, ExperimentManifest};
use blochgap::resonance::{build_partition, ResonanceConfig};
use blochgap::symbols::{parse_coefficient, Perturbation, SymbolModel};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn skew_lattice(a: f64, b: f64) -> LatticePair {
    LatticePair::from_dual(DMatrix::from_row_slice(2, 2, &[1.0, a, 0.0, b])).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn fold_round_trips(a in -0.5f64..0.5, b in 0.5f64..2.0, x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let l = skew_lattice(a, b);
        let (g, frac) = l.fold_to_fundamental(&[x, y]);
        let p = l.point(&g);
        prop_assert!((p[0] + frac[0] - x).abs() < 1e-9);
        prop_assert!((p[1] + frac[1] - y).abs() < 1e-9);
        for c in l.coords(&frac) {
            prop_assert!((-1e-12..1.0).contains(&c));
        }
    }

    #[test]
    fn enumerate_ball_is_exact(a in -0.5f64..0.5, b in 0.5f64..2.0, r in 0.0f64..6.0) {
        let l = skew_lattice(a, b);
        let got = l.enumerate_ball(r);
        prop_assert!(got.iter().all(|c| l.norm(c) <= r + 1e-12));
        let mut n = 0;
        for i in -40i64..=40 {
            for j in -40i64..=40 {
                if l.norm(&[i, j, 0]) <= r {
                    n += 1;
                }
            }
        }
        prop_assert_eq!(got.len(), n);
    }

    #[test]
    fn floquet_matrix_is_hermitian(h in 0.08f64..0.3, eps in 0.0f64..0.1, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let op = Operator::new(
            LatticePair::cubic(2, 2.0 * PI).unwrap(),
            SymbolModel::power(2, 2.0).unwrap(),
            Perturbation::cosines(2, 1.0).unwrap(),
            h,
            eps,
        ).unwrap();
        let w = op.basis_window(0.9, 1.1, &WindowConfig::default());
        let m = op.assemble(&op.basis(&[x, y], w).unwrap());
        prop_assert!(linalg::hermitian_defect(&m.entries) < 1e-14);
    }

    #[test]
    fn spectrum_is_lattice_periodic(h in 0.1f64..0.4, eps in 0.0f64..0.05, x in 0.0f64..1.0) {
        let op = Operator::new(
            LatticePair::cubic(1, 2.0 * PI).unwrap(),
            SymbolModel::power(1, 2.0).unwrap(),
            Perturbation::cosines(1, 1.0).unwrap(),
            h,
            eps,
        ).unwrap();
        let w = op.basis_window(0.0, 0.5, &WindowConfig { full_below: true, ..Default::default() });
        let a = op.assemble(&op.basis(&[x], w).unwrap()).spectrum().unwrap();
        let b = op.assemble(&op.basis(&[x + 1.0], w).unwrap()).spectrum().unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn partitions_are_equivalence_relations(h in 0.08f64..0.3, x in 0.0f64..1.0, y in 0.0f64..1.0, p in 1.2f64..2.0) {
        let s = SymbolModel::power(2, 2.0).unwrap();
        let part = build_partition(&s, &LatticePair::cubic(2, 2.0 * PI).unwrap(), &ResonanceConfig::default(), h, h.powf(p), &[x, y], 1.0).unwrap();
        prop_assert!(part.verify_equivalence().is_ok());
    }

    #[test]
    fn gaps_avoid_band_values(vals in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 0..6), 1..8), res in 1e-6f64..0.05) {
        let n = vals.len();
        let table = BandTable {
            grid: vec![vec![0.0]; n],
            values: vals.clone(),
            counting: vec![0; n],
            tau: 0.0,
            lo: -1.0,
            hi: 1.0,
            spectrum_floor: None,
            lipschitz: 0.0,
            covering_radius: 0.0,
            failures: Vec::new(),
            basis_sizes: vec![0; n],
            symmetry_order: 1,
            solved_points: n,
        };
        let gaps = floquet::gap_report_at(&table, 0.0, 1.0, res);
        for g in &gaps {
            prop_assert!(g.gap_end > g.gap_start);
            for v in vals.iter().flatten() {
                prop_assert!(*v + res <= g.gap_start + 1e-15 || *v - res >= g.gap_end - 1e-15);
            }
        }
        for w in gaps.windows(2) {
            prop_assert!(w[0].gap_end < w[1].gap_start);
        }
    }

    #[test]
    fn symbol_gradients_match_differences(m in 2.0f64..6.0, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let s = SymbolModel::power(2, m).unwrap();
        let p = [x, y];
        let g = s.gradient(&p);
        let e = 1e-6;
        for j in 0..2 {
            let mut a = p;
            let mut b = p;
            a[j] += e;
            b[j] -= e;
            let fd = (s.value(&a) - s.value(&b)) / (2.0 * e);
            prop_assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0));
        }
    }

    #[test]
    fn parsers_never_panic(src in "\\PC{0,40}") {
        let _ = parse_coefficient(&src);
        let _ = parse_eps_rule(&src);
        let _ = parse_lattice_spec(&src, 2);
        let _ = ExperimentManifest::parse(&src);
    }

    #[test]
    fn eps_rules_evaluate(c in 0.01f64..10.0, p in 0.1f64..3.0, h in 0.01f64..0.5) {
        let r = parse_eps_rule(&format!("{c}*h^{p}")).unwrap();
        prop_assert!((r.eval(h) - c * h.powf(p)).abs() <= 1e-12 * (c * h.powf(p)).max(1e-300));
    }

    #[test]
    fn coefficient_polynomials_evaluate(a in -5.0f64..5.0, b in -5.0f64..5.0, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let q = parse_coefficient(&format!("{a} + {b}*xi1*xi2 - xi2^2")).unwrap();
        let v = q.eval(&[x, y]);
        prop_assert!((v.re - (a + b * x * y - y * y)).abs() < 1e-12);
        prop_assert!(v.im == 0.0);
    }
}

#[test]
fn sweep_is_worker_independent() {
    let op = Operator::new(
        LatticePair::cubic(2, 2.0 * PI).unwrap(),
        SymbolModel::power(2, 2.0).unwrap(),
        Perturbation::cosines(2, 1.0).unwrap(),
        0.1,
        0.1f64.powf(1.5),
    )
    .unwrap();
    let window = op.basis_window(0.95, 1.05, &WindowConfig::default());
    let mk = |w| SweepSpec { grid: GridSpec::Regular(vec![6, 6]), lo: 0.95, hi: 1.05, window, tau: 1.0, workers: Some(w) };
    let a = floquet::sweep(&op, &mk(1)).unwrap();
    let b = floquet::sweep(&op, &mk(8)).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.counting, b.counting);
}
