use std::f64::consts::TAU;

use proptest::prelude::*;
use qpforce::models::{build_map, parse_map_expression, LiftedSkewMap, MapSpec, GOLDEN_OMEGA};
use qpforce::semiconj::*;
use qpforce::strips::{strip_order, StripOrder};

const H_SRC: &str = "x + 0.1*sin(2*pi*(x+theta))";

fn rho() -> f64 {
    3f64.sqrt() - 1.0
}

fn h(theta: f64, x: f64) -> f64 {
    x + 0.1 * (TAU * (x + theta)).sin()
}

fn h_inv(theta: f64, y: f64) -> f64 {
    let (mut a, mut b) = (y - 1.0, y + 1.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if h(theta, m) < y {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn conjugated_rigid() -> LiftedSkewMap {
    let h = parse_map_expression(H_SRC, &Default::default()).unwrap();
    let spec = MapSpec::Conjugated {
        inner: Box::new(MapSpec::Rigid { rho: rho() }),
        h,
    };
    build_map(&spec, GOLDEN_OMEGA).unwrap()
}

/// Transfer function of the cohomological equation φ(θ+ω) − φ(θ) = f(θ)
/// applied to f = 0.1 sin 2πθ = 0.1 (e^{2πiθ} − e^{−2πiθ})/2i.
fn coboundary(theta: f64, omega: f64) -> f64 {
    // f̂(±1) = ∓0.05i; φ̂(m) = f̂(m)/(e^{2πimω} − 1)
    let mut re = 0.0;
    for m in [1.0f64, -1.0] {
        let (fr, fi) = (0.0, -0.05 * m);
        let (dr, di) = ((TAU * m * omega).cos() - 1.0, (TAU * m * omega).sin());
        let den = dr * dr + di * di;
        let (pr, pi) = ((fr * dr + fi * di) / den, (fi * dr - fr * di) / den);
        let (er, ei) = ((TAU * m * theta).cos(), (TAU * m * theta).sin());
        re += pr * er - pi * ei;
    }
    re
}

#[test]
fn coboundary_oracle_solves_the_equation() {
    for j in 0..20 {
        let t = j as f64 / 20.0;
        let lhs = coboundary(t + GOLDEN_OMEGA, GOLDEN_OMEGA) - coboundary(t, GOLDEN_OMEGA);
        assert!((lhs - 0.1 * (TAU * t).sin()).abs() < 1e-14);
    }
}

#[test]
fn conjugated_rigid_family_matches_pulled_back_lines() {
    let map = conjugated_rigid();
    let fam = build_strip_family(&map, rho(), 128, 5000, 128).unwrap();
    assert!(fam.check_order().is_ok());
    // starts at heights y on one fibre put the top of A_r at
    // ĥ⁻¹(r + max_y(ĥ₀(y) − y)) = ĥ⁻¹(r + 0.1)
    for (k, s) in fam.strips().iter().enumerate() {
        for i in 0..128 {
            let t = i as f64 / 128.0;
            let exact = h_inv(t, fam.r_grid()[k] + 0.1);
            assert!((s.upper().values()[i] - exact).abs() < 1e-2);
        }
    }
    let hh = build_semiconjugacy(&fam, 128).unwrap();
    // H ≈ ĥ up to a fibre constant
    let offsets: Vec<f64> = (0..128)
        .flat_map(|i| {
            let hh = &hh;
            (0..=16).map(move |m| {
                let x = m as f64 / 16.0;
                hh.eval(i, x) - h(i as f64 / 128.0, x)
            })
        })
        .collect();
    let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
    assert!(offsets
        .iter()
        .all(|d| (d - mean).abs() < 1e-2 + 1.0 / 128.0));
    let d = semiconjugacy_defect(&hh, &map, rho());
    assert!(d.defect < 1e-2, "{d:?}");
}

#[test]
fn skew_family_matches_fourier_coboundary() {
    let a = parse_map_expression(
        "1.7320508075688772 - 1 + 0.1*sin(2*pi*theta)",
        &Default::default(),
    )
    .unwrap();
    let map = build_map(&MapSpec::Skew { a }, GOLDEN_OMEGA).unwrap();
    let fam = build_strip_family(&map, rho(), 64, 5000, 128).unwrap();
    let phi: Vec<f64> = (0..128)
        .map(|i| coboundary(i as f64 / 128.0, GOLDEN_OMEGA))
        .collect();
    let phi_mean = phi.iter().sum::<f64>() / phi.len() as f64;
    // B_r = r + φ − mean φ up to one constant shared by the whole family
    let diffs: Vec<f64> = fam
        .strips()
        .iter()
        .enumerate()
        .flat_map(|(k, s)| {
            let r = fam.r_grid()[k];
            let phi = &phi;
            s.upper()
                .values()
                .iter()
                .chain(s.lower().values())
                .enumerate()
                .map(move |(i, v)| v - (r + phi[i % 128] - phi_mean))
        })
        .collect();
    let c = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert!(diffs.iter().all(|d| (d - c).abs() < 1e-2));
    let hh = build_semiconjugacy(&fam, 64).unwrap();
    assert!(semiconjugacy_defect(&hh, &map, rho()).defect < 1e-2);
}

#[test]
fn h_is_unique_up_to_fibre_constant() {
    let map = conjugated_rigid();
    let run = |offset: f64| {
        let p = FamilyParams {
            r_grid: 128,
            n: 5000,
            theta_grid: 128,
            r_offset: offset,
            ..FamilyParams::default()
        };
        build_semiconjugacy(&build_strip_family_with(&map, rho(), &p).unwrap(), 64).unwrap()
    };
    let gap = centred_difference(&run(0.0), &run(0.5)).unwrap();
    assert!(gap < 2.0 / 128.0 + 1e-2, "{gap}");
}

#[test]
fn separated_strips_are_strictly_ordered() {
    let map = conjugated_rigid();
    let fam = build_strip_family(&map, rho(), 64, 4000, 128).unwrap();
    assert_eq!(strict_order_failure(&fam, 2), None);
    assert_eq!(
        strip_order(&fam.strips()[3], &fam.strips()[10]).unwrap(),
        StripOrder::Precedes
    );
}

#[test]
fn containment_bound_is_reported() {
    let map = conjugated_rigid();
    let p = FamilyParams {
        r_grid: 16,
        n: 2000,
        theta_grid: 16,
        c_bound: Some(0.05),
        ..FamilyParams::default()
    };
    let fam = build_strip_family_with(&map, rho(), &p).unwrap();
    // |T̂ⁿ(θ,y) − y − nρ| reaches 0.2 = twice the amplitude of ĥ − id
    assert!(!fam.contained);
    assert!((fam.max_excursion - 0.2).abs() < 1e-2);
}

#[test]
fn built_h_is_monotone_and_degree_one() {
    let map = conjugated_rigid();
    let fam = build_strip_family(&map, rho(), 32, 2000, 32).unwrap();
    let hh = build_semiconjugacy(&fam, 64).unwrap();
    for i in 0..32 {
        let table = hh.fibre_table(i);
        assert!(table.windows(2).all(|w| w[1].1 >= w[0].1));
        assert_eq!(table.last().unwrap().1 - table[0].1, 1.0);
    }
}

proptest! {
    #[test]
    fn interpolated_h_is_monotone_with_unit_period(
        raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 8), 16),
        xs in prop::collection::vec(-3.0f64..3.0, 20),
    ) {
        let r: Vec<f64> = (0..8).map(|k| k as f64 / 8.0).collect();
        let knots: Vec<Vec<f64>> = raw.iter().map(|f| {
            let mut f = f.clone();
            f.sort_by(f64::total_cmp);
            f
        }).collect();
        let hh = SemiConjugacy::from_knots(r, knots, 16).unwrap();
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        for i in 0..16 {
            for w in xs.windows(2) {
                prop_assert!(hh.eval(i, w[0]) <= hh.eval(i, w[1]) + 1e-12);
            }
            for &x in &xs {
                prop_assert!((hh.eval(i, x + 1.0) - hh.eval(i, x) - 1.0).abs() < 1e-9);
            }
        }
    }
}
