//! Acceptance suite. Runs without the libtest harness so that every criterion
//! prints its PASS/FAIL line; the process exits nonzero if any criterion fails.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use qpforce::circle::{
    curves_intersect, intersection_offsets, oscillation, winding_number, LiftedCurve,
};
use qpforce::classify::{classify, Budgets, MapConfig, Quadrant, Thresholds};
use qpforce::cocycle::{lyapunov_exponent, CocycleSpec};
use qpforce::models::{
    build_map, parse_map_expression, variation_v, LiftedSkewMap, MapSpec, GOLDEN_OMEGA,
};
use qpforce::regularity::{deviation_profile, Verdict};
use qpforce::rotation::{rational_relation_search, rotation_number_orbit};
use qpforce::semiconj::{
    build_semiconjugacy, build_strip_family_with, centred_difference, semiconjugacy_defect,
    FamilyParams,
};
use qpforce::strips::{
    graph_invariance_residual, pullback_attractor, strip_search, Direction, GraphKind, GridGraph,
};
use qpforce::transitivity::{box_transitivity_scan, TransitivityVerdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn expr(src: &str) -> qpforce::models::MapExpression {
    parse_map_expression(src, &Default::default()).unwrap()
}

fn rigid(omega: f64, rho: f64) -> LiftedSkewMap {
    build_map(&MapSpec::Rigid { rho }, omega).unwrap()
}

fn attracting() -> LiftedSkewMap {
    build_map(
        &MapSpec::AttractingGraph {
            b: 0.5,
            amplitude: 0.1,
        },
        GOLDEN_OMEGA,
    )
    .unwrap()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn rotation_exactness() -> Outcome {
    let map = rigid(GOLDEN_OMEGA, 0.25);
    let (r, dt) = timed(|| rotation_number_orbit(&map, 0.0, 0.0, 1_000_000).unwrap());
    let err = (r.value - 0.25).abs();
    check(
        err < 1e-9 && dt < Duration::from_secs(1),
        format!("|ρ − 0.25| = {err:.1e}, {dt:.2?}"),
    )
}

fn skew_mean() -> Outcome {
    let map = build_map(
        &MapSpec::Skew {
            a: expr("0.3 + 0.1*sin(2*pi*theta)"),
        },
        GOLDEN_OMEGA,
    )
    .unwrap();
    let r = rotation_number_orbit(&map, 0.0, 0.0, 1_000_000).unwrap();
    let err = (r.value - 0.3).abs();
    check(err < 1e-3, format!("|ρ − 0.3| = {err:.1e}"))
}

fn rational_relation() -> Outcome {
    let w = GOLDEN_OMEGA;
    let (res, dt) = timed(|| {
        let dep = rational_relation_search(w, (1.0 + w) / 2.0, 50, 50, 1e-9).unwrap();
        let indep =
            rational_relation_search(2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0, 50, 50, 1e-9).unwrap();
        (dep, indep)
    });
    let (dep, indep) = res;
    let found = dep.as_ref().map(|r| (r.l, r.k, r.q, r.residual));
    let ok = matches!(found, Some((-1, -1, 2, res)) if res < 1e-12)
        && indep.is_none()
        && dt < Duration::from_secs(1);
    check(
        ok,
        format!(
            "dependent {found:?}, independent {:?}, {dt:.2?}",
            indep.map(|r| (r.l, r.k, r.q))
        ),
    )
}

/// Minimum over a fine grid of the coboundary φ solving
/// φ(θ + ω) − φ(θ) = 0.1 sin 2πθ, φ(θ) = −0.05 cos(2π(θ − ω/2))/sin(πω) + const.
fn coboundary_argmin(omega: f64) -> f64 {
    let phi = |t: f64| -0.05 * (TAU * (t - omega / 2.0)).cos() / (PI * omega).sin();
    (0..1 << 16)
        .map(|i| i as f64 / 65536.0)
        .min_by(|a, b| phi(*a).total_cmp(&phi(*b)))
        .unwrap()
}

fn coboundary_bound() -> Outcome {
    let w = GOLDEN_OMEGA;
    let map = build_map(
        &MapSpec::Skew {
            a: expr("0.3 + 0.1*sin(2*pi*theta)"),
        },
        w,
    )
    .unwrap();
    let bound = 0.1 / (PI * w).sin().abs();
    let p = deviation_profile(&map, coboundary_argmin(w), 0.0, 0.3, 1_000_000).unwrap();
    let rel = (p.sup_dev - bound).abs() / bound;
    check(
        rel < 0.05,
        format!(
            "sup_dev {:.6} vs {bound:.6} ({:.2}% off)",
            p.sup_dev,
            100.0 * rel
        ),
    )
}

fn invariant_graph() -> Outcome {
    let map = attracting();
    let init = GridGraph::new(vec![0.0; 1024], GraphKind::Upper).unwrap();
    let r = pullback_attractor(&map, &init, 200, Direction::Forward).unwrap();
    let err = (0..1024)
        .map(|i| (r.last.values()[i] - 0.1 * (TAU * i as f64 / 1024.0).sin()).abs())
        .fold(0.0, f64::max);
    let res = graph_invariance_residual(&map, &r.last);
    check(
        r.converged && err < 1e-3 && res.residual < 10.0 * res.modulus,
        format!(
            "converged {}, sup error {err:.1e}, residual {:.1e} vs modulus {:.1e}",
            r.converged, res.residual, res.modulus
        ),
    )
}

fn strip_construction() -> Outcome {
    let w = GOLDEN_OMEGA;
    let map = rigid(w, (1.0 + w) / 2.0);
    let rho = rotation_number_orbit(&map, 0.0, 0.0, 1_000_000).unwrap();
    let Some(rel) = rational_relation_search(w, rho.value, 50, 50, 1e-9).unwrap() else {
        return Err("no relation found".into());
    };
    let rep = strip_search(&map, &rel, 1e-9, 1000, 256).map_err(|e| e.to_string())?;
    let s = &rep.strip;
    let ok =
        rel.q == 2 && s.cover_q() == 2 && s.winding_k() == 1 && s.width() == 0.0 && rep.contained;
    check(
        ok,
        format!(
            "q {}, winding {}, width {:.1e}, max excursion {:.1e}, contained {}",
            s.cover_q(),
            s.winding_k(),
            s.width(),
            rep.max_excursion,
            rep.contained
        ),
    )
}

fn semi_conjugacy() -> Outcome {
    let w = GOLDEN_OMEGA;
    let rho = 3f64.sqrt() - 1.0;
    let spec = MapSpec::Conjugated {
        inner: Box::new(MapSpec::Rigid { rho }),
        h: expr("x + 0.1*sin(2*pi*(x+theta))"),
    };
    let map = build_map(&spec, w).unwrap();
    let (res, dt) = timed(|| {
        let run = |offset: f64| {
            let p = FamilyParams {
                r_grid: 256,
                n: 10_000,
                theta_grid: 256,
                r_offset: offset,
                ..FamilyParams::default()
            };
            build_semiconjugacy(&build_strip_family_with(&map, rho, &p).unwrap(), 64).unwrap()
        };
        let (a, b) = (run(0.0), run(0.5));
        let defect = semiconjugacy_defect(&a, &map, rho).defect;
        // H(x̂ + 1) = H(x̂) + 1 holds by construction; the f64 sum 1 + H(0)
        // rounds, so the check allows a few ulp
        let fibres_ok = (0..256).all(|i| {
            let t = a.fibre_table(i);
            let unit = [0.0, 0.3, 0.77]
                .iter()
                .all(|&x| (a.eval(i, x + 1.0) - a.eval(i, x) - 1.0).abs() <= 4.0 * f64::EPSILON);
            t.windows(2).all(|p| p[1].1 >= p[0].1)
                && (t.last().unwrap().1 - t[0].1 - 1.0).abs() <= 4.0 * f64::EPSILON
                && unit
        });
        (defect, fibres_ok, centred_difference(&a, &b).unwrap())
    });
    let (defect, fibres_ok, gap) = res;
    let gap_bound = 2.0 / 256.0 + 1e-2;
    check(
        defect < 1e-2 && fibres_ok && gap < gap_bound && dt < Duration::from_secs(60),
        format!("defect {defect:.1e}, fibres monotone degree-one {fibres_ok}, gap {gap:.1e} < {gap_bound:.1e}, {dt:.1?}"),
    )
}

fn lyapunov() -> Outcome {
    let d = CocycleSpec::diagonal(GOLDEN_OMEGA, 2.0).unwrap();
    let diag = lyapunov_exponent(&d, 0.0, [1.0, 0.0], 100_000)
        .unwrap()
        .value;
    let r = CocycleSpec::rotation(GOLDEN_OMEGA, 0.7).unwrap();
    let rot = lyapunov_exponent(&r, 0.0, [0.6, 0.8], 100_000)
        .unwrap()
        .value;
    let err = (diag - 2f64.ln()).abs();
    check(
        err < 1e-6 && rot.abs() < 1e-6,
        format!("|λ − log 2| = {err:.1e}, rotation |λ| = {:.1e}", rot.abs()),
    )
}

fn transitivity() -> Outcome {
    let w = GOLDEN_OMEGA;
    let scan = |m: &LiftedSkewMap| box_transitivity_scan(m, 16, 9, 100_000).unwrap().verdict;
    let indep = scan(&rigid(w, 3f64.sqrt() - 1.0));
    let graph = scan(&attracting());
    let dep = scan(&rigid(w, (1.0 + w) / 2.0));
    check(
        indep == TransitivityVerdict::TransitiveEvidence
            && graph == TransitivityVerdict::ObstructionFound
            && dep == TransitivityVerdict::ObstructionFound,
        format!("independent {indep:?}, attracting graph {graph:?}, dependent {dep:?}"),
    )
}

/// Random walk curve over [0, 1] with `n` steps, rescaled so the endpoints
/// differ by `climb`.
fn random_curve(rng: &mut ChaCha8Rng, n: usize, climb: f64) -> LiftedCurve {
    let steps: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let total: f64 = steps.iter().sum();
    let start = rng.gen_range(-3.0..3.0);
    let mut y = start;
    let mut pts = vec![(0.0, y)];
    for (i, s) in steps.iter().enumerate() {
        y += s - total / n as f64 + climb / n as f64;
        pts.push(((i + 1) as f64 / n as f64, y));
    }
    LiftedCurve::new(pts).unwrap()
}

fn winding_intersection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut hits = 0;
    let mut checked = 0;
    for _ in 0..1000 {
        let (n, climb) = (rng.gen_range(2..200), rng.gen_range(-2.0..2.0));
        let phi = random_curve(&mut rng, n, climb);
        let (n, extra) = (rng.gen_range(2..200), rng.gen_range(0.0..2.0));
        let psi = random_curve(&mut rng, n, oscillation(&phi) + 1.0 + extra);
        if winding_number(&psi) < oscillation(&phi) + 1.0 {
            continue;
        }
        checked += 1;
        if curves_intersect(&phi, &psi, intersection_offsets(&phi, &psi))
            .unwrap()
            .is_some()
        {
            hits += 1;
        }
    }
    check(
        checked == 1000 && hits == checked,
        format!("{hits}/{checked} pairs intersect"),
    )
}

fn variation() -> Outcome {
    let m = build_map(
        &MapSpec::Arnold {
            c: 0.25,
            k: 0.5,
            eps: 0.3,
        },
        GOLDEN_OMEGA,
    )
    .unwrap();
    let v = variation_v(&m, 16, 4096).unwrap();
    check((v - 2.0).abs() < 1e-6, format!("V = {v:.9}"))
}

fn configs() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

fn reduced() -> Budgets {
    Budgets {
        regularity_n: 50_000,
        family_r: 128,
        family_n: 5000,
        family_g: 128,
        lyapunov_n: 10_000,
        transitivity_g: 8,
        transitivity_samples: 4,
        transitivity_n: 10_000,
        ..Budgets::default()
    }
}

fn suite_consistency() -> Outcome {
    let t = Thresholds::default();
    let mut summary = Vec::new();
    for p in configs() {
        let name = p.file_stem().unwrap().to_string_lossy().into_owned();
        let map = MapConfig::load(&p)
            .map_err(|e| format!("{name}: {e}"))?
            .build(None)
            .map_err(|e| e.to_string())?;
        let r = classify(&map, &reduced(), &t).map_err(|e| format!("{name}: {e}"))?;
        let strip = r.strip_certified();
        if strip && r.relation.is_none() && r.quadrant != Quadrant::Undecided {
            return Err(format!(
                "{name}: certified strip without relation in {:?}",
                r.quadrant
            ));
        }
        if strip
            && r.regularity
                .as_ref()
                .is_some_and(|v| v.verdict == Verdict::Irregular)
        {
            return Err(format!("{name}: irregular verdict with a certified strip"));
        }
        if strip && r.effective_regularity == Some(Verdict::Irregular) {
            return Err(format!("{name}: irregular quadrant with a certified strip"));
        }
        summary.push(format!("{name} {:?}", r.quadrant));
    }
    check(summary.len() >= 8, summary.join(", "))
}

fn classify_cli(dir: &Path, config: &str) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_qpforce"))
        .current_dir(dir)
        .args(["classify", "--map", config, "--seed", "42"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut same = Vec::new();
    for name in ["herman", "conjugated-rigid", "arnold"] {
        let src = configs()
            .into_iter()
            .find(|p| p.file_stem().is_some_and(|s| s == name))
            .unwrap();
        let mut cfg = MapConfig::load(&src).unwrap();
        cfg.budgets = Some(reduced());
        let file = format!("{name}.toml");
        std::fs::write(dir.path().join(&file), toml::to_string(&cfg).unwrap()).unwrap();
        let (a, b) = (
            classify_cli(dir.path(), &file),
            classify_cli(dir.path(), &file),
        );
        same.push((name, !a.is_empty() && a == b));
    }
    check(same.iter().all(|s| s.1), format!("{same:?}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("rotation exactness", rotation_exactness),
        ("skew mean", skew_mean),
        ("rational relation", rational_relation),
        ("coboundary deviation bound", coboundary_bound),
        ("invariant graph recovery", invariant_graph),
        ("strip construction", strip_construction),
        ("semi-conjugacy", semi_conjugacy),
        ("lyapunov exponents", lyapunov),
        ("transitivity scan", transitivity),
        ("winding intersection", winding_intersection),
        ("variation", variation),
        ("suite consistency", suite_consistency),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (outcome, dt) = timed(f);
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{dt:.1?}]", i + 1);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
