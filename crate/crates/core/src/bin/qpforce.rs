use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use qpforce::classify::{classify, sweep, CocycleConfig, ConfigError, MapConfig, SweepStage};
use qpforce::cocycle::{lyapunov_seeds, CocycleSpec};
use qpforce::models::{build_map, validate_homeomorphism, LiftedSkewMap, MapSpec};
use qpforce::regularity::{
    deviation_profile, deviation_profile_traced, orbit_seeds, regularity_diagnostic,
};
use qpforce::rotation::{
    rational_relation_search, rotation_number_fibre_average, rotation_number_orbit, DEFAULT_MAX_K,
    DEFAULT_MAX_Q, DEFAULT_RELATION_TOL,
};
use qpforce::semiconj::{
    build_semiconjugacy, build_strip_family_with, semiconjugacy_defect, FamilyParams,
    SemiconjReport,
};
use qpforce::strips::{
    graph_invariance_residual, pullback_attractor, strip_search, Direction, GraphKind, GridGraph,
};
use qpforce::transitivity::box_transitivity_scan;
use qpforce::SCHEMA_VERSION;

#[derive(Parser)]
#[command(
    name = "qpforce",
    version,
    about = "Diagnostics for quasiperiodically forced circle homeomorphisms"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Map config (TOML or JSON)
    #[arg(long, global = true)]
    map: Option<PathBuf>,
    /// Cocycle config (TOML or JSON); its projective action is the map
    #[arg(long, global = true, conflicts_with = "map")]
    cocycle: Option<PathBuf>,
    /// Overrides omega from the config
    #[arg(long, global = true)]
    omega: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; the format follows the extension unless --format is given
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Fibrewise rotation number
    Rotnum {
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        /// Average over a grid of fibres instead of following one orbit
        #[arg(long)]
        fibre_avg: bool,
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
    /// Rational relation l + kω + qρ = 0
    Deps {
        /// Rotation number; estimated from the map when absent
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_MAX_Q)]
        max_q: u32,
        #[arg(long, default_value_t = DEFAULT_MAX_K)]
        max_k: u32,
        #[arg(long, default_value_t = DEFAULT_RELATION_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
    },
    /// Deviation profiles and the regular/irregular verdict
    Deviations {
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 8)]
        orbits: usize,
        #[arg(long, default_value_t = qpforce::regularity::DEFAULT_EXPONENT_THRESHOLD)]
        threshold: f64,
        /// CSV trace n,D_n of the first orbit
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        decimate: u64,
    },
    /// Invariant graph by pullback of the zero graph
    Graph {
        #[arg(long, default_value_t = 1024)]
        grid: usize,
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        /// Iterate the inverse map (repelling graphs)
        #[arg(long)]
        backward: bool,
    },
    /// Invariant strip on the q-cover given by the rational relation
    Strip {
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 256)]
        grid: usize,
        #[arg(long, default_value_t = 2.0)]
        c_bound: f64,
        #[arg(long, default_value_t = DEFAULT_RELATION_TOL)]
        tol: f64,
    },
    /// Semi-conjugacy to the torus translation
    Semiconj {
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 256)]
        r_grid: usize,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 256)]
        grid: usize,
        #[arg(long, default_value_t = 64)]
        x_res: usize,
    },
    /// Lyapunov exponent of the cocycle
    Lyapunov {
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
    },
    /// Box reachability scan
    Transitive {
        #[arg(long, default_value_t = 16)]
        grid: usize,
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = qpforce::transitivity::DEFAULT_SAMPLES_PER_BOX)]
        samples: usize,
    },
    /// Full pipeline and quadrant
    Classify,
    /// One stage over a parameter grid
    Sweep {
        #[arg(long, value_enum)]
        stage: SweepStage,
        /// name=v1,v2,... or name=start:stop:count (repeatable)
        #[arg(long = "param", value_parser = parse_range)]
        params: Vec<(String, Vec<f64>)>,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn parse_range(s: &str) -> Result<(String, Vec<f64>), String> {
    let (name, spec) = s.split_once('=').ok_or("expected name=values")?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t}: {e}"));
    let values = if spec.trim().is_empty() {
        Vec::new()
    } else if let [a, b, c] = spec.split(':').collect::<Vec<_>>()[..] {
        let (a, b) = (num(a)?, num(b)?);
        let count: usize = c.trim().parse().map_err(|e| format!("{c}: {e}"))?;
        match count {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..count)
                .map(|i| a + (b - a) * i as f64 / (count - 1) as f64)
                .collect(),
        }
    } else {
        spec.split(',').map(num).collect::<Result<_, _>>()?
    };
    Ok((name.trim().to_string(), values))
}

struct Loaded {
    map: LiftedSkewMap,
    config: Option<MapConfig>,
    cocycle: Option<CocycleSpec>,
}

fn load(g: &Global) -> Result<Loaded, CliError> {
    let loaded = if let Some(path) = &g.map {
        let config = MapConfig::load(path)?;
        let map = config.build(g.omega)?;
        let cocycle = map.cocycle().cloned();
        Loaded {
            map,
            config: Some(config),
            cocycle,
        }
    } else if let Some(path) = &g.cocycle {
        let c = CocycleConfig::load(path)?;
        let omega = match (g.omega, &c.omega) {
            (Some(w), _) => w,
            (None, Some(s)) => s.value().map_err(|e| CliError::Config(e.to_string()))?,
            (None, None) => return Err(ConfigError::MissingOmega.into()),
        };
        let spec = c.build(omega)?;
        let map = build_map(&MapSpec::Projective(spec.clone()), omega)
            .map_err(|e| CliError::Config(e.to_string()))?;
        Loaded {
            map,
            config: None,
            cocycle: Some(spec),
        }
    } else {
        return Err(CliError::Config(
            "one of --map or --cocycle is required".into(),
        ));
    };
    let v = validate_homeomorphism(&loaded.map, 256, 256)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if !v.pass {
        return Err(CliError::Config(format!(
            "map is not a family of degree-one circle homeomorphisms (periodicity defect {:e}, min increment {:e})",
            v.max_periodicity_defect, v.min_monotone_increment
        )));
    }
    Ok(loaded)
}

fn format_of(g: &Global) -> Format {
    g.format.unwrap_or_else(|| {
        match g
            .out
            .as_ref()
            .and_then(|p| p.extension())
            .and_then(|e| e.to_str())
        {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Json,
        }
    })
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Adds schema_version to an object.
fn versioned<T: Serialize>(v: &T) -> Value {
    let mut v = serde_json::to_value(v).expect("serializable");
    if let Value::Object(m) = &mut v {
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    v
}

/// In JSON mode the summary goes to --out (or stdout). In CSV mode the table
/// goes to --out (or stdout), and the summary to stdout when --out is set.
fn emit(
    g: &Global,
    summary: Value,
    table: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let json_text = serde_json::to_string_pretty(&summary).expect("serializable");
    match format_of(g) {
        Format::Json => {
            let mut w = sink(g.out.as_deref())?;
            writeln!(w, "{json_text}").map_err(runtime)?;
            w.flush().map_err(runtime)?;
        }
        Format::Csv => {
            let mut w = sink(g.out.as_deref())?;
            table(&mut *w)?;
            w.flush().map_err(runtime)?;
            if g.out.is_some() {
                println!("{json_text}");
            }
        }
    }
    Ok(())
}

fn single_row(
    header: &[&str],
    row: &[String],
) -> impl FnOnce(&mut dyn Write) -> Result<(), CliError> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    let row = row.to_vec();
    move |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(&header).map_err(runtime)?;
        c.write_record(&row).map_err(runtime)?;
        c.flush().map_err(runtime)
    }
}

fn estimate_rho(map: &LiftedSkewMap, rho: Option<f64>) -> Result<f64, CliError> {
    match rho {
        Some(r) => Ok(r),
        None => Ok(rotation_number_orbit(map, 0.0, 0.0, 1_000_000)
            .map_err(runtime)?
            .value),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Rotnum {
            n,
            theta,
            x,
            fibre_avg,
            grid,
        } => {
            let l = load(g)?;
            let e = if fibre_avg {
                rotation_number_fibre_average(&l.map, n, grid)
            } else {
                rotation_number_orbit(&l.map, theta, x, n)
            }
            .map_err(runtime)?;
            let summary = json!({
                "schema_version": SCHEMA_VERSION,
                "value": e.value,
                "spread": e.spread,
                "n": e.n_iterates,
                "method": e.method,
            });
            emit(
                g,
                summary,
                single_row(
                    &["value", "spread", "n"],
                    &[e.value.to_string(), e.spread.to_string(), n.to_string()],
                ),
            )
        }
        Command::Deps {
            rho,
            max_q,
            max_k,
            tol,
            n,
        } => {
            let (omega, rho) = match (rho, g.omega) {
                (Some(r), Some(w)) if g.map.is_none() && g.cocycle.is_none() => (w, r),
                _ => {
                    let l = load(g)?;
                    let r = match rho {
                        Some(r) => r,
                        None => {
                            rotation_number_orbit(&l.map, 0.0, 0.0, n)
                                .map_err(runtime)?
                                .value
                        }
                    };
                    (l.map.omega(), r)
                }
            };
            let rel = rational_relation_search(omega, rho, max_q, max_k, tol).map_err(runtime)?;
            let summary = json!({
                "schema_version": SCHEMA_VERSION,
                "omega": omega,
                "rho": rho,
                "relation": rel,
                "rotation_form": rel.map(|r| r.as_rotation_form()),
            });
            let row: Vec<String> = match rel {
                Some(r) => vec![
                    r.l.to_string(),
                    r.k.to_string(),
                    r.q.to_string(),
                    r.residual.to_string(),
                ],
                None => vec![String::new(); 4],
            };
            emit(g, summary, single_row(&["l", "k", "q", "residual"], &row))
        }
        Command::Deviations {
            rho,
            n,
            orbits,
            threshold,
            trace,
            decimate,
        } => {
            let l = load(g)?;
            let rho = estimate_rho(&l.map, rho)?;
            let (profiles, verdict) = if orbits >= 4 && n >= 10_000 {
                let v =
                    regularity_diagnostic(&l.map, rho, orbits, n, threshold).map_err(runtime)?;
                (v.evidence.clone(), Some(v))
            } else {
                let p = orbit_seeds(orbits.max(1))
                    .into_iter()
                    .map(|(t, x)| deviation_profile(&l.map, t, x, rho, n))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(runtime)?;
                (p, None)
            };
            if let Some(path) = &trace {
                let (t, x) = orbit_seeds(orbits.max(1))[0];
                let (_, points) =
                    deviation_profile_traced(&l.map, t, x, rho, n, Some(decimate.max(1)))
                        .map_err(runtime)?;
                let mut c = csv::Writer::from_writer(sink(Some(path))?);
                c.write_record(["n", "D_n"]).map_err(runtime)?;
                for (k, d) in points {
                    c.write_record([k.to_string(), d.to_string()])
                        .map_err(runtime)?;
                }
                c.flush().map_err(runtime)?;
            }
            let summary = json!({
                "schema_version": SCHEMA_VERSION,
                "rho": rho,
                "verdict": verdict,
                "profiles": profiles,
            });
            emit(g, summary, move |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["theta", "x", "sup_dev", "inf_dev", "growth_exponent"])
                    .map_err(runtime)?;
                for p in &profiles {
                    c.write_record([
                        p.start.0.to_string(),
                        p.start.1.to_string(),
                        p.sup_dev.to_string(),
                        p.inf_dev.to_string(),
                        p.growth_exponent.to_string(),
                    ])
                    .map_err(runtime)?;
                }
                c.flush().map_err(runtime)
            })
        }
        Command::Graph {
            grid,
            iterations,
            backward,
        } => {
            let l = load(g)?;
            let init = GridGraph::from_fn(grid, GraphKind::Upper, |_| 0.0).map_err(runtime)?;
            let dir = if backward {
                Direction::Backward
            } else {
                Direction::Forward
            };
            let r = pullback_attractor(&l.map, &init, iterations, dir).map_err(runtime)?;
            let res = graph_invariance_residual(&l.map, &r.last);
            let mut summary = versioned(&r.strip.sidecar(Some(r.converged)));
            summary["last_change"] = json!(r.last_change);
            summary["invariance_residual"] = json!(res.residual);
            summary["grid_modulus"] = json!(res.modulus);
            emit(g, summary, move |w| r.strip.write_csv(w).map_err(runtime))
        }
        Command::Strip {
            rho,
            n,
            grid,
            c_bound,
            tol,
        } => {
            let l = load(g)?;
            let rho = estimate_rho(&l.map, rho)?;
            let rel =
                rational_relation_search(l.map.omega(), rho, DEFAULT_MAX_Q, DEFAULT_MAX_K, tol)
                    .map_err(runtime)?
                    .ok_or_else(|| {
                        runtime(format!(
                            "no rational relation for rho = {rho} at tolerance {tol}"
                        ))
                    })?;
            let s = strip_search(&l.map, &rel, c_bound, n, grid).map_err(runtime)?;
            let mut summary = versioned(&s.strip.sidecar(None));
            summary["relation"] = json!(rel);
            summary["max_half_width"] = json!(s.max_half_width);
            summary["max_excursion"] = json!(s.max_excursion);
            summary["c_bound"] = json!(s.c_bound);
            summary["contained"] = json!(s.contained);
            emit(g, summary, move |w| s.strip.write_csv(w).map_err(runtime))
        }
        Command::Semiconj {
            rho,
            r_grid,
            n,
            grid,
            x_res,
        } => {
            let l = load(g)?;
            let rho = estimate_rho(&l.map, rho)?;
            let p = FamilyParams {
                r_grid,
                n,
                theta_grid: grid,
                ..FamilyParams::default()
            };
            let fam = build_strip_family_with(&l.map, rho, &p).map_err(runtime)?;
            let ordered = fam.check_order().is_ok();
            let h = build_semiconjugacy(&fam, x_res).map_err(runtime)?;
            let d = semiconjugacy_defect(&h, &l.map, rho);
            let report = SemiconjReport {
                schema_version: SCHEMA_VERSION,
                defect: d.defect,
                quantization: d.quantization,
                ordered,
                contained: fam.contained,
                max_excursion: fam.max_excursion,
                r_grid,
                theta_grid: grid,
                n,
            };
            let mut summary = serde_json::to_value(&report).expect("serializable");
            summary["rho"] = json!(rho);
            emit(g, summary, move |w| h.write_csv(w).map_err(runtime))
        }
        Command::Lyapunov { n, seeds, theta } => {
            let l = load(g)?;
            let c = l.cocycle.ok_or_else(|| {
                CliError::Config(
                    "lyapunov needs a cocycle (--cocycle, or a projective --map)".into(),
                )
            })?;
            let r = lyapunov_seeds(&c, theta, n, seeds, g.seed).map_err(runtime)?;
            let mut summary = versioned(&r);
            summary["degree"] = json!(c.degree());
            emit(g, summary, move |w| {
                let mut csv = csv::Writer::from_writer(w);
                csv.write_record(["seed", "value"]).map_err(runtime)?;
                for (i, v) in r.per_seed.iter().enumerate() {
                    csv.write_record([i.to_string(), v.to_string()])
                        .map_err(runtime)?;
                }
                csv.flush().map_err(runtime)
            })
        }
        Command::Transitive { grid, n, samples } => {
            let l = load(g)?;
            let r = box_transitivity_scan(&l.map, grid, samples, n).map_err(runtime)?;
            let summary = versioned(&r);
            emit(g, summary, move |w| r.write_csv(w).map_err(runtime))
        }
        Command::Classify => {
            let l = load(g)?;
            let mut budgets = l
                .config
                .as_ref()
                .and_then(|c| c.budgets.clone())
                .unwrap_or_default();
            budgets.seed = g.seed;
            let thresholds = l
                .config
                .as_ref()
                .and_then(|c| c.thresholds.clone())
                .unwrap_or_default();
            let r = classify(&l.map, &budgets, &thresholds)?;
            let summary = serde_json::to_value(&r).expect("serializable");
            let row = [
                r.map.clone(),
                serde_json::to_value(r.quadrant)
                    .unwrap()
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
                r.rotation.map(|x| x.value.to_string()).unwrap_or_default(),
                r.notes.join("; "),
            ];
            emit(
                g,
                summary,
                single_row(&["map", "quadrant", "rho", "notes"], &row),
            )
        }
        Command::Sweep { stage, params } => {
            let base = match (&g.map, &g.cocycle) {
                (Some(p), _) => MapConfig::load(p)?,
                (None, Some(p)) => MapConfig {
                    family: "projective".into(),
                    cocycle: Some(CocycleConfig::load(p)?),
                    ..Default::default()
                },
                (None, None) => {
                    return Err(CliError::Config(
                        "one of --map or --cocycle is required".into(),
                    ))
                }
            };
            let mut base = base;
            if let Some(w) = g.omega {
                base.omega = Some(w.into());
            } else if base.omega.is_none() {
                base.omega = base.cocycle.as_ref().and_then(|c| c.omega.clone());
            }
            let mut budgets = base.budgets.clone().unwrap_or_default();
            budgets.seed = g.seed;
            let thresholds = base.thresholds.clone().unwrap_or_default();
            let t = sweep(&base, &params, stage, &budgets, &thresholds);
            let summary = serde_json::to_value(&t).expect("serializable");
            emit(g, summary, move |w| t.write_csv(w).map_err(runtime))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("qpforce: configuration error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("qpforce: {e}");
            ExitCode::from(1)
        }
    }
}
