//! Runs the diagnostics in sequence and places a map in one of the four
//! classes regular/irregular × invariant graphs/none.

pub mod cohomology;
pub mod config;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::cocycle::{lyapunov_seeds, LyapunovReport};
use crate::models::{validate_homeomorphism, LiftedSkewMap, ValidationReport};
use crate::regularity::{
    regularity_diagnostic, RegularityVerdict, Verdict, DEFAULT_EXPONENT_THRESHOLD,
};
use crate::rotation::{
    rational_relation_search, rotation_number_orbit, RationalRelation, RotationEstimate,
    DEFAULT_MAX_K, DEFAULT_MAX_Q, DEFAULT_RELATION_TOL,
};
use crate::semiconj::{
    build_semiconjugacy, build_strip_family_with, semiconjugacy_defect, DefectReport, FamilyParams,
};
use crate::strips::strip_search;
use crate::transitivity::{box_transitivity_scan, BoxScanResult, TransitivityVerdict};
use crate::SCHEMA_VERSION;

pub use cohomology::{cohomology_report, CohomologyReport};
pub use config::{CocycleConfig, ConfigError, MapConfig, Scalar};
pub use sweep::{sweep, SweepRow, SweepStage, SweepTable};

/// Every cutoff that decides a quadrant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// The relation search runs at relation_tol + spread_weight · spread,
    /// where spread is that of the rotation estimate. The partial estimates
    /// start at N/10, so spread ≈ 9·C/N for a transient of size C while the
    /// final estimate is off by C/N. The default weight leaves a margin over
    /// that 1/9.
    pub relation_tol: f64,
    pub spread_weight: f64,
    pub max_q: u32,
    pub max_k: u32,
    pub exponent_threshold: f64,
    /// Containment bound C for the strip search on the q-cover.
    pub strip_c_bound: f64,
    /// Largest semi-conjugacy defect accepted as evidence for IB.
    pub defect_threshold: f64,
    /// A Lyapunov exponent counts as positive when value − seeds_spread
    /// exceeds this.
    pub lyapunov_positive: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            relation_tol: DEFAULT_RELATION_TOL,
            spread_weight: 0.15,
            max_q: DEFAULT_MAX_Q,
            max_k: DEFAULT_MAX_K,
            exponent_threshold: DEFAULT_EXPONENT_THRESHOLD,
            strip_c_bound: 2.0,
            defect_threshold: 1e-2,
            lyapunov_positive: 1e-3,
        }
    }
}

/// Per-stage iteration counts and grid sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub validation_grid: usize,
    pub rotation_n: u64,
    pub regularity_orbits: usize,
    pub regularity_n: u64,
    pub strip_n: u64,
    pub strip_g: usize,
    pub family_r: usize,
    pub family_n: u64,
    pub family_g: usize,
    pub x_resolution: usize,
    pub lyapunov_n: u64,
    pub lyapunov_seeds: usize,
    pub transitivity_g: usize,
    pub transitivity_samples: usize,
    pub transitivity_n: u64,
    pub seed: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            validation_grid: 256,
            rotation_n: 1_000_000,
            regularity_orbits: 8,
            regularity_n: 100_000,
            strip_n: 10_000,
            strip_g: 256,
            family_r: 256,
            family_n: 10_000,
            family_g: 256,
            x_resolution: 64,
            lyapunov_n: 100_000,
            lyapunov_seeds: 4,
            transitivity_g: 16,
            transitivity_samples: 9,
            transitivity_n: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrant {
    IA,
    IB,
    IIA,
    IIB,
    #[serde(rename = "undecided")]
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Rotation,
    Relation,
    Regularity,
    Strip,
    Semiconjugacy,
    Lyapunov,
    Transitivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripSummary {
    pub q: u32,
    pub k: i64,
    #[serde(rename = "G")]
    pub g: usize,
    pub width: f64,
    pub max_half_width: f64,
    pub max_excursion: f64,
    pub c_bound: f64,
    pub contained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiconjSummary {
    pub defect: DefectReport,
    pub contained: bool,
    pub max_excursion: f64,
    pub min_cell_count: u32,
    pub r_grid: usize,
    pub theta_grid: usize,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub schema_version: u32,
    pub map: String,
    pub omega: f64,
    pub validation: ValidationReport,
    pub rotation: Option<RotationEstimate>,
    pub relation: Option<RationalRelation>,
    pub regularity: Option<RegularityVerdict>,
    /// The verdict the quadrant is based on; differs from the raw verdict
    /// only when a note explains why.
    pub effective_regularity: Option<Verdict>,
    pub strip: Option<StripSummary>,
    pub semiconjugacy: Option<SemiconjSummary>,
    pub semiconjugacy_defect: Option<f64>,
    pub projective_degree: Option<i64>,
    pub lyapunov: Option<f64>,
    pub lyapunov_report: Option<LyapunovReport>,
    pub transitivity: Option<TransitivityVerdict>,
    pub transitivity_scan: Option<BoxScanResult>,
    pub cohomology: Option<CohomologyReport>,
    pub quadrant: Quadrant,
    pub failures: Vec<StageFailure>,
    pub notes: Vec<String>,
    pub thresholds: Thresholds,
    pub budgets: Budgets,
}

impl ClassificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Strip evidence that passed containment.
    pub fn strip_certified(&self) -> bool {
        self.strip.as_ref().is_some_and(|s| s.contained)
    }

    fn fail(&mut self, stage: Stage, error: impl ToString) {
        self.failures.push(StageFailure {
            stage,
            error: error.to_string(),
        });
    }
}

/// Fails only when the map is not a fibre homeomorphism family; every later
/// problem is reported inside the result with quadrant `undecided`.
pub fn classify(
    map: &LiftedSkewMap,
    budgets: &Budgets,
    thresholds: &Thresholds,
) -> Result<ClassificationReport, ConfigError> {
    let validation = validate_homeomorphism(map, budgets.validation_grid, budgets.validation_grid)?;
    if !validation.pass {
        return Err(ConfigError::Validation(format!(
            "periodicity defect {:e}, min increment {:e}",
            validation.max_periodicity_defect, validation.min_monotone_increment
        )));
    }
    let mut rep = ClassificationReport {
        schema_version: SCHEMA_VERSION,
        map: map.label().to_string(),
        omega: map.omega(),
        validation,
        rotation: None,
        relation: None,
        regularity: None,
        effective_regularity: None,
        strip: None,
        semiconjugacy: None,
        semiconjugacy_defect: None,
        projective_degree: map.cocycle().map(|c| c.degree()),
        lyapunov: None,
        lyapunov_report: None,
        transitivity: None,
        transitivity_scan: None,
        cohomology: cohomology_report(map),
        quadrant: Quadrant::Undecided,
        failures: Vec::new(),
        notes: Vec::new(),
        thresholds: thresholds.clone(),
        budgets: budgets.clone(),
    };
    if let Some(c) = &rep.cohomology {
        if !c.small_divisors.is_empty() {
            rep.notes.push(format!(
                "{} small divisors below {:e} were dropped from the Fourier solution",
                c.small_divisors.len(),
                cohomology::SMALL_DIVISOR
            ));
        }
    }

    let rot = match rotation_number_orbit(map, 0.0, 0.0, budgets.rotation_n) {
        Ok(r) => r,
        Err(e) => {
            rep.fail(Stage::Rotation, e);
            return Ok(rep);
        }
    };
    rep.rotation = Some(rot);
    let rho = rot.value;
    let relation = match rational_relation_search(
        map.omega(),
        rho,
        thresholds.max_q,
        thresholds.max_k,
        thresholds.relation_tol + thresholds.spread_weight * rot.spread,
    ) {
        Ok(r) => r,
        Err(e) => {
            rep.fail(Stage::Relation, e);
            return Ok(rep);
        }
    };
    rep.relation = relation;

    // The estimate is off by about C/N; over a deviation run that error
    // becomes a linear drift. A relation fixes ρ exactly.
    match regularity_diagnostic(
        map,
        relation.map_or(rho, |r| r.rho(map.omega())),
        budgets.regularity_orbits,
        budgets.regularity_n,
        thresholds.exponent_threshold,
    ) {
        Ok(v) => rep.regularity = Some(v),
        Err(e) => rep.fail(Stage::Regularity, e),
    }

    let mut lyap_positive = None;
    if let Some(c) = map.cocycle() {
        match lyapunov_seeds(
            c,
            0.0,
            budgets.lyapunov_n,
            budgets.lyapunov_seeds,
            budgets.seed,
        ) {
            Ok(l) => {
                lyap_positive = Some(l.value - l.seeds_spread > thresholds.lyapunov_positive);
                rep.lyapunov = Some(l.value);
                rep.lyapunov_report = Some(l);
            }
            Err(e) => rep.fail(Stage::Lyapunov, e),
        }
    }

    let raw = rep.regularity.as_ref().map(|v| v.verdict);
    let degree = rep.projective_degree.unwrap_or(0);
    let effective = if degree != 0 {
        rep.notes.push(format!(
            "projective degree {degree}: the map is not homotopic to the identity, so neither an invariant \
             strip nor a semi-conjugacy to a torus translation can exist; treated as irregular (raw verdict {})",
            verdict_name(raw)
        ));
        Some(Verdict::Irregular)
    } else if relation.is_none() && lyap_positive == Some(true) {
        match raw {
            Some(Verdict::Regular) => {
                rep.notes.push(
                    "regular verdict contradicts a positive Lyapunov exponent with independent rotation numbers"
                        .into(),
                );
                None
            }
            Some(Verdict::Undecided) => {
                rep.notes.push(
                    "positive Lyapunov exponent and independent rotation numbers exclude both regular cases; \
                     treated as irregular"
                        .into(),
                );
                Some(Verdict::Irregular)
            }
            other => other,
        }
    } else {
        raw
    };
    rep.effective_regularity = effective;

    match effective {
        Some(Verdict::Regular) | Some(Verdict::Undecided) => {
            let evidence = match relation {
                Some(rel) => run_strip(map, &rel, budgets, thresholds, &mut rep),
                None => run_semiconj(map, rho, budgets, thresholds, &mut rep),
            };
            if effective == Some(Verdict::Regular) {
                match (relation.is_some(), evidence) {
                    (true, true) => rep.quadrant = Quadrant::IA,
                    (false, true) => rep.quadrant = Quadrant::IB,
                    (true, false) => rep.notes.push("regular with a relation, but no strip within the bound".into()),
                    (false, false) => rep.notes.push(match &rep.semiconjugacy {
                        Some(s) => format!(
                            "regular without a relation, but the semi-conjugacy defect {:.3e} is above the threshold \
                             (quantization {:.3e}); a finer grid may decide",
                            s.defect.defect, s.defect.quantization
                        ),
                        None => "regular without a relation, but the semi-conjugacy could not be built".into(),
                    }),
                }
            } else {
                rep.notes.push("regularity undecided".into());
            }
        }
        Some(Verdict::Irregular) => {
            let mut consistent = true;
            if let (Some(rel), 0) = (relation, degree) {
                if run_strip(map, &rel, budgets, thresholds, &mut rep) {
                    rep.notes.push(
                        "a certified invariant strip contradicts the irregular verdict".into(),
                    );
                    consistent = false;
                }
            }
            match box_transitivity_scan(
                map,
                budgets.transitivity_g,
                budgets.transitivity_samples,
                budgets.transitivity_n,
            ) {
                Ok(scan) => {
                    rep.transitivity = Some(scan.verdict);
                    if scan.verdict == TransitivityVerdict::ObstructionFound {
                        rep.notes.push(
                            "irregular maps are transitive, but the box scan found an obstruction"
                                .into(),
                        );
                        consistent = false;
                    }
                    rep.transitivity_scan = Some(scan);
                }
                Err(e) => rep.fail(Stage::Transitivity, e),
            }
            if consistent {
                match lyap_positive {
                    Some(true) => rep.quadrant = Quadrant::IIA,
                    Some(false) => {
                        rep.quadrant = Quadrant::IIB;
                        rep.notes.push(
                            "no positive Lyapunov exponent: no measurable invariant graphs are evidenced".into(),
                        );
                    }
                    None => rep
                        .notes
                        .push("invariant graphs in the irregular case are only decided for cocycle-backed maps".into()),
                }
            }
        }
        None => {}
    }
    if relation.is_none() && rep.strip_certified() {
        rep.notes
            .push("certified strip without a rational relation".into());
        rep.quadrant = Quadrant::Undecided;
    }
    if !rep.failures.is_empty() {
        rep.quadrant = Quadrant::Undecided;
    }
    Ok(rep)
}

fn verdict_name(v: Option<Verdict>) -> &'static str {
    match v {
        Some(Verdict::Regular) => "regular",
        Some(Verdict::Irregular) => "irregular",
        Some(Verdict::Undecided) => "undecided",
        None => "missing",
    }
}

fn run_strip(
    map: &LiftedSkewMap,
    rel: &RationalRelation,
    budgets: &Budgets,
    thresholds: &Thresholds,
    rep: &mut ClassificationReport,
) -> bool {
    match strip_search(
        map,
        rel,
        thresholds.strip_c_bound,
        budgets.strip_n,
        budgets.strip_g,
    ) {
        Ok(s) => {
            let contained = s.contained;
            rep.strip = Some(StripSummary {
                q: s.strip.cover_q(),
                k: s.strip.winding_k(),
                g: s.strip.theta_grid(),
                width: s.strip.width(),
                max_half_width: s.max_half_width,
                max_excursion: s.max_excursion,
                c_bound: s.c_bound,
                contained,
            });
            contained
        }
        Err(e) => {
            rep.fail(Stage::Strip, e);
            false
        }
    }
}

fn run_semiconj(
    map: &LiftedSkewMap,
    rho: f64,
    budgets: &Budgets,
    thresholds: &Thresholds,
    rep: &mut ClassificationReport,
) -> bool {
    let params = FamilyParams {
        r_grid: budgets.family_r,
        n: budgets.family_n,
        theta_grid: budgets.family_g,
        ..FamilyParams::default()
    };
    let family = match build_strip_family_with(map, rho, &params) {
        Ok(f) => f,
        Err(e) => {
            rep.fail(Stage::Semiconjugacy, e);
            return false;
        }
    };
    let h = match build_semiconjugacy(&family, budgets.x_resolution) {
        Ok(h) => h,
        Err(e) => {
            rep.fail(Stage::Semiconjugacy, e);
            return false;
        }
    };
    let defect = semiconjugacy_defect(&h, map, rho);
    rep.semiconjugacy_defect = Some(defect.defect);
    rep.semiconjugacy = Some(SemiconjSummary {
        defect,
        contained: family.contained,
        max_excursion: family.max_excursion,
        min_cell_count: family.min_cell_count,
        r_grid: budgets.family_r,
        theta_grid: budgets.family_g,
        n: budgets.family_n,
    });
    defect.defect < thresholds.defect_threshold
}
