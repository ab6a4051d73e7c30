//! One diagnostic over a grid of parameter values.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify, Budgets, ConfigError, MapConfig, Scalar, Thresholds};
use crate::cocycle::lyapunov_seeds;
use crate::models::{variation_v, LiftedSkewMap};
use crate::regularity::{deviation_profile, regularity_diagnostic, Verdict};
use crate::rotation::rotation_number_orbit;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepStage {
    Rotnum,
    Deviations,
    Regularity,
    Variation,
    Lyapunov,
    Classify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub params: BTreeMap<String, f64>,
    pub values: BTreeMap<String, f64>,
    /// Verdict or quadrant, for stages that produce one.
    pub label: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub schema_version: u32,
    pub stage: SweepStage,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut param_cols: Vec<&String> = self.rows.iter().flat_map(|r| r.params.keys()).collect();
        param_cols.sort();
        param_cols.dedup();
        let mut value_cols: Vec<&String> = self.rows.iter().flat_map(|r| r.values.keys()).collect();
        value_cols.sort();
        value_cols.dedup();
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = param_cols
            .iter()
            .chain(&value_cols)
            .map(|s| s.as_str())
            .collect();
        header.extend(["label", "error"]);
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = param_cols
                .iter()
                .map(|c| r.params.get(*c).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            rec.extend(
                value_cols
                    .iter()
                    .map(|c| r.values.get(*c).map(|v| v.to_string()).unwrap_or_default()),
            );
            rec.push(r.label.clone().unwrap_or_default());
            rec.push(r.error.clone().unwrap_or_default());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cartesian product of the ranges, first range varying slowest.
fn grid(ranges: &[(String, Vec<f64>)]) -> Vec<BTreeMap<String, f64>> {
    let mut points = vec![BTreeMap::new()];
    for (name, values) in ranges {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut p = p.clone();
                    p.insert(name.clone(), v);
                    p
                })
            })
            .collect();
    }
    points
}

/// `omega` sets the base frequency; `lambda`, `alpha` and `angle` go to the
/// cocycle of a projective family; anything else is a family parameter.
fn configure(base: &MapConfig, point: &BTreeMap<String, f64>) -> MapConfig {
    let mut cfg = base.clone();
    for (name, &v) in point {
        match (name.as_str(), cfg.cocycle.as_mut()) {
            ("omega", _) => cfg.omega = Some(v.into()),
            ("lambda", Some(c)) => c.lambda = Some(Scalar::Number(v)),
            ("alpha", Some(c)) => c.alpha = Some(Scalar::Number(v)),
            ("angle", Some(c)) => c.angle = Some(Scalar::Number(v)),
            _ => {
                cfg.params.insert(name.clone(), v);
            }
        }
    }
    cfg
}

type StageOutput = (BTreeMap<String, f64>, Option<String>);

fn run_stage(
    map: &LiftedSkewMap,
    stage: SweepStage,
    budgets: &Budgets,
    thresholds: &Thresholds,
) -> Result<StageOutput, String> {
    let s = |e: &dyn std::fmt::Display| e.to_string();
    let mut values = BTreeMap::new();
    let mut label = None;
    match stage {
        SweepStage::Rotnum => {
            let r = rotation_number_orbit(map, 0.0, 0.0, budgets.rotation_n).map_err(|e| s(&e))?;
            values.insert("rho_estimate".into(), r.value);
            values.insert("spread".into(), r.spread);
        }
        SweepStage::Deviations => {
            let r = rotation_number_orbit(map, 0.0, 0.0, budgets.rotation_n).map_err(|e| s(&e))?;
            let p = deviation_profile(map, 0.0, 0.0, r.value, budgets.regularity_n)
                .map_err(|e| s(&e))?;
            values.insert("rho_estimate".into(), r.value);
            values.insert("sup_dev".into(), p.sup_dev);
            values.insert("inf_dev".into(), p.inf_dev);
            values.insert("growth_exponent".into(), p.growth_exponent);
        }
        SweepStage::Regularity => {
            let r = rotation_number_orbit(map, 0.0, 0.0, budgets.rotation_n).map_err(|e| s(&e))?;
            let v = regularity_diagnostic(
                map,
                r.value,
                budgets.regularity_orbits,
                budgets.regularity_n,
                thresholds.exponent_threshold,
            )
            .map_err(|e| s(&e))?;
            values.insert("rho_estimate".into(), r.value);
            values.insert("c_estimate".into(), v.c_estimate);
            values.insert(
                "max_growth_exponent".into(),
                v.evidence
                    .iter()
                    .map(|p| p.growth_exponent)
                    .fold(f64::NEG_INFINITY, f64::max),
            );
            label = Some(
                match v.verdict {
                    Verdict::Regular => "regular",
                    Verdict::Irregular => "irregular",
                    Verdict::Undecided => "undecided",
                }
                .to_string(),
            );
        }
        SweepStage::Variation => {
            let v = variation_v(map, budgets.validation_grid, budgets.validation_grid)
                .map_err(|e| s(&e))?;
            values.insert("variation".into(), v);
        }
        SweepStage::Lyapunov => {
            let c = map.cocycle().ok_or("map has no cocycle")?;
            let l = lyapunov_seeds(
                c,
                0.0,
                budgets.lyapunov_n,
                budgets.lyapunov_seeds,
                budgets.seed,
            )
            .map_err(|e| s(&e))?;
            values.insert("lyapunov".into(), l.value);
            values.insert("seeds_spread".into(), l.seeds_spread);
        }
        SweepStage::Classify => {
            let r = classify(map, budgets, thresholds).map_err(|e| s(&e))?;
            if let Some(rot) = r.rotation {
                values.insert("rho_estimate".into(), rot.value);
            }
            label = Some(
                serde_json::to_value(r.quadrant)
                    .unwrap()
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
            );
        }
    }
    Ok((values, label))
}

/// Runs `stage` at every point of the product grid. Failures are recorded
/// per row and do not stop the sweep.
pub fn sweep(
    base: &MapConfig,
    ranges: &[(String, Vec<f64>)],
    stage: SweepStage,
    budgets: &Budgets,
    thresholds: &Thresholds,
) -> SweepTable {
    let rows = grid(ranges)
        .into_par_iter()
        .map(|params| {
            let result = configure(base, &params)
                .build(None)
                .map_err(|e: ConfigError| e.to_string())
                .and_then(|map| run_stage(&map, stage, budgets, thresholds));
            match result {
                Ok((values, label)) => SweepRow {
                    params,
                    values,
                    label,
                    error: None,
                },
                Err(e) => SweepRow {
                    params,
                    values: BTreeMap::new(),
                    label: None,
                    error: Some(e),
                },
            }
        })
        .collect();
    SweepTable {
        schema_version: SCHEMA_VERSION,
        stage,
        rows,
    }
}
