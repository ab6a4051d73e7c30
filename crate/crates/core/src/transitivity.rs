//! Box-to-box reachability on 𝕋² as evidence for or against topological
//! transitivity, and the winding-growth diagnostic used for irregular maps.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle::{frac, oscillation, CircleError, LiftedCurve};
use crate::models::{LiftedSkewMap, ModelError, Orbit};

pub const DEFAULT_SAMPLES_PER_BOX: usize = 9;
/// Hit-table entry for a target that was never entered.
pub const UNREACHED: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitivityError {
    #[error("box grid must be at least 4, got {0}")]
    GridTooSmall(usize),
    #[error("box grid {0} is too large for a dense hit table")]
    GridTooLarge(usize),
    #[error("need at least one sample per box and one iteration")]
    EmptyBudget,
    #[error("interval [{0}, {1}] must satisfy θ₁ < θ₂ ≤ θ₁ + 1")]
    BadInterval(f64, f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Circle(#[from] CircleError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitivityVerdict {
    TransitiveEvidence,
    ObstructionFound,
    Inconclusive,
}

/// A box (θ-index, x-index), covering [i/G, (i+1)/G) × [j/G, (j+1)/G).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxIndex {
    pub theta: usize,
    pub x: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxScanResult {
    pub grid: usize,
    pub samples_per_box: usize,
    pub n: u64,
    /// hit_time[s·G² + t]: first n with a sample from box s in box t.
    #[serde(skip)]
    hit_time: Vec<u32>,
    pub unreached_pairs: usize,
    /// Latest first-hit time over all reached pairs.
    pub last_new_hit: u32,
    pub verdict: TransitivityVerdict,
    /// First unreached (source, target) pair in index order.
    pub witness: Option<(BoxIndex, BoxIndex)>,
}

impl BoxScanResult {
    fn index(&self, b: BoxIndex) -> usize {
        b.theta * self.grid + b.x
    }

    fn unindex(&self, i: usize) -> BoxIndex {
        BoxIndex {
            theta: i / self.grid,
            x: i % self.grid,
        }
    }

    pub fn hit_time(&self, source: BoxIndex, target: BoxIndex) -> Option<u32> {
        let g2 = self.grid * self.grid;
        let t = self.hit_time[self.index(source) * g2 + self.index(target)];
        (t != UNREACHED).then_some(t)
    }

    /// CSV with columns source_theta,source_x,target_theta,target_x,hit_time
    /// (hit_time empty when unreached).
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), TransitivityError> {
        let err = |e: csv::Error| TransitivityError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "source_theta",
            "source_x",
            "target_theta",
            "target_x",
            "hit_time",
        ])
        .map_err(err)?;
        let g2 = self.grid * self.grid;
        for (k, &t) in self.hit_time.iter().enumerate() {
            let (s, v) = (self.unindex(k / g2), self.unindex(k % g2));
            let hit = if t == UNREACHED {
                String::new()
            } else {
                t.to_string()
            };
            w.write_record([
                s.theta.to_string(),
                s.x.to_string(),
                v.theta.to_string(),
                v.x.to_string(),
                hit,
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| TransitivityError::Csv(e.to_string()))
    }
}

/// Points of a side×side stencil inside the unit box, first `count` of them.
fn stencil(count: usize) -> Vec<(f64, f64)> {
    let side = (count as f64).sqrt().ceil() as usize;
    (0..count)
        .map(|k| ((k / side) as f64 + 0.5, (k % side) as f64 + 0.5))
        .map(|(a, b)| (a / side as f64, b / side as f64))
        .collect()
}

#[inline]
fn box_of(theta: f64, x: f64, g: usize) -> usize {
    let i = ((theta * g as f64) as usize).min(g - 1);
    let j = ((frac(x) * g as f64) as usize).min(g - 1);
    i * g + j
}

/// Seeds `samples_per_box` points in every box, iterates each N steps and
/// records, per source box, the first time each target box is entered.
///
/// Verdicts: transitive-evidence when every pair is realized;
/// obstruction-found when some pair is not and no pair was first realized in
/// the second half of the run; inconclusive otherwise.
pub fn box_transitivity_scan(
    map: &LiftedSkewMap,
    grid: usize,
    samples_per_box: usize,
    n: u64,
) -> Result<BoxScanResult, TransitivityError> {
    if grid < 4 {
        return Err(TransitivityError::GridTooSmall(grid));
    }
    if grid > 64 {
        return Err(TransitivityError::GridTooLarge(grid));
    }
    if samples_per_box == 0 || n == 0 {
        return Err(TransitivityError::EmptyBudget);
    }
    let n = n.min(u32::MAX as u64 - 1);
    let g2 = grid * grid;
    let points = stencil(samples_per_box);
    let rows = (0..g2)
        .into_par_iter()
        .map(|s| {
            let mut row = vec![UNREACHED; g2];
            let (bi, bj) = ((s / grid) as f64, (s % grid) as f64);
            for &(a, b) in &points {
                let mut theta = (bi + a) / grid as f64;
                let mut x = (bj + b) / grid as f64;
                for step in 0..=n as u32 {
                    if step > 0 {
                        x = frac(map.lift(theta, x));
                        theta = frac(theta + map.omega());
                    }
                    let t = box_of(theta, x, grid);
                    row[t] = row[t].min(step);
                }
                if !x.is_finite() {
                    return Err(ModelError::Overflow { step: n, value: x });
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let hit_time: Vec<u32> = rows.concat();
    let unreached_pairs = hit_time.iter().filter(|&&t| t == UNREACHED).count();
    let last_new_hit = hit_time
        .iter()
        .copied()
        .filter(|&t| t != UNREACHED)
        .max()
        .unwrap_or(0);
    let verdict = if unreached_pairs == 0 {
        TransitivityVerdict::TransitiveEvidence
    } else if (last_new_hit as u64) * 2 <= n {
        TransitivityVerdict::ObstructionFound
    } else {
        TransitivityVerdict::Inconclusive
    };
    let mut result = BoxScanResult {
        grid,
        samples_per_box,
        n,
        hit_time,
        unreached_pairs,
        last_new_hit,
        verdict,
        witness: None,
    };
    if verdict == TransitivityVerdict::ObstructionFound {
        let k = result
            .hit_time
            .iter()
            .position(|&t| t == UNREACHED)
            .expect("unreached pair");
        result.witness = Some((result.unindex(k / g2), result.unindex(k % g2)));
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindingGrowth {
    pub theta1: f64,
    pub theta2: f64,
    pub x0: f64,
    /// max_{i ≤ n_ref} v(Tⁱφ) for the horizontal reference curve φ.
    pub reference_oscillation: f64,
    /// reference_oscillation + 1: a winding beyond this forces intersection.
    pub threshold: f64,
    /// First m with |k(Tᵐψ)| ≥ threshold.
    pub first_crossing: Option<u64>,
    pub max_abs_winding: f64,
    /// (m, k(Tᵐψ)) at logarithmically spaced m.
    pub series: Vec<(u64, f64)>,
}

/// Winding k(Tᵐψ) of the image of the horizontal curve ψ ≡ x₀ over
/// [θ₁, θ₂], for m ≤ m_max. The lift is continuous in θ, so the winding is
/// the difference of the end-point orbits. The reference curve φ is the same
/// horizontal curve sampled at `ref_samples` points; its oscillation is taken
/// over the images Tⁱφ, i ≤ n_ref.
pub fn winding_growth(
    map: &LiftedSkewMap,
    theta1: f64,
    theta2: f64,
    x0: f64,
    m_max: u64,
    n_ref: u64,
    ref_samples: usize,
) -> Result<WindingGrowth, TransitivityError> {
    if !(theta1 < theta2 && theta2 <= theta1 + 1.0) {
        return Err(TransitivityError::BadInterval(theta1, theta2));
    }
    if m_max == 0 || ref_samples < 2 {
        return Err(TransitivityError::EmptyBudget);
    }
    let mut reference_oscillation = 0.0f64;
    let mut curve: Vec<(f64, f64)> = (0..ref_samples)
        .map(|j| {
            (
                theta1 + (theta2 - theta1) * j as f64 / (ref_samples - 1) as f64,
                x0,
            )
        })
        .collect();
    for i in 0..=n_ref {
        if i > 0 {
            for p in &mut curve {
                *p = (p.0 + map.omega(), map.lift(frac(p.0), p.1));
            }
        }
        reference_oscillation =
            reference_oscillation.max(oscillation(&LiftedCurve::new(curve.clone())?));
    }
    let threshold = reference_oscillation + 1.0;
    let (mut a, mut b) = (Orbit::new(frac(theta1), x0), Orbit::new(frac(theta2), x0));
    let mut series = Vec::new();
    let mut next_record = 1u64;
    let mut first_crossing = None;
    let mut max_abs_winding = 0.0f64;
    for m in 1..=m_max {
        a.advance(map)?;
        b.advance(map)?;
        let k = b.offset_from(&a);
        max_abs_winding = max_abs_winding.max(k.abs());
        if first_crossing.is_none() && k.abs() >= threshold {
            first_crossing = Some(m);
        }
        if m == next_record || m == m_max {
            series.push((m, k));
            next_record = (next_record * 2).max(m + 1);
        }
    }
    Ok(WindingGrowth {
        theta1,
        theta2,
        x0,
        reference_oscillation,
        threshold,
        first_crossing,
        max_abs_winding,
        series,
    })
}
