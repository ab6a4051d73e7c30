//! Fibrewise monotone semi-conjugacy H with H ∘ T̂ = R̂_{ω,ρ} ∘ H for maps
//! whose rotation number is rationally independent of ω.
//!
//! A_r is the closure of ∪ₙ T̂ⁿ(𝕋¹ × {r − nρ}). Rather than iterating a
//! separate line for every (r, n), orbits from a fixed set of starts are
//! labelled: T̂ⁿ(θ, y) lies in A_{y+nρ}, and T̂⁻ⁿ(θ, y) in A_{y−nρ}. Each point
//! is moved to the nearest r-grid node using A_{r+m} = A_r + m.
//!
//! Starts sit at the r-grid heights themselves and are iterated in lockstep,
//! so at every step all of them share θ and the same label mismatch. The
//! mismatch is removed by interpolating between neighbouring starts. Fibre
//! maps preserve order, so the orbit from the next height dominates the
//! current one, the interpolated values stay ordered, and the sampled family
//! is ordered by construction: an ordering failure points at the map, not at
//! the sampling.
//!
//! B_r is the highest minimal strip of A_r, approximated by the reflexive pair
//! grown down from sup A_r.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle::frac;
use crate::models::{LiftedSkewMap, ModelError, Orbit};
use crate::rotation::{
    rational_relation_search, RationalRelation, RotationError, DEFAULT_MAX_K, DEFAULT_MAX_Q,
    DEFAULT_RELATION_TOL,
};
use crate::strips::{
    nearest_bin, reflexive_closure, GraphKind, GridGraph, StripApprox, StripError, MIN_GRID,
};

/// Slack allowed when checking that B_r is non-decreasing in r.
pub const ORDER_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemiconjError {
    #[error("r-grid must have at least 4 nodes, got {0}")]
    RGridTooSmall(usize),
    #[error("need at least one iteration and one starting fibre")]
    EmptyBudget,
    #[error("rho = {0} is not finite")]
    NonFiniteRho(f64),
    #[error("r offset must lie in [0, 1), got {0}")]
    BadOffset(f64),
    #[error("rho is rationally related to omega: {0:?}")]
    RationallyDependent(RationalRelation),
    #[error("{count} (r, θ) cells received no orbit points, first at r-node {r_index}, bin {bin}; increase N")]
    EmptyCells {
        count: usize,
        r_index: usize,
        bin: usize,
    },
    #[error("strips at r = {r} and s = {s} are out of order by {excess:e} at bin {bin}")]
    OrderingViolation {
        r: f64,
        s: f64,
        bin: usize,
        excess: f64,
    },
    #[error("semi-conjugacy and map use different grids")]
    GridMismatch,
    #[error(transparent)]
    Strip(#[from] StripError),
    #[error(transparent)]
    Rotation(#[from] RotationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    /// Number of r-grid nodes R over one period.
    pub r_grid: usize,
    pub n: u64,
    pub theta_grid: usize,
    /// Number of starting fibres θ = t/theta_starts; each carries one start
    /// per r-grid node.
    pub theta_starts: usize,
    /// Nodes sit at r_k = (k + r_offset)/R.
    pub r_offset: f64,
    /// Containment bound C for |T̂ⁿ(θ, y) − y − nρ|; not checked when absent.
    pub c_bound: Option<f64>,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            r_grid: 256,
            n: 10_000,
            theta_grid: 256,
            theta_starts: 1,
            r_offset: 0.0,
            c_bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripFamily {
    r_grid: Vec<f64>,
    strips: Vec<StripApprox>,
    /// max |T̂ⁿ(θ, y) − y − nρ| over all orbit points used.
    pub max_excursion: f64,
    pub c_bound: Option<f64>,
    /// False when some point left [r − C, r + C].
    pub contained: bool,
    /// Fewest points that landed in any (r, θ) cell.
    pub min_cell_count: u32,
}

impl StripFamily {
    pub fn r_grid(&self) -> &[f64] {
        &self.r_grid
    }

    pub fn strips(&self) -> &[StripApprox] {
        &self.strips
    }

    pub fn theta_grid(&self) -> usize {
        self.strips[0].theta_grid()
    }

    /// Node value and strip for any integer index, using B_{r+m} = B_r + m.
    pub fn node(&self, j: i64) -> (f64, f64, &StripApprox) {
        let n = self.r_grid.len() as i64;
        let m = j.div_euclid(n);
        let k = j.rem_euclid(n) as usize;
        (self.r_grid[k] + m as f64, m as f64, &self.strips[k])
    }

    /// Checks that B_r is non-decreasing in r, including the step from the
    /// last node to the first node shifted by one.
    pub fn check_order(&self) -> Result<(), SemiconjError> {
        let n = self.r_grid.len() as i64;
        for j in 0..n {
            let (r, shift_a, a) = self.node(j);
            let (s, shift_b, b) = self.node(j + 1);
            for (ga, gb) in [(a.lower(), b.lower()), (a.upper(), b.upper())] {
                for (bin, (va, vb)) in ga.values().iter().zip(gb.values()).enumerate() {
                    let excess = (va + shift_a) - (vb + shift_b);
                    if excess > ORDER_TOL {
                        return Err(SemiconjError::OrderingViolation { r, s, bin, excess });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fails with the relation when ρ is rationally related to ω.
fn require_independent(omega: f64, rho: f64) -> Result<(), SemiconjError> {
    match rational_relation_search(
        omega,
        rho,
        DEFAULT_MAX_Q,
        DEFAULT_MAX_K,
        DEFAULT_RELATION_TOL,
    )? {
        Some(rel) => Err(SemiconjError::RationallyDependent(rel)),
        None => Ok(()),
    }
}

struct Cells {
    max: Vec<f64>,
    count: Vec<u32>,
    excursion: f64,
}

impl Cells {
    fn new(size: usize) -> Self {
        Cells {
            max: vec![f64::NEG_INFINITY; size],
            count: vec![0; size],
            excursion: 0.0,
        }
    }

    fn merge(mut self, other: Cells) -> Cells {
        for (a, b) in self.max.iter_mut().zip(other.max) {
            *a = a.max(b);
        }
        for (a, b) in self.count.iter_mut().zip(other.count) {
            *a = a.saturating_add(b);
        }
        self.excursion = self.excursion.max(other.excursion);
        self
    }
}

pub fn build_strip_family(
    map: &LiftedSkewMap,
    rho: f64,
    r_grid: usize,
    n: u64,
    theta_grid: usize,
) -> Result<StripFamily, SemiconjError> {
    build_strip_family_with(
        map,
        rho,
        &FamilyParams {
            r_grid,
            n,
            theta_grid,
            ..FamilyParams::default()
        },
    )
}

pub fn build_strip_family_with(
    map: &LiftedSkewMap,
    rho: f64,
    params: &FamilyParams,
) -> Result<StripFamily, SemiconjError> {
    let (nr, g) = (params.r_grid, params.theta_grid);
    if nr < 4 {
        return Err(SemiconjError::RGridTooSmall(nr));
    }
    if g < MIN_GRID {
        return Err(StripError::GridTooSmall(g).into());
    }
    if params.n == 0 || params.theta_starts == 0 {
        return Err(SemiconjError::EmptyBudget);
    }
    if !rho.is_finite() {
        return Err(SemiconjError::NonFiniteRho(rho));
    }
    if !(0.0..1.0).contains(&params.r_offset) {
        return Err(SemiconjError::BadOffset(params.r_offset));
    }
    require_independent(map.omega(), rho)?;

    let s = params.theta_starts;
    let offset = params.r_offset;
    let rf = nr as f64;
    let cells = (0..2 * s)
        .into_par_iter()
        .try_fold(
            || Cells::new(nr * g),
            |mut acc, task| -> Result<Cells, ModelError> {
                let theta = (task / 2) as f64 / s as f64;
                let backward = task % 2 == 1;
                let sign = if backward { -1.0 } else { 1.0 };
                let origins: Vec<Orbit> = (0..nr)
                    .map(|j| Orbit::new(theta, (j as f64 + offset) / rf))
                    .collect();
                let mut orbits = origins.clone();
                let first = if backward { 1 } else { 0 };
                for step in 0..=params.n {
                    if step > 0 {
                        for o in &mut orbits {
                            if backward {
                                o.retreat(map)?;
                            } else {
                                o.advance(map)?;
                            }
                        }
                    }
                    if step < first {
                        continue;
                    }
                    let drift = sign * step as f64 * rho;
                    // start j now carries label r_{j+kf} + λ/R; the orbit with the
                    // exact label is interpolated from the neighbouring start
                    let t = drift * rf;
                    let kf = t.round();
                    let lambda = t - kf;
                    let kf = kf as i64;
                    let bin = nearest_bin(orbits[0].theta(), g);
                    for j in 0..nr {
                        let o = &orbits[j];
                        acc.excursion = acc
                            .excursion
                            .max((o.offset_from(&origins[j]) - drift).abs());
                        let gap = if lambda >= 0.0 {
                            if j > 0 {
                                o.offset_from(&orbits[j - 1])
                            } else {
                                o.offset_from(&orbits[nr - 1]) + 1.0
                            }
                        } else if j + 1 < nr {
                            orbits[j + 1].offset_from(o)
                        } else {
                            orbits[0].offset_from(o) + 1.0
                        };
                        let node = j as i64 + kf;
                        let k = node.rem_euclid(nr as i64);
                        let w = (node - k) / nr as i64;
                        let v = (o.x_int() - w) as f64 + o.x_frac() - lambda * gap;
                        let cell = k as usize * g + bin;
                        acc.max[cell] = acc.max[cell].max(v);
                        acc.count[cell] += 1;
                    }
                }
                Ok(acc)
            },
        )
        .try_reduce(|| Cells::new(nr * g), |a, b| Ok(a.merge(b)))?;

    let empty: Vec<usize> = (0..nr * g).filter(|&c| cells.count[c] == 0).collect();
    if let Some(&first) = empty.first() {
        return Err(SemiconjError::EmptyCells {
            count: empty.len(),
            r_index: first / g,
            bin: first % g,
        });
    }
    let strips = (0..nr)
        .map(|k| {
            let sup = GridGraph::new(cells.max[k * g..(k + 1) * g].to_vec(), GraphKind::Upper)?;
            let lower = reflexive_closure(&sup);
            let upper = reflexive_closure(&lower);
            Ok(StripApprox::new(lower, upper)?)
        })
        .collect::<Result<Vec<_>, SemiconjError>>()?;
    let family = StripFamily {
        r_grid: (0..nr).map(|k| (k as f64 + offset) / rf).collect(),
        strips,
        max_excursion: cells.excursion,
        c_bound: params.c_bound,
        contained: params.c_bound.is_none_or(|c| cells.excursion <= c + 1e-12),
        min_cell_count: cells.count.iter().copied().min().unwrap_or(0),
    };
    family.check_order()?;
    Ok(family)
}

/// H_θ(x̂) = sup{r : φ⁺_r(θ) ≤ x̂}, linearly interpolated between the knots
/// (φ⁺_{r_k}(θ), r_k) and extended by H_θ(x̂ + 1) = H_θ(x̂) + 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiConjugacy {
    r_grid: Vec<f64>,
    /// knots[i][k] = φ⁺_{r_k}(θ_i), non-decreasing in k.
    knots: Vec<Vec<f64>>,
    x_resolution: usize,
}

impl SemiConjugacy {
    /// Builds H from explicit knots; each fibre's knots are made
    /// non-decreasing by a running maximum.
    pub fn from_knots(
        r_grid: Vec<f64>,
        mut knots: Vec<Vec<f64>>,
        x_resolution: usize,
    ) -> Result<Self, SemiconjError> {
        if r_grid.len() < 4 {
            return Err(SemiconjError::RGridTooSmall(r_grid.len()));
        }
        if knots.len() < MIN_GRID {
            return Err(StripError::GridTooSmall(knots.len()).into());
        }
        if knots.iter().any(|f| f.len() != r_grid.len()) {
            return Err(SemiconjError::GridMismatch);
        }
        if knots
            .iter()
            .flatten()
            .chain(&r_grid)
            .any(|v| !v.is_finite())
        {
            return Err(StripError::NonFinite.into());
        }
        for fibre in &mut knots {
            for k in 1..fibre.len() {
                fibre[k] = fibre[k].max(fibre[k - 1]);
            }
        }
        Ok(SemiConjugacy {
            r_grid,
            knots,
            x_resolution: x_resolution.max(1),
        })
    }

    pub fn theta_grid(&self) -> usize {
        self.knots.len()
    }

    pub fn x_resolution(&self) -> usize {
        self.x_resolution
    }

    /// 1/R.
    pub fn r_quantization(&self) -> f64 {
        1.0 / self.r_grid.len() as f64
    }

    /// H on fibre bin i at any x̂.
    pub fn eval(&self, bin: usize, x: f64) -> f64 {
        let u = &self.knots[bin];
        let r = &self.r_grid;
        let n = u.len();
        let m = (x - u[0]).floor();
        let xr = x - m;
        // largest k with u_k ≤ xr; u_n = u_0 + 1 bounds the search
        let k = u.partition_point(|&v| v <= xr) - 1;
        let (u0, u1, r0, r1) = if k + 1 < n {
            (u[k], u[k + 1], r[k], r[k + 1])
        } else {
            (u[k], u[0] + 1.0, r[k], r[0] + 1.0)
        };
        let t = if u1 > u0 { (xr - u0) / (u1 - u0) } else { 0.0 };
        m + r0 + t.clamp(0.0, 1.0) * (r1 - r0)
    }

    /// Table point x̂_m = m/X, m = 0..=X.
    pub fn table_x(&self, m: usize) -> f64 {
        m as f64 / self.x_resolution as f64
    }

    /// The monotone (x̂, H_θ(x̂)) table of one fibre.
    pub fn fibre_table(&self, bin: usize) -> Vec<(f64, f64)> {
        (0..=self.x_resolution)
            .map(|m| {
                let x = self.table_x(m);
                (x, self.eval(bin, x))
            })
            .collect()
    }

    /// A copy with one fibre displaced by `offset`.
    pub fn with_fibre_offset(&self, bin: usize, offset: f64) -> SemiConjugacy {
        let mut out = self.clone();
        for v in &mut out.knots[bin] {
            *v -= offset;
        }
        out
    }

    /// CSV with columns theta,x,h.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), SemiconjError> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| SemiconjError::Csv(e.to_string());
        w.write_record(["theta", "x", "h"]).map_err(err)?;
        let g = self.theta_grid();
        for i in 0..g {
            let theta = (i as f64 / g as f64).to_string();
            for (x, h) in self.fibre_table(i) {
                w.write_record([theta.as_str(), &x.to_string(), &h.to_string()])
                    .map_err(err)?;
            }
        }
        w.flush().map_err(|e| SemiconjError::Csv(e.to_string()))
    }
}

pub fn build_semiconjugacy(
    family: &StripFamily,
    x_resolution: usize,
) -> Result<SemiConjugacy, SemiconjError> {
    family.check_order()?;
    let g = family.theta_grid();
    let knots = (0..g)
        .map(|i| {
            family
                .strips
                .iter()
                .map(|s| s.upper().values()[i])
                .collect()
        })
        .collect();
    SemiConjugacy::from_knots(family.r_grid.clone(), knots, x_resolution)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    /// max |H_{θ+ω}(T̂_θ(x̂)) − H_θ(x̂) − ρ| over grid fibres and table points.
    pub defect: f64,
    /// r_quantization + theta_quantization.
    pub quantization: f64,
    pub r_quantization: f64,
    /// Half the largest change of H between adjacent fibres: the error
    /// attributable to resolving θ + ω to the nearest bin.
    pub theta_quantization: f64,
}

pub fn semiconjugacy_defect(h: &SemiConjugacy, map: &LiftedSkewMap, rho: f64) -> DefectReport {
    let g = h.theta_grid();
    let (defect, theta_q) = (0..g)
        .into_par_iter()
        .map(|i| {
            let theta = i as f64 / g as f64;
            let next = nearest_bin(frac(theta + map.omega()), g);
            let neighbour = (i + 1) % g;
            let mut d = 0.0f64;
            let mut tq = 0.0f64;
            for m in 0..=h.x_resolution {
                let x = h.table_x(m);
                let hx = h.eval(i, x);
                d = d.max((h.eval(next, map.lift(theta, x)) - hx - rho).abs());
                tq = tq.max((h.eval(neighbour, x) - hx).abs());
            }
            (d, tq)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let r_quantization = h.r_quantization();
    DefectReport {
        defect,
        quantization: r_quantization + 0.5 * theta_q,
        r_quantization,
        theta_quantization: 0.5 * theta_q,
    }
}

/// sup |d − mean d| for d = H₁ − H₂ over the table points of every fibre.
/// Semi-conjugacies are unique up to a constant fibre rotation, so this is
/// small for two constructions of H from the same map.
pub fn centred_difference(a: &SemiConjugacy, b: &SemiConjugacy) -> Result<f64, SemiconjError> {
    if a.theta_grid() != b.theta_grid() || a.x_resolution != b.x_resolution {
        return Err(SemiconjError::GridMismatch);
    }
    let diffs: Vec<f64> = (0..a.theta_grid())
        .flat_map(|i| (0..=a.x_resolution).map(move |m| (i, a.table_x(m))))
        .map(|(i, x)| a.eval(i, x) - b.eval(i, x))
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    Ok(diffs.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max))
}

/// First pair of nodes at least `min_gap` nodes apart (and less than one
/// period) whose strips are not strictly ordered.
pub fn strict_order_failure(family: &StripFamily, min_gap: usize) -> Option<(f64, f64)> {
    let n = family.r_grid.len() as i64;
    for j in 0..n {
        for d in min_gap.max(1) as i64..n {
            let (r, sa, a) = family.node(j);
            let (s, sb, b) = family.node(j + d);
            let ordered = a
                .upper()
                .values()
                .iter()
                .zip(b.lower().values())
                .all(|(u, l)| u + sa < l + sb);
            if !ordered {
                return Some((r, s));
            }
        }
    }
    None
}

/// JSON summary written next to the H table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiconjReport {
    pub schema_version: u32,
    pub defect: f64,
    pub quantization: f64,
    pub ordered: bool,
    pub contained: bool,
    pub max_excursion: f64,
    pub r_grid: usize,
    pub theta_grid: usize,
    pub n: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_map, MapSpec, GOLDEN_OMEGA};

    fn rigid() -> LiftedSkewMap {
        build_map(
            &MapSpec::Rigid {
                rho: 3f64.sqrt() - 1.0,
            },
            GOLDEN_OMEGA,
        )
        .unwrap()
    }

    #[test]
    fn rigid_family_is_horizontal_lines() {
        let rho = 3f64.sqrt() - 1.0;
        let fam = build_strip_family(&rigid(), rho, 32, 2000, 32).unwrap();
        for (k, s) in fam.strips().iter().enumerate() {
            let r = fam.r_grid()[k];
            assert!(s.width() < 1e-9);
            assert!(s.upper().values().iter().all(|v| (v - r).abs() < 1e-9));
        }
        assert!(fam.max_excursion < 1e-9);
    }

    #[test]
    fn rigid_h_is_identity() {
        let rho = 3f64.sqrt() - 1.0;
        let fam = build_strip_family(&rigid(), rho, 32, 2000, 32).unwrap();
        let h = build_semiconjugacy(&fam, 64).unwrap();
        for i in 0..32 {
            for (x, v) in h.fibre_table(i) {
                assert!((v - x).abs() < 1e-9);
            }
        }
        let d = semiconjugacy_defect(&h, &rigid(), rho);
        assert!(d.defect <= d.r_quantization);
    }

    #[test]
    fn dependent_rho_is_refused() {
        let map = build_map(&MapSpec::Rigid { rho: 0.25 }, GOLDEN_OMEGA).unwrap();
        assert!(matches!(
            build_strip_family(&map, 0.25, 16, 100, 16),
            Err(SemiconjError::RationallyDependent(_))
        ));
    }

    #[test]
    fn argument_checks() {
        let rho = 3f64.sqrt() - 1.0;
        assert!(matches!(
            build_strip_family(&rigid(), rho, 2, 100, 16),
            Err(SemiconjError::RGridTooSmall(2))
        ));
        assert!(build_strip_family(&rigid(), rho, 16, 100, 8).is_err());
        assert!(matches!(
            build_strip_family(&rigid(), rho, 16, 0, 16),
            Err(SemiconjError::EmptyBudget)
        ));
        assert!(matches!(
            build_strip_family(&rigid(), rho, 64, 2, 64),
            Err(SemiconjError::EmptyCells { .. })
        ));
    }

    #[test]
    fn eval_is_degree_one_and_monotone() {
        let r: Vec<f64> = (0..8).map(|k| k as f64 / 8.0).collect();
        let fibre: Vec<f64> = r.iter().map(|v| v + 0.05 * (6.0 * v).sin()).collect();
        let h = SemiConjugacy::from_knots(r, vec![fibre; 16], 32).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for j in -100..100 {
            let x = j as f64 * 0.0137;
            let v = h.eval(3, x);
            assert!(v >= prev);
            assert!((h.eval(3, x + 1.0) - v - 1.0).abs() < 1e-12);
            prev = v;
        }
    }

    #[test]
    fn corrupted_fibre_raises_defect() {
        let rho = 3f64.sqrt() - 1.0;
        let r: Vec<f64> = (0..16).map(|k| k as f64 / 16.0).collect();
        let h = SemiConjugacy::from_knots(r.clone(), vec![r; 16], 16).unwrap();
        assert!(semiconjugacy_defect(&h, &rigid(), rho).defect < 1e-12);
        let bad = h.with_fibre_offset(5, 0.1);
        assert!(semiconjugacy_defect(&bad, &rigid(), rho).defect >= 0.09);
    }

    #[test]
    fn csv_layout() {
        let r: Vec<f64> = (0..4).map(|k| k as f64 / 4.0).collect();
        let h = SemiConjugacy::from_knots(r.clone(), vec![r; 16], 2).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta,x,h\n0,0,0\n0,0.5,0.5\n0,1,1\n"));
        assert_eq!(text.lines().count(), 1 + 16 * 3);
    }
}
