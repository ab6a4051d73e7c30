//! Sampled bounding graphs and strips on a uniform θ-grid, the graph
//! transform, and the strip construction on the q-fold cover for rationally
//! dependent rotation numbers.
//!
//! Grid point i sits at θ̂_i = i·q/G; points are binned to the nearest grid
//! point. Semi-continuity is approximated by one-bin dilation: the closure of
//! a graph over bin i is taken to include the values over bins i − 1 and i + 1.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle::{frac, CircleError, LiftedCurve, QCurve};
use crate::models::{LiftedSkewMap, ModelError};
use crate::rotation::RationalRelation;

pub const MIN_GRID: usize = 16;
/// Graphs whose values exceed this are reported as divergent.
pub const MAGNITUDE_BOUND: f64 = 1e9;
/// Successive pullback graphs closer than this in sup norm count as converged.
pub const CONVERGENCE_TOL: f64 = 1e-6;
pub const EQUAL_TOL: f64 = 1e-9;
/// Largest relation residual accepted by [`strip_search`].
pub const MAX_RELATION_RESIDUAL: f64 = 1e-6;
/// Slack for rounding in the containment test of [`strip_search`].
pub const CONTAINMENT_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StripError {
    #[error("grid must have at least {MIN_GRID} bins, got {0}")]
    GridTooSmall(usize),
    #[error("no points in {} bins (first: {:?})", .0.len(), .0.first())]
    EmptyBins(Vec<usize>),
    #[error("bin {bin} spans {spread} ≥ 1 in x̂: points are not on a common lift branch")]
    BranchSpread { bin: usize, spread: f64 },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("graphs live on different grids or covers")]
    GridMismatch,
    #[error("lower graph exceeds upper graph at bin {0}")]
    Unordered(usize),
    #[error("graph transform diverged at iteration {iteration} (|x| = {value:e})")]
    Divergence { iteration: usize, value: f64 },
    #[error("relation residual {0:e} too large: a strip would drift")]
    ResidualTooLarge(f64),
    #[error("no rational relation: the strip construction needs one")]
    NoRelation,
    #[error("the graph transform works on the base circle only (cover q = 1)")]
    CoverNotSupported,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Circle(#[from] CircleError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Upper,
    Lower,
}

impl GraphKind {
    fn flipped(self) -> Self {
        match self {
            GraphKind::Upper => GraphKind::Lower,
            GraphKind::Lower => GraphKind::Upper,
        }
    }
}

/// Values of a lifted graph at θ̂_i = i·q/G, extended to all i by
/// φ(θ̂ + q) = φ(θ̂) + k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGraph {
    values: Vec<f64>,
    kind: GraphKind,
    cover_q: u32,
    winding_k: i64,
}

impl GridGraph {
    pub fn new(values: Vec<f64>, kind: GraphKind) -> Result<Self, StripError> {
        Self::on_cover(values, kind, 1, 0)
    }

    pub fn on_cover(
        values: Vec<f64>,
        kind: GraphKind,
        cover_q: u32,
        winding_k: i64,
    ) -> Result<Self, StripError> {
        if values.len() < MIN_GRID {
            return Err(StripError::GridTooSmall(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) || cover_q == 0 {
            return Err(StripError::NonFinite);
        }
        Ok(GridGraph {
            values,
            kind,
            cover_q,
            winding_k,
        })
    }

    pub fn from_fn(g: usize, kind: GraphKind, f: impl Fn(f64) -> f64) -> Result<Self, StripError> {
        Self::new((0..g).map(|i| f(i as f64 / g as f64)).collect(), kind)
    }

    pub fn theta_grid(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn cover_q(&self) -> u32 {
        self.cover_q
    }

    pub fn winding_k(&self) -> i64 {
        self.winding_k
    }

    pub fn theta_hat(&self, i: usize) -> f64 {
        i as f64 * self.cover_q as f64 / self.values.len() as f64
    }

    /// Value at any integer grid index, using the cover periodicity.
    #[inline]
    pub fn ext(&self, i: i64) -> f64 {
        let g = self.values.len() as i64;
        let m = i.div_euclid(g);
        self.values[i.rem_euclid(g) as usize] + (m * self.winding_k) as f64
    }

    /// Index of the grid point nearest to θ (a point of the base circle).
    #[inline]
    pub fn nearest_bin(&self, theta: f64) -> usize {
        nearest_bin(theta, self.values.len())
    }

    fn same_grid(&self, other: &GridGraph) -> bool {
        self.values.len() == other.values.len()
            && self.cover_q == other.cover_q
            && self.winding_k == other.winding_k
    }

    fn with_values(&self, values: Vec<f64>, kind: GraphKind) -> GridGraph {
        GridGraph {
            values,
            kind,
            cover_q: self.cover_q,
            winding_k: self.winding_k,
        }
    }

    /// max_i |φ_{i+1} − φ_i| including the seam.
    pub fn modulus(&self) -> f64 {
        (0..self.values.len() as i64)
            .map(|i| (self.ext(i + 1) - self.ext(i)).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn nearest_bin(theta: f64, g: usize) -> usize {
    ((frac(theta) * g as f64).round() as usize) % g
}

/// A filled region [lower, upper] between two grid graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripApprox {
    lower: GridGraph,
    upper: GridGraph,
}

impl StripApprox {
    pub fn new(lower: GridGraph, upper: GridGraph) -> Result<Self, StripError> {
        if !lower.same_grid(&upper) {
            return Err(StripError::GridMismatch);
        }
        if let Some(i) = (0..lower.values.len()).find(|&i| lower.values[i] > upper.values[i]) {
            return Err(StripError::Unordered(i));
        }
        Ok(StripApprox { lower, upper })
    }

    pub fn lower(&self) -> &GridGraph {
        &self.lower
    }

    pub fn upper(&self) -> &GridGraph {
        &self.upper
    }

    pub fn theta_grid(&self) -> usize {
        self.lower.theta_grid()
    }

    pub fn cover_q(&self) -> u32 {
        self.lower.cover_q
    }

    pub fn winding_k(&self) -> i64 {
        self.lower.winding_k
    }

    /// max_i (upper_i − lower_i).
    pub fn width(&self) -> f64 {
        self.lower
            .values
            .iter()
            .zip(&self.upper.values)
            .map(|(l, u)| u - l)
            .fold(0.0, f64::max)
    }

    /// The midline as a closed curve on the q-cover.
    pub fn midline_qcurve(&self) -> Result<QCurve, StripError> {
        let g = self.theta_grid() as i64;
        let samples: Vec<(f64, f64)> = (0..=g)
            .map(|i| {
                let t = i as f64 * self.cover_q() as f64 / g as f64;
                (t, 0.5 * (self.lower.ext(i) + self.upper.ext(i)))
            })
            .collect();
        Ok(QCurve::new(self.cover_q(), LiftedCurve::new(samples)?)?)
    }

    /// CSV with columns theta_hat,lower,upper.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), StripError> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| StripError::Csv(e.to_string());
        w.write_record(["theta_hat", "lower", "upper"])
            .map_err(csv_err)?;
        for i in 0..self.theta_grid() {
            w.write_record(&[
                self.lower.theta_hat(i).to_string(),
                self.lower.values[i].to_string(),
                self.upper.values[i].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| StripError::Csv(e.to_string()))
    }

    pub fn sidecar(&self, converged: Option<bool>) -> StripSidecar {
        StripSidecar {
            schema_version: crate::SCHEMA_VERSION,
            g: self.theta_grid(),
            q: self.cover_q(),
            k: self.winding_k(),
            width: self.width(),
            converged,
        }
    }
}

/// JSON companion of a strip CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripSidecar {
    pub schema_version: u32,
    #[serde(rename = "G")]
    pub g: usize,
    pub q: u32,
    pub k: i64,
    pub width: f64,
    pub converged: Option<bool>,
}

/// Bin-wise max and min of a point set on 𝕋¹ × ℝ.
pub fn bounding_graphs(points: &[(f64, f64)], g: usize) -> Result<StripApprox, StripError> {
    if g < MIN_GRID {
        return Err(StripError::GridTooSmall(g));
    }
    let mut lo = vec![f64::INFINITY; g];
    let mut hi = vec![f64::NEG_INFINITY; g];
    for &(t, x) in points {
        if !(t.is_finite() && x.is_finite()) {
            return Err(StripError::NonFinite);
        }
        let b = nearest_bin(t, g);
        lo[b] = lo[b].min(x);
        hi[b] = hi[b].max(x);
    }
    let empty: Vec<usize> = (0..g).filter(|&i| lo[i] > hi[i]).collect();
    if !empty.is_empty() {
        return Err(StripError::EmptyBins(empty));
    }
    if let Some(bin) = (0..g).find(|&i| hi[i] - lo[i] >= 1.0) {
        return Err(StripError::BranchSpread {
            bin,
            spread: hi[bin] - lo[bin],
        });
    }
    StripApprox::new(
        GridGraph::new(lo, GraphKind::Lower)?,
        GridGraph::new(hi, GraphKind::Upper)?,
    )
}

fn envelope(graph: &GridGraph, take_min: bool) -> Vec<f64> {
    (0..graph.values.len() as i64)
        .map(|i| {
            let (a, b, c) = (graph.ext(i - 1), graph.ext(i), graph.ext(i + 1));
            if take_min {
                a.min(b).min(c)
            } else {
                a.max(b).max(c)
            }
        })
        .collect()
}

/// Grid analogue of passing from an upper graph to the lower bounding graph
/// of its closure (or from a lower graph to the upper one), iterated until
/// the pair stops changing. Also returns the number of sweeps.
pub fn reflexive_closure_sweeps(graph: &GridGraph) -> (GridGraph, usize) {
    let shrink = graph.kind == GraphKind::Upper;
    let out_kind = graph.kind.flipped();
    let mut current = graph.with_values(envelope(graph, shrink), out_kind);
    let mut sweeps = 1;
    loop {
        let back = graph.with_values(envelope(&current, !shrink), graph.kind);
        let next = graph.with_values(envelope(&back, shrink), out_kind);
        sweeps += 1;
        if next.values == current.values || sweeps > 64 {
            return (current, sweeps);
        }
        current = next;
    }
}

pub fn reflexive_closure(graph: &GridGraph) -> GridGraph {
    reflexive_closure_sweeps(graph).0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StripOrder {
    Precedes,
    Equal,
    Succeeds,
    Overlap { bins: Vec<usize> },
}

pub fn strip_order(a: &StripApprox, b: &StripApprox) -> Result<StripOrder, StripError> {
    if !a.lower.same_grid(&b.lower) {
        return Err(StripError::GridMismatch);
    }
    let n = a.theta_grid();
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= EQUAL_TOL);
    if close(&a.lower.values, &b.lower.values) && close(&a.upper.values, &b.upper.values) {
        return Ok(StripOrder::Equal);
    }
    if (0..n).all(|i| a.upper.values[i] < b.lower.values[i]) {
        return Ok(StripOrder::Precedes);
    }
    if (0..n).all(|i| b.upper.values[i] < a.lower.values[i]) {
        return Ok(StripOrder::Succeeds);
    }
    let bins = (0..n)
        .filter(|&i| {
            !(a.upper.values[i] < b.lower.values[i] || b.upper.values[i] < a.lower.values[i])
        })
        .collect();
    Ok(StripOrder::Overlap { bins })
}

/// Fraction of bins where upper − lower < gap_tol.
pub fn pinched_measure(strip: &StripApprox, gap_tol: f64) -> f64 {
    let n = strip.theta_grid();
    let pinched = (0..n)
        .filter(|&i| strip.upper.values[i] - strip.lower.values[i] < gap_tol)
        .count();
    pinched as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullbackResult {
    /// Bounds of the last ⌈iterations/4⌉ graphs.
    pub strip: StripApprox,
    /// The final graph.
    pub last: GridGraph,
    pub converged: bool,
    /// Sup-norm difference of the last two graphs.
    pub last_change: f64,
}

/// Iterates φ ↦ (θ ↦ T̂_{θ−ω}(φ(θ − ω))) (or its inverse), reading φ at the
/// grid point nearest to θ ∓ ω.
pub fn pullback_attractor(
    map: &LiftedSkewMap,
    init: &GridGraph,
    iterations: usize,
    direction: Direction,
) -> Result<PullbackResult, StripError> {
    if init.cover_q != 1 || init.winding_k != 0 {
        return Err(StripError::CoverNotSupported);
    }
    let g = init.theta_grid();
    let omega = map.omega();
    let source: Vec<usize> = (0..g)
        .map(|i| {
            let t = i as f64 / g as f64;
            match direction {
                Direction::Forward => nearest_bin(t - omega, g),
                Direction::Backward => nearest_bin(t + omega, g),
            }
        })
        .collect();
    let keep = iterations.div_ceil(4);
    let mut phi = init.values.clone();
    let mut lo = vec![f64::INFINITY; g];
    let mut hi = vec![f64::NEG_INFINITY; g];
    let mut last_change = f64::INFINITY;
    for it in 0..iterations {
        let next: Vec<f64> = (0..g)
            .map(|i| {
                let t = i as f64 / g as f64;
                match direction {
                    Direction::Forward => Ok(map.lift(frac(t - omega), phi[source[i]])),
                    Direction::Backward => map.invert_fibre(t, phi[source[i]]),
                }
            })
            .collect::<Result<_, ModelError>>()?;
        if let Some(v) = next.iter().find(|v| !(v.abs() < MAGNITUDE_BOUND)) {
            return Err(StripError::Divergence {
                iteration: it + 1,
                value: v.abs(),
            });
        }
        last_change = phi
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        phi = next;
        if it + keep >= iterations {
            for i in 0..g {
                lo[i] = lo[i].min(phi[i]);
                hi[i] = hi[i].max(phi[i]);
            }
        }
    }
    if iterations == 0 {
        lo.clone_from(&phi);
        hi.clone_from(&phi);
        last_change = 0.0;
    }
    Ok(PullbackResult {
        strip: StripApprox::new(
            GridGraph::new(lo, GraphKind::Lower)?,
            GridGraph::new(hi, GraphKind::Upper)?,
        )?,
        last: GridGraph::new(phi, init.kind)?,
        converged: iterations > 0 && last_change < CONVERGENCE_TOL,
        last_change,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceResidual {
    /// max_i |T̂_{θ_i}(φ(θ_i)) − φ(θ_i + ω resolved to a bin)|
    pub residual: f64,
    /// Largest jump between adjacent bins.
    pub modulus: f64,
}

pub fn graph_invariance_residual(map: &LiftedSkewMap, graph: &GridGraph) -> InvarianceResidual {
    let g = graph.theta_grid();
    let residual = (0..g)
        .map(|i| {
            let t = i as f64 / g as f64;
            let image = map.lift(t, graph.values[i]);
            (image - graph.values[nearest_bin(t + map.omega(), g)]).abs()
        })
        .fold(0.0, f64::max);
    InvarianceResidual {
        residual,
        modulus: graph.modulus(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripSearchReport {
    pub strip: StripApprox,
    pub max_half_width: f64,
    /// max over all iterates of |x̂ − (k/q)θ̂|.
    pub max_excursion: f64,
    pub c_bound: f64,
    pub contained: bool,
}

/// Lifts T^q to F(θ̂, x̂) = (θ̂ + qω, T̂^q_θ̂(x̂) − l) on the q-cover, where
/// ρ = (k/q)ω + l/q, and iterates the line x̂ = (k/q)θ̂ forward and backward.
pub fn strip_search(
    map: &LiftedSkewMap,
    relation: &RationalRelation,
    c_bound: f64,
    n: u64,
    g: usize,
) -> Result<StripSearchReport, StripError> {
    if g < MIN_GRID {
        return Err(StripError::GridTooSmall(g));
    }
    if !(relation.residual <= MAX_RELATION_RESIDUAL) {
        return Err(StripError::ResidualTooLarge(relation.residual));
    }
    let q = relation.q as u32;
    let qf = q as f64;
    let (k, l) = relation.as_rotation_form();
    let slope = k as f64 / qf;
    let shift = qf * map.omega();
    let mut lo = vec![f64::INFINITY; g];
    let mut hi = vec![f64::NEG_INFINITY; g];
    let mut record = |t: f64, x: f64| {
        let d = x - slope * t;
        let b = ((t / qf * g as f64).round() as usize) % g;
        lo[b] = lo[b].min(d);
        hi[b] = hi[b].max(d);
        d
    };
    let mut excursion = 0.0f64;
    for i in 0..g {
        let t0 = i as f64 * qf / g as f64;
        let x0 = slope * t0;
        record(t0, x0);
        for backward in [false, true] {
            let (mut t, mut x) = (t0, x0);
            for _ in 0..n {
                if backward {
                    x += l as f64;
                    let mut base = frac(t);
                    for _ in 0..q {
                        base = frac(base - map.omega());
                        x = map.invert_fibre(base, x)?;
                    }
                    t -= shift;
                    if t < 0.0 {
                        let m = (t / qf).floor();
                        t -= m * qf;
                        x -= m * k as f64;
                    }
                } else {
                    let mut base = frac(t);
                    for _ in 0..q {
                        x = map.lift(base, x);
                        base = frac(base + map.omega());
                    }
                    x -= l as f64;
                    t += shift;
                    if t >= qf {
                        let m = (t / qf).floor();
                        t -= m * qf;
                        x -= m * k as f64;
                    }
                }
                if !(x.abs() < MAGNITUDE_BOUND) {
                    return Err(StripError::Divergence {
                        iteration: i,
                        value: x.abs(),
                    });
                }
                excursion = excursion.max(record(t, x).abs());
            }
        }
    }
    let lower: Vec<f64> = (0..g)
        .map(|i| slope * (i as f64 * qf / g as f64) + lo[i])
        .collect();
    let upper: Vec<f64> = (0..g)
        .map(|i| slope * (i as f64 * qf / g as f64) + hi[i])
        .collect();
    let strip = StripApprox::new(
        GridGraph::on_cover(lower, GraphKind::Lower, q, k)?,
        GridGraph::on_cover(upper, GraphKind::Upper, q, k)?,
    )?;
    let max_half_width = 0.5 * strip.width();
    Ok(StripSearchReport {
        strip,
        max_half_width,
        max_excursion: excursion,
        c_bound,
        contained: excursion <= c_bound + CONTAINMENT_SLACK,
    })
}

/// [`strip_search`] for an optional relation: refuses when there is none.
pub fn strip_search_checked(
    map: &LiftedSkewMap,
    relation: Option<&RationalRelation>,
    c_bound: f64,
    n: u64,
    g: usize,
) -> Result<StripSearchReport, StripError> {
    strip_search(map, relation.ok_or(StripError::NoRelation)?, c_bound, n, g)
}
