//! Deviations D_n = T̂ⁿ_θ(x̂) − x̂ − nρ and the regular/irregular diagnostic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{LiftedSkewMap, ModelError, Orbit};

pub const DEFAULT_EXPONENT_THRESHOLD: f64 = 0.1;
/// Relative growth of the running sup over the last 10% of a run below
/// which it counts as stabilized.
pub const STABILIZATION_FRACTION: f64 = 0.01;
/// Running sups below this are treated as rounding noise.
pub const NOISE_FLOOR: f64 = 1e-9;
const FIT_POINTS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularityError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("need at least {min} iterations, got {got}")]
    TooFewIterations { min: u64, got: u64 },
    #[error("need at least 4 orbits, got {0}")]
    TooFewOrbits(usize),
    #[error("rho must be finite")]
    NonFiniteRho,
}

/// Growth summary of one running extremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningGrowth {
    pub exponent: f64,
    pub stabilized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationProfile {
    pub rho_used: f64,
    pub start: (f64, f64),
    pub n_max: u64,
    pub sup_dev: f64,
    pub inf_dev: f64,
    /// Least-squares slope of log sup_{m≤n}|D_m| against log n over n ∈ [N/2, N].
    pub growth_exponent: f64,
    pub abs_growth: RunningGrowth,
    /// Growth of the running max of D_n.
    pub upper_growth: RunningGrowth,
    /// Growth of the running max of −D_n.
    pub lower_growth: RunningGrowth,
}

struct Tracker {
    sample_at: Vec<u64>,
    samples: Vec<f64>,
    at_nine_tenths: f64,
    nine_tenths: u64,
    running: f64,
}

impl Tracker {
    fn new(n: u64) -> Self {
        let half = (n / 2).max(1) as f64;
        let mut sample_at: Vec<u64> = (0..FIT_POINTS)
            .map(|j| {
                (half * (n as f64 / half).powf(j as f64 / (FIT_POINTS - 1) as f64)).round() as u64
            })
            .collect();
        sample_at.dedup();
        Tracker {
            sample_at,
            samples: Vec::with_capacity(FIT_POINTS),
            at_nine_tenths: 0.0,
            nine_tenths: n - n / 10,
            running: 0.0,
        }
    }

    #[inline]
    fn push(&mut self, step: u64, value: f64) {
        self.running = self.running.max(value);
        if step == self.nine_tenths {
            self.at_nine_tenths = self.running;
        }
        if self.samples.len() < self.sample_at.len() && step == self.sample_at[self.samples.len()] {
            self.samples.push(self.running);
        }
    }

    fn finish(&self) -> RunningGrowth {
        let last = self.running;
        if last <= NOISE_FLOOR {
            return RunningGrowth {
                exponent: 0.0,
                stabilized: true,
            };
        }
        let pts: Vec<(f64, f64)> = self
            .sample_at
            .iter()
            .zip(&self.samples)
            .map(|(&n, &s)| ((n as f64).ln(), s.max(NOISE_FLOOR).ln()))
            .collect();
        let exponent = least_squares_slope(&pts);
        RunningGrowth {
            exponent,
            stabilized: last - self.at_nine_tenths <= STABILIZATION_FRACTION * last,
        }
    }
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return 0.0;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Streams D_n for n = 0..=N. When `decimate` is given, every d-th value is
/// returned as (n, D_n).
pub fn deviation_profile_traced(
    map: &LiftedSkewMap,
    theta: f64,
    x: f64,
    rho: f64,
    n: u64,
    decimate: Option<u64>,
) -> Result<(DeviationProfile, Vec<(u64, f64)>), RegularityError> {
    if n < 2 {
        return Err(RegularityError::TooFewIterations { min: 2, got: n });
    }
    if !rho.is_finite() {
        return Err(RegularityError::NonFiniteRho);
    }
    let origin = Orbit::new(theta, x);
    let mut orbit = origin;
    let mut abs = Tracker::new(n);
    let mut upper = Tracker::new(n);
    let mut lower = Tracker::new(n);
    let (mut sup_dev, mut inf_dev) = (0.0f64, 0.0f64);
    let mut trace = Vec::new();
    let decimate = decimate.filter(|&d| d > 0);
    if decimate.is_some() {
        trace.push((0, 0.0));
    }
    for step in 1..=n {
        orbit.advance(map)?;
        let d = orbit.offset_from(&origin) - step as f64 * rho;
        sup_dev = sup_dev.max(d);
        inf_dev = inf_dev.min(d);
        abs.push(step, d.abs());
        upper.push(step, d.max(0.0));
        lower.push(step, (-d).max(0.0));
        if let Some(dec) = decimate {
            if step % dec == 0 {
                trace.push((step, d));
            }
        }
    }
    let abs_growth = abs.finish();
    Ok((
        DeviationProfile {
            rho_used: rho,
            start: (theta, x),
            n_max: n,
            sup_dev,
            inf_dev,
            growth_exponent: abs_growth.exponent,
            abs_growth,
            upper_growth: upper.finish(),
            lower_growth: lower.finish(),
        },
        trace,
    ))
}

pub fn deviation_profile(
    map: &LiftedSkewMap,
    theta: f64,
    x: f64,
    rho: f64,
    n: u64,
) -> Result<DeviationProfile, RegularityError> {
    Ok(deviation_profile_traced(map, theta, x, rho, n, None)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Regular,
    Irregular,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confidence {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrbitBounds {
    pub bounded_above: bool,
    pub bounded_below: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityVerdict {
    pub verdict: Verdict,
    pub confidence: Confidence,
    pub c_estimate: f64,
    pub exponent_threshold: f64,
    pub evidence: Vec<DeviationProfile>,
    pub asymmetry: Vec<OrbitBounds>,
}

/// Base-2 radical inverse.
pub fn van_der_corput(mut i: u64) -> f64 {
    let mut v = 0.0;
    let mut scale = 0.5;
    while i > 0 {
        if i & 1 == 1 {
            v += scale;
        }
        i >>= 1;
        scale *= 0.5;
    }
    v
}

/// Stratified seeds θ_i = (i + ½)/n paired with a van der Corput sequence in x̂.
pub fn orbit_seeds(n_orbits: usize) -> Vec<(f64, f64)> {
    (0..n_orbits)
        .map(|i| ((i as f64 + 0.5) / n_orbits as f64, van_der_corput(i as u64)))
        .collect()
}

pub fn regularity_diagnostic(
    map: &LiftedSkewMap,
    rho: f64,
    n_orbits: usize,
    n: u64,
    exponent_threshold: f64,
) -> Result<RegularityVerdict, RegularityError> {
    if n_orbits < 4 {
        return Err(RegularityError::TooFewOrbits(n_orbits));
    }
    if n < 10_000 {
        return Err(RegularityError::TooFewIterations {
            min: 10_000,
            got: n,
        });
    }
    let evidence = orbit_seeds(n_orbits)
        .into_par_iter()
        .map(|(t, x)| deviation_profile(map, t, x, rho, n))
        .collect::<Result<Vec<_>, _>>()?;
    let tau = exponent_threshold;
    let c_estimate = evidence
        .iter()
        .map(|p| p.sup_dev.max(-p.inf_dev))
        .fold(0.0, f64::max);
    let max_exp = evidence
        .iter()
        .map(|p| p.growth_exponent)
        .fold(f64::NEG_INFINITY, f64::max);
    let regular = evidence
        .iter()
        .all(|p| p.growth_exponent < tau && p.abs_growth.stabilized);
    let irregular = evidence
        .iter()
        .any(|p| p.growth_exponent > 2.0 * tau && !p.abs_growth.stabilized);
    let verdict = if regular {
        Verdict::Regular
    } else if irregular {
        Verdict::Irregular
    } else {
        Verdict::Undecided
    };
    let confidence = match verdict {
        Verdict::Regular if max_exp < 0.5 * tau => Confidence::High,
        Verdict::Irregular if max_exp > 4.0 * tau => Confidence::High,
        _ => Confidence::Low,
    };
    let asymmetry = evidence
        .iter()
        .map(|p| OrbitBounds {
            bounded_above: p.upper_growth.exponent < tau && p.upper_growth.stabilized,
            bounded_below: p.lower_growth.exponent < tau && p.lower_growth.stabilized,
        })
        .collect();
    Ok(RegularityVerdict {
        verdict,
        confidence,
        c_estimate,
        exponent_threshold: tau,
        evidence,
        asymmetry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_map, parse_map_expression, MapSpec, GOLDEN_OMEGA};

    #[test]
    fn rigid_has_zero_deviation() {
        let map = build_map(&MapSpec::Rigid { rho: 0.1 }, GOLDEN_OMEGA).unwrap();
        let p = deviation_profile(&map, 0.2, 0.3, 0.1, 100_000).unwrap();
        assert!(p.sup_dev.abs() < 1e-9 && p.inf_dev.abs() < 1e-9);
        assert_eq!(p.growth_exponent, 0.0);
        let v = regularity_diagnostic(&map, 0.1, 4, 10_000, DEFAULT_EXPONENT_THRESHOLD).unwrap();
        assert_eq!(v.verdict, Verdict::Regular);
        assert!(v.c_estimate < 1e-9);
    }

    #[test]
    fn linear_drift_is_irregular() {
        // a wrong rho produces D_n ≈ nδ: exponent 1
        let map = build_map(&MapSpec::Rigid { rho: 0.1 }, GOLDEN_OMEGA).unwrap();
        let p = deviation_profile(&map, 0.0, 0.0, 0.1 - 1e-3, 20_000).unwrap();
        assert!((p.growth_exponent - 1.0).abs() < 1e-3);
        assert!(!p.abs_growth.stabilized);
        let v = regularity_diagnostic(&map, 0.1 - 1e-3, 4, 10_000, 0.1).unwrap();
        assert_eq!(v.verdict, Verdict::Irregular);
        assert!(v
            .asymmetry
            .iter()
            .all(|b| !b.bounded_above && b.bounded_below));
    }

    #[test]
    fn deviation_starts_at_zero() {
        let a = parse_map_expression("0.2 + 0.1*sin(2*pi*theta)", &Default::default()).unwrap();
        let map = build_map(&MapSpec::Skew { a }, GOLDEN_OMEGA).unwrap();
        let (p, trace) = deviation_profile_traced(&map, 0.0, 0.0, 0.2, 1000, Some(100)).unwrap();
        assert!(p.inf_dev <= 0.0 && p.sup_dev >= 0.0);
        assert_eq!(trace.len(), 11);
        assert_eq!(trace[0], (0, 0.0));
        assert!(trace.iter().all(|&(_, d)| d <= p.sup_dev && d >= p.inf_dev));
    }

    #[test]
    fn argument_checks() {
        let map = build_map(&MapSpec::Rigid { rho: 0.1 }, GOLDEN_OMEGA).unwrap();
        assert!(deviation_profile(&map, 0.0, 0.0, 0.1, 1).is_err());
        assert!(deviation_profile(&map, 0.0, 0.0, f64::NAN, 10).is_err());
        assert!(regularity_diagnostic(&map, 0.1, 3, 10_000, 0.1).is_err());
        assert!(regularity_diagnostic(&map, 0.1, 4, 100, 0.1).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..20)
            .map(|i| ((i as f64).ln(), 0.5 * (i as f64).ln() + 3.0))
            .collect();
        assert!((least_squares_slope(&pts) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn radical_inverse() {
        let v: Vec<f64> = (0..5).map(van_der_corput).collect();
        assert_eq!(v, vec![0.0, 0.5, 0.25, 0.75, 0.125]);
    }
}
