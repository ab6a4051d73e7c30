//! Fibrewise rotation numbers and rational relations l + kω + qρ = 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{LiftedSkewMap, ModelError, Orbit};

pub const DEFAULT_MAX_Q: u32 = 64;
pub const DEFAULT_MAX_K: u32 = 64;
pub const DEFAULT_RELATION_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("need at least {min} iterations, got {got}")]
    TooFewIterations { min: u64, got: u64 },
    #[error("theta grid must have at least 16 points, got {0}")]
    GridTooSmall(usize),
    #[error("search bounds and tolerance must be positive")]
    BadSearchBounds,
    #[error("tolerance admits several inconsistent relations: {candidates:?}")]
    Ambiguous { candidates: Vec<RationalRelation> },
    #[error("omega itself satisfies {l} + {k}ω ≈ 0 (residual {residual:e}); it is not numerically irrational at this tolerance")]
    OmegaNotIrrational { l: i64, k: i64, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationMethod {
    Orbit,
    FibreAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    pub value: f64,
    pub n_iterates: u64,
    /// max − min of the partial estimates used as a convergence proxy.
    pub spread: f64,
    pub method: RotationMethod,
}

/// (T̂ᴺ_θ(x̂) − x̂)/N. The spread is taken over the partial estimates at
/// n = N/10, 2N/10, …, N.
pub fn rotation_number_orbit(
    map: &LiftedSkewMap,
    theta: f64,
    x: f64,
    n: u64,
) -> Result<RotationEstimate, RotationError> {
    if n == 0 {
        return Err(RotationError::TooFewIterations { min: 1, got: n });
    }
    let origin = Orbit::new(theta, x);
    let mut orbit = origin;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut next_checkpoint = 1;
    for step in 1..=n {
        orbit.advance(map)?;
        // checkpoint j sits at ⌈jN/10⌉, and the last one at N
        if step * 10 >= next_checkpoint * n {
            let est = orbit.offset_from(&origin) / step as f64;
            lo = lo.min(est);
            hi = hi.max(est);
            next_checkpoint += 1;
        }
    }
    Ok(RotationEstimate {
        value: orbit.offset_from(&origin) / n as f64,
        n_iterates: n,
        spread: hi - lo,
        method: RotationMethod::Orbit,
    })
}

/// (1/N) · mean over θ_i = i/G of T̂ᴺ_{θ_i}(0); spread is max − min of the
/// per-fibre estimates.
pub fn rotation_number_fibre_average(
    map: &LiftedSkewMap,
    n: u64,
    theta_grid: usize,
) -> Result<RotationEstimate, RotationError> {
    if n == 0 {
        return Err(RotationError::TooFewIterations { min: 1, got: n });
    }
    if theta_grid < 16 {
        return Err(RotationError::GridTooSmall(theta_grid));
    }
    let per_fibre = (0..theta_grid)
        .into_par_iter()
        .map(|i| {
            let origin = Orbit::new(i as f64 / theta_grid as f64, 0.0);
            let mut orbit = origin;
            for _ in 0..n {
                orbit.advance(map)?;
            }
            Ok(orbit.offset_from(&origin) / n as f64)
        })
        .collect::<Result<Vec<f64>, ModelError>>()?;
    let lo = per_fibre.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = per_fibre.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RotationEstimate {
        value: per_fibre.iter().sum::<f64>() / theta_grid as f64,
        n_iterates: n,
        spread: hi - lo,
        method: RotationMethod::FibreAverage,
    })
}

/// l + kω + qρ = 0 with q > 0 and gcd(|l|, |k|, q) = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationalRelation {
    pub l: i64,
    pub k: i64,
    pub q: i64,
    pub residual: f64,
}

impl RationalRelation {
    /// The relation rewritten as ρ = (k'/q)ω + l'/q, returned as (k', l').
    pub fn as_rotation_form(&self) -> (i64, i64) {
        (-self.k, -self.l)
    }

    /// The rotation number the relation pins down: −(l + kω)/q.
    pub fn rho(&self, omega: f64) -> f64 {
        -(self.l as f64 + self.k as f64 * omega) / self.q as f64
    }

    /// True when (l, k, q) is an integer multiple of `other`.
    pub fn equivalent(&self, other: &RationalRelation) -> bool {
        self.l * other.q == other.l * self.q && self.k * other.q == other.k * self.q
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn normalized(l: i64, k: i64, q: i64, residual: f64) -> RationalRelation {
    let g = gcd(gcd(l, k), q).max(1);
    RationalRelation {
        l: l / g,
        k: k / g,
        q: q / g,
        residual: residual / g as f64,
    }
}

/// Exhaustive search over 1 ≤ q ≤ max_q, |k| ≤ max_k with l = −round(kω + qρ).
/// Returns the relation with smallest q (then smallest |k|) whose residual
/// is below `tol`; several inequivalent hits are reported as ambiguity.
pub fn rational_relation_search(
    omega: f64,
    rho: f64,
    max_q: u32,
    max_k: u32,
    tol: f64,
) -> Result<Option<RationalRelation>, RotationError> {
    if max_q == 0 || max_k == 0 || !(tol > 0.0) {
        return Err(RotationError::BadSearchBounds);
    }
    let max_k = max_k as i64;
    for k in 1..=max_k {
        let s = k as f64 * omega;
        let l = -s.round();
        let residual = (l + s).abs();
        if residual < tol {
            return Err(RotationError::OmegaNotIrrational {
                l: l as i64,
                k,
                residual,
            });
        }
    }
    let mut found: Vec<RationalRelation> = Vec::new();
    for q in 1..=max_q as i64 {
        for k in -max_k..=max_k {
            let s = k as f64 * omega + q as f64 * rho;
            let l = -s.round();
            let residual = (l + s).abs();
            if residual < tol {
                let rel = normalized(l as i64, k, q, residual);
                if !found.iter().any(|f| f.equivalent(&rel)) {
                    found.push(rel);
                }
            }
        }
    }
    match found.len() {
        0 => Ok(None),
        1 => Ok(Some(found[0])),
        _ => {
            found.sort_by_key(|r| (r.q, r.k.abs(), r.k, r.l));
            Err(RotationError::Ambiguous { candidates: found })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_map, parse_map_expression, MapSpec, GOLDEN_OMEGA};

    fn rigid(rho: f64) -> LiftedSkewMap {
        build_map(&MapSpec::Rigid { rho }, GOLDEN_OMEGA).unwrap()
    }

    #[test]
    fn rigid_orbit_estimate_is_exact() {
        let e = rotation_number_orbit(&rigid(0.25), 0.3, 0.7, 1000).unwrap();
        assert!((e.value - 0.25).abs() < 1e-15);
        assert!(e.spread < 1e-15);
        assert_eq!(e.method, RotationMethod::Orbit);
    }

    #[test]
    fn fibre_average_of_rigid_and_diagonal() {
        let e = rotation_number_fibre_average(&rigid(0.25), 1000, 16).unwrap();
        assert!((e.value - 0.25).abs() < 1e-15);
        assert_eq!(e.spread, 0.0);
        let diag = crate::cocycle::CocycleSpec::diagonal(GOLDEN_OMEGA, 2.0).unwrap();
        let map = crate::cocycle::projectivize(&diag).unwrap();
        let e = rotation_number_fibre_average(&map, 10_000, 64).unwrap();
        assert!(e.value.abs() < 1e-6);
    }

    #[test]
    fn skew_mean_law_fibre_average() {
        let a = parse_map_expression("0.3 + 0.1*sin(2*pi*theta)", &Default::default()).unwrap();
        let map = build_map(&MapSpec::Skew { a }, GOLDEN_OMEGA).unwrap();
        let e = rotation_number_fibre_average(&map, 100_000, 256).unwrap();
        assert!((e.value - 0.3).abs() < 1e-3);
    }

    #[test]
    fn lift_shift_moves_estimate_by_one() {
        let map = build_map(
            &MapSpec::Arnold {
                c: 0.25,
                k: 0.5,
                eps: 0.3,
            },
            GOLDEN_OMEGA,
        )
        .unwrap();
        let a = rotation_number_orbit(&map, 0.1, 0.2, 10_000).unwrap();
        let b = rotation_number_orbit(&map.with_lift_shift(1), 0.1, 0.2, 10_000).unwrap();
        assert!((b.value - a.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argument_checks() {
        assert!(rotation_number_orbit(&rigid(0.1), 0.0, 0.0, 0).is_err());
        assert!(matches!(
            rotation_number_fibre_average(&rigid(0.1), 10, 8),
            Err(RotationError::GridTooSmall(8))
        ));
        assert!(rational_relation_search(GOLDEN_OMEGA, 0.1, 0, 5, 1e-9).is_err());
        assert!(rational_relation_search(GOLDEN_OMEGA, 0.1, 5, 5, 0.0).is_err());
    }

    #[test]
    fn relation_examples() {
        let w = GOLDEN_OMEGA;
        let r = rational_relation_search(w, (1.0 + w) / 2.0, 10, 10, 1e-9)
            .unwrap()
            .unwrap();
        assert_eq!((r.l, r.k, r.q), (-1, -1, 2));
        assert_eq!(r.as_rotation_form(), (1, 1));
        assert!((r.rho(w) - (1.0 + w) / 2.0).abs() < 1e-15);
        let r = rational_relation_search(w, 0.0, 10, 10, 1e-9)
            .unwrap()
            .unwrap();
        assert_eq!((r.l, r.k, r.q), (0, 0, 1));
        let none =
            rational_relation_search(2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0, 50, 50, 1e-9).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn rational_omega_is_reported() {
        let err = rational_relation_search(0.5, 0.3, 4, 4, 1e-9).unwrap_err();
        assert!(matches!(
            err,
            RotationError::OmegaNotIrrational { k: 2, .. }
        ));
    }

    #[test]
    fn loose_tolerance_is_ambiguous() {
        let err = rational_relation_search(GOLDEN_OMEGA, 0.123, 20, 20, 1e-2).unwrap_err();
        match err {
            RotationError::Ambiguous { candidates } => assert!(candidates.len() > 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalization_divides_common_factor() {
        let r = normalized(-2, -2, 4, 0.0);
        assert_eq!((r.l, r.k, r.q), (-1, -1, 2));
    }
}
