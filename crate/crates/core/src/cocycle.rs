//! SL(2,ℝ) cocycles over the rotation by ω, their projective action as
//! forced circle maps, and Lyapunov exponents.
//!
//! The projective line is identified with 𝕋¹ through x = (direction angle)/π,
//! which makes the projectivized map a degree-one circle map on every fibre.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle::{circle_displacement, frac};
use crate::models::MapExpression;

pub const DET_TOLERANCE: f64 = 1e-9;
const VALIDATION_GRID: usize = 256;
const BRANCH_TABLE: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CocycleError {
    #[error("det M({theta}) = {det}, expected 1")]
    Determinant { theta: f64, det: f64 },
    #[error(
        "cocycle is not homotopic to the identity: first column winds {degree} times projectively"
    )]
    NonzeroDegree { degree: i64 },
    #[error("matrix entry expression `{0}` must depend on theta only")]
    EntryDependsOnX(String),
    #[error("non-finite matrix entry at theta={0}")]
    NonFinite(f64),
    #[error("initial vector must be finite and nonzero")]
    DegenerateVector,
    #[error("need at least {min} iterations, got {got}")]
    TooFewIterations { min: u64, got: u64 },
    #[error("omega must lie in (0, 1), got {0}")]
    InvalidOmega(f64),
}

pub type Matrix = [[f64; 2]; 2];

#[derive(Clone)]
enum MatrixFn {
    Constant(Matrix),
    /// Rot(πα)·diag(λ, 1/λ)·Rot(πθ)
    Herman {
        lambda: f64,
        alpha: f64,
    },
    Entries(Arc<[MapExpression; 4]>),
    Conjugated {
        inner: Arc<MatrixFn>,
        r: Matrix,
        r_inv: Matrix,
    },
}

impl MatrixFn {
    #[inline]
    fn eval(&self, theta: f64) -> Matrix {
        match self {
            MatrixFn::Constant(m) => *m,
            MatrixFn::Herman { lambda, alpha } => {
                let (s, c) = (PI * theta).sin_cos();
                let m = [[lambda * c, -lambda * s], [s / lambda, c / lambda]];
                if *alpha == 0.0 {
                    m
                } else {
                    mat_mul(&rotation_matrix(PI * alpha), &m)
                }
            }
            MatrixFn::Entries(e) => [
                [e[0].eval(theta, 0.0), e[1].eval(theta, 0.0)],
                [e[2].eval(theta, 0.0), e[3].eval(theta, 0.0)],
            ],
            MatrixFn::Conjugated { inner, r, r_inv } => {
                mat_mul(&mat_mul(r, &inner.eval(theta)), r_inv)
            }
        }
    }
}

pub fn rotation_matrix(angle: f64) -> Matrix {
    let (s, c) = angle.sin_cos();
    [[c, -s], [s, c]]
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn det(m: &Matrix) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// A continuous SL(2,ℝ)-valued function over the rotation by ω.
#[derive(Clone)]
pub struct CocycleSpec {
    omega: f64,
    matrix: MatrixFn,
    label: String,
    degree: i64,
}

impl fmt::Debug for CocycleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CocycleSpec")
            .field("label", &self.label)
            .field("omega", &self.omega)
            .field("degree", &self.degree)
            .finish()
    }
}

impl CocycleSpec {
    fn validated(
        omega: f64,
        matrix: MatrixFn,
        label: String,
        allow_degree: bool,
    ) -> Result<Self, CocycleError> {
        if !(omega.is_finite() && omega > 0.0 && omega < 1.0) {
            return Err(CocycleError::InvalidOmega(omega));
        }
        for i in 0..VALIDATION_GRID {
            let theta = i as f64 / VALIDATION_GRID as f64;
            let m = matrix.eval(theta);
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(CocycleError::NonFinite(theta));
            }
            let d = det(&m);
            if (d - 1.0).abs() > DET_TOLERANCE {
                return Err(CocycleError::Determinant { theta, det: d });
            }
        }
        // Projective winding of θ ↦ first column over θ ∈ [0, 1].
        let col = |theta: f64| {
            let m = matrix.eval(theta);
            frac(m[1][0].atan2(m[0][0]) / PI)
        };
        let mut acc = 0.0;
        let mut prev = col(0.0);
        for i in 1..=BRANCH_TABLE {
            let next = col(i as f64 / BRANCH_TABLE as f64);
            acc += circle_displacement(prev, next);
            prev = next;
        }
        let degree = acc.round() as i64;
        if degree != 0 && !allow_degree {
            return Err(CocycleError::NonzeroDegree { degree });
        }
        Ok(CocycleSpec {
            omega,
            matrix,
            label,
            degree,
        })
    }

    pub fn constant(omega: f64, m: Matrix, label: &str) -> Result<Self, CocycleError> {
        Self::validated(omega, MatrixFn::Constant(m), label.to_string(), false)
    }

    pub fn diagonal(omega: f64, lambda: f64) -> Result<Self, CocycleError> {
        Self::constant(
            omega,
            [[lambda, 0.0], [0.0, 1.0 / lambda]],
            &format!("diag({lambda},1/{lambda})"),
        )
    }

    pub fn rotation(omega: f64, angle: f64) -> Result<Self, CocycleError> {
        Self::constant(omega, rotation_matrix(angle), &format!("rot({angle})"))
    }

    /// diag(λ, 1/λ)·Rot(πθ). Its first column turns half a revolution as θ
    /// runs once around, so it is accepted with projective degree 1.
    pub fn herman(omega: f64, lambda: f64) -> Result<Self, CocycleError> {
        Self::herman_rotated(omega, lambda, 0.0)
    }

    /// Rot(πα)·diag(λ, 1/λ)·Rot(πθ).
    pub fn herman_rotated(omega: f64, lambda: f64, alpha: f64) -> Result<Self, CocycleError> {
        let label = if alpha == 0.0 {
            format!("herman(lambda={lambda})")
        } else {
            format!("herman(lambda={lambda},alpha={alpha})")
        };
        Self::validated(omega, MatrixFn::Herman { lambda, alpha }, label, true)
    }

    /// Entries m11, m12, m21, m22 as expressions in θ.
    pub fn from_entries(
        omega: f64,
        entries: [MapExpression; 4],
        label: &str,
        allow_nonzero_degree: bool,
    ) -> Result<Self, CocycleError> {
        if let Some(e) = entries.iter().find(|e| e.depends_on_x()) {
            return Err(CocycleError::EntryDependsOnX(e.source().to_string()));
        }
        Self::validated(
            omega,
            MatrixFn::Entries(Arc::new(entries)),
            label.to_string(),
            allow_nonzero_degree,
        )
    }

    /// R_α · M · R_{−α}, used for covariance checks.
    pub fn conjugated_by_rotation(&self, angle: f64) -> Result<Self, CocycleError> {
        let matrix = MatrixFn::Conjugated {
            inner: Arc::new(self.matrix.clone()),
            r: rotation_matrix(angle),
            r_inv: rotation_matrix(-angle),
        };
        Self::validated(
            self.omega,
            matrix,
            format!("rot({angle})·{}·rot({})", self.label, -angle),
            self.degree != 0,
        )
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Projective winding number of the first column over one base period.
    pub fn degree(&self) -> i64 {
        self.degree
    }

    #[inline]
    pub fn matrix(&self, theta: f64) -> Matrix {
        self.matrix.eval(theta)
    }
}

/// The fibre lift of the projective action x̂ ↦ angle(M(θ)·(cos πx̂, sin πx̂))/π.
///
/// The displacement T̂(x̂) − x̂ is taken within 1/2 of the polar rotation
/// angle of M(θ) (divided by π), whose continuous branch in θ is tabulated.
#[derive(Clone)]
pub struct ProjectiveLift {
    cocycle: CocycleSpec,
    centre: Arc<[f64]>,
}

impl ProjectiveLift {
    pub fn new(cocycle: CocycleSpec) -> Result<Self, CocycleError> {
        let polar = |theta: f64| {
            let m = cocycle.matrix(theta);
            (m[1][0] - m[0][1]).atan2(m[0][0] + m[1][1]) / PI
        };
        let mut centre = Vec::with_capacity(BRANCH_TABLE + 1);
        let first = polar(0.0);
        let mut cur = first - (first + 0.5).floor();
        centre.push(cur);
        for i in 1..=BRANCH_TABLE {
            let p = polar(i as f64 / BRANCH_TABLE as f64);
            cur += circle_displacement(cur, p);
            centre.push(cur);
        }
        Ok(ProjectiveLift {
            cocycle,
            centre: centre.into(),
        })
    }

    pub fn cocycle(&self) -> &CocycleSpec {
        &self.cocycle
    }

    #[inline]
    fn centre_at(&self, theta: f64, principal: f64) -> f64 {
        let t = theta.clamp(0.0, 1.0) * BRANCH_TABLE as f64;
        let i = (t.floor() as usize).min(BRANCH_TABLE - 1);
        let w = t - i as f64;
        let guess = self.centre[i] * (1.0 - w) + self.centre[i + 1] * w;
        principal + (guess - principal).round()
    }

    #[inline]
    pub fn lift(&self, theta: f64, x: f64) -> f64 {
        let m = self.cocycle.matrix(theta);
        let (s, c) = (PI * x).sin_cos();
        let w0 = m[0][0] * c + m[0][1] * s;
        let w1 = m[1][0] * c + m[1][1] * s;
        let principal = (m[1][0] - m[0][1]).atan2(m[0][0] + m[1][1]) / PI;
        let centre = self.centre_at(theta, principal);
        let raw = w1.atan2(w0) / PI - x;
        x + centre + circle_displacement(centre, raw)
    }

    #[inline]
    pub fn derivative(&self, theta: f64, x: f64) -> f64 {
        let m = self.cocycle.matrix(theta);
        let (s, c) = (PI * x).sin_cos();
        let w0 = m[0][0] * c + m[0][1] * s;
        let w1 = m[1][0] * c + m[1][1] * s;
        det(&m) / (w0 * w0 + w1 * w1)
    }
}

/// Builds the projectivized forced circle map of a cocycle.
pub fn projectivize(
    cocycle: &CocycleSpec,
) -> Result<crate::models::LiftedSkewMap, crate::models::ModelError> {
    crate::models::build_map(
        &crate::models::MapSpec::Projective(cocycle.clone()),
        cocycle.omega(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub value: f64,
    /// |λ_N − λ_{⌊0.9N⌋}|.
    pub drift: f64,
    pub n: u64,
}

/// (1/N) Σ log‖M(θ_n) v_n‖ with v renormalized every step.
pub fn lyapunov_exponent(
    cocycle: &CocycleSpec,
    theta0: f64,
    v0: [f64; 2],
    n: u64,
) -> Result<LyapunovEstimate, CocycleError> {
    if n < 1000 {
        return Err(CocycleError::TooFewIterations { min: 1000, got: n });
    }
    let norm0 = v0[0].hypot(v0[1]);
    if !(norm0.is_finite() && norm0 > 0.0) {
        return Err(CocycleError::DegenerateVector);
    }
    let mut v = [v0[0] / norm0, v0[1] / norm0];
    let mut theta = frac(theta0);
    let omega = cocycle.omega();
    let checkpoint = n * 9 / 10;
    let mut sum = 0.0;
    let mut at_checkpoint = 0.0;
    for k in 0..n {
        let m = cocycle.matrix(theta);
        let w = [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ];
        let r = w[0].hypot(w[1]);
        sum += r.ln();
        v = [w[0] / r, w[1] / r];
        theta = frac(theta + omega);
        if k + 1 == checkpoint {
            at_checkpoint = sum / checkpoint as f64;
        }
    }
    let value = sum / n as f64;
    Ok(LyapunovEstimate {
        value,
        drift: (value - at_checkpoint).abs(),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Mean over seeds.
    pub value: f64,
    /// Largest per-seed drift.
    pub drift: f64,
    /// max − min over seeds.
    pub seeds_spread: f64,
    pub n: u64,
    pub per_seed: Vec<f64>,
}

/// Runs [`lyapunov_exponent`] from `seeds` random unit vectors drawn from a
/// ChaCha stream seeded with `seed`.
pub fn lyapunov_seeds(
    cocycle: &CocycleSpec,
    theta0: f64,
    n: u64,
    seeds: usize,
    seed: u64,
) -> Result<LyapunovReport, CocycleError> {
    use rayon::prelude::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors: Vec<[f64; 2]> = (0..seeds.max(1))
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..PI);
            [a.cos(), a.sin()]
        })
        .collect();
    let estimates = vectors
        .par_iter()
        .map(|&v| lyapunov_exponent(cocycle, theta0, v, n))
        .collect::<Result<Vec<_>, _>>()?;
    let per_seed: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let lo = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = per_seed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LyapunovReport {
        value: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
        drift: estimates.iter().map(|e| e.drift).fold(0.0, f64::max),
        seeds_spread: hi - lo,
        n,
        per_seed,
    })
}

/// |Π det M(θ_k) − 1| along an orbit of length `n`.
pub fn det_drift(cocycle: &CocycleSpec, theta0: f64, n: u64) -> f64 {
    let mut log_det = 0.0;
    let mut theta = frac(theta0);
    for _ in 0..n {
        log_det += det(&cocycle.matrix(theta)).ln();
        theta = frac(theta + cocycle.omega());
    }
    log_det.exp_m1().abs()
}
