//! The map zoo: quasiperiodically forced circle homeomorphisms given by a
//! base frequency ω and a lift x̂ ↦ T̂_θ(x̂) of each fibre map.

pub mod expr;

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle::frac;
use crate::cocycle::{CocycleError, CocycleSpec, ProjectiveLift};
pub use expr::{parse_map_expression, EvalError, ExprError, MapExpression};

/// Golden mean rotation (√5 − 1)/2.
pub const GOLDEN_OMEGA: f64 = 0.618_033_988_749_894_9;

/// Tolerance of the per-fibre inverse.
pub const INVERSE_TOLERANCE: f64 = 1e-12;

/// Iterates whose magnitude exceeds this are reported as overflow.
pub const MAGNITUDE_LIMIT: f64 = 1e15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("omega must lie in (0, 1), got {0}")]
    InvalidOmega(f64),
    #[error("parameter {name} = {value} outside admissible range: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error(transparent)]
    Expression(#[from] ExprError),
    #[error("skew translation term must not depend on x")]
    SkewDependsOnX,
    #[error("conjugacy is not a degree-one increasing lift (periodicity defect {defect:e}, min increment {min_increment:e})")]
    NonMonotoneConjugacy { defect: f64, min_increment: f64 },
    #[error("fibre inverse did not converge at theta={theta}, y={y}")]
    InverseDiverged { theta: f64, y: f64 },
    #[error("orbit left the representable range at step {step} (x = {value})")]
    Overflow { step: u64, value: f64 },
    #[error("grid sizes must be at least {min}, got {got}")]
    GridTooSmall { min: usize, got: usize },
    #[error("map has no derivative evaluator")]
    MissingDerivative,
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
}

/// Family specification accepted by [`build_map`].
#[derive(Debug, Clone)]
pub enum MapSpec {
    /// x̂ + ρ
    Rigid { rho: f64 },
    /// x̂ + a(θ)
    Skew { a: MapExpression },
    /// x̂ + c + K/(2π) sin 2πx̂ + ε sin 2πθ, with |K| < 1
    Arnold { c: f64, k: f64, eps: f64 },
    /// γ̂(θ+ω) + u − (b/2π) sin 2πu with u = x̂ − γ̂(θ), γ̂(θ) = A sin 2πθ.
    /// The graph γ̂ is invariant and attracting.
    AttractingGraph { b: f64, amplitude: f64 },
    /// ĥ⁻¹_{θ+ω} ∘ inner_θ ∘ ĥ_θ
    Conjugated {
        inner: Box<MapSpec>,
        h: MapExpression,
    },
    /// Projective action of an SL(2,ℝ) cocycle.
    Projective(CocycleSpec),
    /// Any fibre lift written in the expression language.
    Custom(MapExpression),
}

enum Fibre {
    Rigid {
        rho: f64,
    },
    Skew {
        a: MapExpression,
    },
    Arnold {
        c: f64,
        k: f64,
        eps: f64,
    },
    AttractingGraph {
        b: f64,
        amplitude: f64,
        omega: f64,
    },
    Conjugated {
        inner: LiftedSkewMap,
        h: MapExpression,
    },
    Projective(ProjectiveLift),
    Custom(MapExpression),
    Shifted {
        inner: LiftedSkewMap,
        by: f64,
    },
}

/// A forced circle map (θ, x) ↦ (θ + ω, T_θ(x)) given through a lift of its
/// fibre maps. Cheap to clone and safe to share between threads.
#[derive(Clone)]
pub struct LiftedSkewMap {
    omega: f64,
    fibre: Arc<Fibre>,
    label: Arc<str>,
}

impl fmt::Debug for LiftedSkewMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LiftedSkewMap")
            .field("label", &self.label)
            .field("omega", &self.omega)
            .finish()
    }
}

impl LiftedSkewMap {
    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// T̂_θ(x̂).
    #[inline]
    pub fn lift(&self, theta: f64, x: f64) -> f64 {
        match &*self.fibre {
            Fibre::Rigid { rho } => x + rho,
            Fibre::Skew { a } => x + a.eval(theta, x),
            Fibre::Arnold { c, k, eps } => {
                x + c + k / TAU * (TAU * x).sin() + eps * (TAU * theta).sin()
            }
            Fibre::AttractingGraph {
                b,
                amplitude,
                omega,
            } => {
                let u = x - amplitude * (TAU * theta).sin();
                amplitude * (TAU * (theta + omega)).sin() + u - b / TAU * (TAU * u).sin()
            }
            Fibre::Conjugated { inner, h } => {
                let y = inner.lift(theta, h.eval(theta, x));
                invert_monotone(|s| h.eval(frac(theta + self.omega), s), y).unwrap_or(f64::NAN)
            }
            Fibre::Projective(p) => p.lift(theta, x),
            Fibre::Custom(e) => e.eval(theta, x),
            Fibre::Shifted { inner, by } => inner.lift(theta, x) + by,
        }
    }

    /// ∂T̂_θ/∂x̂ when the family provides it.
    pub fn derivative(&self, theta: f64, x: f64) -> Option<f64> {
        Some(match &*self.fibre {
            Fibre::Rigid { .. } | Fibre::Skew { .. } => 1.0,
            Fibre::Arnold { k, .. } => 1.0 + k * (TAU * x).cos(),
            Fibre::AttractingGraph { b, amplitude, .. } => {
                let u = x - amplitude * (TAU * theta).sin();
                1.0 - b * (TAU * u).cos()
            }
            Fibre::Conjugated { inner, h } => {
                let z = h.eval(theta, x);
                let inner_d = inner.derivative(theta, z)?;
                let r = self.lift(theta, x);
                inner_d * h.eval_dx(theta, x) / h.eval_dx(frac(theta + self.omega), r)
            }
            Fibre::Projective(p) => p.derivative(theta, x),
            Fibre::Custom(e) => e.eval_dx(theta, x),
            Fibre::Shifted { inner, .. } => return inner.derivative(theta, x),
        })
    }

    pub fn has_derivative(&self) -> bool {
        match &*self.fibre {
            Fibre::Conjugated { inner, .. } | Fibre::Shifted { inner, .. } => {
                inner.has_derivative()
            }
            _ => true,
        }
    }

    /// One step of the skew product on 𝕋¹ × ℝ.
    #[inline]
    pub fn step(&self, theta: f64, x: f64) -> (f64, f64) {
        (frac(theta + self.omega), self.lift(theta, x))
    }

    /// T̂_θ⁻¹(y), by bracketed root finding on the fibre.
    pub fn invert_fibre(&self, theta: f64, y: f64) -> Result<f64, ModelError> {
        let diverged = ModelError::InverseDiverged { theta, y };
        match &*self.fibre {
            // Invert factor by factor so each root find is over a cheap lift.
            Fibre::Conjugated { inner, h } => {
                let z = h.eval(frac(theta + self.omega), y);
                let w = inner.invert_fibre(theta, z)?;
                invert_monotone(|s| h.eval(theta, s), w).ok_or(diverged)
            }
            Fibre::Shifted { inner, by } => inner.invert_fibre(theta, y - by),
            _ => invert_monotone(|s| self.lift(theta, s), y).ok_or(diverged),
        }
    }

    /// One step of the inverse: (θ, x̂) ↦ (θ − ω, T̂_{θ−ω}⁻¹(x̂)).
    pub fn step_back(&self, theta: f64, x: f64) -> Result<(f64, f64), ModelError> {
        let prev = frac(theta - self.omega);
        Ok((prev, self.invert_fibre(prev, x)?))
    }

    /// The same torus map with the lift T̂ + n.
    pub fn with_lift_shift(&self, n: i64) -> LiftedSkewMap {
        LiftedSkewMap {
            omega: self.omega,
            fibre: Arc::new(Fibre::Shifted {
                inner: self.clone(),
                by: n as f64,
            }),
            label: format!("{}{:+}", self.label, n).into(),
        }
    }

    /// The backing cocycle of a projective map.
    pub fn cocycle(&self) -> Option<&CocycleSpec> {
        match &*self.fibre {
            Fibre::Projective(p) => Some(p.cocycle()),
            Fibre::Shifted { inner, .. } => inner.cocycle(),
            _ => None,
        }
    }

    /// The translation term of a skew translation, as a function of θ.
    pub fn skew_term(&self) -> Option<SkewTerm<'_>> {
        match &*self.fibre {
            Fibre::Rigid { rho } => Some(SkewTerm::Constant(*rho)),
            Fibre::Skew { a } => Some(SkewTerm::Expression(a)),
            _ => None,
        }
    }
}

/// Translation term of a skew translation.
pub enum SkewTerm<'a> {
    Constant(f64),
    Expression(&'a MapExpression),
}

impl SkewTerm<'_> {
    pub fn eval(&self, theta: f64) -> f64 {
        match self {
            SkewTerm::Constant(c) => *c,
            SkewTerm::Expression(e) => e.eval(theta, 0.0),
        }
    }
}

/// Solves f(s) = y for an increasing f with f(s + 1) = f(s) + 1.
///
/// Brackets with unit steps, then runs Illinois regula falsi with a
/// bisection fallback whenever a step fails to halve the bracket.
pub(crate) fn invert_monotone(f: impl Fn(f64) -> f64, y: f64) -> Option<f64> {
    if !y.is_finite() {
        return None;
    }
    let g = |s: f64| f(s) - y;
    let guess = 2.0 * y - f(y);
    let g0 = g(guess);
    if !g0.is_finite() {
        return None;
    }
    if g0 == 0.0 {
        return Some(guess);
    }
    let (mut lo, mut glo, mut hi, mut ghi);
    if g0 < 0.0 {
        lo = guess;
        glo = g0;
        hi = guess + 1.0;
        ghi = g(hi);
        let mut n = 0;
        while ghi < 0.0 {
            lo = hi;
            glo = ghi;
            hi += 1.0;
            ghi = g(hi);
            n += 1;
            if n > 64 || !ghi.is_finite() {
                return None;
            }
        }
    } else {
        hi = guess;
        ghi = g0;
        lo = guess - 1.0;
        glo = g(lo);
        let mut n = 0;
        while glo > 0.0 {
            hi = lo;
            ghi = glo;
            lo -= 1.0;
            glo = g(lo);
            n += 1;
            if n > 64 || !glo.is_finite() {
                return None;
            }
        }
    }
    if glo == 0.0 {
        return Some(lo);
    }
    if ghi == 0.0 {
        return Some(hi);
    }

    let mut side = 0i8;
    for _ in 0..200 {
        let width = hi - lo;
        if width <= INVERSE_TOLERANCE {
            return Some(0.5 * (lo + hi));
        }
        let mut s = (lo * ghi - hi * glo) / (ghi - glo);
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        if s <= lo || s >= hi {
            // No representable point strictly inside the bracket.
            return Some(0.5 * (lo + hi));
        }
        let gs = g(s);
        if gs == 0.0 {
            return Some(s);
        }
        if gs < 0.0 {
            lo = s;
            glo = gs;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = s;
            ghi = gs;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
        if hi - lo > 0.5 * width {
            let m = 0.5 * (lo + hi);
            if m <= lo || m >= hi {
                return Some(m);
            }
            let gm = g(m);
            if gm == 0.0 {
                return Some(m);
            }
            if gm < 0.0 {
                lo = m;
                glo = gm;
            } else {
                hi = m;
                ghi = gm;
            }
            side = 0;
        }
    }
    None
}

fn check_omega(omega: f64) -> Result<(), ModelError> {
    if !(omega.is_finite() && omega > 0.0 && omega < 1.0) {
        return Err(ModelError::InvalidOmega(omega));
    }
    Ok(())
}

fn finite(name: &'static str, value: f64) -> Result<(), ModelError> {
    if !value.is_finite() {
        return Err(ModelError::Parameter {
            name,
            value,
            reason: "must be finite",
        });
    }
    Ok(())
}

/// Builds a map from a family specification.
pub fn build_map(spec: &MapSpec, omega: f64) -> Result<LiftedSkewMap, ModelError> {
    check_omega(omega)?;
    let (fibre, label) = match spec {
        MapSpec::Rigid { rho } => {
            finite("rho", *rho)?;
            (Fibre::Rigid { rho: *rho }, format!("rigid(rho={rho})"))
        }
        MapSpec::Skew { a } => {
            if a.depends_on_x() {
                return Err(ModelError::SkewDependsOnX);
            }
            (
                Fibre::Skew { a: a.clone() },
                format!("skew(a={})", a.source()),
            )
        }
        MapSpec::Arnold { c, k, eps } => {
            finite("c", *c)?;
            finite("eps", *eps)?;
            if !(k.abs() < 1.0) {
                return Err(ModelError::Parameter {
                    name: "K",
                    value: *k,
                    reason: "fibre maps are homeomorphisms only for |K| < 1",
                });
            }
            (
                Fibre::Arnold {
                    c: *c,
                    k: *k,
                    eps: *eps,
                },
                format!("arnold(c={c},K={k},eps={eps})"),
            )
        }
        MapSpec::AttractingGraph { b, amplitude } => {
            finite("amplitude", *amplitude)?;
            if !(b.abs() < 1.0) {
                return Err(ModelError::Parameter {
                    name: "b",
                    value: *b,
                    reason: "fibre maps are homeomorphisms only for |b| < 1",
                });
            }
            (
                Fibre::AttractingGraph {
                    b: *b,
                    amplitude: *amplitude,
                    omega,
                },
                format!("attracting-graph(b={b},amplitude={amplitude})"),
            )
        }
        MapSpec::Conjugated { inner, h } => {
            let inner = build_map(inner, omega)?;
            return conjugate(&inner, h);
        }
        MapSpec::Projective(cocycle) => {
            let lift = ProjectiveLift::new(cocycle.clone())?;
            let label = format!("projective({})", cocycle.label());
            (Fibre::Projective(lift), label)
        }
        MapSpec::Custom(e) => (Fibre::Custom(e.clone()), format!("custom({})", e.source())),
    };
    Ok(LiftedSkewMap {
        omega,
        fibre: Arc::new(fibre),
        label: label.into(),
    })
}

/// Parameters are looked up by name; unknown names are ignored by families
/// that do not use them.
pub fn spec_from_params(
    family: &str,
    params: &BTreeMap<String, f64>,
    expression: Option<&str>,
) -> Result<MapSpec, ModelError> {
    let get = |name: &'static str, default: Option<f64>| -> Result<f64, ModelError> {
        params
            .get(name)
            .copied()
            .or(default)
            .ok_or(ModelError::Parameter {
                name,
                value: f64::NAN,
                reason: "missing",
            })
    };
    let expression = |what: &'static str| {
        expression.ok_or(ModelError::Parameter {
            name: what,
            value: f64::NAN,
            reason: "expression required",
        })
    };
    Ok(match family {
        "rigid" => MapSpec::Rigid {
            rho: get("rho", None)?,
        },
        "skew" => MapSpec::Skew {
            a: parse_map_expression(expression("a")?, params)?,
        },
        "arnold" => MapSpec::Arnold {
            c: get("c", None)?,
            k: get("K", None)?,
            eps: get("eps", Some(0.0))?,
        },
        "attracting-graph" => MapSpec::AttractingGraph {
            b: get("b", None)?,
            amplitude: get("amplitude", Some(0.1))?,
        },
        "custom" => MapSpec::Custom(parse_map_expression(expression("expression")?, params)?),
        _ => {
            return Err(ModelError::Parameter {
                name: "family",
                value: f64::NAN,
                reason: "unknown family (rigid, skew, arnold, attracting-graph, conjugated, projective, custom)",
            })
        }
    })
}

/// Returns θ+ω and T̂ⁿ_θ(x̂).
pub fn iterate(map: &LiftedSkewMap, theta: f64, x: f64, n: u64) -> Result<(f64, f64), ModelError> {
    let (mut t, mut y) = (theta, x);
    for step in 0..n {
        (t, y) = map.step(t, y);
        if !(y.abs() < MAGNITUDE_LIMIT) {
            return Err(ModelError::Overflow {
                step: step + 1,
                value: y,
            });
        }
    }
    Ok((t, y))
}

/// A point of 𝕋¹ × ℝ whose fibre coordinate is stored as integer part plus
/// fraction, so long orbits keep full precision in the fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orbit {
    theta: f64,
    int: i64,
    frac: f64,
    steps: u64,
}

impl Orbit {
    pub fn new(theta: f64, x: f64) -> Self {
        let int = x.floor();
        Orbit {
            theta: frac(theta),
            int: int as i64,
            frac: x - int,
            steps: 0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn x(&self) -> f64 {
        self.int as f64 + self.frac
    }

    /// Fractional part of x̂, in [0, 1).
    pub fn x_frac(&self) -> f64 {
        self.frac
    }

    pub fn x_int(&self) -> i64 {
        self.int
    }

    /// Net number of forward steps taken.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// x̂ − x̂_origin without forming either large number.
    #[inline]
    pub fn offset_from(&self, origin: &Orbit) -> f64 {
        (self.int - origin.int) as f64 + (self.frac - origin.frac)
    }

    #[inline]
    fn absorb(&mut self, y: f64) -> Result<(), ModelError> {
        if !(y.abs() < MAGNITUDE_LIMIT) {
            return Err(ModelError::Overflow {
                step: self.steps,
                value: y,
            });
        }
        let m = y.floor();
        self.int += m as i64;
        self.frac = y - m;
        if self.frac >= 1.0 {
            self.int += 1;
            self.frac = 0.0;
        }
        Ok(())
    }

    /// One forward step, using T̂_θ(x̂ + m) = T̂_θ(x̂) + m.
    #[inline]
    pub fn advance(&mut self, map: &LiftedSkewMap) -> Result<(), ModelError> {
        let y = map.lift(self.theta, self.frac);
        self.theta = frac(self.theta + map.omega());
        self.steps += 1;
        self.absorb(y)
    }

    /// One inverse step.
    pub fn retreat(&mut self, map: &LiftedSkewMap) -> Result<(), ModelError> {
        let prev = frac(self.theta - map.omega());
        let y = map.invert_fibre(prev, self.frac)?;
        self.theta = prev;
        self.steps = self.steps.wrapping_sub(1);
        self.absorb(y)
    }
}

/// Inverse iteration by per-fibre root finding.
pub fn iterate_back(
    map: &LiftedSkewMap,
    theta: f64,
    x: f64,
    n: u64,
) -> Result<(f64, f64), ModelError> {
    let (mut t, mut y) = (theta, x);
    for step in 0..n {
        (t, y) = map.step_back(t, y)?;
        if !(y.abs() < MAGNITUDE_LIMIT) {
            return Err(ModelError::Overflow {
                step: step + 1,
                value: y,
            });
        }
    }
    Ok((t, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub theta_grid: usize,
    pub x_grid: usize,
    /// sup |T̂_θ(x̂+1) − T̂_θ(x̂) − 1| over the grid.
    pub max_periodicity_defect: f64,
    /// min of T̂_θ(x_{j+1}) − T̂_θ(x_j) over adjacent grid points.
    pub min_monotone_increment: f64,
    /// max |T̂_1(x̂) − T̂_0(x̂)|: nonzero values indicate a lift that is not
    /// periodic in θ (informational only).
    pub theta_seam_defect: f64,
    pub pass: bool,
}

pub const DEFAULT_VALIDATION_GRID: usize = 256;

/// Grid check of the degree-one and monotonicity contract.
pub fn validate_homeomorphism(
    map: &LiftedSkewMap,
    theta_grid: usize,
    x_grid: usize,
) -> Result<ValidationReport, ModelError> {
    validate_fn(|t, x| map.lift(t, x), theta_grid, x_grid)
}

fn validate_fn(
    f: impl Fn(f64, f64) -> f64,
    theta_grid: usize,
    x_grid: usize,
) -> Result<ValidationReport, ModelError> {
    for g in [theta_grid, x_grid] {
        if g < 16 {
            return Err(ModelError::GridTooSmall { min: 16, got: g });
        }
    }
    let mut defect: f64 = 0.0;
    let mut min_inc = f64::INFINITY;
    let mut seam: f64 = 0.0;
    for i in 0..theta_grid {
        let theta = i as f64 / theta_grid as f64;
        let mut prev = f(theta, 0.0);
        for j in 0..=x_grid {
            let x = j as f64 / x_grid as f64;
            let v = if j == 0 { prev } else { f(theta, x) };
            if j > 0 {
                let inc = v - prev;
                min_inc = min_inc.min(if inc.is_nan() { f64::NEG_INFINITY } else { inc });
                prev = v;
            }
            let d = (f(theta, x + 1.0) - v - 1.0).abs();
            defect = defect.max(if d.is_nan() { f64::INFINITY } else { d });
        }
    }
    for j in 0..=x_grid {
        let x = j as f64 / x_grid as f64;
        let d = (f(1.0, x) - f(0.0, x)).abs();
        seam = seam.max(if d.is_nan() { f64::INFINITY } else { d });
    }
    Ok(ValidationReport {
        theta_grid,
        x_grid,
        max_periodicity_defect: defect,
        min_monotone_increment: min_inc,
        theta_seam_defect: seam,
        pass: defect < 1e-9 && min_inc > 0.0,
    })
}

/// ĥ⁻¹_{θ+ω} ∘ T̂_θ ∘ ĥ_θ.
pub fn conjugate(map: &LiftedSkewMap, h: &MapExpression) -> Result<LiftedSkewMap, ModelError> {
    let report = validate_fn(|t, x| h.eval(t, x), 64, 64)?;
    if !report.pass {
        return Err(ModelError::NonMonotoneConjugacy {
            defect: report.max_periodicity_defect,
            min_increment: report.min_monotone_increment,
        });
    }
    // Surface inverse failures at construction rather than as NaN later.
    for i in 0..16 {
        let t = i as f64 / 16.0;
        let y = h.eval(t, 0.3);
        invert_monotone(|s| h.eval(t, s), y).ok_or(ModelError::InverseDiverged { theta: t, y })?;
    }
    Ok(LiftedSkewMap {
        omega: map.omega,
        label: format!("conjugated({}, h={})", map.label, h.source()).into(),
        fibre: Arc::new(Fibre::Conjugated {
            inner: map.clone(),
            h: h.clone(),
        }),
    })
}

/// V(T) = ∫ Var DT_θ dθ: uniform θ quadrature of the total variation of the
/// fibre derivative over one period (wraparound included).
pub fn variation_v(
    map: &LiftedSkewMap,
    theta_quadrature: usize,
    x_grid: usize,
) -> Result<f64, ModelError> {
    if !map.has_derivative() {
        return Err(ModelError::MissingDerivative);
    }
    if theta_quadrature == 0 || x_grid < 2 {
        return Err(ModelError::GridTooSmall {
            min: 2,
            got: theta_quadrature.min(x_grid),
        });
    }
    let mut total = 0.0;
    let mut values = vec![0.0; x_grid];
    for i in 0..theta_quadrature {
        let theta = i as f64 / theta_quadrature as f64;
        for (j, v) in values.iter_mut().enumerate() {
            *v = map
                .derivative(theta, j as f64 / x_grid as f64)
                .ok_or(ModelError::MissingDerivative)?;
        }
        let mut var = (values[0] - values[x_grid - 1]).abs();
        for w in values.windows(2) {
            var += (w[1] - w[0]).abs();
        }
        total += var;
    }
    Ok(total / theta_quadrature as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expr(src: &str) -> MapExpression {
        parse_map_expression(src, &BTreeMap::new()).unwrap()
    }

    fn arnold(c: f64, k: f64, eps: f64) -> LiftedSkewMap {
        build_map(&MapSpec::Arnold { c, k, eps }, GOLDEN_OMEGA).unwrap()
    }

    #[test]
    fn family_examples() {
        let rigid = build_map(&MapSpec::Rigid { rho: 0.25 }, GOLDEN_OMEGA).unwrap();
        assert_eq!(rigid.lift(0.3, 0.5), 0.75);
        let skew = build_map(
            &MapSpec::Skew {
                a: expr("0.3 + 0.1*sin(2*pi*theta)"),
            },
            GOLDEN_OMEGA,
        )
        .unwrap();
        let t: f64 = 0.17;
        assert!((skew.lift(t, 0.4) - (0.7 + 0.1 * (TAU * t).sin())).abs() < 1e-15);
        let a = arnold(0.25, 0.5, 0.3);
        for i in 0..20 {
            let x = i as f64 / 20.0;
            let d = a.derivative(0.1, x).unwrap();
            assert!((d - (1.0 + 0.5 * (TAU * x).cos())).abs() < 1e-15);
            assert!(d > 0.0);
        }
    }

    #[test]
    fn parameter_ranges_are_checked() {
        assert!(matches!(
            build_map(
                &MapSpec::Arnold {
                    c: 0.0,
                    k: 1.0,
                    eps: 0.0
                },
                GOLDEN_OMEGA
            ),
            Err(ModelError::Parameter { name: "K", .. })
        ));
        assert!(matches!(
            build_map(
                &MapSpec::AttractingGraph {
                    b: 1.2,
                    amplitude: 0.1
                },
                GOLDEN_OMEGA
            ),
            Err(ModelError::Parameter { name: "b", .. })
        ));
        assert!(matches!(
            build_map(&MapSpec::Rigid { rho: 0.1 }, 1.5),
            Err(ModelError::InvalidOmega(_))
        ));
        assert!(matches!(
            build_map(&MapSpec::Skew { a: expr("x") }, GOLDEN_OMEGA),
            Err(ModelError::SkewDependsOnX)
        ));
    }

    #[test]
    fn iterate_examples() {
        let rigid = build_map(&MapSpec::Rigid { rho: 0.25 }, GOLDEN_OMEGA).unwrap();
        assert_eq!(iterate(&rigid, 0.0, 0.0, 4).unwrap().1, 1.0);
        let skew = build_map(
            &MapSpec::Skew {
                a: expr("0.3 + 0.1*sin(2*pi*theta)"),
            },
            GOLDEN_OMEGA,
        )
        .unwrap();
        let (t, x) = iterate(&skew, 0.0, 0.0, 1).unwrap();
        assert_eq!(x, 0.3);
        assert_eq!(t, GOLDEN_OMEGA);
    }

    #[test]
    fn overflow_is_reported() {
        let m = build_map(&MapSpec::Custom(expr("x + 1e14")), GOLDEN_OMEGA).unwrap();
        assert!(matches!(
            iterate(&m, 0.0, 0.0, 100),
            Err(ModelError::Overflow { step: 10, .. })
        ));
    }

    #[test]
    fn inverse_round_trip() {
        let maps = [
            arnold(0.25, 0.9, 0.3),
            build_map(
                &MapSpec::AttractingGraph {
                    b: 0.5,
                    amplitude: 0.1,
                },
                GOLDEN_OMEGA,
            )
            .unwrap(),
        ];
        for m in &maps {
            for i in 0..50 {
                let t = frac(i as f64 * 0.377);
                let x = -3.0 + i as f64 * 0.21;
                let y = m.lift(t, x);
                assert!((m.invert_fibre(t, y).unwrap() - x).abs() < 1e-11);
            }
            let (t, x) = iterate(m, 0.2, 0.4, 20).unwrap();
            let (t0, x0) = iterate_back(m, t, x, 20).unwrap();
            assert!((frac(t0 - 0.2 + 0.5) - 0.5).abs() < 1e-9);
            assert!((x0 - 0.4).abs() < 1e-9);
        }
    }

    #[test]
    fn validation_examples() {
        let ok = validate_homeomorphism(&arnold(0.25, 0.5, 0.3), 64, 64).unwrap();
        assert!(ok.pass, "{ok:?}");
        let p: BTreeMap<String, f64> = [("K".to_string(), 1.5)].into();
        let steep = parse_map_expression("x + 0.25 + K/(2*pi)*sin(2*pi*x)", &p).unwrap();
        let steep = build_map(&MapSpec::Custom(steep), GOLDEN_OMEGA).unwrap();
        let r = validate_homeomorphism(&steep, 64, 64).unwrap();
        assert!(!r.pass && r.min_monotone_increment < 0.0);
        assert!(r.max_periodicity_defect < 1e-9);
        let lin = build_map(&MapSpec::Custom(expr("x + 0.3*x")), GOLDEN_OMEGA).unwrap();
        let r = validate_homeomorphism(&lin, 64, 64).unwrap();
        assert!(!r.pass);
        assert!((r.max_periodicity_defect - 0.3).abs() < 1e-12);
        assert!(matches!(
            validate_homeomorphism(&lin, 8, 64),
            Err(ModelError::GridTooSmall { .. })
        ));
    }

    #[test]
    fn identity_conjugacy_is_neutral() {
        let a = arnold(0.25, 0.5, 0.3);
        let c = conjugate(&a, &expr("x")).unwrap();
        for i in 0..40 {
            let t = frac(i as f64 * 0.173);
            let x = i as f64 * 0.05 - 1.0;
            assert!((c.lift(t, x) - a.lift(t, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn conjugation_round_trip() {
        let a = arnold(0.25, 0.5, 0.3);
        let g_src = "x - 0.1*sin(2*pi*theta)";
        let tr = conjugate(&a, &expr("x + 0.1*sin(2*pi*theta)")).unwrap();
        let id = conjugate(&tr, &expr(g_src)).unwrap();
        for i in 0..40 {
            let t = frac(i as f64 * 0.173);
            let x = i as f64 * 0.05 - 1.0;
            assert!((id.lift(t, x) - a.lift(t, x)).abs() < 1e-9);
        }
    }

    #[test]
    fn non_monotone_conjugacy_rejected() {
        let a = arnold(0.25, 0.5, 0.3);
        assert!(matches!(
            conjugate(&a, &expr("x + 0.3*sin(2*pi*x)")),
            Err(ModelError::NonMonotoneConjugacy { .. })
        ));
    }

    #[test]
    fn variation_examples() {
        let rigid = build_map(&MapSpec::Rigid { rho: 0.3 }, GOLDEN_OMEGA).unwrap();
        assert_eq!(variation_v(&rigid, 64, 256).unwrap(), 0.0);
        let v = variation_v(&arnold(0.25, 0.5, 0.3), 64, 1024).unwrap();
        assert!((v - 2.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn lift_shift_adds_integer() {
        let a = arnold(0.25, 0.5, 0.3);
        let b = a.with_lift_shift(1);
        assert_eq!(b.lift(0.2, 0.3), a.lift(0.2, 0.3) + 1.0);
    }
}
