//! Circle and cover arithmetic.
//!
//! Curves are stored as sampled lifts `(θ̂, x̂)` and every predicate in this
//! module is evaluated on the piecewise-linear interpolant of the samples.

use std::io;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance subtracted from 1/2 when deciding whether a lift step is
/// ambiguous.
pub const DEFAULT_LIFT_TOLERANCE: f64 = 1e-6;

/// Tolerance used when a q-curve's winding number is checked for integrality.
pub const QCURVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircleError {
    #[error("non-finite coordinate {0}")]
    NonFinite(f64),
    #[error("ambiguous lift step at index {index}: circle displacement {displacement}")]
    AmbiguousStep { index: usize, displacement: f64 },
    #[error("base lift {base} does not project to the first sample {first}")]
    BaseMismatch { base: f64, first: f64 },
    #[error("a curve needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample abscissae must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("curve domains do not overlap")]
    EmptyOverlap,
    #[error("q-curve domain length {length} does not match period {q}")]
    DomainLength { q: u32, length: f64 },
    #[error("q-curve winding {winding} is not an integer")]
    NonIntegerWinding { winding: f64 },
    #[error("q-curve meets its own translate by {shift} (difference {difference} is integral)")]
    SelfIntersection { shift: u32, difference: f64 },
    #[error("period must be positive")]
    ZeroPeriod,
    #[error("csv: {0}")]
    Csv(String),
}

/// Fractional part in `[0, 1)`. Unlike `f64::fract` this is correct for
/// negative arguments and never returns 1.0.
#[inline]
pub fn frac(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed shortest displacement from `a` to `b` on the circle, in `[-1/2, 1/2)`.
#[inline]
pub fn circle_displacement(a: f64, b: f64) -> f64 {
    let d = frac(b - a);
    if d >= 0.5 {
        d - 1.0
    } else {
        d
    }
}

/// Point on 𝕋¹ = ℝ/ℤ, stored in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CirclePoint(f64);

impl CirclePoint {
    pub fn value(self) -> f64 {
        self.0
    }

    /// Rotation by `omega`.
    pub fn rotate(self, omega: f64) -> CirclePoint {
        CirclePoint(frac(self.0 + omega))
    }
}

impl From<CirclePoint> for f64 {
    fn from(p: CirclePoint) -> f64 {
        p.0
    }
}

/// Reduces a lifted coordinate mod 1.
pub fn wrap(x: f64) -> Result<CirclePoint, CircleError> {
    if !x.is_finite() {
        return Err(CircleError::NonFinite(x));
    }
    Ok(CirclePoint(frac(x)))
}

/// A sampled lift `θ̂ ↦ x̂` over a closed interval, interpolated linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedCurve {
    samples: Vec<(f64, f64)>,
}

impl LiftedCurve {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, CircleError> {
        if samples.len() < 2 {
            return Err(CircleError::TooFewSamples(samples.len()));
        }
        for &(t, x) in &samples {
            if !t.is_finite() {
                return Err(CircleError::NonFinite(t));
            }
            if !x.is_finite() {
                return Err(CircleError::NonFinite(x));
            }
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(CircleError::NotIncreasing(i + 1));
        }
        Ok(LiftedCurve { samples })
    }

    /// Samples `f` at `n + 1` equally spaced points of `[a, b]`.
    pub fn from_fn(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, CircleError> {
        let n = n.max(1);
        let samples = (0..=n)
            .map(|i| {
                let t = if i == n {
                    b
                } else {
                    a + (b - a) * i as f64 / n as f64
                };
                (t, f(t))
            })
            .collect();
        LiftedCurve::new(samples)
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }

    /// Value of the interpolant at `t`; clamps outside the domain.
    pub fn eval(&self, t: f64) -> f64 {
        let s = &self.samples;
        if t <= s[0].0 {
            return s[0].1;
        }
        let last = s.len() - 1;
        if t >= s[last].0 {
            return s[last].1;
        }
        let j = s.partition_point(|p| p.0 <= t);
        let (t0, x0) = s[j - 1];
        let (t1, x1) = s[j];
        x0 + (x1 - x0) * (t - t0) / (t1 - t0)
    }

    /// The same curve moved by `c` in the fibre direction.
    pub fn shifted(&self, c: f64) -> LiftedCurve {
        LiftedCurve {
            samples: self.samples.iter().map(|&(t, x)| (t, x + c)).collect(),
        }
    }

    /// Projection of every sample to 𝕋².
    pub fn project(&self) -> Vec<(CirclePoint, CirclePoint)> {
        self.samples
            .iter()
            .map(|&(t, x)| (CirclePoint(frac(t)), CirclePoint(frac(x))))
            .collect()
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), CircleError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["theta_hat", "x_hat"])
            .map_err(|e| CircleError::Csv(e.to_string()))?;
        for &(t, x) in &self.samples {
            w.write_record([format!("{t:e}"), format!("{x:e}")])
                .map_err(|e| CircleError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| CircleError::Csv(e.to_string()))
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, CircleError> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(|e| CircleError::Csv(e.to_string()))?;
        if headers.len() != 2 || &headers[0] != "theta_hat" || &headers[1] != "x_hat" {
            return Err(CircleError::Csv(format!(
                "expected header theta_hat,x_hat, found {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut samples = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| CircleError::Csv(e.to_string()))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CircleError::Csv(format!("{s:?}: {e}")))
            };
            samples.push((parse(&record[0])?, parse(&record[1])?));
        }
        LiftedCurve::new(samples)
    }
}

/// Continuous lift of a sampled curve on 𝕋², through `(θ₀, base)`.
///
/// θ is lifted forward (each step adds its displacement mod 1, which must be
/// nonzero); x is lifted by shortest circle displacement.
pub fn lift_curve(
    samples: &[(CirclePoint, CirclePoint)],
    base: f64,
    tolerance: f64,
) -> Result<LiftedCurve, CircleError> {
    if samples.len() < 2 {
        return Err(CircleError::TooFewSamples(samples.len()));
    }
    if !base.is_finite() {
        return Err(CircleError::NonFinite(base));
    }
    let first = samples[0].1.value();
    if circle_displacement(first, frac(base)).abs() > 1e-9 {
        return Err(CircleError::BaseMismatch { base, first });
    }
    let mut out = Vec::with_capacity(samples.len());
    let mut t_hat = samples[0].0.value();
    let mut x_hat = base;
    out.push((t_hat, x_hat));
    for (i, w) in samples.windows(2).enumerate() {
        let dt = frac(w[1].0.value() - w[0].0.value());
        if dt <= 0.0 {
            return Err(CircleError::NotIncreasing(i + 1));
        }
        t_hat += dt;
        let dx = circle_displacement(w[0].1.value(), w[1].1.value());
        if dx.abs() >= 0.5 - tolerance {
            return Err(CircleError::AmbiguousStep {
                index: i + 1,
                displacement: dx,
            });
        }
        // Re-anchor on the sample itself so projection returns the input.
        let target = w[1].1.value();
        let m = (x_hat + dx - target).round();
        x_hat = target + m;
        out.push((t_hat, x_hat));
    }
    LiftedCurve::new(out)
}

/// k(φ) := φ̂(b̂) − φ̂(â).
pub fn winding_number(curve: &LiftedCurve) -> f64 {
    let s = curve.samples();
    s[s.len() - 1].1 - s[0].1
}

/// v(φ) := max φ̂ − min φ̂.
pub fn oscillation(curve: &LiftedCurve) -> f64 {
    let (lo, hi) = curve
        .samples()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, x)| {
            (lo.min(x), hi.max(x))
        });
    hi - lo
}

/// Witness of a crossing between ψ̂ and φ̂ + m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub offset: i64,
    /// Bracketing interval `[lo, hi]` of θ̂ (degenerate for an exact zero).
    pub lo: f64,
    pub hi: f64,
}

/// Integer offsets that can possibly produce a crossing of `psi` with a
/// translate of `phi`.
pub fn intersection_offsets(phi: &LiftedCurve, psi: &LiftedCurve) -> RangeInclusive<i64> {
    let bounds = |c: &LiftedCurve| {
        c.samples()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, x)| {
                (lo.min(x), hi.max(x))
            })
    };
    let (phi_lo, phi_hi) = bounds(phi);
    let (psi_lo, psi_hi) = bounds(psi);
    ((psi_lo - phi_hi).floor() as i64)..=((psi_hi - phi_lo).ceil() as i64)
}

/// Looks for a sign change of ψ̂ − (φ̂ + m) on the common domain, for each `m`
/// in `offsets` in order. Both interpolants are linear between the merged
/// breakpoints, so checking the breakpoints is exact.
pub fn curves_intersect(
    phi: &LiftedCurve,
    psi: &LiftedCurve,
    offsets: RangeInclusive<i64>,
) -> Result<Option<Intersection>, CircleError> {
    let (a1, b1) = phi.domain();
    let (a2, b2) = psi.domain();
    let (a, b) = (a1.max(a2), b1.min(b2));
    if a > b {
        return Err(CircleError::EmptyOverlap);
    }
    let mut knots: Vec<f64> = phi
        .samples()
        .iter()
        .chain(psi.samples())
        .map(|p| p.0)
        .filter(|&t| t > a && t < b)
        .collect();
    knots.push(a);
    knots.push(b);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let diffs: Vec<f64> = knots.iter().map(|&t| psi.eval(t) - phi.eval(t)).collect();

    for m in offsets {
        let m_f = m as f64;
        let g = |i: usize| diffs[i] - m_f;
        for i in 0..knots.len() {
            let gi = g(i);
            if gi == 0.0 {
                return Ok(Some(Intersection {
                    offset: m,
                    lo: knots[i],
                    hi: knots[i],
                }));
            }
            if i + 1 < knots.len() && gi * g(i + 1) < 0.0 {
                return Ok(Some(Intersection {
                    offset: m,
                    lo: knots[i],
                    hi: knots[i + 1],
                }));
            }
        }
    }
    Ok(None)
}

/// A closed curve wrapping `q` times around the base and `k` times around
/// the fibre: γ̂(θ̂ + q) = γ̂(θ̂) + k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QCurve {
    period_q: u32,
    winding_k: i64,
    lift: LiftedCurve,
}

impl QCurve {
    /// `lift` must cover one fundamental domain `[â, â + q]`.
    pub fn new(period_q: u32, lift: LiftedCurve) -> Result<Self, CircleError> {
        if period_q == 0 {
            return Err(CircleError::ZeroPeriod);
        }
        let (a, b) = lift.domain();
        let q = period_q as f64;
        if ((b - a) - q).abs() > QCURVE_TOLERANCE {
            return Err(CircleError::DomainLength {
                q: period_q,
                length: b - a,
            });
        }
        let winding = winding_number(&lift);
        let k = winding.round();
        if (winding - k).abs() > QCURVE_TOLERANCE {
            return Err(CircleError::NonIntegerWinding { winding });
        }
        for shift in 1..period_q {
            let l = shift as f64;
            for &(t, x) in lift.samples() {
                if t + l > b {
                    break;
                }
                let d = lift.eval(t + l) - x;
                if (d - d.round()).abs() <= QCURVE_TOLERANCE {
                    return Err(CircleError::SelfIntersection {
                        shift,
                        difference: d,
                    });
                }
            }
        }
        Ok(QCurve {
            period_q,
            winding_k: k as i64,
            lift,
        })
    }

    pub fn period_q(&self) -> u32 {
        self.period_q
    }

    pub fn winding_k(&self) -> i64 {
        self.winding_k
    }

    pub fn lift(&self) -> &LiftedCurve {
        &self.lift
    }

    /// Value of the lift at any θ̂, extended by γ̂(θ̂ + q) = γ̂(θ̂) + k.
    pub fn eval(&self, t: f64) -> f64 {
        let (a, _) = self.lift.domain();
        let q = self.period_q as f64;
        let m = ((t - a) / q).floor();
        self.lift.eval(t - m * q) + m * self.winding_k as f64
    }

    /// Points of the projected curve on the fibre over `theta`.
    pub fn fibre_points(&self, theta: f64) -> Vec<f64> {
        let (a, _) = self.lift.domain();
        let base = a + frac(theta - a);
        let mut pts: Vec<f64> = (0..self.period_q)
            .map(|j| frac(self.eval(base + j as f64)))
            .collect();
        pts.sort_by(f64::total_cmp);
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn cp(x: f64) -> CirclePoint {
        wrap(x).unwrap()
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap(1.25).unwrap().value(), 0.25);
        assert_eq!(wrap(-0.25).unwrap().value(), 0.75);
        assert_eq!(wrap(3.0).unwrap().value(), 0.0);
        assert_eq!(wrap(-1e-18).unwrap().value(), 0.0);
        assert!(matches!(wrap(f64::NAN), Err(CircleError::NonFinite(_))));
        assert!(wrap(f64::INFINITY).is_err());
    }

    #[test]
    fn lift_constant_curve() {
        let samples: Vec<_> = (0..16).map(|i| (cp(i as f64 / 16.0), cp(0.5))).collect();
        let c = lift_curve(&samples, 0.5, DEFAULT_LIFT_TOLERANCE).unwrap();
        assert!(c.samples().iter().all(|&(_, x)| x == 0.5));
    }

    #[test]
    fn lift_linear_curve() {
        let samples: Vec<_> = (0..=64)
            .map(|i| {
                let t = i as f64 / 64.0;
                (cp(t), cp(2.0 * t))
            })
            .collect();
        let c = lift_curve(&samples, 0.0, DEFAULT_LIFT_TOLERANCE).unwrap();
        for &(t, x) in c.samples() {
            assert!((x - 2.0 * t).abs() < 1e-12, "{t} {x}");
        }
        assert_eq!(c.domain(), (0.0, 1.0));
        assert!((winding_number(&c) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lift_matches_formula() {
        let f = |t: f64| t + 0.1 * (TAU * t).sin();
        let samples: Vec<_> = (0..=64)
            .map(|i| {
                let t = i as f64 / 64.0;
                (cp(t), cp(f(t)))
            })
            .collect();
        let c = lift_curve(&samples, 0.0, DEFAULT_LIFT_TOLERANCE).unwrap();
        for &(t, x) in c.samples() {
            assert!((x - f(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn lift_rejects_ambiguous_step() {
        let samples = vec![(cp(0.0), cp(0.0)), (cp(0.1), cp(0.2)), (cp(0.2), cp(0.7))];
        match lift_curve(&samples, 0.0, DEFAULT_LIFT_TOLERANCE) {
            Err(CircleError::AmbiguousStep { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lift_rejects_wrong_base() {
        let samples = vec![(cp(0.0), cp(0.3)), (cp(0.1), cp(0.3))];
        assert!(matches!(
            lift_curve(&samples, 0.5, DEFAULT_LIFT_TOLERANCE),
            Err(CircleError::BaseMismatch { .. })
        ));
        assert!(lift_curve(&samples, 2.3, DEFAULT_LIFT_TOLERANCE).is_ok());
    }

    #[test]
    fn winding_examples() {
        let half = LiftedCurve::from_fn(0.0, 2.0, 32, |t| t / 2.0).unwrap();
        assert_eq!(winding_number(&half), 1.0);
        let flat = LiftedCurve::from_fn(0.0, 1.0, 8, |_| 0.3).unwrap();
        assert_eq!(winding_number(&flat), 0.0);
        let wavy =
            LiftedCurve::from_fn(0.0, 1.0, 100, |t| 3.0 * t + 0.1 * (TAU * t).sin()).unwrap();
        assert!((winding_number(&wavy) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn oscillation_examples() {
        let s = LiftedCurve::from_fn(0.0, 1.0, 1024, |t| 0.1 * (TAU * t).sin()).unwrap();
        assert!((oscillation(&s) - 0.2).abs() < 1e-5);
        let flat = LiftedCurve::from_fn(0.0, 1.0, 8, |_| 0.3).unwrap();
        assert_eq!(oscillation(&flat), 0.0);
        let id = LiftedCurve::from_fn(0.0, 1.0, 8, |t| t).unwrap();
        assert_eq!(oscillation(&id), 1.0);
    }

    #[test]
    fn intersection_examples() {
        let zero = LiftedCurve::from_fn(0.0, 1.0, 16, |_| 0.0).unwrap();
        let diag = LiftedCurve::from_fn(0.0, 1.0, 16, |t| t).unwrap();
        let hit = curves_intersect(&zero, &diag, 0..=0).unwrap().unwrap();
        assert_eq!(hit.lo, 0.0);

        let low = LiftedCurve::from_fn(0.0, 1.0, 16, |_| 0.2).unwrap();
        let high = LiftedCurve::from_fn(0.0, 1.0, 16, |_| 0.7).unwrap();
        assert_eq!(curves_intersect(&low, &high, 0..=0).unwrap(), None);

        let phi = LiftedCurve::from_fn(0.0, 1.0, 256, |t| 0.1 * (TAU * t).sin()).unwrap();
        let psi = LiftedCurve::from_fn(0.0, 1.0, 256, |t| 2.0 * t).unwrap();
        assert!(winding_number(&psi) >= oscillation(&phi) + 1.0);
        let hit = curves_intersect(&phi, &psi, 0..=1).unwrap().unwrap();
        let mid = 0.5 * (hit.lo + hit.hi);
        let g = |t: f64| 2.0 * t - 0.1 * (TAU * t).sin() - hit.offset as f64;
        // The true root of the difference lies inside the bracket.
        assert!(
            g(hit.lo) * g(hit.hi) <= 0.0,
            "bracket {hit:?} g(mid) = {}",
            g(mid)
        );
    }

    #[test]
    fn intersection_needs_overlap() {
        let a = LiftedCurve::from_fn(0.0, 1.0, 4, |_| 0.0).unwrap();
        let b = LiftedCurve::from_fn(2.0, 3.0, 4, |_| 0.0).unwrap();
        assert_eq!(
            curves_intersect(&a, &b, 0..=0),
            Err(CircleError::EmptyOverlap)
        );
    }

    #[test]
    fn curve_rejects_bad_samples() {
        assert_eq!(
            LiftedCurve::new(vec![(0.0, 0.0)]),
            Err(CircleError::TooFewSamples(1))
        );
        assert_eq!(
            LiftedCurve::new(vec![(0.0, 0.0), (0.0, 1.0)]),
            Err(CircleError::NotIncreasing(1))
        );
    }

    #[test]
    fn csv_round_trip() {
        let c = LiftedCurve::from_fn(0.0, 1.0, 10, |t| t * t - 0.3).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("theta_hat,x_hat\n"));
        let back = LiftedCurve::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        assert!(LiftedCurve::read_csv("a,b\n0,0\n1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn qcurve_checks() {
        let two = LiftedCurve::from_fn(0.0, 2.0, 64, |t| t / 2.0).unwrap();
        let q = QCurve::new(2, two).unwrap();
        assert_eq!(q.winding_k(), 1);
        assert_eq!(q.fibre_points(0.25), vec![0.125, 0.625]);
        assert!((q.eval(2.5) - 1.25).abs() < 1e-12);

        // γ̂(θ̂) = θ̂ on [0,2] closes up after one turn already.
        let double_cover = LiftedCurve::from_fn(0.0, 2.0, 64, |t| t).unwrap();
        assert!(matches!(
            QCurve::new(2, double_cover),
            Err(CircleError::SelfIntersection { shift: 1, .. })
        ));
        let open = LiftedCurve::from_fn(0.0, 1.0, 8, |t| 0.5 * t).unwrap();
        assert!(matches!(
            QCurve::new(1, open),
            Err(CircleError::NonIntegerWinding { .. })
        ));
    }
}
