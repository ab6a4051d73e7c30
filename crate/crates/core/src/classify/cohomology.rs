//! Truncated Fourier solution of a(θ) = φ(θ + ω) − φ(θ) + ρ for skew
//! translations.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::models::LiftedSkewMap;

/// Number of samples of a(θ); modes −M/2 < m ≤ M/2 are kept.
pub const FOURIER_MODES: usize = 1 << 10;
pub const SMALL_DIVISOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallDivisor {
    pub mode: i64,
    /// |e^{2πimω} − 1|
    pub divisor: f64,
    pub coefficient_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohomologyReport {
    pub modes: usize,
    /// â(0), the fibre rotation number of the skew translation.
    pub mean: f64,
    /// max − min of the truncated φ on the sample grid.
    pub phi_oscillation: f64,
    /// Σ_{m≠0} |φ̂(m)| over the kept modes: a bound on sup |φ − φ̂(0)|.
    pub phi_l1: f64,
    /// Σ |â(m)| over the top eighth of the kept modes, a truncation proxy.
    pub tail_mass: f64,
    pub small_divisors: Vec<SmallDivisor>,
}

/// Returns `None` when the map is not a skew translation.
pub fn cohomology_report(map: &LiftedSkewMap) -> Option<CohomologyReport> {
    let a = map.skew_term()?;
    let omega = map.omega();
    let n = FOURIER_MODES;
    let samples: Vec<f64> = (0..n).map(|j| a.eval(j as f64 / n as f64)).collect();
    let (cos_t, sin_t): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|j| (TAU * j as f64 / n as f64).sin_cos())
        .map(|(s, c)| (c, s))
        .unzip();
    let modes: Vec<i64> = (0..n as i64)
        .map(|j| if j > n as i64 / 2 { j - n as i64 } else { j })
        .collect();
    // â(m) = (1/n) Σ a_j e^{−2πimj/n}
    let coeffs: Vec<(f64, f64)> = modes
        .iter()
        .map(|&m| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in samples.iter().enumerate() {
                let idx = (m.rem_euclid(n as i64) as usize * j) % n;
                re += v * cos_t[idx];
                im -= v * sin_t[idx];
            }
            (re / n as f64, im / n as f64)
        })
        .collect();
    let mean = coeffs[0].0;
    let mut small = Vec::new();
    let mut phi_hat = vec![(0.0, 0.0); n];
    let mut tail = 0.0;
    for (idx, (&m, &(ar, ai))) in modes.iter().zip(&coeffs).enumerate() {
        if m == 0 {
            continue;
        }
        let abs = ar.hypot(ai);
        if m.unsigned_abs() as usize > n / 2 - n / 16 {
            tail += abs;
        }
        let (dr, di) = (
            (TAU * m as f64 * omega).cos() - 1.0,
            (TAU * m as f64 * omega).sin(),
        );
        let den = dr * dr + di * di;
        if den.sqrt() < SMALL_DIVISOR {
            small.push(SmallDivisor {
                mode: m,
                divisor: den.sqrt(),
                coefficient_abs: abs,
            });
            continue;
        }
        phi_hat[idx] = ((ar * dr + ai * di) / den, (ai * dr - ar * di) / den);
    }
    let phi_l1 = phi_hat.iter().map(|(r, i)| r.hypot(*i)).sum();
    let phi: Vec<f64> = (0..n)
        .map(|j| {
            modes
                .iter()
                .zip(&phi_hat)
                .map(|(&m, &(pr, pi))| {
                    let idx = (m.rem_euclid(n as i64) as usize * j) % n;
                    pr * cos_t[idx] - pi * sin_t[idx]
                })
                .sum()
        })
        .collect();
    let hi = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = phi.iter().copied().fold(f64::INFINITY, f64::min);
    Some(CohomologyReport {
        modes: n,
        mean,
        phi_oscillation: hi - lo,
        phi_l1,
        tail_mass: tail,
        small_divisors: small,
    })
}
