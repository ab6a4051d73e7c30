//! Numerical tools for quasiperiodically forced circle homeomorphisms
//! (θ, x) ↦ (θ + ω, T_θ(x)): rotation numbers, deviation growth, invariant
//! graphs and strips, semi-conjugacies to torus translations, projective
//! cocycles and a four-way classification of regular/irregular behaviour.

pub mod circle;
pub mod classify;
pub mod cocycle;
pub mod models;
pub mod regularity;
pub mod rotation;
pub mod semiconj;
pub mod strips;
pub mod transitivity;

/// Version tag carried by every JSON document the crate writes.
pub const SCHEMA_VERSION: u32 = 1;
