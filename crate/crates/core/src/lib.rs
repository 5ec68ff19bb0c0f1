//! Interacting-particle simulation and order-preservation testing for
//! path-distribution dependent SDEs with memory.
//!
//! The crate is organised around the objects the problem is stated in:
//!
//! * [`segments`] — discretised path segments on a uniform lag grid, with
//!   the componentwise partial order, the lattice meet and the sup norm.
//! * [`measures`] — empirical measures on path space: exact Wasserstein-2
//!   transport, stochastic dominance with coupling witnesses, monotone and
//!   mixture couplings, and the meet pushforward.
//! * [`coeffs`] — a small arithmetic DSL for drift/diffusion coefficients
//!   over `(t, segment, law)`.
//! * [`conditions`] — randomized checkers for the continuity/growth
//!   assumptions and for the drift-order and diffusion-structure conditions.
//! * [`simulate`] — the coupled Euler–Maruyama particle integrator with
//!   shared Brownian increments and empirical-law feedback.
//! * [`orderlab`] — order-preservation trials, the smooth positive-part
//!   family, and the short-time drift-gap probe.
//! * [`scenario`] — scenario files and validation.

pub mod coeffs;
pub mod conditions;
pub mod measures;
pub mod orderlab;
pub mod rng;
pub mod scenario;
pub mod segments;
pub mod simulate;
