//! Analysis toolkit for a slotted wirelessly powered node that stores
//! harvested RF energy in a finite or infinite buffer and transmits with a
//! capped constant-power policy.
//!
//! The crate covers four layers:
//!
//! - [`model`] — harvest distributions, plant parameters, and the reduction
//!   that maps amplifier/storage imperfections onto an ideal storage
//!   recursion.
//! - [`sim`] — Monte Carlo simulation of the storage chain and of its
//!   water-storage twin, with reproducible seeded statistics.
//! - [`dist`] — limiting distributions of the buffer content: the
//!   infinite-buffer exponential law, the exact stripe-wise finite-buffer
//!   law, an exponential-type approximation with an error profile, and a
//!   collocation solver for the stationarity integral equations that serves
//!   as an oracle for arbitrary i.i.d. harvest models.
//! - [`perf`] — average error rate and outage probability of the uplink in
//!   closed form and by semi-analytic Monte Carlo, plus diversity-order and
//!   power-tuning diagnostics.
//!
//! [`special`] provides the real Lambert W function (branches 0 and -1) used
//! by the closed forms, and [`quad`] a small adaptive quadrature routine.

// validation guards use `!(x > 0.0)` so NaN fails them too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod dd;
mod error;

pub mod dist;
pub mod model;
pub mod perf;
pub mod quad;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
