//! Semi-empirical Efron-Stein concentration bounds and their applications.
//!
//! The crate is organized around five subsystems:
//!
//! - [`concentration`]: variance-proxy estimation and tail radii for fixed
//!   functions of independent coordinates, plus the canonical-pair MGF
//!   check that empirically falsifies incorrect proxies.
//! - [`pac_bayes`]: the same machinery lifted to posterior distributions
//!   over a finite parameter space, with generalization bounds for
//!   unbounded and for `[0, 1]`-valued losses.
//! - [`wis`]: weighted importance sampling for off-policy evaluation:
//!   weight moments, the weight-sum lower tail, exact and bounded variance
//!   proxies, and a truncation-free lower bound on a target policy's value.
//! - [`opl`]: PAC-Bayesian off-policy learning over a finite policy class
//!   with an exponentiated-gradient posterior optimizer.
//! - [`sim`]: synthetic bandit environments with exact ground truth and the
//!   Monte Carlo coverage harness that stress-tests every probabilistic
//!   guarantee above.
//!
//! All randomness flows through [`rng`]'s `(seed, index)` stream
//! derivation, so every computation here is reproducible bit-for-bit
//! regardless of thread count.

// Precondition checks are written as `!(x >= threshold)` so that NaN
// arguments are rejected along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod categorical;
pub mod concentration;
pub mod error;
pub mod opl;
pub mod pac_bayes;
pub mod report;
pub mod rng;
pub mod sim;
pub mod wis;

pub use categorical::Categorical;
pub use error::{Error, Result};
pub use report::{BoundKind, BoundName, BoundReport, FailureEvent};
