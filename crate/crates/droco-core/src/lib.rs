//! Finite-MDP laboratory for dual-robust cross-domain offline RL.
//!
//! The crate provides, in tabular form, everything needed to study a robust
//! cross-domain Bellman operator end to end:
//!
//! - [`mdp`] — finite MDPs, exact planning oracles, Lipschitz constants;
//! - [`transport`] — exact discrete optimal transport: 1-Wasserstein
//!   distances, worst-case expectations over Wasserstein balls, and the
//!   Lagrangian dual of the ball constraint;
//! - [`grid`] — gridworld source/target pairs with kinematic and morphology
//!   dynamics shifts;
//! - [`data`] — offline dataset generation, behavior policies of graded
//!   quality, subsampling, and JSON-lines persistence;
//! - [`operators`] — standard, in-sample, and robust cross-domain Bellman
//!   backups with fixed-point solvers;
//! - [`ensemble`] — bootstrap-fit categorical dynamics ensembles;
//! - [`train`] — the tabular training loop (expectile value regression,
//!   Huber Bellman updates with a dynamic value penalty, advantage-weighted
//!   policy extraction) and a merged-data baseline;
//! - [`eval`] — test-time dynamics-perturbation harness and normalized
//!   scores;
//! - [`verify`] — executable brute-force checkers for every claimed
//!   operator property.
//!
//! All randomness is drawn from named, seed-derived streams
//! ([`seeding::stream_seed`]); every function is deterministic given its
//! seed arguments.

// Numeric kernels here iterate state/action index ranges over several
// parallel tables at once; zipped iterators would obscure the math.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod grid;
pub mod mdp;
pub mod operators;
pub mod seeding;
pub mod train;
pub mod transport;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
