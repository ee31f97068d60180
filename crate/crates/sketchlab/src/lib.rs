//! Adaptive attacks on integer linear sketches.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: small dense linear algebra (Gram-Schmidt, power iteration, row orthonormalization).
//! * [`lattice`]: exact integer kernels, LLL reduction, short kernel vectors and lattice rounding.
//! * [`dgauss`]: discrete Gaussian pmfs and samplers, including subspace-shaped query distributions.
//! * [`sketch`]: integer sketch matrices, turnstile streams and norm-gap oracles.
//! * [`attack`]: the adaptive rowspan-learning attack, failure certificates and exploit verification.
//! * [`harddist`]: paired hard-instance generators and their separating events.
//! * [`stats`]: empirical total variation distance and lemma-level numeric checks.
//! * [`suite`]: the fourteen-criterion acceptance battery shared by tests and the CLI.
//!
//! All randomness flows from a single root seed through [`seed::SeedTree`].

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod dgauss;
pub mod harddist;
pub mod lattice;
pub mod numerics;
pub mod seed;
pub mod sketch;
pub mod stats;
pub mod suite;
