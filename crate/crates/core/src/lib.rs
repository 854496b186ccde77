//! Coordinated multi-agent imitation learning.
//!
//! Per-role imitation policies are learned jointly with a latent role model
//! (a Bayesian HMM fit by stochastic variational inference). Demonstrations
//! arrive without a meaningful agent ordering; each set of trajectories is
//! re-indexed by solving a min-cost assignment between trajectories and latent
//! roles before the policies see it.
//!
//! The crate is organised bottom-up:
//!
//! * [`pursuit`]: toroidal predator-prey world used as the testbed.
//! * [`mdp`]: per-role relative MDP and value iteration (the expert oracles).
//! * [`hmm`]: variational HMM, forward-backward, Viterbi and SVI updates.
//! * [`assign`]: cost matrix, Kuhn-Munkres solver and role-based indexing.
//! * [`policy`]: featurization, supervised learners, joint rollout training and
//!   data aggregation.
//! * [`coordinator`]: the alternating assign / learn / roll-out / restructure loop.
//! * [`experiment`]: end-to-end drivers behind the `comil` binary.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assign;
pub mod coordinator;
pub mod error;
pub mod experiment;
pub mod hmm;
pub mod mdp;
pub mod policy;
pub mod pursuit;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
