//! Discrete neural sampling with continuous-time Markov chains.
//!
//! The crate simulates a learned jump process whose rate matrix is the ReLU of a
//! locally equivariant flux network, and corrects the walkers with proactive
//! importance weights that accumulate the log-space violation of the Kolmogorov
//! forward equation. Annealed importance sampling and sequential Monte Carlo are
//! the special case of a zero flux.
//!
//! Modules:
//! - [`ctmc`]: dense rate matrices, Euler simulation and exact oracles for tiny state spaces.
//! - [`targets`]: annealed lattice targets (Ising, Potts, tabular).
//! - [`leqnet`]: locally equivariant flux networks, the free-energy derivative net, losses, checkpoints.
//! - [`sampler`]: the walker ensemble, MCMC kernel, weights, ESS and resampling.
//! - [`trainer`]: PINN-objective training with a replay buffer.
//! - [`analysis`]: observables, Glauber ground truth and report comparison.
//! - [`verify`]: the exact-oracle verification battery.

pub mod analysis;
pub mod ctmc;
pub mod error;
pub mod leqnet;
pub mod rng;
pub mod sampler;
pub mod targets;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
