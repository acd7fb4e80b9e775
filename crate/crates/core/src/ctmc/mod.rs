//! Continuous-time Markov chains on small enumerated state spaces: Euler
//! simulation and the exact oracles (KFE integration, path RNDs, one-way
//! conversion) the samplers are checked against.

mod flux;
mod kfe;
mod oneway;
mod rnd;
mod system;

pub use flux::{exact_neighbor_transport, gradient_flux_potential, swap_neighbors};
pub use kfe::{solve_kfe, solve_kfe_with_step, uniform_grid, PmfPath, KFE_STEP};
pub use oneway::{make_one_way, time_reversal};
pub use rnd::{log_rnd_forward_forward, log_rnd_reverse, simulate, PathWeight, RndEvaluator, Trajectory};
pub use system::{random_system, DenseCtmcSystem, RateFn};

/// Largest state space the dense oracles accept by default.
pub const DENSE_STATE_CAP: usize = 4096;
