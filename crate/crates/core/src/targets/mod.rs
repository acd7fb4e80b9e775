//! Annealed targets `rho_t ∝ exp(-U_t)` on periodic token lattices.
//!
//! `rho_0` is uniform whenever `beta_0 = 0`, the default linear schedule. The
//! Potts energy `-J sum 1[x_i = x_j]` follows the DISCS benchmark convention;
//! other conventions differ by constants and a rescaled coupling.

mod hamiltonian;
mod lattice;
mod schedule;
mod target;

pub use hamiltonian::{ising_hamiltonian, potts_hamiltonian, Model};
pub use lattice::{spin_of, Geometry, LatticeState};
pub use schedule::BetaSchedule;
pub use target::{log_sum_exp, AnnealedTarget, PotentialPath, TargetKind, ENUMERATION_CAP};

/// Critical inverse temperature of the square-lattice Ising model per unit
/// coupling, `ln(1 + sqrt 2) / 2`.
pub const ISING_CRITICAL_BETA: f64 = 0.440_686_793_509_771_5;
