//! Locally equivariant flux networks and their training objective.
//!
//! A flux `G(tau, i | x)` is locally equivariant when
//! `G(tau, i | x) = -G(x_i, i | Swap(x, i, tau))`; its ReLU is then a rate
//! matrix that never drives both directions of a swap at once. Every
//! architecture here is a head `H(i | x)` that ignores `x_i`, contracted with
//! a token projector difference `w_tau - w_{x_i}`.

mod attention;
mod checkpoint;
mod conv;
mod flux;
mod free_energy;
mod layout;
mod loss;
mod mlp;
mod net;

pub use checkpoint::{from_bytes, load_checkpoint, load_checkpoint_for, save_checkpoint, to_bytes, Manifest, CHECKPOINT_VERSION};
pub use flux::{k_operator, k_operator_grad, rates_from_flux, FluxMatrix, KTerms, LOG_RATIO_CLAMP};
pub use free_energy::FreeEnergyNet;
pub use layout::{Block, Layout};
pub use loss::{k_value, loss_gradient, pinn_loss, LossGradient};
pub use net::{Architecture, FluxNet, NetSpec};

pub const TIME_FEATURES: usize = 4;

/// `[t, 1 - t, sin 2 pi t, cos 2 pi t]`.
pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let w = std::f64::consts::TAU * t;
    [t, 1.0 - t, w.sin(), w.cos()]
}
