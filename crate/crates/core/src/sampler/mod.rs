//! The sampling loop: walkers move by Euler steps of the learned CTMC, optionally
//! interleaved with heat-bath MCMC, and carry log-weights `A` that integrate
//! the KFE residual `K_t` along their paths. With zero flux this is AIS, and
//! with resampling it is SMC.

mod ensemble;
mod mcmc;
mod run;
mod weights;

pub use ensemble::WalkerEnsemble;
pub use mcmc::{heat_bath_matrix, heat_bath_probs, heat_bath_site, mcmc_kernel_step, McmcKernel};
pub use run::{k_operator, Diagnostics, Precision, RunOptions, Sampler, SamplerConfig, StepRecord, Transport};
pub use weights::{ess, log_mean_exp, normalized_weights, resample_indices, Resampling};
