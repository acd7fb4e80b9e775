use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::targets::{AnnealedTarget, LatticeState};

/// What one application of the MCMC kernel does.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McmcKernel {
    /// One heat-bath update at a uniformly chosen site.
    #[default]
    Site,
    /// `d` independent single-site updates, i.e. the site kernel to the power `d`.
    Sweep,
}

/// Heat-bath conditional `rho_t(. | x_{-i})` at `site`.
pub fn heat_bath_probs(target: &AnnealedTarget, x: &LatticeState, site: usize, t: f64) -> Vec<f64> {
    let n = target.n_tokens();
    let lr: Vec<f64> = (0..n).map(|tau| target.neighbor_log_ratio(x, site, tau, t)).collect();
    let max = lr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lr.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Resamples `site` from its conditional; the update leaves `rho_t` invariant
/// and is reversible with respect to it.
pub fn heat_bath_site<R: Rng + ?Sized>(target: &AnnealedTarget, x: &mut LatticeState, site: usize, t: f64, rng: &mut R) {
    let probs = heat_bath_probs(target, x, site, t);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut pick = probs.len() - 1;
    for (tau, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            pick = tau;
            break;
        }
    }
    x.set(site, pick);
}

/// One Glauber update at a uniformly random site.
pub fn mcmc_kernel_step<R: Rng + ?Sized>(target: &AnnealedTarget, t: f64, x: &mut LatticeState, rng: &mut R) {
    let site = rng.gen_range(0..target.n_sites());
    heat_bath_site(target, x, site, t, rng);
}

pub(crate) fn apply_kernel<R: Rng + ?Sized>(kind: McmcKernel, target: &AnnealedTarget, t: f64, x: &mut LatticeState, rng: &mut R) {
    match kind {
        McmcKernel::Site => mcmc_kernel_step(target, t, x, rng),
        McmcKernel::Sweep => {
            for _ in 0..target.n_sites() {
                mcmc_kernel_step(target, t, x, rng);
            }
        }
    }
}

/// The single-site kernel as a dense stochastic matrix `M[y][x]` (enumerable targets).
pub fn heat_bath_matrix(target: &AnnealedTarget, t: f64) -> crate::Result<Vec<Vec<f64>>> {
    let states = target.enumerate_states()?;
    let n = states.len();
    let d = target.n_sites() as f64;
    let mut m = vec![vec![0.0; n]; n];
    for x in &states {
        let xi = x.index();
        for site in 0..target.n_sites() {
            for (tau, p) in heat_bath_probs(target, x, site, t).into_iter().enumerate() {
                let y = x.swapped(site, tau).index();
                m[y][xi] += p / d;
            }
        }
    }
    Ok(m)
}
