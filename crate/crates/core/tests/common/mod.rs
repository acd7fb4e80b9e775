#![allow(dead_code)]

use leaps_core::sampler::WalkerEnsemble;
use leaps_core::targets::{AnnealedTarget, LatticeState};

pub fn magnetization(x: &LatticeState) -> f64 {
    (0..x.n_sites()).map(|i| x.spin(i)).sum::<f64>() / x.n_sites() as f64
}

/// Exact `E_{rho_t}[f]` by enumeration.
pub fn exact_mean(target: &AnnealedTarget, t: f64, f: impl Fn(&LatticeState) -> f64) -> f64 {
    let states = target.enumerate_states().unwrap();
    let pmf = target.exact_pmf(t).unwrap();
    states.iter().zip(&pmf).map(|(x, p)| p * f(x)).sum()
}

/// Self-normalized estimate and its delta-method standard error.
pub fn weighted_estimate(ens: &WalkerEnsemble, f: impl Fn(&LatticeState) -> f64) -> (f64, f64) {
    let w = ens.normalized_weights().unwrap();
    let vals: Vec<f64> = ens.states.iter().map(f).collect();
    let mean: f64 = w.iter().zip(&vals).map(|(w, v)| w * v).sum();
    let var: f64 = w.iter().zip(&vals).map(|(w, v)| w * w * (v - mean).powi(2)).sum();
    (mean, var.sqrt())
}

/// Sample mean of `exp(a)` and its standard error.
pub fn mean_exp(a: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let e: Vec<f64> = a.iter().map(|v| v.exp()).collect();
    let m = e.iter().sum::<f64>() / n;
    let v = e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn mean_var(a: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let m = a.iter().sum::<f64>() / n;
    (m, a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}
