use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use super::{DenseCtmcSystem, RateFn};
use crate::targets::AnnealedTarget;
use crate::{Error, Result};

/// Single-site neighbor lists of every state of an enumerable target.
pub fn swap_neighbors(target: &AnnealedTarget) -> Result<Vec<Vec<usize>>> {
    let states = target.enumerate_states()?;
    let n_tok = target.n_tokens();
    Ok(states
        .iter()
        .map(|x| {
            let idx = x.index();
            let mut out = Vec::with_capacity(target.n_sites() * (n_tok - 1));
            let mut stride = 1;
            for i in 0..target.n_sites() {
                let xi = x.token(i);
                for tau in 0..n_tok {
                    if tau != xi {
                        out.push(idx + tau * stride - xi * stride);
                    }
                }
                stride *= n_tok;
            }
            out
        })
        .collect())
}

/// Potential `phi` of the gradient flow `J(x -> y) = phi(x) - phi(y)` on the
/// neighbor graph with `div J = -d rho / dt`, i.e. the graph Laplacian solve
/// `L phi = d rho / dt` with `phi(0) = 0`. Requires a connected graph and
/// `sum d rho = 0`.
pub fn gradient_flux_potential(neighbors: &[Vec<usize>], drho: &[f64]) -> Result<Vec<f64>> {
    let n = neighbors.len();
    if drho.len() != n {
        return Err(Error::Shape("drho does not match the graph".into()));
    }
    if n == 1 {
        return Ok(vec![0.0]);
    }
    // Reduced Laplacian on states 1..n.
    let m = n - 1;
    let mut lap = DMatrix::<f64>::zeros(m, m);
    for (x, nb) in neighbors.iter().enumerate().skip(1) {
        lap[(x - 1, x - 1)] = nb.len() as f64;
        for &y in nb {
            if y != 0 {
                lap[(x - 1, y - 1)] -= 1.0;
            }
        }
    }
    // Outflow sum_y (phi(x) - phi(y)) = -drho(x).
    let rhs = DVector::from_iterator(m, drho[1..].iter().map(|v| -v));
    let sol = lap
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Domain("neighbor graph is not connected".into()))?;
    let mut phi = vec![0.0];
    phi.extend(sol.iter());
    Ok(phi)
}

/// The exact KFE-solving one-way transport of an enumerable annealed target:
/// rates `[phi_t(x) - phi_t(y)]_+ / rho_t(x)` on single-site neighbors, with
/// `phi_t` from [`gradient_flux_potential`] and `d rho_t = rho_t (E[dU] - dU)`.
pub fn exact_neighbor_transport(target: &AnnealedTarget) -> Result<DenseCtmcSystem> {
    let states = target.enumerate_states()?;
    let neighbors = Arc::new(swap_neighbors(target)?);
    let target = target.clone();
    let n = states.len();
    let states = Arc::new(states);
    let init = target.exact_pmf(0.0)?;
    let cache: Arc<Mutex<Option<(u64, Arc<(Vec<f64>, Vec<f64>)>)>>> = Arc::new(Mutex::new(None));
    let solve = {
        let neighbors = neighbors.clone();
        move |t: f64| -> Arc<(Vec<f64>, Vec<f64>)> {
            let mut guard = cache.lock().unwrap();
            if let Some((bits, v)) = guard.as_ref() {
                if *bits == t.to_bits() {
                    return v.clone();
                }
            }
            let rho = target.exact_pmf(t).expect("enumerable");
            let du: Vec<f64> = states.iter().map(|x| target.dt_potential(x, t)).collect();
            let mean: f64 = rho.iter().zip(&du).map(|(p, d)| p * d).sum();
            let drho: Vec<f64> = rho.iter().zip(&du).map(|(p, d)| p * (mean - d)).collect();
            let phi = gradient_flux_potential(&neighbors, &drho).expect("lattice graph is connected");
            let v = Arc::new((rho, phi));
            *guard = Some((t.to_bits(), v.clone()));
            v
        }
    };
    let f: RateFn = Arc::new(move |t, y, x| {
        if !neighbors[x].contains(&y) {
            return 0.0;
        }
        let v = solve(t);
        let (rho, phi) = (&v.0, &v.1);
        let j = phi[x] - phi[y];
        if j > 0.0 {
            j / rho[x]
        } else {
            0.0
        }
    });
    DenseCtmcSystem::new(n, f, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{solve_kfe, uniform_grid};

    #[test]
    fn exact_transport_follows_the_annealing_path() {
        let target = AnnealedTarget::ising(2, 1.0, 0.3, 0.6).unwrap();
        let sys = exact_neighbor_transport(&target).unwrap();
        let grid = uniform_grid(0.25);
        let path = solve_kfe(&sys, &grid).unwrap();
        for (t, p) in grid.iter().zip(path.pmfs()) {
            let exact = target.exact_pmf(*t).unwrap();
            for (a, b) in p.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-6, "t={t}");
            }
        }
    }

    #[test]
    fn laplacian_flux_balances_divergence() {
        let neighbors = vec![vec![1, 2], vec![0, 2], vec![0, 1, 3], vec![2]];
        let drho = [0.3, -0.1, 0.2, -0.4];
        let phi = gradient_flux_potential(&neighbors, &drho).unwrap();
        for (x, nb) in neighbors.iter().enumerate() {
            let out: f64 = nb.iter().map(|&y| phi[x] - phi[y]).sum();
            assert!((out + drho[x]).abs() < 1e-12);
        }
    }
}
