use rayon::prelude::*;

use super::flux::{k_operator, k_operator_grad, FluxMatrix, KTerms};
use super::{FluxNet, FreeEnergyNet};
use crate::targets::{AnnealedTarget, LatticeState};
use crate::{Error, Result};

/// Batch members per deterministic reduction chunk.
const CHUNK: usize = 16;

/// `K_t(x)` of the net's rates against the target path.
pub fn k_value(net: &FluxNet, target: &AnnealedTarget, x: &LatticeState, t: f64) -> Result<KTerms> {
    let g = net.flux(t, x)?;
    let lr = target.neighbor_log_ratios(x, t);
    Ok(k_operator(&g.data, &lr, target.dt_potential(x, t)))
}

#[derive(Clone, Debug)]
pub struct LossGradient {
    pub loss: f64,
    pub grad_theta: Vec<f64>,
    pub grad_phi: Vec<f64>,
    /// Inflow terms clamped against overflow across the batch.
    pub clamped: usize,
}

fn check_batch(net: &FluxNet, target: &AnnealedTarget, batch: &[(LatticeState, f64)]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    if net.spec().rows != target.rows() || net.spec().cols != target.cols() || net.n_tokens() != target.n_tokens() {
        return Err(Error::Shape("net and target geometries differ".into()));
    }
    for (x, _) in batch {
        net.check_state(x)?;
    }
    Ok(())
}

/// `(1/B) sum (K_t(x) - g_phi(t))^2`.
pub fn pinn_loss(net: &FluxNet, gphi: &FreeEnergyNet, target: &AnnealedTarget, batch: &[(LatticeState, f64)]) -> Result<f64> {
    check_batch(net, target, batch)?;
    let parts: Vec<f64> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = FluxMatrix::zeros(net.n_sites(), net.n_tokens());
            let mut lr = vec![0.0; net.n_sites() * net.n_tokens()];
            let mut acc = 0.0;
            for (x, t) in chunk {
                net.flux_into(*t, x, &mut g);
                target.neighbor_log_ratios_into(x, *t, &mut lr);
                let k = k_operator(&g.data, &lr, target.dt_potential(x, *t)).k;
                acc += (k - gphi.eval(*t)).powi(2);
            }
            acc
        })
        .collect();
    Ok(parts.iter().sum::<f64>() / batch.len() as f64)
}

/// The PINN loss and its exact gradients in both parameter sets. Chunks are
/// reduced in batch order, so the result does not depend on thread count.
pub fn loss_gradient(net: &FluxNet, gphi: &FreeEnergyNet, target: &AnnealedTarget, batch: &[(LatticeState, f64)]) -> Result<LossGradient> {
    check_batch(net, target, batch)?;
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<LossGradient> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut out = LossGradient {
                loss: 0.0,
                grad_theta: vec![0.0; net.n_params()],
                grad_phi: vec![0.0; gphi.n_params()],
                clamped: 0,
            };
            let mut g = FluxMatrix::zeros(net.n_sites(), net.n_tokens());
            let mut lr = vec![0.0; net.n_sites() * net.n_tokens()];
            let mut dk = vec![0.0; lr.len()];
            for (x, t) in chunk {
                net.flux_into(*t, x, &mut g);
                target.neighbor_log_ratios_into(x, *t, &mut lr);
                let terms = k_operator(&g.data, &lr, target.dt_potential(x, *t));
                let resid = terms.k - gphi.eval(*t);
                out.loss += resid * resid;
                out.clamped += terms.clamped;
                let dl = 2.0 * resid * scale;
                k_operator_grad(&g.data, &lr, &mut dk);
                dk.iter_mut().for_each(|v| *v *= dl);
                net.flux_vjp(*t, x, &dk, &mut out.grad_theta);
                gphi.backward(*t, -dl, &mut out.grad_phi);
            }
            out
        })
        .collect();
    let mut total = LossGradient {
        loss: 0.0,
        grad_theta: vec![0.0; net.n_params()],
        grad_phi: vec![0.0; gphi.n_params()],
        clamped: 0,
    };
    for part in parts {
        total.loss += part.loss;
        total.clamped += part.clamped;
        total.grad_theta.iter_mut().zip(&part.grad_theta).for_each(|(a, b)| *a += b);
        total.grad_phi.iter_mut().zip(&part.grad_phi).for_each(|(a, b)| *a += b);
    }
    total.loss *= scale;
    if let Some(block) = net.layout().first_non_finite(&total.grad_theta) {
        return Err(Error::NonFiniteGradient { block: block.to_string() });
    }
    if total.grad_phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient {
            block: "free_energy".into(),
        });
    }
    Ok(total)
}
