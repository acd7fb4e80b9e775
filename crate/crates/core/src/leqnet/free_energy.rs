use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `g_phi(t)`, a direct model of the free-energy rate: an MLP
/// `1 -> hidden -> hidden -> 1` with tanh activations. At the optimum of the
/// PINN loss `K_t = -d_t F_t` everywhere, so `g_phi` learns `d_t log Z_t` and
/// `F_t - F_0 = -int_0^t g_phi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyNet {
    hidden: usize,
    params: Vec<f64>,
}

/// Simpson intervals per unit time for [`FreeEnergyNet::integral`].
const SIMPSON_INTERVALS: usize = 64;

impl FreeEnergyNet {
    pub fn n_params_for(hidden: usize) -> usize {
        hidden * (hidden + 4) + 1
    }

    pub fn zeros(hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("free-energy hidden width must be positive".into()));
        }
        Ok(Self {
            hidden,
            params: vec![0.0; Self::n_params_for(hidden)],
        })
    }

    /// Fan-in uniform hidden layers and a zero output layer, so `g = 0` initially.
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(hidden)?;
        let h = hidden;
        for v in &mut net.params[..2 * h] {
            *v = rng.gen_range(-1.0..1.0);
        }
        let s = 1.0 / (h as f64).sqrt();
        for v in &mut net.params[2 * h..2 * h + h * h + h] {
            *v = rng.gen_range(-s..s);
        }
        Ok(net)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!("{} free-energy parameters, expected {}", params.len(), self.params.len())));
        }
        if let Some(index) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        self.params = params;
        Ok(())
    }

    // Layout: w1[h], b1[h], w2[h, h], b2[h], w3[h], b3.
    fn hidden_layers(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let h = self.hidden;
        let p = &self.params;
        let a1: Vec<f64> = (0..h).map(|i| (p[i] * t + p[h + i]).tanh()).collect();
        let w2 = 2 * h;
        let b2 = w2 + h * h;
        let a2: Vec<f64> = (0..h)
            .map(|i| {
                let row = &p[w2 + i * h..w2 + (i + 1) * h];
                (row.iter().zip(&a1).map(|(w, a)| w * a).sum::<f64>() + p[b2 + i]).tanh()
            })
            .collect();
        (a1, a2)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let h = self.hidden;
        let (_, a2) = self.hidden_layers(t);
        let w3 = 3 * h + h * h;
        let p = &self.params;
        p[w3..w3 + h].iter().zip(&a2).map(|(w, a)| w * a).sum::<f64>() + p[w3 + h]
    }

    /// Accumulates `dg * d g(t) / d phi` into `grad`.
    pub fn backward(&self, t: f64, dg: f64, grad: &mut [f64]) {
        let h = self.hidden;
        let p = &self.params;
        let (a1, a2) = self.hidden_layers(t);
        let (w2, b2, w3) = (2 * h, 2 * h + h * h, 3 * h + h * h);
        grad[w3 + h] += dg;
        let mut d1 = vec![0.0; h];
        for i in 0..h {
            grad[w3 + i] += dg * a2[i];
            let du = dg * p[w3 + i] * (1.0 - a2[i] * a2[i]);
            grad[b2 + i] += du;
            for k in 0..h {
                grad[w2 + i * h + k] += du * a1[k];
                d1[k] += du * p[w2 + i * h + k];
            }
        }
        for k in 0..h {
            let du = d1[k] * (1.0 - a1[k] * a1[k]);
            grad[k] += du * t;
            grad[h + k] += du;
        }
    }

    /// `int_0^t g(s) ds` by composite Simpson.
    pub fn integral(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let m = 2 * ((SIMPSON_INTERVALS as f64 * t.abs() / 2.0).ceil() as usize).max(1);
        let step = t / m as f64;
        let mut acc = self.eval(0.0) + self.eval(t);
        for k in 1..m {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * self.eval(k as f64 * step);
        }
        acc * step / 3.0
    }
}
