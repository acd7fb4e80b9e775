use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::Lea;
use super::conv::Lec;
use super::flux::FluxMatrix;
use super::layout::Layout;
use super::mlp::LeMlp;
use super::{time_features, TIME_FEATURES};
use crate::targets::{Geometry, LatticeState};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase", deny_unknown_fields)]
pub enum Architecture {
    /// One hidden layer of `hidden` units per site.
    #[serde(rename = "lemlp")]
    LeMlp { hidden: usize },
    Lea { heads: usize, head_dim: usize, embed_dim: usize },
    Lec { kernel_sizes: Vec<usize>, channels: usize, head_dim: usize },
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::LeMlp { .. } => "lemlp",
            Architecture::Lea { .. } => "lea",
            Architecture::Lec { .. } => "lec",
        }
    }
}

/// Everything that fixes the parameter layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub rows: usize,
    pub cols: usize,
    pub n_tokens: usize,
    #[serde(flatten)]
    pub arch: Architecture,
}

#[derive(Clone, Debug)]
enum Kernel {
    LeMlp(LeMlp),
    Lea(Lea),
    Lec(Lec),
}

/// A locally equivariant flux network `G(tau, j | x) = (w_tau - w_{x_j}) . H(j | x)`
/// where the head `H(j | x)` never reads `x_j` and `w` is the token projector.
/// Heads are not composable with each other; a net is exactly one head and
/// one projector.
#[derive(Clone, Debug)]
pub struct FluxNet {
    spec: NetSpec,
    layout: Layout,
    kernel: Kernel,
    omega: usize,
    head_dim: usize,
    params: Vec<f64>,
    params32: Vec<f32>,
}

impl FluxNet {
    /// All parameters zero, hence zero flux.
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        let geo = Geometry::new(spec.rows, spec.cols)?;
        if spec.n_tokens < 2 {
            return Err(Error::Geometry("need at least two tokens".into()));
        }
        let d = geo.n_sites();
        let n = spec.n_tokens;
        let mut layout = Layout::new();
        let kernel = match &spec.arch {
            Architecture::LeMlp { hidden } => {
                if *hidden == 0 {
                    return Err(Error::Config("lemlp hidden must be positive".into()));
                }
                Kernel::LeMlp(LeMlp::new(d, n, *hidden, &mut layout))
            }
            Architecture::Lea { heads, head_dim, embed_dim } => {
                if d < 2 {
                    return Err(Error::Geometry("attention needs at least two sites".into()));
                }
                if *heads == 0 || *head_dim == 0 || *embed_dim == 0 {
                    return Err(Error::Config("lea dimensions must be positive".into()));
                }
                Kernel::Lea(Lea::new(d, n, *heads, *head_dim, *embed_dim, &mut layout))
            }
            Architecture::Lec { kernel_sizes, channels, head_dim } => {
                if *channels == 0 || *head_dim == 0 {
                    return Err(Error::Config("lec channels and head_dim must be positive".into()));
                }
                Kernel::Lec(Lec::new(&geo, n, kernel_sizes, *channels, *head_dim, &mut layout)?)
            }
        };
        let head_dim = match &kernel {
            Kernel::LeMlp(k) => k.head_dim(),
            Kernel::Lea(k) => k.head_dim(),
            Kernel::Lec(k) => k.head_dim(),
        };
        let omega = layout.push("omega", &[n, head_dim]);
        let len = layout.len();
        Ok(Self {
            spec,
            layout,
            kernel,
            omega,
            head_dim,
            params: vec![0.0; len],
            params32: vec![0.0; len],
        })
    }

    /// Fan-in scaled interior weights and a zero projector: the initial flux
    /// is identically zero, so an untrained sampler is plain AIS.
    pub fn init<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut p = std::mem::take(&mut net.params);
        match &net.kernel {
            Kernel::LeMlp(k) => k.init(&mut p, rng),
            Kernel::Lea(k) => k.init(&mut p, rng),
            Kernel::Lec(k) => k.init(&mut p, rng),
        }
        net.set_params(p)?;
        Ok(net)
    }

    /// [`FluxNet::init`] plus a projector drawn from `U(-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R, scale: f64) -> Result<Self> {
        let mut net = Self::init(spec, rng)?;
        let mut p = net.params.clone();
        for v in &mut p[net.omega..] {
            *v = rng.gen_range(-scale..scale);
        }
        net.set_params(p)?;
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_sites(&self) -> usize {
        self.spec.rows * self.spec.cols
    }

    pub fn n_tokens(&self) -> usize {
        self.spec.n_tokens
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(Error::Shape(format!(
                "{} parameters for a layout of {}",
                params.len(),
                self.layout.len()
            )));
        }
        if let Some(block) = self.layout.first_non_finite(&params) {
            let index = params.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite { index }.context(format!("parameter block {block}")));
        }
        self.params32 = params.iter().map(|&v| v as f32).collect();
        self.params = params;
        Ok(())
    }

    /// Unchecked mutable access for optimizers; call [`FluxNet::sync`] afterwards.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Refreshes the single-precision copy after in-place edits.
    pub fn sync(&mut self) {
        self.params32 = self.params.iter().map(|&v| v as f32).collect();
    }

    pub fn check_state(&self, x: &LatticeState) -> Result<()> {
        if x.rows() != self.spec.rows || x.cols() != self.spec.cols || x.n_tokens() != self.spec.n_tokens {
            return Err(Error::Shape(format!(
                "state {}x{} with {} tokens for a net built for {}x{} with {}",
                x.rows(),
                x.cols(),
                x.n_tokens(),
                self.spec.rows,
                self.spec.cols,
                self.spec.n_tokens
            )));
        }
        Ok(())
    }

    fn head_generic<T: Float>(&self, p: &[T], t: f64, x: &[u8], out: &mut [T]) {
        let tf64 = time_features(t);
        let mut tf = [T::zero(); TIME_FEATURES];
        for (a, b) in tf.iter_mut().zip(tf64) {
            *a = T::from(b).unwrap();
        }
        match &self.kernel {
            Kernel::LeMlp(k) => k.head(p, &tf, x, out),
            Kernel::Lea(k) => k.head(p, &tf, x, out),
            Kernel::Lec(k) => k.head(p, &tf, x, out),
        }
    }

    /// The prediction head `H(j | x)`, `d x head_dim`.
    pub fn head(&self, t: f64, x: &LatticeState) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = vec![0.0; self.n_sites() * self.head_dim];
        self.head_generic(&self.params, t, x.tokens(), &mut out);
        Ok(out)
    }

    fn contract<T: Float>(&self, p: &[T], x: &[u8], h: &[T], out: &mut [T]) {
        let (n, hd) = (self.spec.n_tokens, self.head_dim);
        let om = &p[self.omega..self.omega + n * hd];
        for (j, &xj) in x.iter().enumerate() {
            let xj = xj as usize;
            let hj = &h[j * hd..(j + 1) * hd];
            for tau in 0..n {
                let mut acc = T::zero();
                if tau != xj {
                    for c in 0..hd {
                        acc = acc + (om[tau * hd + c] - om[xj * hd + c]) * hj[c];
                    }
                }
                out[j * n + tau] = acc;
            }
        }
    }

    /// All fluxes out of `x` in one pass.
    pub fn flux(&self, t: f64, x: &LatticeState) -> Result<FluxMatrix> {
        self.check_state(x)?;
        let mut g = FluxMatrix::zeros(self.n_sites(), self.spec.n_tokens);
        self.flux_into(t, x, &mut g);
        Ok(g)
    }

    /// Unchecked [`FluxNet::flux`] into a reused buffer.
    pub fn flux_into(&self, t: f64, x: &LatticeState, g: &mut FluxMatrix) {
        let mut h = vec![0.0; self.n_sites() * self.head_dim];
        self.head_generic(&self.params, t, x.tokens(), &mut h);
        self.contract(&self.params, x.tokens(), &h, &mut g.data);
    }

    /// Single-precision forward pass for sampling.
    pub fn flux_f32(&self, t: f64, x: &LatticeState, g: &mut FluxMatrix<f32>) {
        let mut h = vec![0.0f32; self.n_sites() * self.head_dim];
        self.head_generic(&self.params32, t, x.tokens(), &mut h);
        self.contract(&self.params32, x.tokens(), &h, &mut g.data);
    }

    /// Accumulates `(dG)^T dG/dtheta` into `grad`.
    pub fn flux_vjp(&self, t: f64, x: &LatticeState, dg: &[f64], grad: &mut [f64]) {
        let (n, hd, d) = (self.spec.n_tokens, self.head_dim, self.n_sites());
        let p = &self.params;
        let mut h = vec![0.0; d * hd];
        self.head_generic(p, t, x.tokens(), &mut h);
        let mut dh = vec![0.0; d * hd];
        for (j, &xj) in x.tokens().iter().enumerate() {
            let xj = xj as usize;
            let mut row_sum = 0.0;
            for tau in 0..n {
                let g = dg[j * n + tau];
                if tau == xj || g == 0.0 {
                    continue;
                }
                row_sum += g;
                for c in 0..hd {
                    dh[j * hd + c] += g * (p[self.omega + tau * hd + c] - p[self.omega + xj * hd + c]);
                    grad[self.omega + tau * hd + c] += g * h[j * hd + c];
                }
            }
            if row_sum != 0.0 {
                for c in 0..hd {
                    grad[self.omega + xj * hd + c] -= row_sum * h[j * hd + c];
                }
            }
        }
        let tf = time_features(t);
        match &self.kernel {
            Kernel::LeMlp(k) => k.head_backward(p, &tf, x.tokens(), &dh, grad),
            Kernel::Lea(k) => k.head_backward(p, &tf, x.tokens(), &dh, grad),
            Kernel::Lec(k) => k.head_backward(p, &tf, x.tokens(), &dh, grad),
        }
    }

    #[cfg(test)]
    pub(crate) fn lea_attention_rows(&self, t: f64, x: &LatticeState) -> Option<Vec<Vec<f64>>> {
        match &self.kernel {
            Kernel::Lea(k) => Some(k.attention_rows(&self.params, &time_features(t), x.tokens())),
            _ => None,
        }
    }
}
