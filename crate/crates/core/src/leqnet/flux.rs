use num_traits::Float;

/// Fluxes `G(tau, i | x)` for every site and token, laid out `i * n_tokens + tau`.
/// The `tau = x_i` entries are zero by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxMatrix<T = f64> {
    pub n_sites: usize,
    pub n_tokens: usize,
    pub data: Vec<T>,
}

impl<T: Float> FluxMatrix<T> {
    pub fn zeros(n_sites: usize, n_tokens: usize) -> Self {
        Self {
            n_sites,
            n_tokens,
            data: vec![T::zero(); n_sites * n_tokens],
        }
    }

    #[inline]
    pub fn get(&self, site: usize, token: usize) -> T {
        self.data[site * self.n_tokens + token]
    }

    pub fn to_f64(&self) -> FluxMatrix<f64> {
        FluxMatrix {
            n_sites: self.n_sites,
            n_tokens: self.n_tokens,
            data: self.data.iter().map(|v| v.to_f64().unwrap()).collect(),
        }
    }
}

/// `Q = [G]_+` off the diagonal, and the exit rate `-Q(x, x) = sum [G]_+`.
pub fn rates_from_flux(g: &FluxMatrix) -> (Vec<f64>, f64) {
    let rates: Vec<f64> = g.data.iter().map(|v| v.max(0.0)).collect();
    let exit = rates.iter().sum();
    (rates, exit)
}

/// Exponent cap for `[-G]_+ rho(y) / rho(x)` evaluated in log space.
pub const LOG_RATIO_CLAMP: f64 = 700.0;

/// The pieces of `K_t(x) = -d_t U_t(x) + exit - inflow`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KTerms {
    pub k: f64,
    pub exit: f64,
    pub inflow: f64,
    /// Inflow terms whose exponent hit [`LOG_RATIO_CLAMP`].
    pub clamped: usize,
}

/// `inflow = sum [-G(tau, i | x)]_+ exp(log rho(y) - log rho(x))`; the rate
/// `Q(x, y) = [G(x_i, i | y)]_+ = [-G(tau, i | x)]_+` by local equivariance.
pub fn k_operator(g: &[f64], log_ratios: &[f64], dt_potential: f64) -> KTerms {
    let mut exit = 0.0;
    let mut inflow = 0.0;
    let mut clamped = 0;
    for (&v, &lr) in g.iter().zip(log_ratios) {
        if v > 0.0 {
            exit += v;
        } else if v < 0.0 {
            let mut e = (-v).ln() + lr;
            if e > LOG_RATIO_CLAMP {
                e = LOG_RATIO_CLAMP;
                clamped += 1;
            }
            inflow += e.exp();
        }
    }
    KTerms {
        k: -dt_potential + exit - inflow,
        exit,
        inflow,
        clamped,
    }
}

/// `dK / dG`: `1` where `G > 0`, `rho(y) / rho(x)` where `G < 0` (zero on clamped terms).
/// At the kink `G = 0` we take the midpoint of the one-sided slopes; a zero
/// subgradient there would freeze a net initialised to zero flux.
pub fn k_operator_grad(g: &[f64], log_ratios: &[f64], out: &mut [f64]) {
    for ((o, &v), &lr) in out.iter_mut().zip(g).zip(log_ratios) {
        *o = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            if (-v).ln() + lr > LOG_RATIO_CLAMP {
                0.0
            } else {
                lr.exp()
            }
        } else {
            0.5 * (1.0 + lr.min(LOG_RATIO_CLAMP).exp())
        };
    }
}
