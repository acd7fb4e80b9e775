use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hamiltonian::Model;
use super::lattice::{Geometry, LatticeState};
use super::schedule::BetaSchedule;
use crate::ctmc::DENSE_STATE_CAP;
use crate::{Error, Result};

/// A time-tabulated potential `U_t(x)` on a tiny state space, linear in `t`
/// between knots. `dt_potential` is the slope of the interpolant, so the
/// left-Riemann sum of `dt_potential` over a knot grid telescopes exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialPath {
    times: Vec<f64>,
    n_states: usize,
    /// `times.len() x n_states`, row-major.
    potentials: Vec<f64>,
}

impl PotentialPath {
    pub fn new(times: Vec<f64>, potentials: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 || times.len() != potentials.len() {
            return Err(Error::Shape("potential path needs >= 2 matching knots".into()));
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 {
            return Err(Error::Domain("potential path must span [0, 1]".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("potential path times must increase".into()));
        }
        let n_states = potentials[0].len();
        if potentials.iter().any(|p| p.len() != n_states) {
            return Err(Error::Shape("ragged potential table".into()));
        }
        if potentials.iter().flatten().any(|u| !u.is_finite()) {
            return Err(Error::Domain("potential path has non-finite entries".into()));
        }
        Ok(Self {
            times,
            n_states,
            potentials: potentials.into_iter().flatten().collect(),
        })
    }

    /// `U_t = -log rho_t` from strictly positive pmfs.
    pub fn from_pmfs(times: Vec<f64>, pmfs: &[Vec<f64>]) -> Result<Self> {
        if pmfs.iter().flatten().any(|&p| !(p > 0.0)) {
            return Err(Error::Domain("pmf path must be strictly positive".into()));
        }
        let pots = pmfs
            .iter()
            .map(|p| p.iter().map(|v| -v.ln()).collect())
            .collect();
        Self::new(times, pots)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.times.len();
        self.times[1..n - 1].partition_point(|&k| k <= t).min(n - 2)
    }

    pub fn value(&self, state: usize, t: f64) -> f64 {
        let k = self.segment(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let u0 = self.potentials[k * self.n_states + state];
        let u1 = self.potentials[(k + 1) * self.n_states + state];
        u0 + (u1 - u0) * (t - t0) / (t1 - t0)
    }

    pub fn slope(&self, state: usize, t: f64) -> f64 {
        let k = self.segment(t);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let u0 = self.potentials[k * self.n_states + state];
        let u1 = self.potentials[(k + 1) * self.n_states + state];
        (u1 - u0) / (t1 - t0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetKind {
    /// `U_t = beta_t H(x)`.
    Scheduled { model: Model, schedule: BetaSchedule },
    /// Arbitrary tabulated `U_t`.
    Path(PotentialPath),
}

/// `rho_t ∝ exp(-U_t)` on a periodic token lattice.
#[derive(Clone, Debug)]
pub struct AnnealedTarget {
    geometry: Geometry,
    n_tokens: usize,
    kind: TargetKind,
    /// Cumulative `rho_0` for exact initial draws when `rho_0` is not uniform.
    initial_cdf: Option<Vec<f64>>,
}

impl AnnealedTarget {
    pub fn scheduled(rows: usize, cols: usize, n_tokens: usize, model: Model, schedule: BetaSchedule) -> Result<Self> {
        let geometry = Geometry::new(rows, cols)?;
        if let Some(n) = model.n_tokens() {
            if n != n_tokens {
                return Err(Error::Geometry(format!("model needs {n} tokens, lattice has {n_tokens}")));
            }
        }
        match &model {
            Model::Potts { q, .. } if *q < 2 => {
                return Err(Error::Geometry("Potts needs q >= 2".into()));
            }
            Model::Tabular { energies } => {
                let size = geometry.state_space_size(n_tokens);
                if size != energies.len() as u128 {
                    return Err(Error::Shape(format!(
                        "{} tabular energies for a state space of {size}",
                        energies.len()
                    )));
                }
            }
            _ => {}
        }
        Self::build(geometry, n_tokens, TargetKind::Scheduled { model, schedule })
    }

    /// Ising with `beta_t = t * beta`.
    pub fn ising(l: usize, coupling: f64, field: f64, beta: f64) -> Result<Self> {
        Self::scheduled(l, l, 2, Model::Ising { coupling, field }, BetaSchedule::linear(beta))
    }

    pub fn path(rows: usize, cols: usize, n_tokens: usize, path: PotentialPath) -> Result<Self> {
        let geometry = Geometry::new(rows, cols)?;
        if geometry.state_space_size(n_tokens) != path.n_states() as u128 {
            return Err(Error::Shape("potential path does not match the state space".into()));
        }
        Self::build(geometry, n_tokens, TargetKind::Path(path))
    }

    fn build(geometry: Geometry, n_tokens: usize, kind: TargetKind) -> Result<Self> {
        let mut target = Self {
            geometry,
            n_tokens,
            kind,
            initial_cdf: None,
        };
        if !target.initial_is_uniform() {
            let pmf = target.exact_pmf(0.0).map_err(|e| {
                e.context("rho_0 is not uniform, so it must be enumerable for exact initial draws")
            })?;
            let mut acc = 0.0;
            target.initial_cdf = Some(
                pmf.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect(),
            );
        }
        Ok(target)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.geometry.rows()
    }

    pub fn cols(&self) -> usize {
        self.geometry.cols()
    }

    pub fn n_sites(&self) -> usize {
        self.geometry.n_sites()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    pub fn state_space_size(&self) -> u128 {
        self.geometry.state_space_size(self.n_tokens)
    }

    pub fn beta(&self, t: f64) -> Option<f64> {
        match &self.kind {
            TargetKind::Scheduled { schedule, .. } => Some(schedule.beta(t)),
            TargetKind::Path(_) => None,
        }
    }

    fn initial_is_uniform(&self) -> bool {
        match &self.kind {
            TargetKind::Scheduled { schedule, .. } => schedule.beta(0.0) == 0.0,
            TargetKind::Path(p) => (1..p.n_states()).all(|s| p.value(s, 0.0) == p.value(0, 0.0)),
        }
    }

    pub fn check_state(&self, x: &LatticeState) -> Result<()> {
        self.geometry.check_state(x)?;
        if x.n_tokens() != self.n_tokens {
            return Err(Error::Shape(format!(
                "state has {} tokens, target has {}",
                x.n_tokens(),
                self.n_tokens
            )));
        }
        Ok(())
    }

    /// The annealed energy `H(x)` (scheduled targets) or `U_1(x)` (paths).
    pub fn energy(&self, x: &LatticeState) -> f64 {
        match &self.kind {
            TargetKind::Scheduled { model, .. } => model.energy(&self.geometry, x),
            TargetKind::Path(p) => p.value(x.index(), 1.0),
        }
    }

    pub fn potential(&self, x: &LatticeState, t: f64) -> f64 {
        match &self.kind {
            TargetKind::Scheduled { model, schedule } => schedule.beta(t) * model.energy(&self.geometry, x),
            TargetKind::Path(p) => p.value(x.index(), t),
        }
    }

    /// `∂_t U_t(x)`; for a scheduled target `beta'_t H(x)`.
    pub fn dt_potential(&self, x: &LatticeState, t: f64) -> f64 {
        match &self.kind {
            TargetKind::Scheduled { model, schedule } => {
                let db = schedule.dbeta(t);
                if db == 0.0 {
                    0.0
                } else {
                    db * model.energy(&self.geometry, x)
                }
            }
            TargetKind::Path(p) => p.slope(x.index(), t),
        }
    }

    /// `log rho_t(Swap(x, site, token)) / rho_t(x) = U_t(x) - U_t(y)`.
    #[inline]
    pub fn neighbor_log_ratio(&self, x: &LatticeState, site: usize, token: usize, t: f64) -> f64 {
        if token == x.token(site) {
            return 0.0;
        }
        match &self.kind {
            TargetKind::Scheduled { model, schedule } => {
                -schedule.beta(t) * model.energy_delta(&self.geometry, x, site, token)
            }
            TargetKind::Path(p) => {
                let stride = self.n_tokens.pow(site as u32);
                let idx = x.index();
                let idy = idx + token * stride - x.token(site) * stride;
                p.value(idx, t) - p.value(idy, t)
            }
        }
    }

    /// Log-ratios to every single-site neighbor, laid out `site * n_tokens + token`,
    /// with exact zeros on the `token == x_site` entries.
    pub fn neighbor_log_ratios_into(&self, x: &LatticeState, t: f64, out: &mut [f64]) {
        let n = self.n_tokens;
        debug_assert_eq!(out.len(), self.n_sites() * n);
        match &self.kind {
            TargetKind::Scheduled { model, schedule } => {
                let beta = schedule.beta(t);
                for i in 0..self.n_sites() {
                    for tau in 0..n {
                        out[i * n + tau] = if tau == x.token(i) || beta == 0.0 {
                            0.0
                        } else {
                            -beta * model.energy_delta(&self.geometry, x, i, tau)
                        };
                    }
                }
            }
            TargetKind::Path(p) => {
                let idx = x.index();
                let ux = p.value(idx, t);
                let mut stride = 1usize;
                for i in 0..self.n_sites() {
                    let xi = x.token(i);
                    for tau in 0..n {
                        out[i * n + tau] = if tau == xi {
                            0.0
                        } else {
                            ux - p.value(idx + tau * stride - xi * stride, t)
                        };
                    }
                    stride *= n;
                }
            }
        }
    }

    pub fn neighbor_log_ratios(&self, x: &LatticeState, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_sites() * self.n_tokens];
        self.neighbor_log_ratios_into(x, t, &mut out);
        out
    }

    /// Exact draw from `rho_0`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> LatticeState {
        let mut x = LatticeState::filled(self.rows(), self.cols(), self.n_tokens, 0).expect("validated shape");
        match &self.initial_cdf {
            None => {
                for i in 0..self.n_sites() {
                    x.set(i, rng.gen_range(0..self.n_tokens));
                }
            }
            Some(cdf) => {
                let u: f64 = rng.gen::<f64>() * cdf[cdf.len() - 1];
                let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                x.set_from_index(idx);
            }
        }
        x
    }

    fn enumerable(&self, cap: usize) -> Result<usize> {
        let size = self.state_space_size();
        if size > cap as u128 {
            return Err(Error::StateSpaceTooLarge { size, cap });
        }
        Ok(size as usize)
    }

    /// All states in index order (dense oracle sizes only).
    pub fn enumerate_states(&self) -> Result<Vec<LatticeState>> {
        let size = self.enumerable(DENSE_STATE_CAP)?;
        (0..size)
            .map(|i| LatticeState::from_index(self.rows(), self.cols(), self.n_tokens, i))
            .collect()
    }

    /// `-U_t` of every state in index order, up to [`ENUMERATION_CAP`] states.
    pub fn neg_potentials(&self, t: f64) -> Result<Vec<f64>> {
        let size = self.enumerable(ENUMERATION_CAP)?;
        let mut x = LatticeState::filled(self.rows(), self.cols(), self.n_tokens, 0)?;
        Ok((0..size)
            .map(|i| {
                x.set_from_index(i);
                -self.potential(&x, t)
            })
            .collect())
    }

    /// `log Z_t` by enumeration.
    pub fn log_partition(&self, t: f64) -> Result<f64> {
        Ok(log_sum_exp(&self.neg_potentials(t)?))
    }

    /// `rho_t` by enumeration, indexed by state index.
    pub fn exact_pmf(&self, t: f64) -> Result<Vec<f64>> {
        let neg = self.neg_potentials(t)?;
        let lz = log_sum_exp(&neg);
        Ok(neg.iter().map(|v| (v - lz).exp()).collect())
    }

    /// `log Z_0`: exact for a uniform `rho_0`, otherwise by enumeration when possible.
    pub fn log_z0(&self) -> Option<f64> {
        if let TargetKind::Scheduled { schedule, .. } = &self.kind {
            if schedule.beta(0.0) == 0.0 {
                return Some(self.n_sites() as f64 * (self.n_tokens as f64).ln());
            }
        }
        self.log_partition(0.0).ok()
    }
}

/// Largest state space for partition functions by brute-force summation.
pub const ENUMERATION_CAP: usize = 1 << 22;

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
