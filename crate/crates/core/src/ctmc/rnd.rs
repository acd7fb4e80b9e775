use rayon::prelude::*;

use super::system::euler_draw;
use super::DenseCtmcSystem;
use crate::rng::{self, domain};
use crate::{Error, Result};
use rand::Rng;

/// A grid-simulated càdlàg path: the state on `[jump_times[k], jump_times[k+1])`
/// is `states[k + 1]`, and `states[0]` holds on `[t0, jump_times[0])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    t0: f64,
    t1: f64,
    step_size: f64,
    jump_times: Vec<f64>,
    states: Vec<usize>,
}

impl Trajectory {
    pub fn new(t0: f64, t1: f64, step_size: f64, jump_times: Vec<f64>, states: Vec<usize>) -> Result<Self> {
        if states.len() != jump_times.len() + 1 {
            return Err(Error::Shape("need one more state than jump times".into()));
        }
        if !(t1 >= t0 && step_size > 0.0) {
            return Err(Error::Domain("invalid trajectory interval".into()));
        }
        if jump_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("jump times must strictly increase".into()));
        }
        if jump_times.iter().any(|&s| !(s > t0 && s <= t1)) {
            return Err(Error::Domain("jump times must lie in (t0, t1]".into()));
        }
        if states.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("consecutive states must differ".into()));
        }
        Ok(Self {
            t0,
            t1,
            step_size,
            jump_times,
            states,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    pub fn final_state(&self) -> usize {
        *self.states.last().unwrap()
    }

    fn n_grid_steps(&self) -> usize {
        ((self.t1 - self.t0) / self.step_size).round() as usize
    }

    /// Grid step index `n` of the jump recorded at `(n + 1) h`.
    fn jump_step(&self, k: usize) -> usize {
        (((self.jump_times[k] - self.t0) / self.step_size).round() as usize) - 1
    }

    /// The path restricted to `[t0, t]`, `t` on the grid.
    pub fn truncated(&self, t: f64) -> Self {
        let keep = self.jump_times.partition_point(|&s| s <= t + 1e-12);
        Self {
            t0: self.t0,
            t1: t,
            step_size: self.step_size,
            jump_times: self.jump_times[..keep].to_vec(),
            states: self.states[..=keep].to_vec(),
        }
    }
}

/// `log dP'/dP` of one path; `zero_rate_jump` names the jump whose rate in the
/// numerator measure is zero, in which case `log_rnd` is infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathWeight {
    pub log_rnd: f64,
    pub zero_rate_jump: Option<usize>,
}

impl PathWeight {
    pub fn is_finite(&self) -> bool {
        self.zero_rate_jump.is_none() && self.log_rnd.is_finite()
    }

    /// The finite log-weight, or `InfiniteWeight`.
    pub fn finite(self) -> Result<f64> {
        match self.zero_rate_jump {
            Some(k) => Err(Error::InfiniteWeight(format!("jump {k} has zero rate under the other measure"))),
            None if !self.log_rnd.is_finite() => Err(Error::InfiniteWeight(format!("log weight {}", self.log_rnd))),
            None => Ok(self.log_rnd),
        }
    }
}

fn draw_index<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in pmf.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Euler-simulates `n_walkers` paths on `[0, 1]` with `h = 1 / n_steps`.
/// Walker `m` uses its own stream derived from `(seed, m)`.
pub fn simulate(sys: &DenseCtmcSystem, n_steps: usize, n_walkers: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if n_steps == 0 {
        return Err(Error::Domain("n_steps must be >= 1".into()));
    }
    let h = 1.0 / n_steps as f64;
    let table = sys.tabulate(0.0, h, n_steps)?;
    let n = sys.n_states();
    (0..n_walkers)
        .into_par_iter()
        .map(|m| {
            let mut r = rng::stream(seed, domain::DENSE_SIM, m as u64);
            let mut x = draw_index(sys.initial_pmf(), &mut r);
            let mut states = vec![x];
            let mut jump_times = Vec::new();
            for (k, q) in table.iter().enumerate() {
                let y = euler_draw(q, n, x, k as f64 * h, h, &mut r)?;
                if y != x {
                    jump_times.push((k + 1) as f64 * h);
                    states.push(y);
                    x = y;
                }
            }
            Ok(Trajectory {
                t0: 0.0,
                t1: 1.0,
                step_size: h,
                jump_times,
                states,
            })
        })
        .collect()
}

/// Both generators tabulated on a grid, so that many paths can be weighed
/// without re-evaluating rates.
pub struct RndEvaluator {
    n: usize,
    t0: f64,
    h: f64,
    q: Vec<Vec<f64>>,
    qp: Vec<Vec<f64>>,
}

impl RndEvaluator {
    /// `q` is the measure the paths are sampled from, `qp` the other one.
    pub fn new(q: &DenseCtmcSystem, qp: &DenseCtmcSystem, t0: f64, h: f64, n_steps: usize) -> Result<Self> {
        if q.n_states() != qp.n_states() {
            return Err(Error::Shape("systems have different state spaces".into()));
        }
        Ok(Self {
            n: q.n_states(),
            t0,
            h,
            q: q.tabulate(t0, h, n_steps)?,
            qp: qp.tabulate(t0, h, n_steps)?,
        })
    }

    fn check(&self, traj: &Trajectory) -> Result<usize> {
        let steps = traj.n_grid_steps();
        if (traj.step_size - self.h).abs() > 1e-15 || (traj.t0 - self.t0).abs() > 1e-15 || steps > self.q.len() {
            return Err(Error::Shape("trajectory grid does not match the evaluator grid".into()));
        }
        if traj.states.iter().any(|&s| s >= self.n) {
            return Err(Error::Shape("trajectory state outside the state space".into()));
        }
        Ok(steps)
    }

    /// Left-Riemann `sum_n h [plus_n(X, X) - minus_n(X, X)]`.
    fn diagonal_integral(&self, traj: &Trajectory, steps: usize, plus: &[Vec<f64>], minus: &[Vec<f64>]) -> f64 {
        let n = self.n;
        let mut total = 0.0;
        let mut k = 0;
        let mut x = traj.states[0];
        for step in 0..steps {
            total += self.h * (plus[step][x * n + x] - minus[step][x * n + x]);
            if k < traj.jump_times.len() && traj.jump_step(k) == step {
                k += 1;
                x = traj.states[k];
            }
        }
        total
    }

    /// `log d P_rev^{nu, Q'} / d P_fwd^{mu, Q}` over the trajectory's interval.
    pub fn reverse(&self, traj: &Trajectory, mu: &[f64], nu: &[f64]) -> Result<PathWeight> {
        let steps = self.check(traj)?;
        let n = self.n;
        let x0 = traj.initial_state();
        if !(mu[x0] > 0.0) {
            return Err(Error::Domain(format!("mu(X_0) = {} at state {x0}", mu[x0])));
        }
        let mut log_rnd = nu[traj.final_state()].ln() - mu[x0].ln();
        log_rnd += self.diagonal_integral(traj, steps, &self.qp, &self.q);
        for k in 0..traj.n_jumps() {
            let step = traj.jump_step(k);
            let (a, b) = (traj.states[k], traj.states[k + 1]);
            let back = self.qp[step][a * n + b];
            let fwd = self.q[step][b * n + a];
            if !(fwd > 0.0) {
                return Err(Error::Domain(format!("jump {k} has zero rate under the sampling measure")));
            }
            if back == 0.0 {
                return Ok(PathWeight {
                    log_rnd: f64::NEG_INFINITY,
                    zero_rate_jump: Some(k),
                });
            }
            log_rnd += back.ln() - fwd.ln();
        }
        Ok(PathWeight {
            log_rnd,
            zero_rate_jump: None,
        })
    }

    /// `log d P_fwd^{mu, Q} / d P_fwd^{nu, Q'}`; infinite when `Q'` cannot make a jump.
    pub fn forward_forward(&self, traj: &Trajectory, mu: &[f64], nu: &[f64]) -> Result<PathWeight> {
        let steps = self.check(traj)?;
        let n = self.n;
        let x0 = traj.initial_state();
        if !(mu[x0] > 0.0) {
            return Err(Error::Domain(format!("mu(X_0) = {} at state {x0}", mu[x0])));
        }
        if nu[x0] == 0.0 {
            return Ok(PathWeight {
                log_rnd: f64::INFINITY,
                zero_rate_jump: None,
            });
        }
        let mut log_rnd = mu[x0].ln() - nu[x0].ln();
        log_rnd += self.diagonal_integral(traj, steps, &self.q, &self.qp);
        for k in 0..traj.n_jumps() {
            let step = traj.jump_step(k);
            let (a, b) = (traj.states[k], traj.states[k + 1]);
            let q = self.q[step][b * n + a];
            let qp = self.qp[step][b * n + a];
            if !(q > 0.0) {
                return Err(Error::Domain(format!("jump {k} has zero rate under the sampling measure")));
            }
            if qp == 0.0 {
                return Ok(PathWeight {
                    log_rnd: f64::INFINITY,
                    zero_rate_jump: Some(k),
                });
            }
            log_rnd += q.ln() - qp.ln();
        }
        Ok(PathWeight {
            log_rnd,
            zero_rate_jump: None,
        })
    }
}

/// Reverse-time RND for a single trajectory. Prefer [`RndEvaluator`] for many paths.
pub fn log_rnd_reverse(traj: &Trajectory, mu: &[f64], nu: &[f64], q_fwd: &DenseCtmcSystem, q_rev: &DenseCtmcSystem) -> Result<PathWeight> {
    RndEvaluator::new(q_fwd, q_rev, traj.t0, traj.step_size, traj.n_grid_steps())?.reverse(traj, mu, nu)
}

/// Forward-forward RND for a single trajectory sampled from `(mu, q)`.
pub fn log_rnd_forward_forward(traj: &Trajectory, mu: &[f64], nu: &[f64], q: &DenseCtmcSystem, qp: &DenseCtmcSystem) -> Result<PathWeight> {
    RndEvaluator::new(q, qp, traj.t0, traj.step_size, traj.n_grid_steps())?.forward_forward(traj, mu, nu)
}
