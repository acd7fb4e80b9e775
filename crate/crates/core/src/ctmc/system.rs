use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DENSE_STATE_CAP;
use crate::{Error, Result};

/// Off-diagonal rate `Q_t(y, x)` for the jump `x -> y`.
pub type RateFn = Arc<dyn Fn(f64, usize, usize) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Rates {
    Fn(RateFn),
    /// Off-diagonal matrices at knot times, linear in between.
    Knots { times: Vec<f64>, mats: Vec<Vec<f64>> },
}

/// An explicit CTMC on `{0, .., n-1}`. Only off-diagonal rates are stored;
/// the diagonal is always derived from the column sums.
#[derive(Clone)]
pub struct DenseCtmcSystem {
    n_states: usize,
    rates: Rates,
    initial_pmf: Vec<f64>,
}

impl std::fmt::Debug for DenseCtmcSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseCtmcSystem")
            .field("n_states", &self.n_states)
            .field("initial_pmf", &self.initial_pmf)
            .finish_non_exhaustive()
    }
}

fn check_pmf(pmf: &[f64], n: usize) -> Result<()> {
    if pmf.len() != n {
        return Err(Error::Shape(format!("pmf of length {} for {n} states", pmf.len())));
    }
    if pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Domain("pmf entries must be finite and nonnegative".into()));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("pmf sums to {total}, not 1")));
    }
    Ok(())
}

impl DenseCtmcSystem {
    pub fn new(n_states: usize, rate_fn: RateFn, initial_pmf: Vec<f64>) -> Result<Self> {
        Self::with_cap(n_states, rate_fn, initial_pmf, DENSE_STATE_CAP)
    }

    pub fn with_cap(n_states: usize, rate_fn: RateFn, initial_pmf: Vec<f64>, cap: usize) -> Result<Self> {
        if n_states > cap {
            return Err(Error::StateSpaceTooLarge {
                size: n_states as u128,
                cap,
            });
        }
        check_pmf(&initial_pmf, n_states)?;
        Ok(Self {
            n_states,
            rates: Rates::Fn(rate_fn),
            initial_pmf,
        })
    }

    /// Time-constant rates given as a full `n x n` matrix (entry `[y][x]`); the
    /// diagonal of `matrix` is ignored.
    pub fn constant(matrix: Vec<Vec<f64>>, initial_pmf: Vec<f64>) -> Result<Self> {
        Self::tabulated(vec![0.0, 1.0], vec![matrix.clone(), matrix], initial_pmf)
    }

    /// Rates linear in `t` between knot matrices (entry `[y][x]`).
    pub fn tabulated(times: Vec<f64>, mats: Vec<Vec<Vec<f64>>>, initial_pmf: Vec<f64>) -> Result<Self> {
        let n = initial_pmf.len();
        if n > DENSE_STATE_CAP {
            return Err(Error::StateSpaceTooLarge {
                size: n as u128,
                cap: DENSE_STATE_CAP,
            });
        }
        check_pmf(&initial_pmf, n)?;
        if times.len() < 2 || times.len() != mats.len() {
            return Err(Error::Shape("need >= 2 knots with one matrix each".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("knot times must increase".into()));
        }
        let mut flat = Vec::with_capacity(mats.len());
        for m in &mats {
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(Error::Shape("rate matrix shape does not match the pmf".into()));
            }
            let mut f = vec![0.0; n * n];
            for y in 0..n {
                for x in 0..n {
                    if y != x {
                        let r = m[y][x];
                        if !(r.is_finite() && r >= 0.0) {
                            return Err(Error::Domain(format!("rate Q({y},{x}) = {r} is not a valid rate")));
                        }
                        f[y * n + x] = r;
                    }
                }
            }
            flat.push(f);
        }
        Ok(Self {
            n_states: n,
            rates: Rates::Knots { times, mats: flat },
            initial_pmf,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn initial_pmf(&self) -> &[f64] {
        &self.initial_pmf
    }

    pub fn with_initial(&self, initial_pmf: Vec<f64>) -> Result<Self> {
        check_pmf(&initial_pmf, self.n_states)?;
        Ok(Self {
            initial_pmf,
            ..self.clone()
        })
    }

    /// `Q_t(y, x)` for `y != x`.
    #[inline]
    pub fn rate(&self, t: f64, y: usize, x: usize) -> f64 {
        debug_assert_ne!(y, x);
        match &self.rates {
            Rates::Fn(f) => f(t, y, x),
            Rates::Knots { times, mats } => {
                let k = times[1..times.len() - 1].partition_point(|&s| s <= t).min(times.len() - 2);
                let w = ((t - times[k]) / (times[k + 1] - times[k])).clamp(0.0, 1.0);
                let i = y * self.n_states + x;
                mats[k][i] + w * (mats[k + 1][i] - mats[k][i])
            }
        }
    }

    /// The full generator at time `t`, row-major with entry `[y * n + x] = Q_t(y, x)`
    /// and diagonal `-sum` of the column.
    pub fn generator(&self, t: f64) -> Result<Vec<f64>> {
        let n = self.n_states;
        let mut q = vec![0.0; n * n];
        for x in 0..n {
            let mut exit = 0.0;
            for y in 0..n {
                if y != x {
                    let r = self.rate(t, y, x);
                    if !(r.is_finite() && r >= 0.0) {
                        return Err(Error::Domain(format!("rate Q_{t}({y},{x}) = {r} is not a valid rate")));
                    }
                    q[y * n + x] = r;
                    exit += r;
                }
            }
            q[x * n + x] = -exit;
        }
        Ok(q)
    }

    /// One Euler transition from `x` over `[t, t + h]`.
    pub fn euler_step<R: Rng + ?Sized>(&self, x: usize, t: f64, h: f64, rng: &mut R) -> Result<usize> {
        if t < 0.0 || t + h > 1.0 + 1e-12 || h <= 0.0 {
            return Err(Error::Domain(format!("Euler step [{t}, {}] outside [0, 1]", t + h)));
        }
        let q = self.generator(t)?;
        euler_draw(&q, self.n_states, x, t, h, rng)
    }

    /// Generators at `t0 + n h` for `n = 0..n_steps`.
    pub(crate) fn tabulate(&self, t0: f64, h: f64, n_steps: usize) -> Result<Vec<Vec<f64>>> {
        (0..n_steps).map(|k| self.generator(t0 + k as f64 * h)).collect()
    }

    /// Serializes the rates sampled at `times` (linear interpolation on reload).
    pub fn to_json(&self, times: &[f64]) -> Result<String> {
        let n = self.n_states;
        let mut rates = Vec::with_capacity(times.len());
        for &t in times {
            let q = self.generator(t)?;
            rates.push((0..n).map(|y| (0..n).map(|x| if x == y { 0.0 } else { q[y * n + x] }).collect()).collect());
        }
        let dump = DenseDump {
            n_states: n,
            initial_pmf: self.initial_pmf.clone(),
            times: times.to_vec(),
            rates,
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: DenseDump = serde_json::from_str(text)?;
        if dump.initial_pmf.len() != dump.n_states {
            return Err(Error::Shape("n_states does not match initial_pmf".into()));
        }
        Self::tabulated(dump.times, dump.rates, dump.initial_pmf)
    }
}

#[derive(Serialize, Deserialize)]
struct DenseDump {
    n_states: usize,
    initial_pmf: Vec<f64>,
    times: Vec<f64>,
    rates: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn euler_draw<R: Rng + ?Sized>(q: &[f64], n: usize, x: usize, t: f64, h: f64, rng: &mut R) -> Result<usize> {
    let exit = -q[x * n + x];
    let jump_prob = h * exit;
    if jump_prob > 1.0 + 1e-12 {
        return Err(Error::StepTooLarge {
            t,
            jump_prob,
            walker: None,
        });
    }
    if exit == 0.0 {
        return Ok(x);
    }
    let u: f64 = rng.gen();
    if u >= jump_prob {
        return Ok(x);
    }
    let mut acc = 0.0;
    let mut last = x;
    for y in 0..n {
        if y == x {
            continue;
        }
        let p = h * q[y * n + x];
        if p > 0.0 {
            acc += p;
            last = y;
            if u < acc {
                return Ok(y);
            }
        }
    }
    Ok(last)
}

/// A random time-dependent system with rates `a + b t` (or `a + b sin(2 pi t)^2`
/// when `periodic`), `a, b ~ U(lo, hi)`, and a random strictly positive `rho_0`.
pub fn random_system<R: Rng + ?Sized>(n_states: usize, lo: f64, hi: f64, periodic: bool, rng: &mut R) -> Result<DenseCtmcSystem> {
    let a: Vec<f64> = (0..n_states * n_states).map(|_| rng.gen_range(lo..hi)).collect();
    let b: Vec<f64> = (0..n_states * n_states).map(|_| rng.gen_range(lo..hi)).collect();
    let mut pmf: Vec<f64> = (0..n_states).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    let n = n_states;
    let f: RateFn = Arc::new(move |t, y, x| {
        let s = if periodic {
            (std::f64::consts::TAU * t).sin().powi(2)
        } else {
            t
        };
        a[y * n + x] + b[y * n + x] * s
    });
    DenseCtmcSystem::new(n_states, f, pmf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn generator_columns_sum_to_zero() {
        let mut r = rng::stream(11, 0, 0);
        let sys = random_system(6, 0.1, 2.0, true, &mut r).unwrap();
        for &t in &[0.0, 0.3, 0.77, 1.0] {
            let q = sys.generator(t).unwrap();
            for x in 0..6 {
                let col: f64 = (0..6).map(|y| q[y * 6 + x]).sum();
                assert!(col.abs() <= 1e-12);
                for y in 0..6 {
                    if y != x {
                        assert!(q[y * 6 + x] >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_generator_never_moves() {
        let sys = DenseCtmcSystem::constant(vec![vec![0.0; 3]; 3], vec![1.0, 0.0, 0.0]).unwrap();
        let mut r = rng::stream(12, 0, 0);
        for _ in 0..1000 {
            assert_eq!(sys.euler_step(2, 0.5, 0.1, &mut r).unwrap(), 2);
        }
    }

    #[test]
    fn single_rate_bernoulli() {
        let sys = DenseCtmcSystem::constant(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![1.0, 0.0]).unwrap();
        let mut r = rng::stream(13, 0, 0);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| sys.euler_step(0, 0.0, 0.01, &mut r).unwrap() == 1).count();
        let p = 0.01;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits as f64 - n as f64 * p).abs() < 3.0 * sd, "{hits}");
    }

    #[test]
    fn step_too_large_is_reported() {
        let sys = DenseCtmcSystem::constant(vec![vec![0.0, 50.0], vec![50.0, 0.0]], vec![0.5, 0.5]).unwrap();
        let mut r = rng::stream(14, 0, 0);
        let err = sys.euler_step(0, 0.0, 0.1, &mut r).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }));
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(DenseCtmcSystem::constant(vec![vec![0.0, -1.0], vec![1.0, 0.0]], vec![0.5, 0.5]).is_err());
        assert!(DenseCtmcSystem::constant(vec![vec![0.0; 2]; 2], vec![0.5, 0.6]).is_err());
        let f: RateFn = Arc::new(|_, _, _| 1.0);
        assert!(matches!(
            DenseCtmcSystem::new(5000, f, vec![1.0 / 5000.0; 5000]),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn json_round_trip_preserves_knot_rates() {
        let mut r = rng::stream(15, 0, 0);
        let sys = random_system(4, 0.1, 1.0, false, &mut r).unwrap();
        let times = [0.0, 0.5, 1.0];
        let back = DenseCtmcSystem::from_json(&sys.to_json(&times).unwrap()).unwrap();
        for &t in &[0.0, 0.25, 0.5, 0.9] {
            let a = sys.generator(t).unwrap();
            let b = back.generator(t).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        assert_eq!(back.initial_pmf(), sys.initial_pmf());
    }
}
