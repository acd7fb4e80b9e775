use super::DenseCtmcSystem;
use crate::{Error, Result};

/// Default RK4 step for [`solve_kfe`].
pub const KFE_STEP: f64 = 1e-4;

/// Marginals on a time grid, linearly interpolated in between.
#[derive(Clone, Debug, PartialEq)]
pub struct PmfPath {
    times: Vec<f64>,
    pmfs: Vec<Vec<f64>>,
}

impl PmfPath {
    pub fn new(times: Vec<f64>, pmfs: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != pmfs.len() {
            return Err(Error::Shape("pmf path needs one pmf per time".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("pmf path times must increase".into()));
        }
        Ok(Self { times, pmfs })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn pmfs(&self) -> &[Vec<f64>] {
        &self.pmfs
    }

    pub fn last(&self) -> &[f64] {
        self.pmfs.last().unwrap()
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.times.len();
        if n == 1 {
            return (0, 0.0);
        }
        let k = self.times[1..n - 1].partition_point(|&s| s <= t).min(n - 2);
        let w = ((t - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        (k, w)
    }

    pub fn prob(&self, t: f64, x: usize) -> f64 {
        let (k, w) = self.locate(t);
        if self.times.len() == 1 {
            return self.pmfs[0][x];
        }
        let (a, b) = (self.pmfs[k][x], self.pmfs[k + 1][x]);
        a + w * (b - a)
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        (0..self.pmfs[0].len()).map(|x| self.prob(t, x)).collect()
    }
}

/// `0, step, 2 step, .., 1`.
pub fn uniform_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

/// Integrates `d rho / dt = Q_t rho` from the system's `rho_0` at `t = 0` with
/// the default RK4 step.
pub fn solve_kfe(sys: &DenseCtmcSystem, t_grid: &[f64]) -> Result<PmfPath> {
    solve_kfe_with_step(sys, t_grid, KFE_STEP)
}

pub fn solve_kfe_with_step(sys: &DenseCtmcSystem, t_grid: &[f64], step: f64) -> Result<PmfPath> {
    if t_grid.is_empty() {
        return Err(Error::Shape("empty time grid".into()));
    }
    if t_grid[0] < 0.0 || *t_grid.last().unwrap() > 1.0 || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("time grid must be nondecreasing within [0, 1]".into()));
    }
    if !(step > 0.0) {
        return Err(Error::Domain("KFE step must be positive".into()));
    }
    let n = sys.n_states();
    let mut rho = sys.initial_pmf().to_vec();
    let mut t = 0.0;
    
    let mut out = Vec::with_capacity(t_grid.len());
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = vec![0.0; n];
    for &target in t_grid {
        let span = target - t;
        if span > 0.0 {
            let m = (span / step).ceil().max(1.0) as usize;
            let dt = span / m as f64;
            for j in 0..m {
                let s = t + j as f64 * dt;
                let q0 = sys.generator(s)?;
                let qh = sys.generator(s + 0.5 * dt)?;
                let q1 = sys.generator(s + dt)?;
                apply(&q0, &rho, &mut k[0]);
                axpy(&rho, 0.5 * dt, &k[0], &mut tmp);
                apply(&qh, &tmp, &mut k[1]);
                axpy(&rho, 0.5 * dt, &k[1], &mut tmp);
                apply(&qh, &tmp, &mut k[2]);
                axpy(&rho, dt, &k[2], &mut tmp);
                apply(&q1, &tmp, &mut k[3]);
                for x in 0..n {
                    rho[x] += dt / 6.0 * (k[0][x] + 2.0 * k[1][x] + 2.0 * k[2][x] + k[3][x]);
                }

                let mut min = f64::INFINITY;
                let mut total = 0.0;
                for &p in &rho {
                    if !p.is_finite() {
                        return Err(Error::NonConvergence {
                            t: s + dt,
                            step: dt,
                            reason: "non-finite probability".into(),
                        });
                    }
                    min = min.min(p);
                    total += p;
                }
                if min < -1e-6 || (total - 1.0).abs() > 1e-3 {
                    return Err(Error::NonConvergence {
                        t: s + dt,
                        step: dt,
                        reason: format!("simplex violated (min {min:e}, mass {total}); reduce the step"),
                    });
                }
                if min < 0.0 {
                    rho.iter_mut().for_each(|p| *p = p.max(0.0));
                    total = rho.iter().sum();
                }
                rho.iter_mut().for_each(|p| *p /= total);
            }
            t = target;
        }
        out.push(rho.clone());
    }
    // Repeated grid points are legal input but not for interpolation.
    let mut times = Vec::with_capacity(t_grid.len());
    let mut pmfs = Vec::with_capacity(t_grid.len());
    for (tt, p) in t_grid.iter().zip(out) {
        if times.last() == Some(tt) {
            continue;
        }
        times.push(*tt);
        pmfs.push(p);
    }
    PmfPath::new(times, pmfs)
}

fn apply(q: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for y in 0..n {
        let row = &q[y * n..(y + 1) * n];
        out[y] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn axpy(base: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, b), kk) in out.iter_mut().zip(base).zip(k) {
        *o = b + a * kk;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::random_system;
    use crate::rng;
    use nalgebra::DMatrix;

    #[test]
    fn zero_generator_is_stationary() {
        let sys = DenseCtmcSystem::constant(vec![vec![0.0; 3]; 3], vec![0.2, 0.3, 0.5]).unwrap();
        let path = solve_kfe(&sys, &[0.0, 0.4, 1.0]).unwrap();
        for p in path.pmfs() {
            assert_eq!(p, &vec![0.2, 0.3, 0.5]);
        }
    }

    #[test]
    fn two_state_relaxation_closed_form() {
        let r = 1.7;
        let sys = DenseCtmcSystem::constant(vec![vec![0.0, r], vec![r, 0.0]], vec![0.9, 0.1]).unwrap();
        let grid = uniform_grid(0.05);
        let path = solve_kfe(&sys, &grid).unwrap();
        for (t, p) in grid.iter().zip(path.pmfs()) {
            let exact = 0.5 + 0.4 * (-2.0 * r * t).exp();
            assert!((p[0] - exact).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn constant_generator_matches_matrix_exponential() {
        let mut r = rng::stream(21, 0, 0);
        let sys = random_system(5, 0.1, 1.5, false, &mut r).unwrap();
        let q = sys.generator(0.3).unwrap();
        let mats = (0..5).map(|y| (0..5).map(|x| q[y * 5 + x]).collect()).collect::<Vec<Vec<f64>>>();
        let c = DenseCtmcSystem::constant(mats, sys.initial_pmf().to_vec()).unwrap();
        let path = solve_kfe(&c, &[0.5, 1.0]).unwrap();
        let qm = DMatrix::from_row_slice(5, 5, &q);
        let rho0 = nalgebra::DVector::from_column_slice(sys.initial_pmf());
        for (t, p) in [0.5, 1.0].iter().zip(path.pmfs()) {
            let exact = (qm.clone() * *t).exp() * &rho0;
            for x in 0..5 {
                assert!((p[x] - exact[x]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn simplex_preserved() {
        let mut r = rng::stream(22, 0, 0);
        let sys = random_system(8, 0.0, 3.0, true, &mut r).unwrap();
        let path = solve_kfe(&sys, &uniform_grid(0.01)).unwrap();
        for p in path.pmfs() {
            assert!(p.iter().all(|&v| v >= -1e-12));
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn interpolation_hits_knots() {
        let path = PmfPath::new(vec![0.0, 1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(path.at(0.25), vec![0.75, 0.25]);
        assert_eq!(path.prob(1.0, 1), 1.0);
    }
}
