use std::sync::Arc;

use super::{DenseCtmcSystem, PmfPath, RateFn};
use crate::{Error, Result};

fn check_positive(rho: &PmfPath, n: usize) -> Result<()> {
    for (t, p) in rho.times().iter().zip(rho.pmfs()) {
        if p.len() != n {
            return Err(Error::Shape("pmf path does not match the state space".into()));
        }
        if let Some(x) = p.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("rho_{t}({x}) = {} is not positive", p[x])));
        }
    }
    Ok(())
}

/// `Qbar_t(y, x) = [Q_t(y, x) - Q_t(x, y) rho_t(y) / rho_t(x)]_+`: the net
/// probability flux of `Q` under `rho`, carried in one direction only. If `rho`
/// are the marginals of `Q`, so are they of `Qbar`.
pub fn make_one_way(q: &DenseCtmcSystem, rho: &PmfPath) -> Result<DenseCtmcSystem> {
    check_positive(rho, q.n_states())?;
    let q = q.clone();
    let rho = rho.clone();
    let initial = q.initial_pmf().to_vec();
    let n = q.n_states();
    let f: RateFn = Arc::new(move |t, y, x| {
        let (px, py) = (rho.prob(t, x), rho.prob(t, y));
        // Net flux x -> y; the reverse entry computes exactly its negation.
        let net = q.rate(t, y, x) * px - q.rate(t, x, y) * py;
        if net > 0.0 {
            net / px
        } else {
            0.0
        }
    });
    DenseCtmcSystem::new(n, f, initial)
}

/// The time reversal `Q'_t(y, x) = Q_t(x, y) rho_t(y) / rho_t(x)` of `Q` along
/// its marginals `rho`, indexed in forward time.
pub fn time_reversal(q: &DenseCtmcSystem, rho: &PmfPath) -> Result<DenseCtmcSystem> {
    check_positive(rho, q.n_states())?;
    let q = q.clone();
    let rho = rho.clone();
    let n = q.n_states();
    let last = rho.last().to_vec();
    let f: RateFn = Arc::new(move |t, y, x| q.rate(t, x, y) * rho.prob(t, y) / rho.prob(t, x));
    DenseCtmcSystem::new(n, f, last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{random_system, solve_kfe, uniform_grid};
    use crate::rng;

    #[test]
    fn detailed_balance_flux_vanishes() {
        // Metropolis rates for pi are in detailed balance with pi.
        let pi: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
        let mats: Vec<Vec<f64>> = (0..4)
            .map(|y| (0..4).map(|x| if x == y { 0.0 } else { (pi[y] / pi[x]).min(1.0) }).collect())
            .collect();
        let q = DenseCtmcSystem::constant(mats, pi.to_vec()).unwrap();
        let rho = PmfPath::new(vec![0.0, 1.0], vec![pi.to_vec(), pi.to_vec()]).unwrap();
        let bar = make_one_way(&q, &rho).unwrap();
        for t in [0.0, 0.5, 1.0] {
            for x in 0..4 {
                for y in 0..4 {
                    if x != y {
                        assert!(bar.rate(t, y, x).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn one_way_input_is_unchanged() {
        // A 3-cycle 0 -> 1 -> 2 -> 0 with uniform rho carries a pure circulation.
        let mut mats = vec![vec![0.0; 3]; 3];
        mats[1][0] = 1.0;
        mats[2][1] = 1.0;
        mats[0][2] = 1.0;
        let u = vec![1.0 / 3.0; 3];
        let q = DenseCtmcSystem::constant(mats, u.clone()).unwrap();
        let rho = PmfPath::new(vec![0.0, 1.0], vec![u.clone(), u]).unwrap();
        let bar = make_one_way(&q, &rho).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                if x != y {
                    assert!((bar.rate(0.3, y, x) - q.rate(0.3, y, x)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pairwise_exclusive_and_support_preserving() {
        let mut r = rng::stream(41, 0, 0);
        let q = random_system(6, 0.0, 1.0, true, &mut r).unwrap();
        let rho = solve_kfe(&q, &uniform_grid(0.01)).unwrap();
        let bar = make_one_way(&q, &rho).unwrap();
        for t in [0.0, 0.123, 0.5, 0.999] {
            for x in 0..6 {
                for y in 0..6 {
                    if x != y {
                        assert_eq!(bar.rate(t, y, x) * bar.rate(t, x, y), 0.0);
                        if q.rate(t, y, x) == 0.0 {
                            assert_eq!(bar.rate(t, y, x), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn nonpositive_rho_rejected() {
        let q = DenseCtmcSystem::constant(vec![vec![0.0; 2]; 2], vec![1.0, 0.0]).unwrap();
        let rho = PmfPath::new(vec![0.0], vec![vec![1.0, 0.0]]).unwrap();
        assert!(matches!(make_one_way(&q, &rho), Err(Error::Domain(_))));
    }
}
