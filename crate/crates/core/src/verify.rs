//! The exact-oracle verification battery.
//!
//! Every check compares a library result against an independent oracle (dense
//! enumeration, the KFE solver, finite differences or a closed form) and
//! reports instead of panicking. `Fast` is sized to finish in well under a
//! minute on one core; `Full` runs the Monte Carlo checks at 10^5 trajectories.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctmc::{make_one_way, random_system, simulate, solve_kfe, uniform_grid, RndEvaluator};
use crate::leqnet::{load_checkpoint, loss_gradient, pinn_loss, Architecture, FluxNet, FreeEnergyNet, NetSpec};
use crate::rng::{self, domain};
use crate::sampler::{ess, heat_bath_matrix, Sampler, SamplerConfig, Transport};
use crate::targets::{AnnealedTarget, BetaSchedule, LatticeState, Model, PotentialPath};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Fast,
    Full,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn(Level, u64) -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("ess_formula", ess_formula),
    ("detailed_balance", detailed_balance),
    ("k_ignores_eps", k_ignores_eps),
    ("one_way_lemma", one_way_lemma),
    ("rnd_normalization", rnd_normalization),
    ("zero_variance", zero_variance),
    ("local_equivariance", local_equivariance),
    ("loss_gradient", gradient_check),
    ("unbiased_random_net", unbiased_random_net),
];

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs the battery; `checkpoint` adds an equivariance check of a saved net.
pub fn run_battery(level: Level, seed: u64, checkpoint: Option<&Path>) -> Vec<CheckResult> {
    let mut out: Vec<CheckResult> = CHECKS.iter().map(|(name, f)| timed(name, || f(level, seed))).collect();
    if let Some(path) = checkpoint {
        out.push(timed("checkpoint_equivariance", || checkpoint_equivariance(path, seed)));
    }
    out
}

pub fn format_table(results: &[CheckResult]) -> String {
    let w = results.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
    let mut s = format!("{:<w$}  {:<6}  {:>8}  detail\n", "check", "result", "seconds");
    for r in results {
        s += &format!(
            "{:<w$}  {:<6}  {:>8.2}  {}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    s
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn ising(l: usize, beta_1: f64) -> Result<AnnealedTarget> {
    AnnealedTarget::scheduled(l, l, 2, Model::Ising { coupling: 1.0, field: 0.0 }, BetaSchedule::linear(beta_1))
}

fn random_state<R: Rng + ?Sized>(rows: usize, cols: usize, n: usize, r: &mut R) -> Result<LatticeState> {
    LatticeState::new(rows, cols, n, (0..rows * cols).map(|_| r.gen_range(0..n) as u8).collect())
}

fn ess_formula(_: Level, seed: u64) -> Result<(bool, String)> {
    let mut r = rng::stream(seed, domain::VERIFY, 0);
    let equal = ess(&[0.3; 17])?;
    let a: Vec<f64> = (0..50).map(|_| r.gen_range(-3.0..3.0)).collect();
    let shifted: Vec<f64> = a.iter().map(|v| v + 123.0).collect();
    let shift_gap = (ess(&a)? - ess(&shifted)?).abs();
    // One weight e^L against n - 1 unit weights.
    let (n, l) = (20.0, 5.0f64);
    let closed = ((l.exp() + n - 1.0) / n).powi(2) / (((2.0 * l).exp() + n - 1.0) / n);
    let mut dom = vec![0.0; 20];
    dom[7] = l;
    let dom_gap = (ess(&dom)? - closed).abs();
    Ok((
        equal == 1.0 && shift_gap <= 1e-12 && dom_gap <= 1e-6,
        format!("equal={equal} shift_gap={shift_gap:.1e} dominant_gap={dom_gap:.1e}"),
    ))
}

fn detailed_balance(_: Level, _: u64) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for beta in [0.3, 0.9] {
        let target = ising(2, beta)?;
        for t in [0.4, 1.0] {
            let m = heat_bath_matrix(&target, t)?;
            let rho = target.exact_pmf(t)?;
            for x in 0..16 {
                for y in 0..16 {
                    worst = worst.max((m[y][x] * rho[x] - m[x][y] * rho[y]).abs());
                }
            }
        }
    }
    Ok((worst <= 1e-12, format!("max flow imbalance {worst:.1e}")))
}

fn lemlp(l: usize) -> NetSpec {
    NetSpec { rows: l, cols: l, n_tokens: 2, arch: Architecture::LeMlp { hidden: 4 } }
}

fn k_ignores_eps(_: Level, seed: u64) -> Result<(bool, String)> {
    let target = ising(3, 0.8)?;
    let mut r = rng::stream(seed, domain::VERIFY, 1);
    let net = FluxNet::random(lemlp(3), &mut r, 1.0)?;
    let cfg = |eps: f64| SamplerConfig {
        n_steps: 100,
        n_walkers: 1,
        eps: BetaSchedule::constant(eps),
        ..SamplerConfig::default()
    };
    let a = Sampler::new(&target, Transport::Net(&net), cfg(0.0))?;
    let b = Sampler::new(&target, Transport::Net(&net), cfg(5.0))?;
    let mut same = true;
    for step in [0, 37, 99] {
        for _ in 0..20 {
            let x = random_state(3, 3, 2, &mut r)?;
            same &= a.k_terms(&x, step)?.k.to_bits() == b.k_terms(&x, step)?.k.to_bits();
        }
    }
    Ok((same, if same { "bit-identical at eps 0 and 5".into() } else { "K differs with eps".into() }))
}

fn one_way_lemma(level: Level, seed: u64) -> Result<(bool, String)> {
    let mut r = rng::stream(seed, domain::VERIFY, 2);
    let systems = if level == Level::Full { 5 } else { 2 };
    let grid = uniform_grid(1e-3);
    let (mut gap, mut exclusive): (f64, bool) = (0.0, true);
    for k in 0..systems {
        let q = random_system(8, 0.1, 1.0, k % 2 == 0, &mut r)?;
        let path = solve_kfe(&q, &grid)?;
        let qbar = make_one_way(&q, &path)?;
        let bar = solve_kfe(&qbar, &grid)?;
        for (a, b) in path.pmfs().iter().zip(bar.pmfs()) {
            for (u, v) in a.iter().zip(b) {
                gap = gap.max((u - v).abs());
            }
        }
        for _ in 0..20 {
            let t = r.gen_range(0.0..1.0);
            for x in 0..8 {
                for y in 0..8 {
                    exclusive &= x == y || qbar.rate(t, y, x) * qbar.rate(t, x, y) == 0.0;
                }
            }
        }
    }
    Ok((gap <= 1e-6 && exclusive, format!("marginal gap {gap:.1e}, pairwise exclusive: {exclusive}")))
}

fn rnd_normalization(level: Level, seed: u64) -> Result<(bool, String)> {
    let (n_traj, n_steps) = if level == Level::Full { (100_000, 1000) } else { (20_000, 200) };
    let mut r = rng::stream(seed, domain::VERIFY, 3);
    let q = random_system(8, 0.2, 1.5, true, &mut r)?;
    let qp = random_system(8, 0.2, 1.5, false, &mut r)?;
    let nu = solve_kfe(&q, &[0.0, 1.0])?.last().to_vec();
    let trajs = simulate(&q, n_steps, n_traj, seed)?;
    let ev = RndEvaluator::new(&q, &qp, 0.0, 1.0 / n_steps as f64, n_steps)?;
    let mut w = Vec::with_capacity(n_traj);
    for t in &trajs {
        w.push(ev.reverse(t, q.initial_pmf(), &nu)?.finite()?.exp());
    }
    let (m, se) = mean_se(&w);
    Ok(((m - 1.0).abs() <= 3.0 * se, format!("E[exp(log rnd)] = {m:.4} +- {se:.4} over {n_traj}")))
}

fn zero_variance(level: Level, seed: u64) -> Result<(bool, String)> {
    let walkers = if level == Level::Full { 10_000 } else { 1000 };
    let mut r = rng::stream(seed, domain::VERIFY, 4);
    let sys = random_system(8, 0.2, 1.0, false, &mut r)?;
    let grid = uniform_grid(1e-3);
    let path = solve_kfe(&sys, &grid)?;
    let target = AnnealedTarget::path(1, 3, 2, PotentialPath::from_pmfs(grid, path.pmfs())?)?;
    let cfg = SamplerConfig {
        n_steps: 1000,
        n_walkers: walkers,
        resample_threshold: 0.0,
        ..SamplerConfig::default()
    };
    let (ens, _) = Sampler::new(&target, Transport::Dense(&sys), cfg)?.run(seed)?;
    let (_, se) = mean_se(&ens.log_weights);
    let var = se * se * ens.len() as f64;
    Ok((var <= 1e-3, format!("Var[A_1] = {var:.2e} over {walkers} walkers")))
}

fn specs(level: Level) -> Vec<NetSpec> {
    let mut v = vec![
        lemlp(4),
        NetSpec { rows: 4, cols: 4, n_tokens: 3, arch: Architecture::Lea { heads: 3, head_dim: 4, embed_dim: 6 } },
        NetSpec { rows: 5, cols: 5, n_tokens: 2, arch: Architecture::Lec { kernel_sizes: vec![3, 3], channels: 4, head_dim: 5 } },
    ];
    if level == Level::Full {
        v.push(NetSpec { rows: 8, cols: 8, n_tokens: 2, arch: Architecture::Lea { heads: 40, head_dim: 40, embed_dim: 16 } });
        v.push(NetSpec { rows: 8, cols: 8, n_tokens: 2, arch: Architecture::Lec { kernel_sizes: vec![3, 5, 7], channels: 8, head_dim: 8 } });
    }
    v
}

fn max_equivariance_gap<R: Rng + ?Sized>(net: &FluxNet, trials: usize, r: &mut R) -> Result<f64> {
    let spec = net.spec();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = random_state(spec.rows, spec.cols, spec.n_tokens, r)?;
        let t: f64 = r.gen();
        let i = r.gen_range(0..x.n_sites());
        let tau = r.gen_range(0..spec.n_tokens);
        let a = net.flux(t, &x)?.get(i, tau);
        let b = net.flux(t, &x.swapped(i, tau))?.get(i, x.token(i));
        worst = worst.max((a + b).abs() / (1.0 + a.abs()));
    }
    Ok(worst)
}

fn local_equivariance(level: Level, seed: u64) -> Result<(bool, String)> {
    let mut r = rng::stream(seed, domain::VERIFY, 5);
    let mut worst: f64 = 0.0;
    for spec in specs(level) {
        for _ in 0..10 {
            let net = FluxNet::random(spec.clone(), &mut r, 1.0)?;
            worst = worst.max(max_equivariance_gap(&net, 10, &mut r)?);
        }
    }
    Ok((worst <= 1e-6, format!("max relative gap {worst:.1e}")))
}

fn gradient_check(level: Level, seed: u64) -> Result<(bool, String)> {
    let coords = if level == Level::Full { 50 } else { 15 };
    let mut r = rng::stream(seed, domain::VERIFY, 6);
    let target = ising(3, 0.8)?;
    let batch: Vec<(LatticeState, f64)> = (0..6).map(|_| Ok((random_state(3, 3, 2, &mut r)?, r.gen()))).collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    let nets = [
        lemlp(3),
        NetSpec { rows: 3, cols: 3, n_tokens: 2, arch: Architecture::Lea { heads: 2, head_dim: 3, embed_dim: 4 } },
        NetSpec { rows: 3, cols: 3, n_tokens: 2, arch: Architecture::Lec { kernel_sizes: vec![3, 3], channels: 3, head_dim: 4 } },
    ];
    for spec in nets {
        let net = FluxNet::random(spec, &mut r, 0.8)?;
        let mut gphi = FreeEnergyNet::init(4, &mut r)?;
        for v in gphi.params_mut() {
            *v += r.gen_range(-0.2..0.2);
        }
        let lg = loss_gradient(&net, &gphi, &target, &batch)?;
        // Roundoff in the loss swamps small gradient entries below this step.
        let h = 1e-4;
        for _ in 0..coords {
            let i = r.gen_range(0..net.n_params());
            let mut p = net.params().to_vec();
            p[i] += h;
            let mut up = net.clone();
            up.set_params(p.clone())?;
            p[i] -= 2.0 * h;
            let mut dn = net.clone();
            dn.set_params(p)?;
            let fd = (pinn_loss(&up, &gphi, &target, &batch)? - pinn_loss(&dn, &gphi, &target, &batch)?) / (2.0 * h);
            let a = lg.grad_theta[i];
            // 1e-4 relative with a 1e-8 absolute floor for vanishing coordinates.
            worst = worst.max((a - fd).abs() / (1e-4 * a.abs().max(fd.abs()) + 1e-8));
        }
    }
    Ok((worst <= 1.0, format!("worst error {worst:.2} of tolerance over {coords} coordinates per net")))
}

fn unbiased_random_net(level: Level, seed: u64) -> Result<(bool, String)> {
    let (steps, walkers) = if level == Level::Full { (500, 100_000) } else { (100, 10_000) };
    let target = ising(2, 0.8)?;
    let states = target.enumerate_states()?;
    let rho = target.exact_pmf(1.0)?;
    let mag = |x: &LatticeState| (0..x.n_sites()).map(|i| x.spin(i)).sum::<f64>().abs();
    let exact: f64 = states.iter().zip(&rho).map(|(x, p)| p * mag(x)).sum();
    let mut r = rng::stream(seed, domain::VERIFY, 7);
    let spec = NetSpec { rows: 2, cols: 2, n_tokens: 2, arch: Architecture::Lec { kernel_sizes: vec![3], channels: 4, head_dim: 4 } };
    // A projector scale of 1 leaves ~0.3% ESS, where 3-sigma intervals from the
    // delta method stop being trustworthy; 0.3 keeps ~5% with plenty of jumps.
    let net = FluxNet::random(spec, &mut r, 0.3)?;
    let cfg = SamplerConfig {
        n_steps: steps,
        n_walkers: walkers,
        resample_threshold: 0.0,
        ..SamplerConfig::default()
    };
    let (ens, _) = Sampler::new(&target, Transport::Net(&net), cfg)?.run(seed)?;
    let w = ens.normalized_weights()?;
    let est: f64 = ens.states.iter().zip(&w).map(|(x, w)| w * mag(x)).sum();
    let se = ens.states.iter().zip(&w).map(|(x, w)| (w * (mag(x) - est)).powi(2)).sum::<f64>().sqrt();
    Ok(((est - exact).abs() <= 3.0 * se, format!("|m| = {est:.4} +- {se:.4}, exact {exact:.4}")))
}

/// Loads a checkpoint (which verifies its parameter checksum) and checks local
/// equivariance and zero self-flux of the stored net.
pub fn checkpoint_equivariance(path: &Path, seed: u64) -> Result<(bool, String)> {
    let (net, _) = load_checkpoint(path)?;
    let spec = net.spec().clone();
    let mut r = rng::stream(seed, domain::VERIFY, 8);
    let gap = max_equivariance_gap(&net, 100, &mut r)?;
    let mut self_flux: f64 = 0.0;
    for _ in 0..20 {
        let x = random_state(spec.rows, spec.cols, spec.n_tokens, &mut r)?;
        let g = net.flux(r.gen(), &x)?;
        for i in 0..x.n_sites() {
            self_flux = self_flux.max(g.get(i, x.token(i)).abs());
        }
    }
    Ok((gap <= 1e-6 && self_flux == 0.0, format!("max relative gap {gap:.1e}, max self flux {self_flux:.1e}")))
}
