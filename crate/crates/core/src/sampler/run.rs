use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::WalkerEnsemble;
use super::mcmc::{apply_kernel, McmcKernel};
use super::weights::{ess, log_mean_exp, resample_indices, Resampling};
use crate::ctmc::DenseCtmcSystem;
use crate::leqnet::{k_operator as k_operator_terms, FluxMatrix, FluxNet, KTerms};
use crate::rng::{self, domain, StreamRng};
use crate::targets::{AnnealedTarget, BetaSchedule, LatticeState};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub n_walkers: usize,
    /// MCMC rate `eps_t`; the kernel fires with probability `h eps_t` per step.
    pub eps: BetaSchedule,
    /// Resample when the ESS drops below this; 0 disables resampling.
    pub resample_threshold: f64,
    pub resampling: Resampling,
    /// `false` gives annealed importance sampling / SMC.
    pub transport: bool,
    pub mcmc_kernel: McmcKernel,
    pub precision: Precision,
    /// Largest tolerated fraction of quarantined walkers.
    pub max_quarantine_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 100,
            n_walkers: 1000,
            eps: BetaSchedule::constant(0.0),
            resample_threshold: 0.5,
            resampling: Resampling::Systematic,
            transport: true,
            mcmc_kernel: McmcKernel::Site,
            precision: Precision::F64,
            max_quarantine_fraction: 1e-3,
        }
    }
}

impl SamplerConfig {
    pub fn step_size(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        if self.n_walkers == 0 {
            return Err(Error::Config("n_walkers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return Err(Error::Config(format!("resample_threshold {} outside [0, 1]", self.resample_threshold)));
        }
        let h = self.step_size();
        // Piecewise linear, so the extremes sit on knots.
        for &(t, e) in self.eps.knots() {
            if e < 0.0 {
                return Err(Error::Config(format!("eps({t}) = {e} is negative")));
            }
            if h * e > 1.0 {
                return Err(Error::Config(format!(
                    "h * eps = {} > 1 at t = {t}; raise n_steps or lower eps",
                    h * e
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.max_quarantine_fraction) {
            return Err(Error::Config("max_quarantine_fraction outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// The transport part of the generator.
#[derive(Clone, Copy)]
pub enum Transport<'a> {
    /// Zero flux: plain AIS/SMC.
    None,
    /// `Q = [G]_+` from a locally equivariant net over single-site swaps.
    Net(&'a FluxNet),
    /// An explicit rate matrix over state indices (enumerable targets only).
    Dense(&'a DenseCtmcSystem),
}

enum Prepared<'a> {
    None,
    Net(&'a FluxNet),
    Dense {
        sys: &'a DenseCtmcSystem,
        states: Vec<LatticeState>,
    },
}

/// Per-step tables shared by all walkers under dense transport.
struct DenseStep {
    n: usize,
    /// Generator at the step's left end, `[y * n + x]`.
    gen: Vec<f64>,
    /// `U_t` per state index.
    pot: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub ess: f64,
    #[serde(rename = "mean_A")]
    pub mean_a: f64,
    pub n_jumps: usize,
    pub resampled: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    /// ESS after each step (before any resampling in that step).
    pub steps: Vec<StepRecord>,
    pub total_jumps: usize,
    pub mcmc_moves: usize,
    pub resample_events: usize,
    pub clamped_terms: usize,
    pub wall_ms: u128,
    /// `(x, t)` pairs at which `K` was evaluated, when requested.
    pub visits: Vec<(LatticeState, f64)>,
}

impl Diagnostics {
    /// One JSON object per step.
    pub fn write_ndjson(&self, mut w: impl Write) -> Result<()> {
        for r in &self.steps {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn ess_trace(&self) -> Vec<(f64, f64)> {
        self.steps.iter().map(|r| (r.t, r.ess)).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Stop at the first grid time `>= t_end` instead of at 1.
    pub t_end: Option<f64>,
    /// Record `(x, t)` of every walker every `stride` steps.
    pub record_visits: Option<usize>,
}

struct Scratch {
    g: FluxMatrix,
    g32: FluxMatrix<f32>,
    lr: Vec<f64>,
}

/// Euler transport plus MCMC with proactive importance weights.
pub struct Sampler<'a> {
    target: &'a AnnealedTarget,
    config: SamplerConfig,
    transport: Prepared<'a>,
}

impl<'a> Sampler<'a> {
    pub fn new(target: &'a AnnealedTarget, transport: Transport<'a>, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let transport = if !config.transport {
            Prepared::None
        } else {
            match transport {
                Transport::None => Prepared::None,
                Transport::Net(net) => {
                    if net.spec().rows != target.rows() || net.spec().cols != target.cols() || net.n_tokens() != target.n_tokens() {
                        return Err(Error::Shape("flux net and target geometries differ".into()));
                    }
                    Prepared::Net(net)
                }
                Transport::Dense(sys) => {
                    let states = target.enumerate_states()?;
                    if states.len() != sys.n_states() {
                        return Err(Error::Shape("dense transport does not match the target state space".into()));
                    }
                    Prepared::Dense { sys, states }
                }
            }
        };
        Ok(Self {
            target,
            config,
            transport,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// `M` exact draws from `rho_0` with zero weights.
    pub fn initial_ensemble(&self, seed: u64) -> WalkerEnsemble {
        let states = (0..self.config.n_walkers)
            .into_par_iter()
            .map(|m| {
                let mut r = rng::stream(seed, domain::INIT, m as u64);
                self.target.sample_initial(&mut r)
            })
            .collect();
        WalkerEnsemble {
            states,
            log_weights: vec![0.0; self.config.n_walkers],
            t: 0.0,
            quarantined: vec![false; self.config.n_walkers],
            resample_log: Vec::new(),
            log_norm_offset: 0.0,
            log_z0: self.target.log_z0(),
        }
    }

    /// `K_t(x)` under this sampler's transport at grid step `step`.
    pub fn k_terms(&self, x: &LatticeState, step: usize) -> Result<KTerms> {
        let mut s = self.scratch();
        let dense = self.dense_step(step)?;
        Ok(self.eval(x, step, dense.as_ref(), &mut s))
    }

    fn dense_step(&self, step: usize) -> Result<Option<DenseStep>> {
        let Prepared::Dense { sys, states } = &self.transport else {
            return Ok(None);
        };
        let t = step as f64 * self.config.step_size();
        Ok(Some(DenseStep {
            n: states.len(),
            gen: sys.generator(t)?,
            pot: states.iter().map(|x| self.target.potential(x, t)).collect(),
        }))
    }

    fn scratch(&self) -> Scratch {
        let (d, n) = (self.target.n_sites(), self.target.n_tokens());
        Scratch {
            g: FluxMatrix::zeros(d, n),
            g32: FluxMatrix::zeros(d, n),
            lr: vec![0.0; d * n],
        }
    }

    fn eval(&self, x: &LatticeState, step: usize, dense: Option<&DenseStep>, s: &mut Scratch) -> KTerms {
        let t = step as f64 * self.config.step_size();
        let du = self.target.dt_potential(x, t);
        match &self.transport {
            Prepared::None => KTerms {
                k: -du,
                ..KTerms::default()
            },
            Prepared::Net(net) => {
                match self.config.precision {
                    Precision::F64 => net.flux_into(t, x, &mut s.g),
                    Precision::F32 => {
                        net.flux_f32(t, x, &mut s.g32);
                        for (a, b) in s.g.data.iter_mut().zip(&s.g32.data) {
                            *a = *b as f64;
                        }
                    }
                }
                self.target.neighbor_log_ratios_into(x, t, &mut s.lr);
                k_operator_terms(&s.g.data, &s.lr, du)
            }
            Prepared::Dense { .. } => {
                let DenseStep { n, gen: q, pot: u } = dense.expect("dense step tables");
                let xi = x.index();
                let exit = -q[xi * n + xi];
                let mut inflow = 0.0;
                for y in 0..*n {
                    if y != xi && q[xi * n + y] > 0.0 {
                        inflow += q[xi * n + y] * (u[xi] - u[y]).exp();
                    }
                }
                KTerms {
                    k: -du + exit - inflow,
                    exit,
                    inflow,
                    clamped: 0,
                }
            }
        }
    }

    /// Euler jump using the rates of the last [`Sampler::eval`] call.
    #[allow(clippy::too_many_arguments)]
    fn jump(
        &self,
        x: &mut LatticeState,
        step: usize,
        exit: f64,
        dense: Option<&DenseStep>,
        s: &Scratch,
        walker: usize,
        r: &mut StreamRng,
    ) -> Result<bool> {
        let h = self.config.step_size();
        let t = step as f64 * h;
        let p = h * exit;
        if p > 1.0 + 1e-12 {
            return Err(Error::StepTooLarge {
                t,
                jump_prob: p,
                walker: Some(walker),
            });
        }
        if exit <= 0.0 {
            return Ok(false);
        }
        let u: f64 = r.gen();
        if u >= p {
            return Ok(false);
        }
        let target = u / h;
        match &self.transport {
            Prepared::None => Ok(false),
            Prepared::Net(_) => {
                let n = self.target.n_tokens();
                let mut acc = 0.0;
                let mut last = None;
                for (k, &g) in s.g.data.iter().enumerate() {
                    if g > 0.0 {
                        acc += g;
                        last = Some(k);
                        if target < acc {
                            break;
                        }
                    }
                }
                let k = last.expect("positive exit rate");
                x.set(k / n, k % n);
                Ok(true)
            }
            Prepared::Dense { .. } => {
                let DenseStep { n, gen: q, .. } = dense.expect("dense step tables");
                let xi = x.index();
                let mut acc = 0.0;
                let mut last = xi;
                for y in 0..*n {
                    if y != xi && q[y * n + xi] > 0.0 {
                        acc += q[y * n + xi];
                        last = y;
                        if target < acc {
                            break;
                        }
                    }
                }
                x.set_from_index(last);
                Ok(last != xi)
            }
        }
    }

    pub fn run(&self, seed: u64) -> Result<(WalkerEnsemble, Diagnostics)> {
        self.run_with(seed, &RunOptions::default())
    }

    pub fn run_with(&self, seed: u64, opts: &RunOptions) -> Result<(WalkerEnsemble, Diagnostics)> {
        let start = Instant::now();
        let cfg = &self.config;
        let h = cfg.step_size();
        let last_step = match opts.t_end {
            Some(t) if t < 1.0 => ((t / h).ceil() as usize).clamp(1, cfg.n_steps),
            _ => cfg.n_steps,
        };
        let mut ens = self.initial_ensemble(seed);
        let mut rngs: Vec<StreamRng> = (0..cfg.n_walkers)
            .map(|m| rng::stream(seed, domain::WALKERS, m as u64))
            .collect();
        let mut diag = Diagnostics::default();
        let m_total = cfg.n_walkers;
        for step in 0..last_step {
            let t = step as f64 * h;
            let p_mcmc = h * cfg.eps.beta(t);
            let dense = self.dense_step(step)?;
            let dense = dense.as_ref();
            let record = opts.record_visits.is_some_and(|s| step % s.max(1) == 0);
            let results: Vec<Result<(bool, bool, usize, Option<LatticeState>)>> = ens
                .states
                .par_iter_mut()
                .zip(ens.log_weights.par_iter_mut())
                .zip(ens.quarantined.par_iter_mut())
                .zip(rngs.par_iter_mut())
                .enumerate()
                .map_init(
                    || self.scratch(),
                    |s, (m, (((x, a), q), r))| {
                        if *q {
                            return Ok((false, false, 0, None));
                        }
                        let mut moved = false;
                        if p_mcmc > 0.0 && r.gen::<f64>() < p_mcmc {
                            apply_kernel(cfg.mcmc_kernel, self.target, t, x, r);
                            moved = true;
                        }
                        let visit = record.then(|| x.clone());
                        let terms = self.eval(x, step, dense, s);
                        *a += h * terms.k;
                        if !a.is_finite() {
                            *q = true;
                            return Ok((moved, false, terms.clamped, visit));
                        }
                        let jumped = self.jump(x, step, terms.exit, dense, s, m, r)?;
                        Ok((moved, jumped, terms.clamped, visit))
                    },
                )
                .collect();
            let mut n_jumps = 0;
            for res in results {
                let (moved, jumped, clamped, visit) = res.map_err(|e| e.context(format!("step {step}")))?;
                diag.mcmc_moves += moved as usize;
                n_jumps += jumped as usize;
                diag.clamped_terms += clamped;
                if let Some(v) = visit {
                    diag.visits.push((v, t));
                }
            }
            diag.total_jumps += n_jumps;
            ens.t = (step + 1) as f64 * h;
            let quarantined = ens.n_quarantined();
            if quarantined as f64 > cfg.max_quarantine_fraction * m_total as f64 {
                return Err(Error::TooManyQuarantined {
                    quarantined,
                    walkers: m_total,
                    limit: cfg.max_quarantine_fraction,
                });
            }
            let eff = ens.effective_log_weights();
            let e = ess(&eff)?;
            let live: Vec<f64> = eff.iter().cloned().filter(|v| v.is_finite()).collect();
            let mean_a = live.iter().sum::<f64>() / live.len() as f64;
            let resample = step + 1 < last_step && e < cfg.resample_threshold;
            diag.steps.push(StepRecord {
                step,
                t: ens.t,
                ess: e,
                mean_a,
                n_jumps,
                resampled: resample,
            });
            if resample {
                let mut r = rng::stream(seed, domain::RESAMPLE, step as u64);
                let idx = resample_indices(&eff, cfg.resampling, &mut r)?;
                ens.log_norm_offset += log_mean_exp(&eff)?;
                ens.states = idx.iter().map(|&i| ens.states[i].clone()).collect();
                ens.log_weights.iter_mut().for_each(|a| *a = 0.0);
                ens.quarantined.iter_mut().for_each(|q| *q = false);
                ens.resample_log.push((ens.t, e));
                diag.resample_events += 1;
            }
        }
        diag.wall_ms = start.elapsed().as_millis();
        Ok((ens, diag))
    }
}

/// `K_t(x)` for a flux net in one flux call and one neighbor-ratio call.
pub fn k_operator(net: &FluxNet, target: &AnnealedTarget, t: f64, x: &LatticeState) -> Result<f64> {
    Ok(crate::leqnet::k_value(net, target, x, t)?.k)
}
