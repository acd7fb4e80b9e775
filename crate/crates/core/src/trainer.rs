//! Training: fit the flux net and the free-energy derivative `g_phi` by
//! regressing `K_t(x)` onto `g_phi(t)` at states drawn from a replay buffer of
//! sampler rollouts.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::leqnet::{from_bytes, loss_gradient, to_bytes, FluxNet, FreeEnergyNet};
use crate::rng::{self, domain};
use crate::sampler::{RunOptions, Sampler, SamplerConfig, Transport};
use crate::targets::{AnnealedTarget, LatticeState};
use crate::{Error, Result};

/// FIFO store of `(x, t)` pairs visited by rollouts.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<(LatticeState, f64)>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            records: VecDeque::new(),
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total number of records ever pushed.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn records(&self) -> impl Iterator<Item = &(LatticeState, f64)> {
        self.records.iter()
    }

    pub fn push(&mut self, x: LatticeState, t: f64) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back((x, t));
        self.inserted += 1;
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// `b` records drawn uniformly, with replacement, among those with `t <= t_max`.
    pub fn sample<R: Rng + ?Sized>(&self, b: usize, t_max: f64, rng: &mut R) -> Result<Vec<(LatticeState, f64)>> {
        let eligible: Vec<usize> = (0..self.records.len()).filter(|&i| self.records[i].1 <= t_max).collect();
        if eligible.is_empty() {
            return Err(Error::Domain(format!("replay buffer has no records with t <= {t_max}")));
        }
        Ok((0..b)
            .map(|_| self.records[eligible[rng.gen_range(0..eligible.len())]].clone())
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.steps += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] -= cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fresh rollouts every this many iterations (buffer mode).
    pub rollout_every: usize,
    pub rollout_walkers: usize,
    /// `false` rolls out every iteration and trains on that rollout only.
    pub use_buffer: bool,
    pub buffer_capacity: usize,
    /// Fraction of the iterations over which `t_max` ramps from 0 to 1.
    pub t_max_ramp: f64,
    pub free_energy_hidden: usize,
    /// Run a full-length ESS probe every this many iterations; 0 disables.
    pub probe_every: usize,
    pub probe_walkers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            rollout_every: 10,
            rollout_walkers: 64,
            use_buffer: true,
            buffer_capacity: 100_000,
            t_max_ramp: 0.5,
            free_energy_hidden: 16,
            probe_every: 0,
            probe_walkers: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam moments must lie in [0, 1)");
        }
        if self.rollout_every == 0 || self.rollout_walkers == 0 {
            return bad("rollout_every and rollout_walkers must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.t_max_ramp) {
            return bad("t_max_ramp must lie in [0, 1]");
        }
        if self.free_energy_hidden == 0 {
            return bad("free_energy_hidden must be >= 1");
        }
        Ok(())
    }

    /// Time horizon at iteration `iter` (0-based): a linear ramp that reaches 1
    /// after `t_max_ramp * iterations` iterations.
    pub fn t_max(&self, iter: usize) -> f64 {
        let ramp = self.t_max_ramp * self.iterations as f64;
        if ramp < 1.0 {
            1.0
        } else {
            ((iter + 1) as f64 / ramp).min(1.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub loss: f64,
    pub ess_probe: Option<f64>,
    pub t_max: f64,
    pub wall_ms: u128,
}

pub fn write_history_csv(rows: &[HistoryRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "iter,loss,ess_probe,t_max,wall_ms")?;
    for r in rows {
        let ess = r.ess_probe.map(|e| e.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.iter, r.loss, ess, r.t_max, r.wall_ms)?;
    }
    Ok(())
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub iter: usize,
    pub net: FluxNet,
    pub gphi: FreeEnergyNet,
    pub adam_theta: Adam,
    pub adam_phi: Adam,
    pub buffer: ReplayBuffer,
    pub history: Vec<HistoryRow>,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    iter: usize,
    adam_theta_steps: u64,
    adam_phi_steps: u64,
    buffer_capacity: usize,
    buffer_inserted: u64,
    buffer_len: usize,
    checkpoint_len: usize,
    history: Vec<HistoryRow>,
}

const STATE_MAGIC: &[u8; 8] = b"LEAPSTRN";
const STATE_VERSION: u16 = 1;

impl TrainState {
    pub fn new(net: FluxNet, gphi: FreeEnergyNet, buffer_capacity: usize) -> Self {
        Self {
            iter: 0,
            adam_theta: Adam::new(net.n_params()),
            adam_phi: Adam::new(gphi.n_params()),
            net,
            gphi,
            buffer: ReplayBuffer::new(buffer_capacity),
            history: Vec::new(),
        }
    }

    /// `LEAPSTRN`, `u16` version, `u64` header length, JSON header, the
    /// checkpoint bytes, Adam moments as `f64`, then buffer records as `u8`
    /// tokens followed by an `f64` time, all little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let ckpt = to_bytes(&self.net, &self.gphi)?;
        let header = StateHeader {
            iter: self.iter,
            adam_theta_steps: self.adam_theta.steps,
            adam_phi_steps: self.adam_phi.steps,
            buffer_capacity: self.buffer.capacity,
            buffer_inserted: self.buffer.inserted,
            buffer_len: self.buffer.len(),
            checkpoint_len: ckpt.len(),
            history: self.history.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&ckpt);
        for a in [&self.adam_theta, &self.adam_phi] {
            for v in a.m.iter().chain(&a.v) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (x, t) in self.buffer.records() {
            out.extend_from_slice(x.tokens());
            out.extend_from_slice(&t.to_le_bytes());
        }
        w.write_all(&out)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut at = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            let end = at
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::Format(format!("train state truncated while reading {what}")))?;
            let s = &bytes[at..end];
            at = end;
            Ok(s)
        };
        if take(8, "magic")? != STATE_MAGIC {
            return Err(Error::Format("not a LEAPS train state (bad magic)".into()));
        }
        let version = u16::from_le_bytes(take(2, "version")?.try_into().unwrap());
        if version != STATE_VERSION {
            return Err(Error::Format(format!("train state version {version}, this build reads {STATE_VERSION}")));
        }
        let len = u64::from_le_bytes(take(8, "header length")?.try_into().unwrap()) as usize;
        let header: StateHeader =
            serde_json::from_slice(take(len, "header")?).map_err(|e| Error::Format(format!("bad train state header: {e}")))?;
        let (net, gphi) = from_bytes(take(header.checkpoint_len, "checkpoint")?)?;
        let f64s = |s: &[u8]| -> Vec<f64> { s.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect() };
        let mut moments = Vec::new();
        for n in [net.n_params(), net.n_params(), gphi.n_params(), gphi.n_params()] {
            moments.push(f64s(take(8 * n, "optimizer moments")?));
        }
        let (rows, cols, n_tokens) = (net.spec().rows, net.spec().cols, net.n_tokens());
        let d = rows * cols;
        let mut buffer = ReplayBuffer::new(header.buffer_capacity);
        for _ in 0..header.buffer_len {
            let tokens = take(d, "buffer states")?.to_vec();
            let t = f64::from_le_bytes(take(8, "buffer times")?.try_into().unwrap());
            buffer.records.push_back((LatticeState::new(rows, cols, n_tokens, tokens)?, t));
        }
        buffer.inserted = header.buffer_inserted;
        if at != bytes.len() {
            return Err(Error::Format("trailing bytes after train state".into()));
        }
        let mut it = moments.into_iter();
        let mut next = || it.next().unwrap();
        Ok(Self {
            iter: header.iter,
            adam_theta: Adam {
                m: next(),
                v: next(),
                steps: header.adam_theta_steps,
            },
            adam_phi: Adam {
                m: next(),
                v: next(),
                steps: header.adam_phi_steps,
            },
            net,
            gphi,
            buffer,
            history: header.history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f)).map_err(|e| e.context(format!("loading {}", path.display())))
    }
}

pub struct Trainer<'a> {
    target: &'a AnnealedTarget,
    config: TrainConfig,
    sampler: SamplerConfig,
    seed: u64,
    state: TrainState,
    start: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(
        net: FluxNet,
        gphi: FreeEnergyNet,
        target: &'a AnnealedTarget,
        config: TrainConfig,
        sampler: SamplerConfig,
        seed: u64,
    ) -> Result<Self> {
        let state = TrainState::new(net, gphi, config.buffer_capacity);
        Self::resume(state, target, config, sampler, seed)
    }

    pub fn resume(state: TrainState, target: &'a AnnealedTarget, config: TrainConfig, sampler: SamplerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        sampler.validate()?;
        let spec = state.net.spec();
        if spec.rows != target.rows() || spec.cols != target.cols() || spec.n_tokens != target.n_tokens() {
            return Err(Error::GeometryMismatch(format!(
                "net is {}x{} with {} tokens, target is {}x{} with {}",
                spec.rows,
                spec.cols,
                spec.n_tokens,
                target.rows(),
                target.cols(),
                target.n_tokens()
            )));
        }
        if state.gphi.hidden() != config.free_energy_hidden {
            return Err(Error::ManifestMismatch(format!(
                "free-energy width {} vs configured {}",
                state.gphi.hidden(),
                config.free_energy_hidden
            )));
        }
        Ok(Self {
            target,
            config,
            sampler,
            seed,
            state,
            start: Instant::now(),
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.iter >= self.config.iterations
    }

    fn rollout(&mut self, iter: usize, t_max: f64) -> Result<()> {
        let cfg = SamplerConfig {
            n_walkers: self.config.rollout_walkers,
            ..self.sampler.clone()
        };
        let sampler = Sampler::new(self.target, Transport::Net(&self.state.net), cfg)?;
        let seed = rng::stream(self.seed, domain::ROLLOUT, iter as u64).gen();
        let (_, diag) = sampler.run_with(
            seed,
            &RunOptions {
                t_end: Some(t_max),
                record_visits: Some(1),
            },
        )?;
        if !self.config.use_buffer {
            self.state.buffer.clear();
        }
        for (x, t) in diag.visits {
            self.state.buffer.push(x, t);
        }
        Ok(())
    }

    /// Final ESS of a full-length run with the current net.
    pub fn probe_ess(&self, seed: u64) -> Result<f64> {
        let cfg = SamplerConfig {
            n_walkers: self.config.probe_walkers,
            ..self.sampler.clone()
        };
        let (ens, _) = Sampler::new(self.target, Transport::Net(&self.state.net), cfg)?.run(seed)?;
        ens.ess()
    }

    /// One training iteration: optional rollout, a buffer batch, one Adam step.
    pub fn step(&mut self) -> Result<HistoryRow> {
        let iter = self.state.iter;
        let t_max = self.config.t_max(iter);
        let mut step = || -> Result<HistoryRow> {
            if !self.config.use_buffer || iter % self.config.rollout_every == 0 || self.state.buffer.is_empty() {
                self.rollout(iter, t_max)?;
            }
            let mut r = rng::stream(self.seed, domain::BATCH, iter as u64);
            let batch = self.state.buffer.sample(self.config.batch_size, t_max, &mut r)?;
            let lg = loss_gradient(&self.state.net, &self.state.gphi, self.target, &batch)?;
            let cfg = &self.config;
            self.state.adam_theta.step(self.state.net.params_mut(), &lg.grad_theta, cfg);
            self.state.net.sync();
            self.state.adam_phi.step(self.state.gphi.params_mut(), &lg.grad_phi, cfg);
            let ess_probe = if cfg.probe_every > 0 && ((iter + 1) % cfg.probe_every == 0 || iter + 1 == cfg.iterations) {
                Some(self.probe_ess(rng::stream(self.seed, domain::ROLLOUT, u64::MAX - iter as u64).gen())?)
            } else {
                None
            };
            Ok(HistoryRow {
                iter,
                loss: lg.loss,
                ess_probe,
                t_max,
                wall_ms: self.start.elapsed().as_millis(),
            })
        };
        let row = step().map_err(|e| e.context(format!("training iteration {iter}")))?;
        self.state.history.push(row.clone());
        self.state.iter += 1;
        Ok(row)
    }

    /// Runs the remaining iterations, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&TrainState, &HistoryRow) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let row = self.step()?;
            on_step(&self.state, &row)?;
        }
        Ok(())
    }
}

/// Trains to completion and returns the nets with the loss history.
pub fn train(
    net: FluxNet,
    gphi: FreeEnergyNet,
    target: &AnnealedTarget,
    config: TrainConfig,
    sampler: SamplerConfig,
    seed: u64,
) -> Result<(FluxNet, FreeEnergyNet, Vec<HistoryRow>)> {
    let mut trainer = Trainer::new(net, gphi, target, config, sampler, seed)?;
    trainer.run(|_, _| Ok(()))?;
    let state = trainer.into_state();
    Ok((state.net, state.gphi, state.history))
}

/// `F_t - F_0 = -int_0^t g_phi(s) ds` on a grid (`g_phi` models `d_t log Z_t`).
pub fn estimate_free_energy_curve(gphi: &FreeEnergyNet, t_grid: &[f64]) -> Vec<f64> {
    t_grid.iter().map(|&t| -gphi.integral(t)).collect()
}
