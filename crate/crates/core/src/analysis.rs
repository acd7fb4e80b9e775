//! Observables, Glauber ground truth, and run-to-run comparison.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::{self, domain};
use crate::sampler::{ess, mcmc_kernel_step, normalized_weights, Diagnostics, WalkerEnsemble};
use crate::targets::{AnnealedTarget, LatticeState};
use crate::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// `M(x) = sum_i x_i` with spins in `{-1, +1}`.
pub fn magnetization(x: &LatticeState) -> f64 {
    (0..x.n_sites()).map(|i| x.spin(i)).sum()
}

/// Magnetization pmf over its exact support `-d, -d + 2, ..., d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub values: Vec<i64>,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn total_variation(&self, other: &Histogram) -> Result<f64> {
        if self.values != other.values {
            return Err(Error::GeometryMismatch(format!(
                "histogram supports differ ({} vs {} bins)",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(0.5 * self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

fn uniform_log_weights(n: usize) -> Vec<f64> {
    vec![0.0; n]
}

fn check_samples(states: &[LatticeState], log_weights: &[f64]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Shape("no samples".into()));
    }
    if states.len() != log_weights.len() {
        return Err(Error::Shape(format!("{} states but {} weights", states.len(), log_weights.len())));
    }
    if states.iter().any(|x| !x.same_shape(&states[0])) {
        return Err(Error::GeometryMismatch("samples of different shapes".into()));
    }
    if states[0].n_tokens() != 2 {
        return Err(Error::Domain("magnetization needs binary spins".into()));
    }
    Ok(())
}

/// Self-normalized weighted magnetization histogram; `log_weights = None` is
/// the same estimator with all weights equal.
pub fn magnetization_histogram(states: &[LatticeState], log_weights: Option<&[f64]>) -> Result<Histogram> {
    let owned;
    let a = match log_weights {
        Some(a) => a,
        None => {
            owned = uniform_log_weights(states.len());
            &owned
        }
    };
    check_samples(states, a)?;
    let w = normalized_weights(a)?;
    let d = states[0].n_sites() as i64;
    let values: Vec<i64> = (0..=d).map(|k| 2 * k - d).collect();
    let mut mass = vec![0.0; values.len()];
    for (x, w) in states.iter().zip(&w) {
        let m = magnetization(x) as i64;
        mass[((m + d) / 2) as usize] += w;
    }
    Ok(Histogram { values, mass })
}

/// `G(r) = E[x_i x_{i+r}] - E[x_i] E[x_{i+r}]` for `r = 0..=max_r`, averaged
/// over all sites and over horizontal and vertical displacements (periodic).
pub fn connected_correlation(states: &[LatticeState], log_weights: Option<&[f64]>, max_r: usize) -> Result<Vec<f64>> {
    let owned;
    let a = match log_weights {
        Some(a) => a,
        None => {
            owned = uniform_log_weights(states.len());
            &owned
        }
    };
    check_samples(states, a)?;
    let n = states.len();
    let e = ess(a)?;
    if n < 2 || e * (n as f64) < 2.0 {
        return Err(Error::DegenerateWeights { ess: e });
    }
    let w = normalized_weights(a)?;
    let (rows, cols) = (states[0].rows(), states[0].cols());
    let d = rows * cols;
    let mut mean = vec![0.0; d];
    for (x, w) in states.iter().zip(&w) {
        for (i, m) in mean.iter_mut().enumerate() {
            *m += w * x.spin(i);
        }
    }
    let axis = |r: usize| -> f64 {
        let mut acc = 0.0;
        let mut terms = 0usize;
        for (dr, dc) in [(0usize, r % cols), (r % rows, 0usize)] {
            for i in 0..d {
                let (ri, ci) = (i / cols, i % cols);
                let j = ((ri + dr) % rows) * cols + (ci + dc) % cols;
                let mut pair = 0.0;
                for (x, w) in states.iter().zip(&w) {
                    pair += w * x.spin(i) * x.spin(j);
                }
                acc += pair - mean[i] * mean[j];
                terms += 1;
            }
        }
        acc / terms as f64
    };
    // Averaging the r and L - r sums makes G(r) = G(L - r) hold bit-for-bit
    // on square lattices.
    Ok((0..=max_r)
        .map(|r| {
            if rows == cols && r % rows != 0 {
                0.5 * (axis(r) + axis(rows - r % rows))
            } else {
                axis(r)
            }
        })
        .collect())
}

/// Long heat-bath chain at the `t = 1` target: `n_sweeps` sweeps of `d`
/// random-site updates from a `rho_0` draw, keeping every `thin`-th state
/// after `burn_in` sweeps.
pub fn glauber_ground_truth(target: &AnnealedTarget, n_sweeps: usize, burn_in: usize, thin: usize, seed: u64) -> Result<Vec<LatticeState>> {
    if n_sweeps <= burn_in {
        return Err(Error::Config(format!("n_sweeps {n_sweeps} must exceed burn_in {burn_in}")));
    }
    let thin = thin.max(1);
    let mut r = rng::stream(seed, domain::GLAUBER, 0);
    let mut x = target.sample_initial(&mut r);
    let mut out = Vec::with_capacity((n_sweeps - burn_in) / thin + 1);
    for sweep in 0..n_sweeps {
        for _ in 0..target.n_sites() {
            mcmc_kernel_step(target, 1.0, &mut x, &mut r);
        }
        if sweep >= burn_in && (sweep - burn_in) % thin == 0 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Hex SHA-256 of a resolved configuration text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableReport {
    pub rows: usize,
    pub cols: usize,
    pub n_samples: usize,
    pub hist_weighted: Histogram,
    pub hist_unweighted: Histogram,
    pub g_conn: Vec<f64>,
    pub g_conn_err: Vec<f64>,
    pub abs_magnetization_mean: f64,
    pub abs_magnetization_err: f64,
    /// `(t, ess)` per step; empty for MCMC sample sets.
    pub ess_trace: Vec<(f64, f64)>,
    pub final_ess: f64,
    pub log_z: Option<f64>,
    pub log_z_err: Option<f64>,
    pub meta: ReportMeta,
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn weighted_mean(states: &[LatticeState], a: &[f64], f: impl Fn(&LatticeState) -> f64) -> Result<f64> {
    let w = normalized_weights(a)?;
    Ok(states.iter().zip(&w).map(|(x, w)| w * f(x)).sum())
}

impl ObservableReport {
    /// Report over a weighted sample set. `log_z` comes with a bootstrap error
    /// when `log_z_base` (the part of `log Z` not carried by the weights) is given.
    pub fn from_samples(
        states: &[LatticeState],
        log_weights: &[f64],
        log_z_base: Option<f64>,
        ess_trace: Vec<(f64, f64)>,
        meta: ReportMeta,
    ) -> Result<Self> {
        check_samples(states, log_weights)?;
        let (rows, cols) = (states[0].rows(), states[0].cols());
        let max_r = rows.min(cols) / 2;
        let hist_weighted = magnetization_histogram(states, Some(log_weights))?;
        let hist_unweighted = magnetization_histogram(states, None)?;
        let g_conn = connected_correlation(states, Some(log_weights), max_r)?;
        let m = states.len();
        let log_mean = |a: &[f64]| crate::sampler::log_mean_exp(a);
        let log_z = match log_z_base {
            Some(b) => Some(b + log_mean(log_weights)?),
            None => None,
        };
        let abs_magnetization_mean = weighted_mean(states, log_weights, |x| magnetization(x).abs())?;

        let mut boot_g: Vec<Vec<f64>> = vec![Vec::new(); max_r + 1];
        let mut boot_z = Vec::new();
        let mut boot_m = Vec::new();
        let mut r = rng::stream(meta.seed, domain::BOOTSTRAP, 0);
        let mut xs = Vec::with_capacity(m);
        let mut aa = Vec::with_capacity(m);
        for _ in 0..BOOTSTRAP_RESAMPLES {
            xs.clear();
            aa.clear();
            for _ in 0..m {
                let k = r.gen_range(0..m);
                xs.push(states[k].clone());
                aa.push(log_weights[k]);
            }
            if let Ok(g) = connected_correlation(&xs, Some(&aa), max_r) {
                for (b, v) in boot_g.iter_mut().zip(g) {
                    b.push(v);
                }
            }
            if let Ok(v) = weighted_mean(&xs, &aa, |x| magnetization(x).abs()) {
                boot_m.push(v);
            }
            if log_z.is_some() {
                if let Ok(v) = log_mean(&aa) {
                    boot_z.push(v);
                }
            }
        }
        let err = |v: &[f64]| if v.len() >= 2 { std_dev(v) } else { f64::NAN };
        Ok(Self {
            rows,
            cols,
            n_samples: m,
            hist_weighted,
            hist_unweighted,
            g_conn,
            g_conn_err: boot_g.iter().map(|b| err(b)).collect(),
            abs_magnetization_mean,
            abs_magnetization_err: err(&boot_m),
            final_ess: ess(log_weights)?,
            ess_trace,
            log_z_err: log_z.map(|_| err(&boot_z)),
            log_z,
            meta,
        })
    }

    /// Report for a sampler run: quarantined walkers carry zero weight.
    pub fn from_ensemble(ens: &WalkerEnsemble, diag: Option<&Diagnostics>, meta: ReportMeta) -> Result<Self> {
        let a = ens.effective_log_weights();
        let base = ens.log_z0.map(|z0| z0 + ens.log_norm_offset);
        let trace = diag.map(|d| d.ess_trace()).unwrap_or_default();
        Self::from_samples(&ens.states, &a, base, trace, meta)
    }

    /// Equal-weight report, e.g. for Glauber samples.
    pub fn from_mcmc(states: &[LatticeState], meta: ReportMeta) -> Result<Self> {
        Self::from_samples(states, &uniform_log_weights(states.len()), None, Vec::new(), meta)
    }

    /// `report.json`, `magnetization_hist.csv`, `g_conn.csv` and `ess_trace.csv` in `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        let mut f = std::fs::File::create(dir.join("magnetization_hist.csv"))?;
        writeln!(f, "magnetization,weighted,unweighted")?;
        for ((v, w), u) in self.hist_weighted.values.iter().zip(&self.hist_weighted.mass).zip(&self.hist_unweighted.mass) {
            writeln!(f, "{v},{w},{u}")?;
        }
        let mut f = std::fs::File::create(dir.join("g_conn.csv"))?;
        writeln!(f, "r,g_conn,stderr")?;
        for (r, (g, e)) in self.g_conn.iter().zip(&self.g_conn_err).enumerate() {
            writeln!(f, "{r},{g},{e}")?;
        }
        let mut f = std::fs::File::create(dir.join("ess_trace.csv"))?;
        writeln!(f, "t,ess")?;
        for (t, e) in &self.ess_trace {
            writeln!(f, "{t},{e}")?;
        }
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let p = dir.as_ref().join("report.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::from(e).context(format!("reading {}", p.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    /// Total variation between the weighted magnetization histograms.
    pub tv: f64,
    pub max_abs_g_conn_diff: f64,
    /// `final_ess(a) / final_ess(b)`.
    pub ess_ratio: f64,
}

pub fn compare(a: &ObservableReport, b: &ObservableReport) -> Result<Comparison> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::GeometryMismatch(format!(
            "{}x{} report vs {}x{} report",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let tv = a.hist_weighted.total_variation(&b.hist_weighted)?;
    let max_abs_g_conn_diff = a.g_conn.iter().zip(&b.g_conn).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(Comparison {
        label_a: a.meta.label.clone(),
        label_b: b.meta.label.clone(),
        tv,
        max_abs_g_conn_diff,
        ess_ratio: a.final_ess / b.final_ess,
    })
}

impl Comparison {
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(self)?)?;
        let mut f = std::fs::File::create(dir.join("comparison.csv"))?;
        writeln!(f, "label_a,label_b,tv,max_abs_g_conn_diff,ess_ratio")?;
        writeln!(
            f,
            "{},{},{},{},{}",
            self.label_a, self.label_b, self.tv, self.max_abs_g_conn_diff, self.ess_ratio
        )?;
        Ok(())
    }

    pub fn table(&self) -> String {
        format!(
            "{:<28} {:>14}\n{:<28} {:>14.6}\n{:<28} {:>14.6}\n{:<28} {:>14.6}\n",
            "comparison",
            format!("{} vs {}", self.label_a, self.label_b),
            "magnetization TV",
            self.tv,
            "max |dG_conn|",
            self.max_abs_g_conn_diff,
            "ESS ratio",
            self.ess_ratio
        )
    }
}
