use std::path::{Path, PathBuf};

use leaps_core::leqnet::{Architecture, NetSpec};
use leaps_core::sampler::SamplerConfig;
use leaps_core::targets::{AnnealedTarget, BetaSchedule, Model};
use leaps_core::trainer::TrainConfig;
use leaps_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ising,
    Potts,
    Tabular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub model: ModelKind,
    pub rows: usize,
    /// Defaults to `rows`.
    pub cols: Option<usize>,
    #[serde(default = "one")]
    pub coupling: f64,
    #[serde(default)]
    pub field: f64,
    /// Potts token count.
    #[serde(default = "four")]
    pub q: usize,
    /// Tabular token count and energies by state index.
    pub n_tokens: Option<usize>,
    pub energies: Option<Vec<f64>>,
    /// Final inverse temperature of the linear schedule `beta_t = t * beta`.
    pub beta: Option<f64>,
    /// Explicit piecewise-linear schedule; replaces `beta`.
    pub beta_schedule: Option<BetaSchedule>,
}

fn one() -> f64 {
    1.0
}

fn four() -> usize {
    4
}

impl TargetSection {
    pub fn build(&self) -> Result<AnnealedTarget> {
        let schedule = match (&self.beta, &self.beta_schedule) {
            (Some(b), None) => BetaSchedule::linear(*b),
            (None, Some(s)) => s.clone(),
            (None, None) => return Err(Error::Config("target needs `beta` or `beta_schedule`".into())),
            (Some(_), Some(_)) => return Err(Error::Config("give only one of `beta` and `beta_schedule`".into())),
        };
        let cols = self.cols.unwrap_or(self.rows);
        let (n_tokens, model) = match self.model {
            ModelKind::Ising => (2, Model::Ising { coupling: self.coupling, field: self.field }),
            ModelKind::Potts => (self.q, Model::Potts { coupling: self.coupling, q: self.q }),
            ModelKind::Tabular => {
                let energies = self
                    .energies
                    .clone()
                    .ok_or_else(|| Error::Config("tabular target needs `energies`".into()))?;
                (self.n_tokens.unwrap_or(2), Model::Tabular { energies })
            }
        };
        AnnealedTarget::scheduled(self.rows, cols, n_tokens, model, schedule)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Glauber sweeps for the ground-truth comparison written by `sample`; 0 skips it.
    pub glauber_sweeps: usize,
    pub glauber_burn_in: usize,
    pub glauber_thin: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            glauber_sweeps: 0,
            glauber_burn_in: 1000,
            glauber_thin: 1,
        }
    }
}

fn default_net() -> Architecture {
    Architecture::Lec { kernel_sizes: vec![3, 3, 3], channels: 8, head_dim: 8 }
}

fn default_output() -> PathBuf {
    PathBuf::from("leaps-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 or absent uses every core.
    pub threads: Option<usize>,
    pub target: TargetSection,
    #[serde(default = "default_net")]
    pub net: Architecture,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.target.build()?;
        self.sampler.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn net_spec(&self, target: &AnnealedTarget) -> NetSpec {
        NetSpec {
            rows: target.rows(),
            cols: target.cols(),
            n_tokens: target.n_tokens(),
            arch: self.net.clone(),
        }
    }

    /// The config with every default filled in.
    pub fn resolved(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<String> {
        std::fs::create_dir_all(dir)?;
        let text = self.resolved()?;
        std::fs::write(dir.join("resolved_config.toml"), &text)?;
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[target]\nmodel = \"ising\"\nrows = 3\nbeta = 0.5\n";

    #[test]
    fn defaults_fill_in_and_round_trip() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sampler, SamplerConfig::default());
        assert_eq!(cfg.net, default_net());
        let back: RunConfig = toml::from_str(&cfg.resolved().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["bogus = 1\n", "[sampler]\nn_stepz = 3\n", "[net]\narch = \"lec\"\nkernel_sizes = [3]\nchannels = 2\nhead_dim = 2\nwidth = 4\n"] {
            let text = format!("{extra}{MINIMAL}");
            assert!(toml::from_str::<RunConfig>(&text).is_err(), "{extra}");
        }
    }

    #[test]
    fn schedules_accept_numbers_and_knots() {
        let text = format!("{MINIMAL}[sampler]\neps = [[0.0, 0.0], [1.0, 5.0]]\nn_steps = 10\n");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.sampler.eps, BetaSchedule::linear(5.0));
        let text = format!("{MINIMAL}[sampler]\neps = 5.0\nn_steps = 2\n");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
