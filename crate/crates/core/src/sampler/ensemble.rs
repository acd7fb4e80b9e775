use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::weights::{ess, log_mean_exp, normalized_weights};
use crate::targets::LatticeState;
use crate::{Error, Result};

/// Walkers `(X^m, A^m)` at time `t`, plus the bookkeeping that keeps `log Z`
/// unbiased across resampling: `log Z_t ≈ log Z_0 + offset + log mean exp(A)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkerEnsemble {
    pub states: Vec<LatticeState>,
    pub log_weights: Vec<f64>,
    pub t: f64,
    /// Walkers whose weight became non-finite; they carry zero weight.
    pub quarantined: Vec<bool>,
    /// `(t, ess_before)` for every resampling event.
    pub resample_log: Vec<(f64, f64)>,
    pub log_norm_offset: f64,
    pub log_z0: Option<f64>,
}

impl WalkerEnsemble {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Log-weights with quarantined walkers at `-inf`.
    pub fn effective_log_weights(&self) -> Vec<f64> {
        self.log_weights
            .iter()
            .zip(&self.quarantined)
            .map(|(&a, &q)| if q { f64::NEG_INFINITY } else { a })
            .collect()
    }

    pub fn ess(&self) -> Result<f64> {
        ess(&self.effective_log_weights())
    }

    pub fn n_quarantined(&self) -> usize {
        self.quarantined.iter().filter(|&&q| q).count()
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalized_weights(&self.effective_log_weights())
    }

    /// Self-normalized estimate of `E_{rho_t}[f]`.
    pub fn weighted_mean(&self, f: impl Fn(&LatticeState) -> f64) -> Result<f64> {
        let w = self.normalized_weights()?;
        Ok(self.states.iter().zip(&w).map(|(x, w)| w * f(x)).sum())
    }

    /// `log Z_t - log Z_0` estimate.
    pub fn log_z_ratio(&self) -> Result<f64> {
        Ok(self.log_norm_offset + log_mean_exp(&self.effective_log_weights())?)
    }

    /// `log Z_t`, when `log Z_0` is known.
    pub fn log_z(&self) -> Result<f64> {
        let z0 = self
            .log_z0
            .ok_or_else(|| Error::Domain("log Z_0 is unknown for this target".into()))?;
        Ok(z0 + self.log_z_ratio()?)
    }

    /// Binary dump: `LEAPSENS`, `u16` version, `u64` header length, JSON header,
    /// then one `u8` token per site per walker and one `f64` log-weight per walker
    /// (quarantined walkers stored as `-inf`), little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let first = self
            .states
            .first()
            .ok_or_else(|| Error::Shape("cannot dump an empty ensemble".into()))?;
        let header = DumpHeader {
            rows: first.rows(),
            cols: first.cols(),
            n_tokens: first.n_tokens(),
            n_walkers: self.len(),
            t: self.t,
            log_norm_offset: self.log_norm_offset,
            log_z0: self.log_z0,
            resample_log: self.resample_log.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for x in &self.states {
            w.write_all(x.tokens())?;
        }
        for a in self.effective_log_weights() {
            w.write_all(&a.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let fail = |what: &str| Error::Format(format!("ensemble dump truncated in {what}"));
        if bytes.len() < DUMP_MAGIC.len() + 10 || &bytes[..DUMP_MAGIC.len()] != DUMP_MAGIC {
            return Err(Error::Format("not an ensemble dump".into()));
        }
        let mut at = DUMP_MAGIC.len();
        let version = u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap());
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("ensemble dump version {version}, expected {DUMP_VERSION}")));
        }
        at += 2;
        let len = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
        at += 8;
        let json = bytes.get(at..at + len).ok_or_else(|| fail("header"))?;
        let h: DumpHeader = serde_json::from_slice(json).map_err(|e| Error::Format(format!("bad ensemble header: {e}")))?;
        at += len;
        let d = h.rows * h.cols;
        let mut states = Vec::with_capacity(h.n_walkers);
        for _ in 0..h.n_walkers {
            let tok = bytes.get(at..at + d).ok_or_else(|| fail("states"))?;
            states.push(LatticeState::new(h.rows, h.cols, h.n_tokens, tok.to_vec())?);
            at += d;
        }
        let mut log_weights = Vec::with_capacity(h.n_walkers);
        for _ in 0..h.n_walkers {
            let b = bytes.get(at..at + 8).ok_or_else(|| fail("weights"))?;
            log_weights.push(f64::from_le_bytes(b.try_into().unwrap()));
            at += 8;
        }
        if at != bytes.len() {
            return Err(Error::Format("trailing bytes in ensemble dump".into()));
        }
        let quarantined = log_weights.iter().map(|a| !a.is_finite()).collect();
        Ok(Self {
            states,
            log_weights,
            t: h.t,
            quarantined,
            resample_log: h.resample_log,
            log_norm_offset: h.log_norm_offset,
            log_z0: h.log_z0,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

const DUMP_MAGIC: &[u8; 8] = b"LEAPSENS";
const DUMP_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    rows: usize,
    cols: usize,
    n_tokens: usize,
    n_walkers: usize,
    t: f64,
    log_norm_offset: f64,
    log_z0: Option<f64>,
    resample_log: Vec<(f64, f64)>,
}
