use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `log (1/n) sum exp(a_i)`; `-inf` entries are zero weights.
pub fn log_mean_exp(a: &[f64]) -> Result<f64> {
    let max = checked_max(a)?;
    let s: f64 = a.iter().map(|v| (v - max).exp()).sum();
    Ok(max + (s / a.len() as f64).ln())
}

fn checked_max(a: &[f64]) -> Result<f64> {
    if let Some(index) = a.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite { index });
    }
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllWeightsInfinite);
    }
    Ok(max)
}

/// Normalized effective sample size `(mean e^A)^2 / mean e^{2A}` in `(0, 1]`,
/// evaluated after shifting by `max A`.
pub fn ess(a: &[f64]) -> Result<f64> {
    let max = checked_max(a)?;
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in a {
        let w = (v - max).exp();
        s1 += w;
        s2 += w * w;
    }
    Ok(s1 * s1 / (a.len() as f64 * s2))
}

/// Self-normalized weights `exp(a_i) / sum_j exp(a_j)`.
pub fn normalized_weights(a: &[f64]) -> Result<Vec<f64>> {
    let max = checked_max(a)?;
    let w: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    #[default]
    Systematic,
    Multinomial,
}

/// Ancestor indices for `a.len()` offspring drawn proportionally to `exp(a)`.
pub fn resample_indices<R: Rng + ?Sized>(a: &[f64], scheme: Resampling, rng: &mut R) -> Result<Vec<usize>> {
    let w = normalized_weights(a)?;
    let m = w.len();
    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    for v in &w {
        acc += v;
        cdf.push(acc);
    }
    // Guard the last bucket against rounding.
    let last = w.iter().rposition(|&v| v > 0.0).unwrap();
    for c in &mut cdf[last..] {
        *c = f64::INFINITY;
    }
    let pick = |u: f64| cdf.partition_point(|&c| c <= u).min(last);
    Ok(match scheme {
        Resampling::Systematic => {
            let u0: f64 = rng.gen::<f64>() / m as f64;
            (0..m).map(|k| pick(u0 + k as f64 / m as f64)).collect()
        }
        Resampling::Multinomial => (0..m).map(|_| pick(rng.gen::<f64>())).collect(),
    })
}
