use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Piecewise-linear inverse temperature `beta_t` through `(t, beta)` knots
/// spanning `[0, 1]`. Serialized as its knot list; a bare number reads as a
/// constant schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "Vec<(f64, f64)>")]
pub struct BetaSchedule {
    knots: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScheduleRepr {
    Constant(f64),
    Knots(Vec<(f64, f64)>),
}

impl TryFrom<ScheduleRepr> for BetaSchedule {
    type Error = Error;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        match r {
            ScheduleRepr::Constant(b) if b.is_finite() => Ok(Self::constant(b)),
            ScheduleRepr::Constant(b) => Err(Error::Config(format!("schedule value {b} is not finite"))),
            ScheduleRepr::Knots(k) => Self::piecewise(k),
        }
    }
}

impl From<BetaSchedule> for Vec<(f64, f64)> {
    fn from(s: BetaSchedule) -> Self {
        s.knots
    }
}

impl BetaSchedule {
    /// `beta_t = t * beta_1`, so `rho_0` is uniform.
    pub fn linear(beta_1: f64) -> Self {
        Self {
            knots: vec![(0.0, 0.0), (1.0, beta_1)],
        }
    }

    pub fn between(beta_0: f64, beta_1: f64) -> Self {
        Self {
            knots: vec![(0.0, beta_0), (1.0, beta_1)],
        }
    }

    pub fn constant(beta: f64) -> Self {
        Self::between(beta, beta)
    }

    pub fn piecewise(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("beta schedule needs at least two knots".into()));
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(Error::Config("beta schedule must span t = 0 to t = 1".into()));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Config("beta schedule times must increase strictly".into()));
        }
        if knots.iter().any(|k| !k.1.is_finite()) {
            return Err(Error::Config("beta schedule values must be finite".into()));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.knots.len();
        self.knots[1..n - 1]
            .partition_point(|k| k.0 <= t)
            .min(n - 2)
    }

    pub fn beta(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let (t0, b0) = self.knots[k];
        let (t1, b1) = self.knots[k + 1];
        b0 + (b1 - b0) * (t - t0) / (t1 - t0)
    }

    /// Right derivative of `beta_t` (the slope of the segment starting at `t`).
    pub fn dbeta(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let (t0, b0) = self.knots[k];
        let (t1, b1) = self.knots[k + 1];
        (b1 - b0) / (t1 - t0)
    }
}
