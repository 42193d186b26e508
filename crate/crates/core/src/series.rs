//! Per-round performance curves and their distance to a limit.
//!
//! Index `t` is the state time: `mean[t]` estimates the expected profit of
//! the request processed in state `X(t)`, and `running[T - 1]` is the
//! average over the first `T` rounds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::{fit_exponential_above, fit_inverse, ExpFit, InverseFit};

/// What the error curves measure against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// A known limit (exact stationary value or closed form).
    Value(f64),
    /// Mean of the final `fraction` of the per-round means.
    TailAverage { fraction: f64 },
}

impl Default for Target {
    fn default() -> Self {
        Target::TailAverage { fraction: 1.0 }
    }
}

impl Target {
    pub fn resolve(&self, mean: &[f64]) -> Result<f64> {
        match *self {
            Target::Value(v) if v.is_finite() => Ok(v),
            Target::Value(v) => Err(Error::InvalidArgument(format!("target {v} is not finite"))),
            Target::TailAverage { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "tail fraction must be in (0, 1], got {fraction}"
                    )));
                }
                if mean.is_empty() {
                    return Err(Error::InvalidArgument("empty series".into()));
                }
                let k = ((mean.len() as f64 * fraction).ceil() as usize).clamp(1, mean.len());
                let tail = &mean[mean.len() - k..];
                Ok(tail.iter().sum::<f64>() / k as f64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorSeries {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub running: Vec<f64>,
    pub runs: usize,
    /// Standard error of the full-horizon average across runs.
    pub objective_se: f64,
    pub target: f64,
    pub delta: Vec<f64>,
    pub delta_hat: Vec<f64>,
    pub exp_fit: Option<ExpFit>,
    pub inverse_fit: Option<InverseFit>,
}

impl ErrorSeries {
    pub fn new(mean: Vec<f64>, stderr: Vec<f64>, runs: usize, target: Target) -> Result<ErrorSeries> {
        if mean.is_empty() {
            return Err(Error::InvalidArgument("empty series".into()));
        }
        if stderr.len() != mean.len() {
            return Err(Error::InvalidArgument("mean and stderr differ in length".into()));
        }
        let running = running_average(&mean);
        let mut series = ErrorSeries {
            mean,
            stderr,
            running,
            runs,
            objective_se: 0.0,
            target: 0.0,
            delta: Vec::new(),
            delta_hat: Vec::new(),
            exp_fit: None,
            inverse_fit: None,
        };
        series.retarget(target)?;
        Ok(series)
    }

    /// Recomputes the error curves against a new target.
    pub fn retarget(&mut self, target: Target) -> Result<()> {
        let (delta, delta_hat) = error_curves(self, target)?;
        self.target = target.resolve(&self.mean)?;
        self.delta = delta;
        self.delta_hat = delta_hat;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Running average after all rounds.
    pub fn objective(&self) -> f64 {
        *self.running.last().expect("series is non-empty")
    }


    /// Fits `Δ(t)` exponentially (ignoring points at or below `floor`) and
    /// `Δ̂(T)` as `a/T`. Failed fits are left as `None`.
    pub fn fit(&mut self, floor: f64) {
        let ts: Vec<f64> = (0..self.len()).map(|t| t as f64).collect();
        self.exp_fit = fit_exponential_above(&ts, &self.delta, floor).ok();
        let big_t: Vec<f64> = (1..=self.len()).map(|t| t as f64).collect();
        self.inverse_fit = fit_inverse(&big_t, &self.delta_hat).ok();
    }
}

pub fn running_average(mean: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    mean.iter()
        .enumerate()
        .map(|(i, w)| {
            acc += w;
            acc / (i + 1) as f64
        })
        .collect()
}

/// `(Δ(t), Δ̂(T))` of a series against `target`.
pub fn error_curves(series: &ErrorSeries, target: Target) -> Result<(Vec<f64>, Vec<f64>)> {
    if series.mean.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let w = target.resolve(&series.mean)?;
    let delta = series.mean.iter().map(|x| (x - w).abs()).collect();
    let delta_hat = series.running.iter().map(|x| (x - w).abs()).collect();
    Ok((delta, delta_hat))
}
