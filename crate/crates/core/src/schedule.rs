//! Discrete variance schedule and the per-step posterior coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub steepness: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { steps: 1000, beta_min: 1e-7, beta_max: 2e-2, steepness: 6.0 }
    }
}

impl ScheduleConfig {
    /// Short schedule for desk-scale runs; `beta_max` is raised so that the
    /// final signal level is comparable to the 1000-step default.
    pub fn desk(steps: usize) -> Self {
        ScheduleConfig { steps, beta_min: 1e-7, beta_max: (20.0 / steps as f64).min(0.5), steepness: 6.0 }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::sigmoid(self.steps, self.beta_min, self.beta_max, self.steepness)
    }
}

/// Precomputed `beta_t`, `alpha_t = 1 - beta_t` and `alpha_bar_t` for
/// `t = 0..=T`, with `alpha_bar_0 = 1` and index 0 of `beta`/`alpha` unused.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorCoeffs {
    /// Weight on the predicted clean sample.
    pub c0: f64,
    /// Weight on the current noisy sample.
    pub ct: f64,
    pub beta_tilde: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl NoiseSchedule {
    /// `beta_t = beta_min + (beta_max - beta_min) * logistic(steepness * (2t/T - 1))`.
    pub fn sigmoid(steps: usize, beta_min: f64, beta_max: f64, steepness: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidRange("schedule needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        if !(steepness > 0.0) {
            return Err(Error::InvalidRange(format!("steepness must be positive, got {steepness}")));
        }
        let betas = (1..=steps).map(|t| {
            let u = steepness * (2.0 * t as f64 / steps as f64 - 1.0);
            beta_min + (beta_max - beta_min) * logistic(u)
        });
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut beta = vec![0.0];
        let mut alpha = vec![1.0];
        let mut alpha_bar = vec![1.0];
        for b in betas {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidRange(format!("beta must lie in (0,1), got {b}")));
            }
            let a = 1.0 - b;
            let prev = *alpha_bar.last().unwrap();
            beta.push(b);
            alpha.push(a);
            alpha_bar.push(a * prev);
        }
        if beta.len() == 1 {
            return Err(Error::InvalidRange("empty schedule".into()));
        }
        Ok(NoiseSchedule { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// Valid for `t = 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }

    /// Coefficients of `q(x_{t-1} | x_t, x_0)`: mean `c0 * x0 + ct * x_t`,
    /// variance `beta_tilde`.
    pub fn posterior_coeffs(&self, t: usize) -> Result<PosteriorCoeffs> {
        self.check_step(t)?;
        let b = self.beta[t];
        let a = self.alpha[t];
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let denom = 1.0 - ab;
        Ok(PosteriorCoeffs {
            c0: ab_prev.sqrt() * b / denom,
            ct: a.sqrt() * (1.0 - ab_prev) / denom,
            beta_tilde: (1.0 - ab_prev) / denom * b,
        })
    }

    /// The `beta_t / sqrt(alpha_t)` factor multiplying the guidance gradient.
    pub fn guidance_factor(&self, t: usize) -> f64 {
        self.beta[t] / self.alpha[t].sqrt()
    }
}
