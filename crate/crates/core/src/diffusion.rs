//! Forward perturbation and reverse-step kernels for coordinates (Gaussian)
//! and atom types (categorical). All kernels take their randomness as
//! explicit arguments; [`NoiseSource`] supplies it during sampling.

use rand::Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::geom::{Rot3, Vec3};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionState {
    pub x: Vec<Vec3>,
    /// One-hot types stored as class indices.
    pub v: Vec<usize>,
    pub t: usize,
}

/// Randomness consumed by the sampler, one call per kind per step.
pub trait NoiseSource {
    /// `n` independent standard-normal 3-vectors.
    fn normal3(&mut self, n: usize) -> Vec<Vec3>;
    /// Row-major `n×k` matrix of Gumbel(0,1) draws.
    fn gumbel(&mut self, n: usize, k: usize) -> Vec<f64>;
}

pub struct RngNoise<R>(pub R);

impl<R: Rng> NoiseSource for RngNoise<R> {
    fn normal3(&mut self, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| std::array::from_fn(|_| self.0.sample(StandardNormal))).collect()
    }

    fn gumbel(&mut self, n: usize, k: usize) -> Vec<f64> {
        let g = Gumbel::new(0.0, 1.0).unwrap();
        (0..n * k).map(|_| g.sample(&mut self.0)).collect()
    }
}

/// Rotates every coordinate draw of `inner`; Gumbel draws pass through.
/// Replaying a chain through this source reproduces it in a rotated frame.
pub struct RotatedNoise<S> {
    pub inner: S,
    pub rotation: Rot3,
}

impl<S: NoiseSource> NoiseSource for RotatedNoise<S> {
    fn normal3(&mut self, n: usize) -> Vec<Vec3> {
        self.inner.normal3(n).into_iter().map(|v| crate::geom::rotate(&self.rotation, v)).collect()
    }

    fn gumbel(&mut self, n: usize, k: usize) -> Vec<f64> {
        self.inner.gumbel(n, k)
    }
}

/// How `v_{t-1}` is decoded from the categorical posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeSampling {
    #[default]
    Argmax,
    Stochastic,
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`
pub fn perturb_coords(x0: &[Vec3], sched: &NoiseSchedule, t: usize, noise: &[Vec3]) -> Vec<Vec3> {
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(noise).map(|(x, e)| std::array::from_fn(|d| a * x[d] + b * e[d])).collect()
}

/// First index of the maximum; NaN never wins.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] || row[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Gumbel-max draw from `c = abar_t v0 + (1 - abar_t)/K`.
pub fn perturb_types(v0: &[usize], k: usize, sched: &NoiseSchedule, t: usize, gumbel: &[f64]) -> Vec<usize> {
    let ab = sched.alpha_bar(t);
    let uniform = (1.0 - ab) / k as f64;
    v0.iter()
        .enumerate()
        .map(|(i, &cls)| {
            let scores: Vec<f64> = (0..k)
                .map(|c| {
                    let onehot = if c == cls { 1.0 } else { 0.0 };
                    gumbel[i * k + c] + (ab * onehot + uniform).ln()
                })
                .collect();
            argmax(&scores)
        })
        .collect()
}

/// Normalised `(alpha_t v_t + (1-alpha_t)/K) ⊙ (abar_{t-1} v0_hat + (1-abar_{t-1})/K)`
/// for one atom.
pub fn categorical_posterior(v_t: usize, v0_hat: &[f64], sched: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    let k = v0_hat.len();
    let a = sched.alpha(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let mut c: Vec<f64> = (0..k)
        .map(|j| {
            let vt = if j == v_t { 1.0 } else { 0.0 };
            (a * vt + (1.0 - a) / k as f64) * (ab_prev * v0_hat[j] + (1.0 - ab_prev) / k as f64)
        })
        .collect();
    let z: f64 = c.iter().sum();
    if !(z > 0.0) {
        return Err(Error::DegeneratePosterior);
    }
    for x in &mut c {
        *x /= z;
    }
    Ok(c)
}

/// Row-wise softmax of logits.
pub fn softmax(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        for x in row.iter_mut() {
            *x /= z;
        }
    }
    out
}

/// Picks `v_{t-1}` for every atom from posterior probabilities.
pub fn decode_types(probs: &[Vec<f64>], mode: TypeSampling, gumbel: &[f64]) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .map(|(i, p)| match mode {
            TypeSampling::Argmax => argmax(p),
            TypeSampling::Stochastic => {
                let k = p.len();
                let s: Vec<f64> = (0..k).map(|c| gumbel[i * k + c] + p[c].ln()).collect();
                argmax(&s)
            }
        })
        .collect()
}

/// `x_{t-1} = c0 x0_hat + ct x_t - disp + sqrt(beta_tilde) noise`
pub fn reverse_coord_step(
    x_t: &[Vec3],
    x0_hat: &[Vec3],
    sched: &NoiseSchedule,
    t: usize,
    noise: &[Vec3],
    disp: &[Vec3],
) -> Result<Vec<Vec3>> {
    let c = sched.posterior_coeffs(t)?;
    let sd = c.beta_tilde.sqrt();
    Ok((0..x_t.len())
        .map(|i| std::array::from_fn(|d| c.c0 * x0_hat[i][d] + c.ct * x_t[i][d] - disp[i][d] + sd * noise[i][d]))
        .collect())
}

/// Posterior mean `c0 x0_hat + ct x_t` without noise or guidance.
pub fn posterior_mean(x_t: &[Vec3], x0_hat: &[Vec3], sched: &NoiseSchedule, t: usize) -> Result<Vec<Vec3>> {
    let c = sched.posterior_coeffs(t)?;
    Ok((0..x_t.len()).map(|i| std::array::from_fn(|d| c.c0 * x0_hat[i][d] + c.ct * x_t[i][d])).collect())
}

/// Score of the noised marginal implied by a clean-sample prediction:
/// `-x_t/(1-abar) + sqrt(abar) x0_hat/(1-abar)`.
pub fn score_from_x0(x_t: f64, x0_hat: f64, alpha_bar: f64) -> f64 {
    (alpha_bar.sqrt() * x0_hat - x_t) / (1.0 - alpha_bar)
}

/// `x_T ~ N(0, I)`, `v_T` uniform over the `k` classes via Gumbel-max.
pub fn init_state(n: usize, k: usize, steps: usize, noise: &mut dyn NoiseSource) -> DiffusionState {
    let x = noise.normal3(n);
    let g = noise.gumbel(n, k);
    let v = (0..n).map(|i| argmax(&g[i * k..(i + 1) * k])).collect();
    DiffusionState { x, v, t: steps }
}
