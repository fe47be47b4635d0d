//! Closed-form checks of the guidance identities on 1D Gaussian worlds.
//!
//! Data `x0 ~ N(μ0, σ0²)` is noised by the production schedule, so the
//! marginal `P(x_t)`, the posterior mean `E[x0|x_t]` and the conditional
//! `P(x_t | y = c)` under a Gaussian likelihood around the linear property
//! `y = a·x_t + b` are all Gaussian. Each check feeds these into the
//! production kernels and reports the sup-norm deviation on a grid.

use serde::Serialize;

use crate::diffusion;
use crate::error::Result;
use crate::guidance::{self, LossKind};
use crate::rng::stream_rng;
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use rand::Rng;

pub const TOLERANCE: f64 = 1e-10;
pub const CFG_TOLERANCE: f64 = 1e-12;
const GRID: usize = 101;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyGaussianWorld {
    pub mu0: f64,
    pub sigma0: f64,
    pub a: f64,
    pub b: f64,
    /// Standard deviation of the property likelihood; absorbed into `s`.
    pub sigma_y: f64,
}

impl ToyGaussianWorld {
    /// Mean and variance of `P(x_t)`.
    fn marginal(&self, sched: &NoiseSchedule, t: usize) -> (f64, f64) {
        let ab = sched.alpha_bar(t);
        (ab.sqrt() * self.mu0, ab * self.sigma0 * self.sigma0 + (1.0 - ab))
    }

    pub fn marginal_score(&self, sched: &NoiseSchedule, t: usize, x: f64) -> f64 {
        let (m, v) = self.marginal(sched, t);
        -(x - m) / v
    }

    /// `E[x0 | x_t]`, the optimal x0 prediction.
    pub fn x0_hat(&self, sched: &NoiseSchedule, t: usize, x: f64) -> f64 {
        let ab = sched.alpha_bar(t);
        let (m, v) = self.marginal(sched, t);
        self.mu0 + ab.sqrt() * self.sigma0 * self.sigma0 / v * (x - m)
    }

    /// Score of `P(x_t | y = c)` with the likelihood tempered by `s`.
    pub fn conditional_score(&self, sched: &NoiseSchedule, t: usize, c: f64, s: f64, x: f64) -> f64 {
        let (m, v) = self.marginal(sched, t);
        let lik_prec = s * self.a * self.a / (self.sigma_y * self.sigma_y);
        let prec = 1.0 / v + lik_prec;
        let mean = (m / v + s * self.a * (c - self.b) / (self.sigma_y * self.sigma_y)) / prec;
        -prec * (x - mean)
    }

    fn grid(&self, sched: &NoiseSchedule, t: usize) -> impl Iterator<Item = f64> {
        let (m, v) = self.marginal(sched, t);
        let half = 4.0 * v.sqrt();
        (0..GRID).map(move |i| m - half + 2.0 * half * i as f64 / (GRID - 1) as f64)
    }
}

fn embed(x: f64) -> [f64; 3] {
    [x, 0.0, 0.0]
}

/// Guided score `∇log P(x_t) - S·∇(y - c)²` with `S = s/(2σ_y²)`, using
/// the x0-parameterised score and the production energy loss, against the
/// analytic conditional score. Also checks that subtracting the matching
/// guidance displacement from the production posterior mean equals the
/// DDPM update driven by the guided score.
pub fn check_conditional_score_identity(world: &ToyGaussianWorld, sched: &NoiseSchedule, t: usize, c: f64, s: f64) -> Result<f64> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let big_s = s / (2.0 * world.sigma_y * world.sigma_y);
    let factor = sched.guidance_factor(t);
    let mut worst: f64 = 0.0;
    for x in world.grid(sched, t) {
        let x0 = world.x0_hat(sched, t, x);
        let prior = diffusion::score_from_x0(x, x0, ab);
        let (_, dl_dy) = guidance::energy_loss(world.a * x + world.b, c, LossKind::Gaussian);
        let grad = dl_dy * world.a;
        let guided = prior - big_s * grad;
        worst = worst.max((guided - world.conditional_score(sched, t, c, s, x)).abs());

        let mean = diffusion::posterior_mean(&[embed(x)], &[embed(x0)], sched, t)?[0][0];
        let disp = factor * big_s * grad;
        let ddpm = (x + sched.beta(t) * guided) / sched.alpha(t).sqrt();
        worst = worst.max((mean - disp - ddpm).abs());
    }
    Ok(worst)
}

/// `(1-s)·∇log P(x_t) + s·∇log P(x_t|y)` through the production combiner
/// against `∇log P(x_t) + s·(∇log P(x_t|y) - ∇log P(x_t))`.
pub fn check_cfg_identity(world: &ToyGaussianWorld, sched: &NoiseSchedule, t: usize, c: f64, s: f64) -> Result<f64> {
    sched.check_step(t)?;
    let mut worst: f64 = 0.0;
    for x in world.grid(sched, t) {
        let u = world.marginal_score(sched, t, x);
        let k = world.conditional_score(sched, t, c, 1.0, x);
        let lhs = guidance::cfg_combine(&[embed(u)], &[embed(k)], s)[0][0];
        let rhs = u + s * (k - u);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// `-x_t/(1-ᾱ) + √ᾱ·x̂0/(1-ᾱ)` with the optimal `x̂0` against the true
/// marginal score.
pub fn check_x0_parameterization(world: &ToyGaussianWorld, sched: &NoiseSchedule, t: usize) -> Result<f64> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let mut worst: f64 = 0.0;
    for x in world.grid(sched, t) {
        let implied = diffusion::score_from_x0(x, world.x0_hat(sched, t, x), ab);
        worst = worst.max((implied - world.marginal_score(sched, t, x)).abs());
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub check: &'static str,
    pub world: usize,
    pub t: usize,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivationReport {
    pub steps: usize,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

/// Seeded random worlds; world 0 is the reference case `a=1, b=0`.
pub fn worlds(n: usize, seed: u64) -> Vec<ToyGaussianWorld> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|i| {
            if i == 0 {
                ToyGaussianWorld { mu0: 0.5, sigma0: 1.0, a: 1.0, b: 0.0, sigma_y: 1.0 }
            } else {
                ToyGaussianWorld {
                    mu0: rng.random_range(-2.0..2.0),
                    sigma0: rng.random_range(0.3..2.0),
                    a: rng.random_range(-2.0..2.0),
                    b: rng.random_range(-1.0..1.0),
                    sigma_y: rng.random_range(0.5..2.0),
                }
            }
        })
        .collect()
}

/// The full battery: three checks, five worlds, `t ∈ {1, T/4, T/2, T}`.
pub fn run_all(seed: u64) -> Result<DerivationReport> {
    let sched = ScheduleConfig::default().build()?;
    let steps = sched.steps();
    let ts = [1, steps / 4, steps / 2, steps];
    let mut rng = stream_rng(seed, 1);
    let mut checks = Vec::new();
    for (w, world) in worlds(5, seed).iter().enumerate() {
        for &t in &ts {
            let c = if w == 0 { -2.0 } else { rng.random_range(-3.0..3.0) };
            let s = rng.random_range(0.1..2.0);
            let s_cfg = rng.random_range(0.0..2.0);
            for (check, deviation, tolerance) in [
                ("conditional_score", check_conditional_score_identity(world, &sched, t, c, s)?, TOLERANCE),
                ("cfg_combination", check_cfg_identity(world, &sched, t, c, s_cfg)?, CFG_TOLERANCE),
                ("x0_parameterization", check_x0_parameterization(world, &sched, t)?, TOLERANCE),
            ] {
                checks.push(CheckResult { check, world: w, t, deviation, tolerance, pass: deviation <= tolerance });
            }
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(DerivationReport { steps, checks, pass })
}
