//! Optimisation loops: the masked classifier objective, the coordinate-MSE
//! plus type-KL diffusion objective, and its classifier-free variant with
//! condition dropout.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::diffusion;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::guidance::LossKind;
use crate::molsys::{center_complex, one_hot, ComplexRecord, PocketCloud};
use crate::net::{self, Condition, LigandInput, NetConfig, NetRole, Needs, ParameterSet, AFFINITY_SCALE};
use crate::rng::stream_rng;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierNoiseMode {
    #[default]
    CleanX0,
    NoisyXt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub p_unconditional: f64,
    /// Weight α of the type KL term in the diffusion loss.
    pub kl_weight: f64,
    pub classifier_noise_mode: ClassifierNoiseMode,
    /// Per-channel loss of multi-output regressors.
    pub multi_loss_kind: LossKind,
    /// Fraction of records held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            adam_beta1: 0.95,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            plateau_factor: 0.5,
            plateau_patience: 2,
            lr_min: 1e-6,
            epochs: 30,
            batch_size: 16,
            p_unconditional: 0.1,
            kl_weight: 100.0,
            classifier_noise_mode: ClassifierNoiseMode::CleanX0,
            multi_loss_kind: LossKind::Gaussian,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && self.weight_decay >= 0.0
            && self.plateau_factor > 0.0
            && self.plateau_factor < 1.0
            && self.lr_min >= 0.0
            && self.batch_size >= 1
            && (0.0..=1.0).contains(&self.p_unconditional)
            && self.kl_weight >= 0.0
            && (0.0..1.0).contains(&self.val_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("training hyperparameters out of range".into()))
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i] + self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let update = lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps);
            if update != 0.0 {
                params[i] -= update;
            }
        }
    }
}

/// Reduce-on-plateau learning rate: after more than `patience` epochs
/// without a relative improvement of 1e-4, multiply by `factor`, floored at
/// `lr_min`.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub lr: f64,
    factor: f64,
    patience: usize,
    lr_min: f64,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    const THRESHOLD: f64 = 1e-4;

    pub fn new(cfg: &TrainConfig) -> Self {
        Plateau {
            lr: cfg.lr,
            factor: cfg.plateau_factor,
            patience: cfg.plateau_patience,
            lr_min: cfg.lr_min,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's monitored loss; returns the learning rate to use next.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best * (1.0 - Self::THRESHOLD) {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.lr = (self.lr * self.factor).max(self.lr_min);
            self.bad_epochs = 0;
        }
        self.lr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub lr: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,split,loss,lr\n");
    for r in rows {
        writeln!(out, "{},{},{:.10e},{:.6e}", r.epoch, r.split, r.loss, r.lr).unwrap();
    }
    out
}

pub struct TrainOutcome {
    pub params: ParameterSet,
    pub log: Vec<LogRow>,
}

/// Masked squared error: `(pred - truth)^2` for valid labels, exactly 0 when
/// `truth > 0`.
pub fn classifier_loss(pred: f64, truth_delta_g: f64) -> f64 {
    if truth_delta_g > 0.0 {
        0.0
    } else {
        (pred - truth_delta_g).powi(2)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic train/validation split by hashed record index.
pub fn split_indices(n: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let cut = (val_fraction * u64::MAX as f64) as u64;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for i in 0..n {
        if val_fraction > 0.0 && splitmix(i as u64) < cut {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    if train.is_empty() {
        std::mem::swap(&mut train, &mut val);
    }
    (train, val)
}

/// A record moved to the pocket-centred frame with one-hot types.
pub struct Prepared {
    pub pocket: PocketCloud,
    pub x0: Vec<Vec3>,
    pub types: Vec<usize>,
    pub v0: Mat,
    pub delta_g: f64,
    pub qed: f64,
    pub sa: f64,
}

pub fn prepare(records: &[ComplexRecord], num_types: usize) -> Result<Vec<Prepared>> {
    records
        .iter()
        .map(|r| {
            if r.ligand.vocab.len() != num_types {
                return Err(Error::ShapeMismatch(format!(
                    "record {} has {} types, network expects {num_types}",
                    r.id,
                    r.ligand.vocab.len()
                )));
            }
            let (pocket, ligand, _) = center_complex(&r.pocket, &r.ligand)?;
            Ok(Prepared {
                pocket,
                x0: ligand.coords.clone(),
                types: ligand.types.clone(),
                v0: one_hot(&ligand.types, num_types),
                delta_g: r.labels.delta_g,
                qed: r.labels.qed,
                sa: r.labels.sa,
            })
        })
        .collect()
}

fn gaussian3<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec3> {
    (0..n).map(|_| std::array::from_fn(|_| rng.sample(StandardNormal))).collect()
}

fn gumbels<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let g = Gumbel::new(0.0, 1.0).unwrap();
    (0..n).map(|_| g.sample(rng)).collect()
}

/// Per-example regression loss and its derivative in the outputs.
fn regression_loss(p: &Prepared, outputs: usize, kind: LossKind) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + '_ {
    move |y: &[f64]| {
        if outputs == 1 {
            let l = classifier_loss(y[0], p.delta_g);
            let g = if p.delta_g > 0.0 { 0.0 } else { 2.0 * (y[0] - p.delta_g) };
            return (l, vec![g]);
        }
        // [affinity * -1/12, qed, sa]; the affinity channel is masked alone
        let targets = [p.delta_g * AFFINITY_SCALE, p.qed, p.sa];
        let mut value = 0.0;
        let mut grad = vec![0.0; 3];
        for k in 0..3 {
            if k == 0 && p.delta_g > 0.0 {
                continue;
            }
            let (v, g) = crate::guidance::energy_loss(y[k], targets[k], kind);
            value += v;
            grad[k] = g;
        }
        (value, grad)
    }
}

fn is_counted(p: &Prepared, outputs: usize) -> bool {
    outputs > 1 || p.delta_g <= 0.0
}

/// Regressor input for one example; perturbed at a random step in
/// `noisy_xt` mode.
fn classifier_input(p: &Prepared, sched: Option<&NoiseSchedule>, mode: ClassifierNoiseMode, rng: &mut impl Rng) -> (Vec<Vec3>, Mat, f64) {
    match (mode, sched) {
        (ClassifierNoiseMode::NoisyXt, Some(s)) => {
            let t = rng.random_range(1..=s.steps());
            let eps = gaussian3(p.x0.len(), rng);
            let k = p.v0.cols;
            let g = gumbels(p.x0.len() * k, rng);
            let x = diffusion::perturb_coords(&p.x0, s, t, &eps);
            let v = diffusion::perturb_types(&p.types, k, s, t, &g);
            (x, one_hot(&v, k), t as f64 / s.steps() as f64)
        }
        _ => (p.x0.clone(), p.v0.clone(), 0.0),
    }
}

/// Summed masked loss and parameter gradient over `batch`, divided by the
/// number of counted examples. Masked examples add exact zeros.
pub fn classifier_batch_gradient(
    params: &ParameterSet,
    cfg: &NetConfig,
    data: &[Prepared],
    batch: &[usize],
    train: &TrainConfig,
    sched: Option<&NoiseSchedule>,
    stream: u64,
) -> Result<(f64, Vec<f64>, usize)> {
    let per: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|&i| {
            let p = &data[i];
            let mut rng = stream_rng(train.seed ^ 0xC1A5, stream.wrapping_mul(1 << 20).wrapping_add(i as u64));
            let (x, v, time) = classifier_input(p, sched, train.classifier_noise_mode, &mut rng);
            let loss = regression_loss(p, cfg.outputs, train.multi_loss_kind);
            net::regressor_param_gradient(params, cfg, &p.pocket, &LigandInput { x: &x, v: &v, time, cond: None }, &loss)
        })
        .collect::<Result<_>>()?;
    let counted = batch.iter().filter(|&&i| is_counted(&data[i], cfg.outputs)).count();
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in &per {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    if counted > 0 {
        let inv = 1.0 / counted as f64;
        loss *= inv;
        for a in &mut grad {
            *a *= inv;
        }
    }
    Ok((loss, grad, counted))
}

/// Mean masked loss over `idx` on clean inputs.
pub fn classifier_eval(params: &ParameterSet, cfg: &NetConfig, data: &[Prepared], idx: &[usize], kind: LossKind) -> Result<f64> {
    let losses: Vec<Option<f64>> = idx
        .par_iter()
        .map(|&i| {
            let p = &data[i];
            if !is_counted(p, cfg.outputs) {
                return Ok(None);
            }
            let y = net::regressor_forward(params, cfg, &p.pocket, &LigandInput { x: &p.x0, v: &p.v0, time: 0.0, cond: None })?;
            Ok(Some(regression_loss(p, cfg.outputs, kind)(&y).0))
        })
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = losses.into_iter().flatten().collect();
    Ok(if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 })
}

/// Algorithm-1 style training of a property regressor.
pub fn train_classifier(
    records: &[ComplexRecord],
    cfg: &NetConfig,
    train: &TrainConfig,
    sched: Option<&NoiseSchedule>,
) -> Result<TrainOutcome> {
    if records.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.role != NetRole::Regressor {
        return Err(Error::Config("train_classifier needs a regressor config".into()));
    }
    if cfg.outputs != 1 && cfg.outputs != 3 {
        return Err(Error::Config("classifier must have 1 (affinity) or 3 (affinity, qed, sa) outputs".into()));
    }
    if train.classifier_noise_mode == ClassifierNoiseMode::NoisyXt && sched.is_none() {
        return Err(Error::Config("noisy_xt classifier training needs a schedule".into()));
    }
    cfg.validate()?;
    train.validate()?;
    let data = prepare(records, cfg.num_types)?;
    let (train_idx, val_idx) = split_indices(data.len(), train.val_fraction);
    let mut params = ParameterSet::init(cfg, &mut stream_rng(train.seed, 0));
    let mut adam = Adam::new(params.len(), train);
    let mut plateau = Plateau::new(train);
    let mut log = Vec::new();
    let mut order = train_idx.clone();
    for epoch in 0..train.epochs {
        let lr = plateau.lr;
        order.shuffle(&mut stream_rng(train.seed, 1 + epoch as u64));
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, batch) in order.chunks(train.batch_size).enumerate() {
            let stream = (epoch as u64) << 32 | b as u64;
            let (loss, grad, counted) = classifier_batch_gradient(&params, cfg, &data, batch, train, sched, stream)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            if counted == 0 {
                continue;
            }
            adam.step(&mut params.values, &grad, lr);
            total += loss * counted as f64;
            seen += counted;
        }
        let train_loss = if seen > 0 { total / seen as f64 } else { 0.0 };
        log.push(LogRow { epoch, split: "train".into(), loss: train_loss, lr });
        let monitored = if val_idx.is_empty() {
            train_loss
        } else {
            let v = classifier_eval(&params, cfg, &data, &val_idx, train.multi_loss_kind)?;
            log.push(LogRow { epoch, split: "val".into(), loss: v, lr });
            v
        };
        if !monitored.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::info!("classifier epoch {epoch}: train {train_loss:.4} val {monitored:.4} lr {lr:.2e}");
        plateau.observe(monitored);
    }
    Ok(TrainOutcome { params, log })
}

/// Whether the diffusion objective sees the affinity condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionMode {
    Off,
    Cfg,
}

/// Condition dropout: the null condition with probability `p_uncond` or
/// when the label is invalid, else the rescaled affinity.
pub fn draw_condition<R: Rng + ?Sized>(rng: &mut R, p_uncond: f64, delta_g: f64, cfg: &NetConfig) -> Condition {
    let drop = rng.random::<f64>() < p_uncond;
    if drop || delta_g > 0.0 {
        Condition::null(cfg)
    } else {
        Condition::target(delta_g)
    }
}

/// Categorical posterior rows for every atom given one-hot `v_t` and
/// per-atom `v0` probabilities.
fn posterior_rows(vt: &[usize], v0: &Mat, sched: &NoiseSchedule, t: usize) -> Result<Vec<Vec<f64>>> {
    (0..vt.len()).map(|i| diffusion::categorical_posterior(vt[i], v0.row(i), sched, t)).collect()
}

/// `KL(q || p)` for one pair of distributions with `0 log 0 = 0`.
pub fn kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Reference value of the per-example diffusion loss from explicit
/// predictions: `mean_i ||x0_i - x0_hat_i||^2 + α mean_i KL(c(v_t, v0) || c(v_t, v0_hat))`.
pub fn diffusion_loss_value(
    x0: &[Vec3],
    x0_hat: &[Vec3],
    v0: &Mat,
    v0_hat: &Mat,
    vt: &[usize],
    sched: &NoiseSchedule,
    t: usize,
    alpha: f64,
) -> Result<f64> {
    let n = x0.len() as f64;
    let mse: f64 = x0.iter().zip(x0_hat).map(|(a, b)| (0..3).map(|d| (a[d] - b[d]).powi(2)).sum::<f64>()).sum::<f64>() / n;
    let q = posterior_rows(vt, v0, sched, t)?;
    let p = posterior_rows(vt, v0_hat, sched, t)?;
    let kl_mean: f64 = q.iter().zip(&p).map(|(a, b)| kl(a, b)).sum::<f64>() / n;
    Ok(mse + alpha * kl_mean)
}

/// One example's diffusion loss and parameter gradient at a random step.
fn diffusion_example(
    params: &ParameterSet,
    cfg: &NetConfig,
    p: &Prepared,
    sched: &NoiseSchedule,
    train: &TrainConfig,
    mode: ConditionMode,
    rng: &mut impl Rng,
    need_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let n = p.x0.len();
    let k = cfg.num_types;
    let t = rng.random_range(1..=sched.steps());
    let eps = gaussian3(n, rng);
    let g = gumbels(n * k, rng);
    let x_t = diffusion::perturb_coords(&p.x0, sched, t, &eps);
    let v_t = diffusion::perturb_types(&p.types, k, sched, t, &g);
    let cond = match mode {
        ConditionMode::Cfg => Some(draw_condition(rng, train.p_unconditional, p.delta_g, cfg)),
        ConditionMode::Off => (cfg.cond_channels > 0).then(|| Condition::null(cfg)),
    };
    let vt_mat = one_hot(&v_t, k);
    let lig = LigandInput { x: &x_t, v: &vt_mat, time: t as f64 / sched.steps() as f64, cond };
    let mut f = net::forward(params, cfg, &p.pocket, &lig, Needs { coords: false, params: need_grad })?;
    let (x0v, logits) = (f.x0.unwrap(), f.logits.unwrap());
    let tape = &mut f.tape;

    let target = tape.constant(Mat::from_rows3(&p.x0));
    let diff = tape.sub(x0v, target);
    let sq = tape.mul(diff, diff);
    let sse = tape.sum(sq);
    let mse = tape.scale(sse, 1.0 / n as f64);

    // c(v_t, v0_hat) on the tape; the true posterior q is a constant
    let a_t = sched.alpha(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let kf = k as f64;
    let mut left = Mat::zeros(n, k);
    for i in 0..n {
        for c in 0..k {
            left.data[i * k + c] = a_t * f64::from(u8::from(c == v_t[i])) + (1.0 - a_t) / kf;
        }
    }
    let probs = tape.softmax_rows(logits);
    let scaled = tape.scale(probs, ab_prev);
    let right = tape.add_scalar(scaled, (1.0 - ab_prev) / kf);
    let left = tape.constant(left);
    let unnorm = tape.mul(left, right);
    let z = tape.sum_cols(unnorm);
    let zinv = tape.recip(z);
    let post = tape.mul_col(unnorm, zinv);
    let logp = tape.log(post);
    let q = posterior_rows(&v_t, &p.v0, sched, t)?;
    let q_mat = Mat::from_vec(n, k, q.iter().flatten().copied().collect());
    let neg_entropy: f64 = q.iter().flatten().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum();
    let qv = tape.constant(q_mat);
    let cross = tape.mul(qv, logp);
    let cross_sum = tape.sum(cross);
    // KL sum = Σ q log q − Σ q log p
    let kl_sum = tape.scale(cross_sum, -1.0);
    let kl_sum = tape.add_scalar(kl_sum, neg_entropy);
    let kl_mean = tape.scale(kl_sum, train.kl_weight / n as f64);
    let total = tape.add(mse, kl_mean);
    let value = tape.value(total).data[0];
    if !value.is_finite() {
        return Err(Error::NonFiniteLayer { layer: cfg.layers + 1 });
    }
    let grad = need_grad.then(|| {
        let grads = f.tape.backward_scalar(total);
        f.flat_param_grad(&grads, params)
    });
    Ok((value, grad))
}

/// Mean diffusion loss of `batch` and, optionally, its parameter gradient.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss(
    params: &ParameterSet,
    cfg: &NetConfig,
    data: &[Prepared],
    batch: &[usize],
    sched: &NoiseSchedule,
    train: &TrainConfig,
    mode: ConditionMode,
    stream: u64,
    need_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let per: Vec<(f64, Option<Vec<f64>>)> = batch
        .par_iter()
        .map(|&i| {
            let mut rng = stream_rng(train.seed ^ 0xD1FF, stream.wrapping_mul(1 << 20).wrapping_add(i as u64));
            diffusion_example(params, cfg, &data[i], sched, train, mode, &mut rng, need_grad)
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() * inv;
    let grad = need_grad.then(|| {
        let mut g = vec![0.0; params.len()];
        for (_, pg) in &per {
            for (a, b) in g.iter_mut().zip(pg.as_ref().unwrap()) {
                *a += b;
            }
        }
        g.iter_mut().for_each(|a| *a *= inv);
        g
    });
    Ok((loss, grad))
}

/// Trains the denoiser; `ConditionMode::Cfg` adds condition dropout.
pub fn train_diffusion(
    records: &[ComplexRecord],
    cfg: &NetConfig,
    train: &TrainConfig,
    sched: &NoiseSchedule,
    mode: ConditionMode,
) -> Result<TrainOutcome> {
    if records.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.role != NetRole::Denoiser {
        return Err(Error::Config("train_diffusion needs a denoiser config".into()));
    }
    if mode == ConditionMode::Cfg && cfg.cond_channels != 2 {
        return Err(Error::Config("classifier-free training needs cond_channels = 2".into()));
    }
    if mode == ConditionMode::Cfg && train.p_unconditional == 0.0 {
        log::warn!("p_unconditional = 0: the unconditional branch is never trained");
    }
    cfg.validate()?;
    train.validate()?;
    let data = prepare(records, cfg.num_types)?;
    let (train_idx, val_idx) = split_indices(data.len(), train.val_fraction);
    let mut params = ParameterSet::init(cfg, &mut stream_rng(train.seed, 0));
    let mut adam = Adam::new(params.len(), train);
    let mut plateau = Plateau::new(train);
    let mut log = Vec::new();
    let mut order = train_idx.clone();
    for epoch in 0..train.epochs {
        let lr = plateau.lr;
        order.shuffle(&mut stream_rng(train.seed, 1 + epoch as u64));
        let mut total = 0.0;
        for (b, batch) in order.chunks(train.batch_size).enumerate() {
            let stream = (epoch as u64) << 32 | b as u64;
            let (loss, grad) = diffusion_loss(&params, cfg, &data, batch, sched, train, mode, stream, true)?;
            let grad = grad.unwrap();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            adam.step(&mut params.values, &grad, lr);
            total += loss * batch.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        log.push(LogRow { epoch, split: "train".into(), loss: train_loss, lr });
        // validation draws a fixed stream so epochs are comparable
        let monitored = if val_idx.is_empty() {
            train_loss
        } else {
            let (v, _) = diffusion_loss(&params, cfg, &data, &val_idx, sched, train, mode, u64::MAX, false)?;
            log.push(LogRow { epoch, split: "val".into(), loss: v, lr });
            v
        };
        if !monitored.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::info!("diffusion epoch {epoch}: train {train_loss:.4} val {monitored:.4} lr {lr:.2e}");
        plateau.observe(monitored);
    }
    Ok(TrainOutcome { params, log })
}

/// Classifier-free variant of [`train_diffusion`].
pub fn train_cfg_diffusion(records: &[ComplexRecord], cfg: &NetConfig, train: &TrainConfig, sched: &NoiseSchedule) -> Result<TrainOutcome> {
    train_diffusion(records, cfg, train, sched, ConditionMode::Cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn classifier_loss_values() {
        assert_eq!(classifier_loss(-100.0, 5.0), 0.0);
        assert_eq!(classifier_loss(-8.0, -8.0), 0.0);
        assert_eq!(classifier_loss(-6.0, -8.0), 4.0);
    }

    #[test]
    fn adam_with_zero_lr_is_identity() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(3, &cfg);
        let mut p = vec![0.1, -2.0, 3.5];
        let before = p.clone();
        adam.step(&mut p, &[1.0, -4.0, 0.3], 0.0);
        assert_eq!(p.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), before.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(2, &cfg);
        let mut p = vec![1.0, 1.0];
        adam.step(&mut p, &[3.0, -0.5], 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn plateau_follows_scripted_losses() {
        let cfg = TrainConfig { lr: 1.0, lr_min: 0.2, ..TrainConfig::default() };
        let mut p = Plateau::new(&cfg);
        // improvement, then three flat epochs trigger one halving
        let lrs: Vec<f64> = [5.0, 4.0, 4.0, 4.0, 4.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0]
            .iter()
            .map(|&l| p.observe(l))
            .collect();
        assert_eq!(&lrs[..5], &[1.0, 1.0, 1.0, 1.0, 0.5]);
        assert_eq!(lrs[5], 0.5);
        assert_eq!(lrs[8], 0.25);
        assert_eq!(*lrs.last().unwrap(), 0.2);
        assert!(lrs.iter().all(|&l| l >= 0.2));
    }

    #[test]
    fn split_is_deterministic_and_near_fraction() {
        let (a, b) = split_indices(5000, 0.1);
        assert_eq!((a.clone(), b.clone()), split_indices(5000, 0.1));
        assert_eq!(a.len() + b.len(), 5000);
        assert!((b.len() as f64 / 5000.0 - 0.1).abs() < 0.02);
        let (all, none) = split_indices(10, 0.0);
        assert_eq!((all.len(), none.len()), (10, 0));
    }

    #[test]
    fn condition_dropout_frequency() {
        let cfg = NetConfig { cond_channels: 2, ..NetConfig::denoiser(4) };
        let mut rng = stream_rng(3, 0);
        let n = 10_000;
        let dropped = (0..n).filter(|_| draw_condition(&mut rng, 0.1, -7.0, &cfg).mask == 0.0).count();
        assert!((dropped as f64 / n as f64 - 0.1).abs() < 0.01);
        assert!((0..100).all(|_| draw_condition(&mut rng, 1.0, -7.0, &cfg).mask == 0.0));
        assert!((0..100).all(|_| draw_condition(&mut rng, 0.0, -7.0, &cfg).mask == 1.0));
        assert_eq!(draw_condition(&mut rng, 0.0, 3.0, &cfg).mask, 0.0);
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let sched = crate::schedule::ScheduleConfig::desk(20).build().unwrap();
        let x0 = vec![[0.5, 1.0, -2.0], [1.0, 0.0, 0.0]];
        let v0 = one_hot(&[1, 3], 4);
        for t in [1, 7, 20] {
            let l = diffusion_loss_value(&x0, &x0, &v0, &v0, &[2, 3], &sched, t, 100.0).unwrap();
            assert_eq!(l, 0.0);
        }
    }

    #[test]
    fn tape_loss_matches_reference_formula() {
        let sched = crate::schedule::ScheduleConfig::desk(100).build().unwrap();
        let recs = crate::oracle::generate_dataset(3, 3, &Default::default(), &Default::default()).unwrap();
        let mut cfg = NetConfig::denoiser(4);
        cfg.hidden_dim = 12;
        let params = ParameterSet::init(&cfg, &mut stream_rng(1, 0));
        let train = TrainConfig { kl_weight: 30.0, ..TrainConfig::default() };
        for (i, p) in prepare(&recs, 4).unwrap().iter().enumerate() {
            let rng = stream_rng(9, i as u64);
            let (value, _) = diffusion_example(&params, &cfg, p, &sched, &train, ConditionMode::Off, &mut rng.clone(), false).unwrap();
            // replay the same draws outside the tape
            let mut r = rng;
            let t = r.random_range(1..=sched.steps());
            let eps = gaussian3(p.x0.len(), &mut r);
            let g = gumbels(p.x0.len() * 4, &mut r);
            let x_t = diffusion::perturb_coords(&p.x0, &sched, t, &eps);
            let v_t = diffusion::perturb_types(&p.types, 4, &sched, t, &g);
            let vt = one_hot(&v_t, 4);
            let lig = LigandInput { x: &x_t, v: &vt, time: t as f64 / 100.0, cond: None };
            let (x0_hat, logits) = net::score_forward(&params, &cfg, &p.pocket, &lig).unwrap();
            let reference = diffusion_loss_value(&p.x0, &x0_hat, &p.v0, &diffusion::softmax(&logits), &v_t, &sched, t, 30.0).unwrap();
            assert!((value - reference).abs() <= 1e-10 * reference.abs().max(1.0), "t={t}: tape {value} reference {reference}");
        }
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_on_diagonal(a in prop::collection::vec(0.01f64..1.0, 4), b in prop::collection::vec(0.01f64..1.0, 4)) {
            let za: f64 = a.iter().sum();
            let zb: f64 = b.iter().sum();
            let p: Vec<f64> = a.iter().map(|x| x / za).collect();
            let q: Vec<f64> = b.iter().map(|x| x / zb).collect();
            prop_assert!(kl(&p, &q) >= -1e-15);
            prop_assert_eq!(kl(&p, &p), 0.0);
        }
    }
}
