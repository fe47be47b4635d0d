//! Guided reverse sampling: classifier guidance (single and multi-constraint)
//! and classifier-free guidance on top of the x0-parameterised denoiser.

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::diffusion::{self, NoiseSource, TypeSampling};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::molsys::{center_pocket, one_hot, AtomCloud, MoleculeCloud, PocketCloud};
use crate::net::{self, Condition, OutputLoss, LigandInput, NetConfig, NetRole, ParameterSet, AFFINITY_SCALE};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    #[default]
    None,
    Classifier,
    ClassifierFree,
    MultiConstraint,
    /// Conditional denoiser pass only; the `s = 1` reference for CFG.
    Conditional,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared error.
    #[default]
    Gaussian,
    /// Absolute error.
    Exponential,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradPath {
    /// Gradient taken at x0_hat and applied as the x_t gradient.
    #[default]
    ApproxIdentity,
    /// Backpropagates through the denoiser as well.
    FullChain,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyOn {
    #[default]
    X0Hat,
    Xt,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    #[default]
    Elementwise,
    /// Rescales each atom's displacement vector to norm at most `clip`.
    Norm,
}

/// Property targets for multi-constraint guidance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiTargets {
    pub delta_g: f64,
    pub qed: f64,
    pub sa: f64,
}

impl Default for MultiTargets {
    fn default() -> Self {
        MultiTargets { delta_g: -16.0, qed: 1.0, sa: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiWeights {
    pub w_vina: f64,
    pub w_qed: f64,
    pub w_sa: f64,
}

impl Default for MultiWeights {
    fn default() -> Self {
        MultiWeights { w_vina: 1.0, w_qed: 1.0, w_sa: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub s: f64,
    /// kcal/mol.
    pub target_delta_g: f64,
    pub targets_multi: MultiTargets,
    pub weights_multi: MultiWeights,
    /// `None` disables clipping.
    pub clip: Option<f64>,
    pub clip_mode: ClipMode,
    pub loss_kind: LossKind,
    pub grad_path: GradPath,
    pub classify_on: ClassifyOn,
    /// Feed the classifier softmax types instead of argmax one-hot rows.
    pub simplex_types: bool,
    /// Stop the reverse chain once this step index is reached.
    pub stop_at_step: usize,
    pub type_sampling: TypeSampling,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            mode: GuidanceMode::None,
            s: 0.2,
            target_delta_g: -16.0,
            targets_multi: MultiTargets::default(),
            weights_multi: MultiWeights::default(),
            clip: Some(1.0),
            clip_mode: ClipMode::Elementwise,
            loss_kind: LossKind::Gaussian,
            grad_path: GradPath::ApproxIdentity,
            classify_on: ClassifyOn::X0Hat,
            simplex_types: false,
            stop_at_step: 0,
            type_sampling: TypeSampling::Argmax,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s >= 0.0) || !self.s.is_finite() {
            return Err(Error::Config(format!("guidance scale must be finite and >= 0, got {}", self.s)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip must be > 0, got {c}")));
            }
        }
        let w = self.weights_multi;
        if [w.w_vina, w.w_qed, w.w_sa].iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("multi-constraint weights must be finite and >= 0".into()));
        }
        let t = self.targets_multi;
        if ![self.target_delta_g, t.delta_g, t.qed, t.sa].iter().all(|x| x.is_finite()) {
            return Err(Error::Config("guidance targets must be finite".into()));
        }
        Ok(())
    }
}

/// `(value, dvalue/dy)` of the per-channel guidance energy.
pub fn energy_loss(y: f64, c: f64, kind: LossKind) -> (f64, f64) {
    let r = y - c;
    match kind {
        LossKind::Gaussian => (r * r, 2.0 * r),
        LossKind::Exponential => {
            let g = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            (r.abs(), g)
        }
    }
}

/// Weighted sum of per-channel energies over `[affinity, qed, sa]`.
pub fn multi_loss(y: &[f64], targets: &[f64; 3], weights: &[f64; 3], kind: LossKind) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; 3];
    for k in 0..3 {
        let (v, g) = energy_loss(y[k], targets[k], kind);
        value += weights[k] * v;
        grad[k] = weights[k] * g;
    }
    (value, grad)
}

pub fn clip_elementwise(d: &[Vec3], clip: f64) -> Vec<Vec3> {
    d.iter().map(|v| v.map(|x| x.clamp(-clip, clip))).collect()
}

pub fn clip_norm(d: &[Vec3], clip: f64) -> Vec<Vec3> {
    d.iter()
        .map(|&v| {
            let n = geom::norm(v);
            if n > clip {
                geom::scale(v, clip / n)
            } else {
                v
            }
        })
        .collect()
}

/// `(1 - s) x0_uncond + s x0_cond`
pub fn cfg_combine(x0_uncond: &[Vec3], x0_cond: &[Vec3], s: f64) -> Vec<Vec3> {
    x0_uncond
        .iter()
        .zip(x0_cond)
        .map(|(a, b)| std::array::from_fn(|d| (1.0 - s) * a[d] + s * b[d]))
        .collect()
}

fn cfg_combine_mat(uncond: &Mat, cond: &Mat, s: f64) -> Mat {
    let data = uncond.data.iter().zip(&cond.data).map(|(a, b)| (1.0 - s) * a + s * b).collect();
    Mat::from_vec(uncond.rows, uncond.cols, data)
}

/// A trained network with its architecture.
#[derive(Clone, Copy)]
pub struct Model<'a> {
    pub params: &'a ParameterSet,
    pub cfg: &'a NetConfig,
}

/// Inputs shared by every guidance evaluation at one reverse step.
pub struct StepView<'a> {
    pub pocket: &'a PocketCloud,
    pub x_t: &'a [Vec3],
    pub v_t: &'a [usize],
    pub x0_hat: &'a [Vec3],
    /// Softmax of the denoiser type logits.
    pub v0_hat: &'a Mat,
    pub t: usize,
    /// Denoiser condition used to produce `x0_hat`, needed by `full_chain`.
    pub denoiser_cond: Option<Condition>,
}

fn guidance_loss(cfg: &GuidanceConfig) -> Box<dyn OutputLoss> {
    let kind = cfg.loss_kind;
    match cfg.mode {
        GuidanceMode::MultiConstraint => {
            let t = cfg.targets_multi;
            let w = cfg.weights_multi;
            let targets = [t.delta_g * AFFINITY_SCALE, t.qed, t.sa];
            let weights = [w.w_vina, w.w_qed, w.w_sa];
            Box::new(move |y: &[f64]| multi_loss(y, &targets, &weights, kind))
        }
        _ => {
            let c = cfg.target_delta_g;
            Box::new(move |y: &[f64]| {
                let (v, g) = energy_loss(y[0], c, kind);
                (v, vec![g])
            })
        }
    }
}

/// Clipped displacement `clip((β_t/√α_t)·s·∇L)` subtracted from the
/// posterior mean. Exactly zero, without touching the classifier, when
/// `s == 0`.
pub fn guidance_displacement(
    classifier: Model,
    denoiser: Option<Model>,
    step: &StepView,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<Vec<Vec3>> {
    let n = step.x_t.len();
    if cfg.s == 0.0 {
        return Ok(vec![[0.0; 3]; n]);
    }
    sched.check_step(step.t)?;
    let factor = sched.guidance_factor(step.t) * cfg.s;
    let k = step.v0_hat.cols;
    let steps = sched.steps() as f64;
    let loss = guidance_loss(cfg);
    let grad = match cfg.classify_on {
        ClassifyOn::X0Hat => {
            let types = if cfg.simplex_types {
                step.v0_hat.clone()
            } else {
                let idx: Vec<usize> = (0..n).map(|i| diffusion::argmax(step.v0_hat.row(i))).collect();
                one_hot(&idx, k)
            };
            let input = LigandInput { x: step.x0_hat, v: &types, time: 0.0, cond: None };
            let g = net::input_gradient(classifier.params, classifier.cfg, step.pocket, &input, &*loss)?.grad;
            match (cfg.grad_path, denoiser) {
                (GradPath::FullChain, Some(den)) => {
                    let vt = one_hot(step.v_t, k);
                    let input = LigandInput { x: step.x_t, v: &vt, time: step.t as f64 / steps, cond: step.denoiser_cond };
                    net::denoiser_vjp(den.params, den.cfg, step.pocket, &input, &g)?
                }
                (GradPath::FullChain, None) => {
                    return Err(Error::Config("full_chain guidance needs the denoiser".into()));
                }
                (GradPath::ApproxIdentity, _) => g,
            }
        }
        ClassifyOn::Xt => {
            let vt = one_hot(step.v_t, k);
            let input = LigandInput { x: step.x_t, v: &vt, time: step.t as f64 / steps, cond: None };
            net::input_gradient(classifier.params, classifier.cfg, step.pocket, &input, &*loss)?.grad
        }
    };
    if grad.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { step: step.t });
    }
    let disp: Vec<Vec3> = grad.iter().map(|g| geom::scale(*g, factor)).collect();
    Ok(match (cfg.clip, cfg.clip_mode) {
        (None, _) => disp,
        (Some(c), ClipMode::Elementwise) => clip_elementwise(&disp, c),
        (Some(c), ClipMode::Norm) => clip_norm(&disp, c),
    })
}

/// One frame of a recorded reverse trajectory (pocket-centred frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub t: usize,
    pub x: Vec<Vec3>,
    pub v: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    /// Final ligand in the pocket's original frame.
    pub ligand: MoleculeCloud,
    /// Step index the chain stopped at.
    pub t: usize,
    pub trajectory: Vec<Frame>,
}

fn check_models(denoiser: Model, classifier: Option<Model>, cfg: &GuidanceConfig) -> Result<()> {
    cfg.validate()?;
    if denoiser.cfg.role != NetRole::Denoiser {
        return Err(Error::Config("sampling needs a denoiser network".into()));
    }
    let needs_classifier = matches!(cfg.mode, GuidanceMode::Classifier | GuidanceMode::MultiConstraint);
    match (needs_classifier, classifier) {
        (true, None) => return Err(Error::Config(format!("guidance mode {:?} needs a classifier", cfg.mode))),
        (true, Some(c)) => {
            let want = if cfg.mode == GuidanceMode::MultiConstraint { 3 } else { 1 };
            if c.cfg.role != NetRole::Regressor || c.cfg.outputs != want {
                return Err(Error::Config(format!("guidance mode {:?} needs a regressor with {want} output(s)", cfg.mode)));
            }
            if c.cfg.num_types != denoiser.cfg.num_types {
                return Err(Error::Config("classifier and denoiser disagree on the type vocabulary".into()));
            }
        }
        _ => {}
    }
    if matches!(cfg.mode, GuidanceMode::ClassifierFree | GuidanceMode::Conditional) && denoiser.cfg.cond_channels != 2 {
        return Err(Error::Config("classifier-free guidance needs a denoiser trained with condition channels".into()));
    }
    Ok(())
}

/// Runs the reverse chain from `t = T` down to `cfg.stop_at_step` for a
/// ligand of `n_atoms` atoms. Each step draws `normal3(n)` then
/// `gumbel(n, K)` from `noise`, whatever the mode, so chains that differ
/// only in guidance consume identical randomness.
pub fn sample_guided(
    denoiser: Model,
    classifier: Option<Model>,
    pocket: &PocketCloud,
    n_atoms: usize,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
    noise: &mut dyn NoiseSource,
    record_trajectory: bool,
) -> Result<SampleOutput> {
    check_models(denoiser, classifier, cfg)?;
    if n_atoms == 0 {
        return Err(Error::Config("n_atoms must be at least 1".into()));
    }
    if cfg.stop_at_step >= sched.steps() {
        return Err(Error::StepOutOfRange { t: cfg.stop_at_step, max: sched.steps() - 1 });
    }
    let (pocket_c, offset) = center_pocket(pocket)?;
    let k = denoiser.cfg.num_types;
    let steps = sched.steps();
    let mut state = diffusion::init_state(n_atoms, k, steps, noise);
    let mut trajectory = Vec::new();
    if record_trajectory {
        trajectory.push(Frame { t: state.t, x: state.x.clone(), v: state.v.clone() });
    }

    let null = (denoiser.cfg.cond_channels > 0).then(|| Condition::null(denoiser.cfg));
    let target = Condition::target(cfg.target_delta_g);
    while state.t > cfg.stop_at_step {
        let t = state.t;
        let time = t as f64 / steps as f64;
        let vt = one_hot(&state.v, k);
        let predict = |cond: Option<Condition>| {
            net::score_forward(denoiser.params, denoiser.cfg, &pocket_c, &LigandInput { x: &state.x, v: &vt, time, cond })
        };
        let (x0_hat, logits, den_cond) = match cfg.mode {
            GuidanceMode::ClassifierFree => {
                let (xu, lu) = predict(null)?;
                let (xc, lc) = predict(Some(target))?;
                (cfg_combine(&xu, &xc, cfg.s), cfg_combine_mat(&lu, &lc, cfg.s), None)
            }
            GuidanceMode::Conditional => {
                let (x, l) = predict(Some(target))?;
                (x, l, Some(target))
            }
            _ => {
                let (x, l) = predict(null)?;
                (x, l, null)
            }
        };
        let v0_hat = diffusion::softmax(&logits);

        let disp = match (cfg.mode, classifier) {
            (GuidanceMode::Classifier | GuidanceMode::MultiConstraint, Some(clf)) => {
                let view = StepView {
                    pocket: &pocket_c,
                    x_t: &state.x,
                    v_t: &state.v,
                    x0_hat: &x0_hat,
                    v0_hat: &v0_hat,
                    t,
                    denoiser_cond: den_cond,
                };
                guidance_displacement(clf, Some(denoiser), &view, sched, cfg)?
            }
            _ => vec![[0.0; 3]; n_atoms],
        };

        let eps = noise.normal3(n_atoms);
        let gumbel = noise.gumbel(n_atoms, k);
        let x_next = diffusion::reverse_coord_step(&state.x, &x0_hat, sched, t, &eps, &disp)?;
        #[cfg(debug_assertions)]
        {
            let mean = diffusion::posterior_mean(&state.x, &x0_hat, sched, t)?;
            let sd = sched.posterior_coeffs(t)?.beta_tilde.sqrt();
            for i in 0..n_atoms {
                for d in 0..3 {
                    let guided_mean = mean[i][d] - disp[i][d];
                    debug_assert_eq!((guided_mean + sd * eps[i][d]).to_bits(), x_next[i][d].to_bits());
                }
            }
        }
        if x_next.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteCoordinates { step: t });
        }
        let probs = (0..n_atoms)
            .map(|i| diffusion::categorical_posterior(state.v[i], v0_hat.row(i), sched, t))
            .collect::<Result<Vec<_>>>()?;
        state.v = diffusion::decode_types(&probs, cfg.type_sampling, &gumbel);
        state.x = x_next;
        state.t = t - 1;
        if record_trajectory {
            trajectory.push(Frame { t: state.t, x: state.x.clone(), v: state.v.clone() });
        }
    }

    let coords = state.x.iter().map(|&p| geom::add(p, offset)).collect();
    let cloud = AtomCloud::new(coords, state.v, pocket.vocab.clone())?;
    Ok(SampleOutput { ligand: MoleculeCloud(cloud), t: state.t, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn energy_loss_values() {
        for kind in [LossKind::Gaussian, LossKind::Exponential] {
            assert_eq!(energy_loss(-3.0, -3.0, kind), (0.0, 0.0));
        }
        assert_eq!(energy_loss(1.0, -1.0, LossKind::Gaussian), (4.0, 4.0));
        assert_eq!(energy_loss(-4.0, -1.0, LossKind::Exponential), (3.0, -1.0));
    }

    #[test]
    fn multi_loss_is_weighted_channel_sum() {
        let y = [0.9, 0.3, 0.6];
        let targets = [1.2, 0.8, 0.7];
        assert_eq!(multi_loss(&targets, &targets, &[1.0; 3], LossKind::Gaussian).0, 0.0);
        let (v1, g1) = multi_loss(&y, &targets, &[1.0, 0.0, 0.0], LossKind::Gaussian);
        let (e, de) = energy_loss(y[0], targets[0], LossKind::Gaussian);
        assert_eq!((v1, g1[0]), (e, de));
        assert_eq!(&g1[1..], &[0.0, 0.0]);
        let w = [0.5, 2.0, 1.5];
        for kind in [LossKind::Gaussian, LossKind::Exponential] {
            let (v, g) = multi_loss(&y, &targets, &w, kind);
            let parts: Vec<_> = (0..3).map(|k| energy_loss(y[k], targets[k], kind)).collect();
            let vsum: f64 = (0..3).map(|k| w[k] * parts[k].0).sum();
            assert!((v - vsum).abs() < 1e-15);
            for k in 0..3 {
                assert_eq!(g[k], w[k] * parts[k].1);
            }
        }
    }

    #[test]
    fn clip_values() {
        assert_eq!(clip_elementwise(&[[0.5, -0.2, 0.0]], 1.0), vec![[0.5, -0.2, 0.0]]);
        assert_eq!(clip_elementwise(&[[-7.0, 7.0, 0.001]], 0.003), vec![[-0.003, 0.003, 0.001]]);
        let n = clip_norm(&[[3.0, 4.0, 0.0]], 1.0);
        assert!((geom::norm(n[0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cfg_combine_reductions() {
        let a = vec![[1.0, -2.0, 0.3], [0.1, 0.2, 0.7]];
        let b = vec![[-1.5, 4.0, 2.0], [0.0, -0.2, 9.0]];
        assert_eq!(cfg_combine(&a, &b, 1.0), b);
        assert_eq!(cfg_combine(&a, &b, 0.0), a);
        let mid = cfg_combine(&a, &b, 0.5);
        for i in 0..2 {
            for d in 0..3 {
                assert_eq!(mid[i][d], (a[i][d] + b[i][d]) / 2.0);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = GuidanceConfig::default();
        c.validate().unwrap();
        c.s = -1.0;
        assert!(c.validate().is_err());
        c.s = 1.0;
        c.clip = Some(0.0);
        assert!(c.validate().is_err());
        c.clip = None;
        c.weights_multi.w_qed = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_uses_snake_case() {
        let mut c = GuidanceConfig::default();
        c.mode = GuidanceMode::ClassifierFree;
        c.clip = None;
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"classifier_free\""));
        assert!(s.contains("\"clip\":null"));
        assert_eq!(serde_json::from_str::<GuidanceConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<GuidanceConfig>("{\"bogus\":1}").is_err());
    }

    proptest! {
        #[test]
        fn clipping_bounds_and_idempotence(v in prop::collection::vec(-1e6f64..1e6, 3..30), c in 1e-4f64..10.0) {
            let d: Vec<Vec3> = v.chunks_exact(3).map(|w| [w[0], w[1], w[2]]).collect();
            let once = clip_elementwise(&d, c);
            prop_assert!(once.iter().flatten().all(|x| x.abs() <= c));
            prop_assert_eq!(clip_elementwise(&once, c), once.clone());
            let small: Vec<Vec3> = d.iter().map(|p| p.map(|x| x * 1e-12)).collect();
            if small.iter().flatten().all(|x| x.abs() <= c) {
                prop_assert_eq!(clip_elementwise(&small, c), small);
            }
        }

        #[test]
        fn cfg_combine_fixes_equal_inputs(v in prop::collection::vec(-100f64..100.0, 3..12), s in 0f64..3.0) {
            let a: Vec<Vec3> = v.chunks_exact(3).map(|w| [w[0], w[1], w[2]]).collect();
            for (p, q) in cfg_combine(&a, &a, s).iter().zip(&a) {
                for d in 0..3 {
                    prop_assert!((p[d] - q[d]).abs() <= 1e-12 * (1.0 + q[d].abs()));
                }
            }
        }
    }
}
