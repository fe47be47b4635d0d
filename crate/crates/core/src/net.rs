//! E(3)-equivariant message-passing network.
//!
//! One architecture serves two roles:
//!
//! * **denoiser** – predicts the clean coordinates `x0_hat` (an equivariant
//!   residual update of the noisy input) and per-atom type logits;
//! * **regressor** – predicts a rigid-motion-invariant property vector by
//!   sum-pooling per-atom readouts.
//!
//! Only ligand atoms receive messages. Pocket atoms act as fixed context: their
//! features are embedded once and their coordinates never move. Each ligand
//! atom is connected to its `k_nn` nearest atoms in the joint cloud (ties
//! broken by index). With `k_pocket > 0` the neighbourhood is instead split
//! into the `k_nn` nearest ligand atoms plus the `k_pocket` nearest pocket
//! atoms, so a collapsed noisy ligand still sees its pocket. A layer computes
//!
//! ```text
//! m_ij = φ_m(h_i, h_j, rbf(|x_i - x_j|), edge_type)
//! x_i ← x_i + 1/k Σ_j (x_i - x_j) φ_x(m_ij) / (|x_i - x_j| + 1)
//! h_i ← h_i + φ_h(h_i, 1/k Σ_j m_ij)
//! ```
//!
//! Forward passes are recorded on an [`autodiff::Tape`](crate::autodiff::Tape)
//! so exact gradients with respect to ligand coordinates and parameters come
//! from the same code path.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Grads, Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::molsys::PocketCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetRole {
    Denoiser,
    Regressor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub role: NetRole,
    pub layers: usize,
    pub hidden_dim: usize,
    pub k_nn: usize,
    /// Guaranteed pocket neighbours per ligand atom; 0 uses the joint kNN.
    pub k_pocket: usize,
    /// Kept for config compatibility with attention pooling; unused.
    pub heads: usize,
    /// 0, or 2 for a denoiser that accepts `(g_norm, mask)` conditioning.
    pub cond_channels: usize,
    /// Size of the element vocabulary.
    pub num_types: usize,
    /// Regressor output width (1 for affinity, 3 for affinity/QED/SA).
    pub outputs: usize,
    pub rbf_count: usize,
    pub rbf_max: f64,
    /// When set, the unconditional input is `(sentinel, 1)` instead of `(0, 0)`.
    pub null_sentinel: Option<f64>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::denoiser(4)
    }
}

impl NetConfig {
    pub fn denoiser(num_types: usize) -> Self {
        NetConfig {
            role: NetRole::Denoiser,
            layers: 4,
            hidden_dim: 64,
            k_nn: 8,
            k_pocket: 0,
            heads: 16,
            cond_channels: 0,
            num_types,
            outputs: 0,
            rbf_count: 16,
            rbf_max: 10.0,
            null_sentinel: None,
        }
    }

    pub fn regressor(num_types: usize, outputs: usize) -> Self {
        NetConfig {
            role: NetRole::Regressor,
            layers: 2,
            hidden_dim: 128,
            k_nn: 8,
            k_pocket: 0,
            heads: 8,
            cond_channels: 0,
            num_types,
            outputs,
            rbf_count: 16,
            rbf_max: 10.0,
            null_sentinel: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.hidden_dim < 4 || self.k_nn < 1 {
            return Err(Error::Config("network needs layers >= 1, hidden_dim >= 4, k_nn >= 1".into()));
        }
        if self.num_types < 1 || self.rbf_count < 1 || !(self.rbf_max > 0.0) {
            return Err(Error::Config("network needs num_types >= 1 and a positive RBF range".into()));
        }
        match self.role {
            NetRole::Denoiser if self.cond_channels != 0 && self.cond_channels != 2 => {
                Err(Error::Config("denoiser cond_channels must be 0 or 2".into()))
            }
            NetRole::Regressor if self.cond_channels != 0 => Err(Error::Config("regressor takes no conditioning".into())),
            NetRole::Regressor if self.outputs == 0 => Err(Error::Config("regressor needs at least one output".into())),
            _ => Ok(()),
        }
    }

    fn input_width(&self) -> usize {
        self.num_types + 2 + self.cond_channels
    }

    fn rbf_centers(&self) -> Rc<[f64]> {
        let n = self.rbf_count;
        (0..n).map(|i| if n == 1 { 0.0 } else { self.rbf_max * i as f64 / (n - 1) as f64 }).collect()
    }

    fn rbf_gamma(&self) -> f64 {
        let spacing = if self.rbf_count > 1 { self.rbf_max / (self.rbf_count - 1) as f64 } else { 1.0 };
        1.0 / (2.0 * spacing * spacing)
    }

    /// Named parameter blocks in storage order.
    pub fn layout(&self) -> Vec<BlockSpec> {
        let h = self.hidden_dim;
        let mut out = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize| out.push(BlockSpec { name, rows, cols });
        push("embed.w".into(), self.input_width(), h);
        push("embed.b".into(), 1, h);
        for l in 0..self.layers {
            push(format!("layer{l}.msg1.w"), 2 * h + self.rbf_count + 2, h);
            push(format!("layer{l}.msg1.b"), 1, h);
            push(format!("layer{l}.msg2.w"), h, h);
            push(format!("layer{l}.msg2.b"), 1, h);
            if self.role == NetRole::Denoiser {
                push(format!("layer{l}.coord1.w"), h, h);
                push(format!("layer{l}.coord1.b"), 1, h);
                push(format!("layer{l}.coord2.w"), h, 1);
                push(format!("layer{l}.coord2.b"), 1, 1);
            }
            push(format!("layer{l}.node1.w"), 2 * h, h);
            push(format!("layer{l}.node1.b"), 1, h);
            push(format!("layer{l}.node2.w"), h, h);
            push(format!("layer{l}.node2.b"), 1, h);
        }
        match self.role {
            NetRole::Denoiser => {
                push("types.w".into(), h, self.num_types);
                push("types.b".into(), 1, self.num_types);
            }
            NetRole::Regressor => {
                push("readout1.w".into(), h, h);
                push("readout1.b".into(), 1, h);
                push("readout2.w".into(), h, self.outputs);
                push("readout2.b".into(), 1, self.outputs);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Flat weight vector plus its block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub layout: Vec<BlockSpec>,
    pub values: Vec<f64>,
}

impl ParameterSet {
    /// Glorot-uniform weights, zero biases; coordinate heads start small.
    pub fn init<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let layout = cfg.layout();
        let mut values = Vec::new();
        for b in &layout {
            if b.name.ends_with(".b") {
                values.extend(std::iter::repeat_n(0.0, b.rows * b.cols));
                continue;
            }
            let mut a = (6.0 / (b.rows + b.cols) as f64).sqrt();
            if b.name.contains("coord2") {
                a *= 0.1;
            }
            values.extend((0..b.rows * b.cols).map(|_| rng.random_range(-a..a)));
        }
        ParameterSet { layout, values }
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn offset_of(&self, name: &str) -> Option<(usize, usize)> {
        let mut off = 0;
        for b in &self.layout {
            let n = b.rows * b.cols;
            if b.name == name {
                return Some((off, n));
            }
            off += n;
        }
        None
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.offset_of(name).map(|(o, n)| &self.values[o..o + n])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.offset_of(name).map(move |(o, n)| &mut self.values[o..o + n])
    }

    /// Zeroes every coordinate-update output block, making the denoiser an
    /// identity map on coordinates.
    pub fn zero_coordinate_heads(&mut self) {
        let names: Vec<String> = self.layout.iter().filter(|b| b.name.contains("coord2")).map(|b| b.name.clone()).collect();
        for n in names {
            self.block_mut(&n).unwrap().fill(0.0);
        }
    }

    pub fn layout_hash(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.layout {
            h.update(format!("{}:{}x{};", b.name, b.rows, b.cols).as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn matches(&self, cfg: &NetConfig) -> bool {
        self.layout == cfg.layout()
    }
}

/// Conditioning channels for a CFG denoiser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Condition {
    pub g_norm: f64,
    pub mask: f64,
}

/// Affinity rescaling that maps typical kcal/mol values into roughly `[0, 1]`.
pub const AFFINITY_SCALE: f64 = -1.0 / 12.0;

impl Condition {
    pub fn target(delta_g: f64) -> Self {
        Condition { g_norm: delta_g * AFFINITY_SCALE, mask: 1.0 }
    }

    pub fn null(cfg: &NetConfig) -> Self {
        match cfg.null_sentinel {
            Some(s) => Condition { g_norm: s, mask: 1.0 },
            None => Condition { g_norm: 0.0, mask: 0.0 },
        }
    }
}

/// Ligand-side inputs of a forward pass.
#[derive(Clone, Debug)]
pub struct LigandInput<'a> {
    pub x: &'a [Vec3],
    /// `N×K` one-hot or simplex rows.
    pub v: &'a Mat,
    /// Normalised time `t/T`; 0 for clean inputs.
    pub time: f64,
    pub cond: Option<Condition>,
}

/// Edges from each ligand atom (`dst`) to its nearest neighbours (`src`, an
/// index into the joint `[ligand; pocket]` list).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnnGraph {
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
}

/// Joint kNN when `k_pocket == 0`, otherwise `k` ligand plus `k_pocket`
/// pocket neighbours per ligand atom.
pub fn build_graph(ligand: &[Vec3], pocket: &[Vec3], k: usize, k_pocket: usize) -> KnnGraph {
    if k_pocket == 0 {
        return knn_graph(ligand, pocket, k);
    }
    let n = ligand.len();
    let mut dst = Vec::new();
    let mut src = Vec::new();
    let mut cand: Vec<(f64, usize)> = Vec::new();
    for i in 0..n {
        for (range, quota) in [(0..n, k), (n..n + pocket.len(), k_pocket)] {
            cand.clear();
            for j in range.filter(|&j| j != i) {
                let p = if j < n { ligand[j] } else { pocket[j - n] };
                let d = geom::sub(ligand[i], p);
                cand.push((geom::dot(d, d), j));
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, j) in cand.iter().take(quota) {
                dst.push(i);
                src.push(j);
            }
        }
    }
    KnnGraph { dst, src }
}

pub fn knn_graph(ligand: &[Vec3], pocket: &[Vec3], k: usize) -> KnnGraph {
    let n = ligand.len();
    let joint: Vec<Vec3> = ligand.iter().chain(pocket).copied().collect();
    let take = k.min(joint.len() - 1);
    let mut dst = Vec::with_capacity(n * take);
    let mut src = Vec::with_capacity(n * take);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(joint.len());
    for i in 0..n {
        cand.clear();
        for (j, p) in joint.iter().enumerate() {
            if j != i {
                let d = geom::sub(ligand[i], *p);
                cand.push((geom::dot(d, d), j));
            }
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &cand[..take] {
            dst.push(i);
            src.push(j);
        }
    }
    KnnGraph { dst, src }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Needs {
    pub coords: bool,
    pub params: bool,
}

/// A recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    pub x_in: Var,
    pub params: Vec<Var>,
    /// Denoiser: predicted clean coordinates (`N×3`).
    pub x0: Option<Var>,
    /// Denoiser: type logits (`N×K`).
    pub logits: Option<Var>,
    /// Regressor: pooled outputs (`1×outputs`).
    pub y: Option<Var>,
}

impl Forward {
    /// Concatenates per-block parameter gradients in layout order.
    pub fn flat_param_grad(&self, grads: &Grads, set: &ParameterSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(set.len());
        for (v, b) in self.params.iter().zip(&set.layout) {
            match grads.get(*v) {
                Some(g) => out.extend_from_slice(&g.data),
                None => out.extend(std::iter::repeat_n(0.0, b.rows * b.cols)),
            }
        }
        out
    }
}

fn check_finite(tape: &Tape, vars: &[Var], layer: usize) -> Result<()> {
    if vars.iter().all(|&v| tape.value(v).all_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLayer { layer })
    }
}

/// Records a forward pass of either role.
pub fn forward(params: &ParameterSet, cfg: &NetConfig, pocket: &PocketCloud, lig: &LigandInput, needs: Needs) -> Result<Forward> {
    cfg.validate()?;
    if !params.matches(cfg) {
        return Err(Error::ShapeMismatch("parameter layout does not match network config".into()));
    }
    let n = lig.x.len();
    let k = cfg.num_types;
    if n == 0 || lig.v.rows != n || lig.v.cols != k {
        return Err(Error::ShapeMismatch(format!("ligand has {n} atoms but type matrix is {}x{}", lig.v.rows, lig.v.cols)));
    }
    if pocket.vocab.len() != k {
        return Err(Error::ShapeMismatch(format!("pocket vocabulary has {} types, network expects {k}", pocket.vocab.len())));
    }
    if (cfg.cond_channels == 2) != lig.cond.is_some() {
        return Err(Error::ShapeMismatch("conditioning must be given iff cond_channels = 2".into()));
    }
    let np = pocket.len();
    let h = cfg.hidden_dim;
    let fw = cfg.input_width();

    let mut tape = Tape::new();
    let mut pv = Vec::with_capacity(params.layout.len());
    let mut off = 0;
    for b in &params.layout {
        let m = Mat::from_vec(b.rows, b.cols, params.values[off..off + b.rows * b.cols].to_vec());
        off += b.rows * b.cols;
        pv.push(if needs.params { tape.param(m) } else { tape.constant(m) });
    }
    let mut cursor = 0;
    let mut next = || {
        let v = pv[cursor];
        cursor += 1;
        v
    };

    // node features: [type one-hot, is_ligand, time, cond...]
    let mut lf = Mat::zeros(n, fw);
    for i in 0..n {
        let row = lf.row_mut(i);
        row[..k].copy_from_slice(lig.v.row(i));
        row[k] = 1.0;
        row[k + 1] = lig.time;
        if let Some(c) = lig.cond {
            row[k + 2] = c.g_norm;
            row[k + 3] = c.mask;
        }
    }
    let mut pf = Mat::zeros(np, fw);
    for j in 0..np {
        let row = pf.row_mut(j);
        row[pocket.types[j]] = 1.0;
        row[k + 1] = lig.time;
    }

    let graph = build_graph(lig.x, &pocket.coords, cfg.k_nn, cfg.k_pocket);
    let ne = graph.dst.len();
    let inv_k = 1.0 / (ne / n).max(1) as f64;
    let dst: Rc<[usize]> = graph.dst.into();
    let src: Rc<[usize]> = graph.src.into();
    let mut etype = Mat::zeros(ne, 2);
    for (e, &j) in src.iter().enumerate() {
        etype.data[e * 2 + usize::from(j >= n)] = 1.0;
    }

    let x_in = if needs.coords { tape.param(Mat::from_rows3(lig.x)) } else { tape.constant(Mat::from_rows3(lig.x)) };
    let xp = tape.constant(Mat::from_rows3(&pocket.coords));
    let lf = tape.constant(lf);
    let pf = tape.constant(pf);
    let etype = tape.constant(etype);
    let centers = cfg.rbf_centers();
    let gamma = cfg.rbf_gamma();

    let (ew, eb) = (next(), next());
    let mut hl = tape.linear(lf, ew, eb);
    let hp = tape.linear(pf, ew, eb);
    let mut x = x_in;
    check_finite(&tape, &[hl, hp], 0)?;

    for layer in 0..cfg.layers {
        let h_all = tape.concat_rows(&[hl, hp]);
        let x_all = tape.concat_rows(&[x, xp]);
        let hi = tape.gather(hl, dst.clone());
        let hj = tape.gather(h_all, src.clone());
        let xi = tape.gather(x, dst.clone());
        let xj = tape.gather(x_all, src.clone());
        let rel = tape.sub(xi, xj);
        let sq = tape.mul(rel, rel);
        let d2 = tape.sum_cols(sq);
        let d2 = tape.add_scalar(d2, 1e-12);
        let d = tape.sqrt(d2);
        let rbf = tape.rbf(d, centers.clone(), gamma);
        let e_in = tape.concat_cols(&[hi, hj, rbf, etype]);
        let (w1, b1, w2, b2) = (next(), next(), next(), next());
        let m = tape.linear(e_in, w1, b1);
        let m = tape.silu(m);
        let m = tape.linear(m, w2, b2);
        let m = tape.silu(m);

        if cfg.role == NetRole::Denoiser {
            let (cw1, cb1, cw2, cb2) = (next(), next(), next(), next());
            let c = tape.linear(m, cw1, cb1);
            let c = tape.silu(c);
            let w = tape.linear(c, cw2, cb2);
            let dp1 = tape.add_scalar(d, 1.0);
            let inv = tape.recip(dp1);
            let coef = tape.mul(w, inv);
            let trans = tape.mul_col(rel, coef);
            let upd = tape.scatter_add(trans, dst.clone(), n);
            let upd = tape.scale(upd, inv_k);
            x = tape.add(x, upd);
        }

        let agg = tape.scatter_add(m, dst.clone(), n);
        let agg = tape.scale(agg, inv_k);
        let cat = tape.concat_cols(&[hl, agg]);
        let (nw1, nb1, nw2, nb2) = (next(), next(), next(), next());
        let u = tape.linear(cat, nw1, nb1);
        let u = tape.silu(u);
        let u = tape.linear(u, nw2, nb2);
        hl = tape.add(hl, u);
        check_finite(&tape, &[hl, x], layer + 1)?;
    }
    debug_assert_eq!(tape.value(hl).cols, h);

    let mut out = Forward { tape, x_in, params: pv.clone(), x0: None, logits: None, y: None };
    match cfg.role {
        NetRole::Denoiser => {
            let (tw, tb) = (next(), next());
            let logits = out.tape.linear(hl, tw, tb);
            out.x0 = Some(x);
            out.logits = Some(logits);
        }
        NetRole::Regressor => {
            let (r1w, r1b, r2w, r2b) = (next(), next(), next(), next());
            let r = out.tape.linear(hl, r1w, r1b);
            let r = out.tape.silu(r);
            let r = out.tape.linear(r, r2w, r2b);
            out.y = Some(out.tape.sum_rows(r));
        }
    }
    let last = [out.x0, out.logits, out.y].into_iter().flatten().collect::<Vec<_>>();
    check_finite(&out.tape, &last, cfg.layers + 1)?;
    Ok(out)
}

/// Denoiser prediction `(x0_hat, v0_logits)`.
pub fn score_forward(params: &ParameterSet, cfg: &NetConfig, pocket: &PocketCloud, lig: &LigandInput) -> Result<(Vec<Vec3>, Mat)> {
    if cfg.role != NetRole::Denoiser {
        return Err(Error::Config("score_forward needs a denoiser".into()));
    }
    let f = forward(params, cfg, pocket, lig, Needs::default())?;
    Ok((f.tape.value(f.x0.unwrap()).to_rows3(), f.tape.value(f.logits.unwrap()).clone()))
}

/// Vector-Jacobian product `(∂x0_hat/∂x_t)ᵀ · seed`.
pub fn denoiser_vjp(params: &ParameterSet, cfg: &NetConfig, pocket: &PocketCloud, lig: &LigandInput, seed: &[Vec3]) -> Result<Vec<Vec3>> {
    let f = forward(params, cfg, pocket, lig, Needs { coords: true, params: false })?;
    let grads = f.tape.backward(f.x0.unwrap(), Mat::from_rows3(seed));
    Ok(grads.get(f.x_in).map(|g| g.to_rows3()).unwrap_or_else(|| vec![[0.0; 3]; lig.x.len()]))
}

pub fn regressor_forward(params: &ParameterSet, cfg: &NetConfig, pocket: &PocketCloud, lig: &LigandInput) -> Result<Vec<f64>> {
    if cfg.role != NetRole::Regressor {
        return Err(Error::Config("regressor_forward needs a regressor".into()));
    }
    let f = forward(params, cfg, pocket, lig, Needs::default())?;
    Ok(f.tape.value(f.y.unwrap()).data.clone())
}

/// A scalar loss of the regressor output: returns `(value, dvalue/dy)`.
pub trait OutputLoss: Fn(&[f64]) -> (f64, Vec<f64>) {}
impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> OutputLoss for F {}

pub struct InputGradient {
    pub y: Vec<f64>,
    pub loss: f64,
    pub grad: Vec<Vec3>,
}

/// Exact gradient of `loss(regressor(P, M))` with respect to ligand coordinates.
pub fn input_gradient(
    params: &ParameterSet,
    cfg: &NetConfig,
    pocket: &PocketCloud,
    lig: &LigandInput,
    loss: &dyn OutputLoss,
) -> Result<InputGradient> {
    if cfg.role != NetRole::Regressor {
        return Err(Error::Config("input_gradient needs a regressor".into()));
    }
    let f = forward(params, cfg, pocket, lig, Needs { coords: true, params: false })?;
    let yv = f.y.unwrap();
    let y = f.tape.value(yv).data.clone();
    let (value, dy) = loss(&y);
    let grads = f.tape.backward(yv, Mat::from_vec(1, y.len(), dy));
    let grad = grads.get(f.x_in).map(|g| g.to_rows3()).unwrap_or_else(|| vec![[0.0; 3]; lig.x.len()]);
    if grad.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLayer { layer: 0 });
    }
    Ok(InputGradient { y, loss: value, grad })
}

/// Exact gradient of `loss(regressor(P, M))` with respect to all parameters.
pub fn regressor_param_gradient(
    params: &ParameterSet,
    cfg: &NetConfig,
    pocket: &PocketCloud,
    lig: &LigandInput,
    loss: &dyn OutputLoss,
) -> Result<(f64, Vec<f64>)> {
    let f = forward(params, cfg, pocket, lig, Needs { coords: false, params: true })?;
    let yv = f.y.ok_or_else(|| Error::Config("regressor_param_gradient needs a regressor".into()))?;
    let y = f.tape.value(yv).data.clone();
    let (value, dy) = loss(&y);
    let grads = f.tape.backward(yv, Mat::from_vec(1, y.len(), dy));
    let g = f.flat_param_grad(&grads, params);
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteLayer { layer: cfg.layers + 1 });
    }
    Ok((value, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molsys::{one_hot, Vocab};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_pocket(seed: u64, n: usize) -> PocketCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-6.0..6.0))).collect();
        let types = (0..n).map(|_| rng.random_range(0..4)).collect();
        PocketCloud::new(coords, types, Vocab::default()).unwrap()
    }

    fn toy_ligand(seed: u64, n: usize) -> (Vec<Vec3>, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        (x, one_hot(&t, 4))
    }

    fn small(role: NetRole) -> NetConfig {
        let mut c = match role {
            NetRole::Denoiser => NetConfig::denoiser(4),
            NetRole::Regressor => NetConfig::regressor(4, 3),
        };
        c.hidden_dim = 16;
        c.layers = 2;
        c.k_nn = 6;
        c
    }

    #[test]
    fn knn_graph_is_deterministic_with_index_ties() {
        let lig = vec![[0.0; 3]];
        let pocket = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 5.0]];
        let g = knn_graph(&lig, &pocket, 2);
        assert_eq!(g.src, vec![1, 2]);
        let g = knn_graph(&lig, &pocket, 50);
        assert_eq!(g.src.len(), 4);
    }

    #[test]
    fn split_graph_guarantees_pocket_neighbours() {
        let lig = vec![[0.0; 3], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0]];
        let pocket = vec![[9.0, 0.0, 0.0], [0.0, 0.0, 8.0], [0.0, 20.0, 0.0]];
        let joint = build_graph(&lig, &pocket, 2, 0);
        assert!(joint.src.iter().all(|&j| j < 3));
        let split = build_graph(&lig, &pocket, 2, 2);
        assert_eq!(split.dst, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
        assert_eq!(&split.src[..4], &[1, 2, 4, 3]);
    }

    #[test]
    fn zeroed_coordinate_heads_give_identity() {
        let cfg = small(NetRole::Denoiser);
        let mut p = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        p.zero_coordinate_heads();
        let pocket = toy_pocket(2, 20);
        let (x, v) = toy_ligand(3, 7);
        let lig = LigandInput { x: &x, v: &v, time: 0.4, cond: None };
        let (x0, _) = score_forward(&p, &cfg, &pocket, &lig).unwrap();
        assert_eq!(x0, x);
    }

    #[test]
    fn repeated_calls_are_bitwise_identical() {
        let cfg = small(NetRole::Denoiser);
        let p = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let pocket = toy_pocket(2, 20);
        let (x, v) = toy_ligand(3, 7);
        let lig = LigandInput { x: &x, v: &v, time: 0.4, cond: None };
        let a = score_forward(&p, &cfg, &pocket, &lig).unwrap();
        let b = score_forward(&p, &cfg, &pocket, &lig).unwrap();
        let bits = |m: &(Vec<Vec3>, Mat)| -> Vec<u64> {
            m.0.iter().flatten().chain(&m.1.data).map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn regressor_has_three_outputs_and_is_finite() {
        let cfg = small(NetRole::Regressor);
        let p = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let pocket = toy_pocket(2, 20);
        let (x, v) = toy_ligand(3, 7);
        let y = regressor_forward(&p, &cfg, &pocket, &LigandInput { x: &x, v: &v, time: 0.0, cond: None }).unwrap();
        assert_eq!(y.len(), 3);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let cfg = small(NetRole::Regressor);
        let p = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let pocket = toy_pocket(2, 20);
        let (x, _) = toy_ligand(3, 7);
        let wrong = Mat::zeros(6, 4);
        let r = regressor_forward(&p, &cfg, &pocket, &LigandInput { x: &x, v: &wrong, time: 0.0, cond: None });
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
        let other = small(NetRole::Denoiser);
        let v = Mat::zeros(7, 4);
        assert!(matches!(
            forward(&p, &other, &pocket, &LigandInput { x: &x, v: &v, time: 0.0, cond: None }, Needs::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn constant_loss_has_zero_input_gradient() {
        let cfg = small(NetRole::Regressor);
        let p = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let pocket = toy_pocket(2, 20);
        let (x, v) = toy_ligand(3, 7);
        let g = input_gradient(&p, &cfg, &pocket, &LigandInput { x: &x, v: &v, time: 0.0, cond: None }, &|y: &[f64]| {
            (3.0, vec![0.0; y.len()])
        })
        .unwrap();
        assert!(g.grad.iter().flatten().all(|&v| v == 0.0));
    }
}
