//! Synthetic, differentiable binding-affinity oracle with QED/SA proxies and
//! a seeded pocket-ligand dataset generator.
//!
//! The pair energy has the gauss1/gauss2/repulsion shape of an empirical
//! docking function, evaluated on surface distance `s = d - R_i - R_j` over
//! ligand-pocket pairs. A smoothstep taper takes each pair to zero at the
//! cutoff so the energy is C1 everywhere.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::molsys::{self, AtomCloud, ComplexRecord, Element, Labels, MoleculeCloud, PocketCloud, Vocab};
use crate::rng::stream_rng;

/// Gas constant in kcal/(mol K).
pub const GAS_CONSTANT: f64 = 1.98720425864e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub w_gauss1: f64,
    pub w_gauss2: f64,
    pub w_repulsion: f64,
    /// Interaction radius per element, Å.
    pub radii: BTreeMap<Element, f64>,
    /// Pairs at or beyond this distance contribute nothing, Å.
    pub cutoff: f64,
    /// Width of the smoothstep taper ending at `cutoff`, Å.
    pub taper: f64,
    /// Multiplier from raw pair energy to kcal/mol.
    pub scale: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        let radii = [
            (Element::C, 1.9),
            (Element::N, 1.8),
            (Element::O, 1.7),
            (Element::F, 1.5),
            (Element::P, 2.1),
            (Element::S, 2.0),
            (Element::Cl, 1.8),
        ]
        .into_iter()
        .collect();
        OracleParams {
            w_gauss1: -0.035,
            w_gauss2: -0.005,
            w_repulsion: 0.84,
            radii,
            cutoff: 8.0,
            taper: 1.0,
            scale: DEFAULT_SCALE,
        }
    }
}

/// Calibrated on generated data so the median label sits near -7 kcal/mol.
const DEFAULT_SCALE: f64 = 10.0;

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !(self.taper > 0.0) || self.taper > self.cutoff {
            return Err(Error::Config("oracle cutoff/taper must satisfy 0 < taper <= cutoff".into()));
        }
        for e in Element::ALL {
            match self.radii.get(&e) {
                Some(&r) if r > 0.0 => {}
                _ => return Err(Error::Config(format!("oracle radius for {e} missing or not positive"))),
            }
        }
        if ![self.w_gauss1, self.w_gauss2, self.w_repulsion, self.scale].iter().all(|w| w.is_finite()) {
            return Err(Error::Config("oracle weights must be finite".into()));
        }
        Ok(())
    }

    pub fn radius(&self, e: Element) -> f64 {
        self.radii[&e]
    }

    /// Untapered pair energy and its derivative in surface distance.
    pub fn pair_energy(&self, s: f64) -> (f64, f64) {
        let g1 = (-(s / 0.5).powi(2)).exp();
        let u = (s - 3.0) / 2.0;
        let g2 = (-u * u).exp();
        let (rep, drep) = if s < 0.0 { (s * s, 2.0 * s) } else { (0.0, 0.0) };
        let e = self.w_gauss1 * g1 + self.w_gauss2 * g2 + self.w_repulsion * rep;
        let de = self.w_gauss1 * (-8.0 * s * g1) + self.w_gauss2 * (-u * g2) + self.w_repulsion * drep;
        (e, de)
    }

    /// Smoothstep taper and its derivative in distance.
    fn taper(&self, d: f64) -> (f64, f64) {
        let start = self.cutoff - self.taper;
        if d <= start {
            (1.0, 0.0)
        } else if d >= self.cutoff {
            (0.0, 0.0)
        } else {
            let u = (d - start) / self.taper;
            (1.0 - u * u * (3.0 - 2.0 * u), -6.0 * u * (1.0 - u) / self.taper)
        }
    }
}

/// Oracle output: affinity and its gradient with respect to ligand coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinity {
    pub delta_g: f64,
    pub grad: Vec<Vec3>,
}

/// Raw (unscaled) sum of tapered pair energies, optionally restricted to the
/// repulsion term.
fn pair_sum(pocket: &AtomCloud, ligand: &AtomCloud, params: &OracleParams, repulsion_only: bool) -> (f64, Vec<Vec3>) {
    let mut total = 0.0;
    let mut grad = vec![[0.0; 3]; ligand.len()];
    let cut2 = params.cutoff * params.cutoff;
    for (i, &x) in ligand.coords.iter().enumerate() {
        let ri = params.radius(ligand.element(i));
        for (j, &p) in pocket.coords.iter().enumerate() {
            let diff = geom::sub(x, p);
            let d2 = geom::dot(diff, diff);
            if d2 >= cut2 {
                continue;
            }
            let d = d2.sqrt();
            let s = d - ri - params.radius(pocket.element(j));
            let (e, de) = if repulsion_only {
                if s < 0.0 {
                    (params.w_repulsion * s * s, params.w_repulsion * 2.0 * s)
                } else {
                    (0.0, 0.0)
                }
            } else {
                params.pair_energy(s)
            };
            let (tau, dtau) = params.taper(d);
            total += e * tau;
            if d > 0.0 {
                let dd = (de * tau + e * dtau) / d;
                for k in 0..3 {
                    grad[i][k] += dd * diff[k];
                }
            }
        }
    }
    (total, grad)
}

/// Pseudo binding affinity in kcal/mol with its exact analytic gradient.
pub fn pseudo_affinity(pocket: &PocketCloud, ligand: &AtomCloud, params: &OracleParams) -> Affinity {
    let (raw, grad) = pair_sum(pocket.cloud(), ligand, params, false);
    Affinity {
        delta_g: params.scale * raw,
        grad: grad.into_iter().map(|g| geom::scale(g, params.scale)).collect(),
    }
}

/// Same quantity without the gradient.
pub fn score(pocket: &PocketCloud, ligand: &AtomCloud, params: &OracleParams) -> f64 {
    pseudo_affinity(pocket, ligand, params).delta_g
}

/// C1 smoothstep from 0 at `a` to 1 at `b`.
fn smooth(x: f64, a: f64, b: f64) -> f64 {
    let u = ((x - a) / (b - a)).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Drug-likeness proxy: geometric mean of a size desirability (zero for a
/// single atom, plateau between 12 and 24 atoms) and a heteroatom-fraction
/// desirability peaked at 0.25.
pub fn qed_proxy(m: &AtomCloud) -> f64 {
    let n = m.len() as f64;
    let d_size = if n <= 12.0 { smooth(n, 1.0, 12.0) } else { 1.0 - 0.8 * smooth(n, 24.0, 40.0) };
    let hetero = (0..m.len()).filter(|&i| m.element(i) != Element::C).count() as f64 / n.max(1.0);
    let d_het = (-((hetero - 0.25) / 0.2).powi(2)).exp();
    (d_size * d_het).sqrt()
}

/// Synthetic-accessibility proxy in [0,1], higher is easier: penalises
/// branch points, ring closures and disconnected fragments of the inferred
/// bond graph. A single atom scores 1.
pub fn sa_proxy(m: &AtomCloud) -> f64 {
    let n = m.len();
    if n <= 1 {
        return 1.0;
    }
    let bonds = molsys::infer_bonds(m, molsys::DEFAULT_BOND_TOLERANCE);
    let adj = molsys::adjacency(n, &bonds);
    let branch = adj.iter().filter(|a| a.len() >= 3).count() as f64 / n as f64;
    let components = count_components(&adj);
    let rings = (bonds.len() + components) as f64 - n as f64;
    let fragments = (components - 1) as f64;
    (-(4.0 * branch + 0.5 * rings + 0.3 * fragments)).exp()
}

fn count_components(adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut count = 0;
    for start in 0..adj.len() {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

/// ΔG = R·T·ln K in kcal/mol.
#[allow(non_snake_case)]
pub fn deltaG_from_K(k: f64, temperature: f64) -> Result<f64> {
    if !(k > 0.0) || !(temperature > 0.0) {
        return Err(Error::Domain(format!("deltaG_from_K needs K > 0 and T > 0, got K={k}, T={temperature}")));
    }
    Ok(GAS_CONSTANT * temperature * k.ln())
}

pub fn labels(pocket: &PocketCloud, ligand: &AtomCloud, params: &OracleParams) -> Labels {
    Labels { delta_g: score(pocket, ligand, params), qed: qed_proxy(ligand), sa: sa_proxy(ligand) }
}

/// Geometry knobs of the synthetic complex generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub pocket_atoms: (usize, usize),
    /// Inner radius of the pocket shell, Å.
    pub pocket_radius: (f64, f64),
    pub shell_thickness: f64,
    /// Opening half-angle range of the spherical cap, degrees.
    pub cap_angle: (f64, f64),
    pub pocket_min_separation: f64,
    pub ligand_atoms: (usize, usize),
    /// Range of the per-record lower bound on ligand-pocket surface distance, Å.
    pub surface_gap: (f64, f64),
    /// Std of a rigid ligand translation applied after relaxation, Å.
    pub pose_jitter: f64,
    /// Fraction of records deliberately placed in a clash (ΔG > 0).
    pub clash_fraction: f64,
    /// Random placement offset of each complex, Å.
    pub placement_box: f64,
    pub relax_steps: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            pocket_atoms: (30, 80),
            pocket_radius: (6.5, 8.5),
            shell_thickness: 2.0,
            cap_angle: (120.0, 160.0),
            pocket_min_separation: 3.0,
            ligand_atoms: (8, 30),
            surface_gap: (-1.2, -0.1),
            pose_jitter: 0.5,
            clash_fraction: 0.02,
            placement_box: 15.0,
            relax_steps: 10,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pocket_atoms.0 >= 1
            && self.pocket_atoms.0 <= self.pocket_atoms.1
            && self.ligand_atoms.0 >= 1
            && self.ligand_atoms.0 <= self.ligand_atoms.1
            && self.pocket_radius.0 > 0.0
            && self.pocket_radius.0 <= self.pocket_radius.1
            && (0.0..=1.0).contains(&self.clash_fraction)
            && self.cap_angle.0 > 0.0
            && self.cap_angle.0 <= self.cap_angle.1
            && self.cap_angle.1 <= 180.0
            && self.shell_thickness >= 0.0
            && self.pocket_min_separation > 0.0
            && self.placement_box >= 0.0
            && self.surface_gap.0 < self.surface_gap.1
            && self.pose_jitter >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("generator ranges are inconsistent".into()))
        }
    }
}

const POCKET_MIX: [(Element, f64); 4] = [(Element::C, 0.55), (Element::N, 0.2), (Element::O, 0.2), (Element::S, 0.05)];
const LIGAND_MIX: [(Element, f64); 4] = [(Element::C, 0.68), (Element::N, 0.14), (Element::O, 0.15), (Element::S, 0.03)];
/// Placement tries before a growth step gives up.
const MAX_ATTEMPTS: usize = 50;

fn pick_element<R: Rng + ?Sized>(mix: &[(Element, f64)], rng: &mut R) -> Element {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(e, p) in mix {
        acc += p;
        if u < acc {
            return e;
        }
    }
    mix[mix.len() - 1].0
}

fn unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    UnitSphere.sample(rng)
}

/// Pocket atoms on a spherical-cap shell around the origin, opening towards +z.
fn grow_pocket<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Option<(Vec<Vec3>, Vec<Element>, f64)> {
    let radius = rng.random_range(cfg.pocket_radius.0..=cfg.pocket_radius.1);
    let cos_max = rng.random_range(cfg.cap_angle.0..=cfg.cap_angle.1).to_radians().cos();
    let target = rng.random_range(cfg.pocket_atoms.0..=cfg.pocket_atoms.1);
    let mut coords: Vec<Vec3> = Vec::with_capacity(target);
    let min2 = cfg.pocket_min_separation.powi(2);
    let mut tries = 0;
    while coords.len() < target && tries < 200 * target {
        tries += 1;
        let u = unit(rng);
        // polar angle measured from -z so the opening faces +z
        if -u[2] < cos_max {
            continue;
        }
        let p = geom::scale(u, radius + rng.random::<f64>() * cfg.shell_thickness);
        if coords.iter().all(|&q| {
            let d = geom::sub(p, q);
            geom::dot(d, d) >= min2
        }) {
            coords.push(p);
        }
    }
    if coords.len() < cfg.pocket_atoms.0 {
        return None;
    }
    let elements = coords.iter().map(|_| pick_element(&POCKET_MIX, rng)).collect();
    Some((coords, elements, radius))
}

/// Tree-shaped ligand grown inside the cavity. Every new atom keeps its
/// surface distance to the pocket above `s_min`.
fn grow_ligand<R: Rng + ?Sized>(
    pocket: &[Vec3],
    pocket_el: &[Element],
    cavity: f64,
    n: usize,
    gap: (f64, f64),
    params: &OracleParams,
    rng: &mut R,
) -> Option<(Vec<Vec3>, Vec<Element>)> {
    let s_min = rng.random_range(gap.0..gap.1);
    let branchiness: f64 = rng.random();
    let fits = |p: Vec3, e: Element| {
        let r = params.radius(e);
        pocket.iter().zip(pocket_el).all(|(&q, &f)| geom::dist(p, q) - r - params.radius(f) >= s_min)
            && geom::norm(p) <= cavity + 1.0
    };
    let mut coords: Vec<Vec3> = Vec::with_capacity(n);
    let mut els: Vec<Element> = Vec::with_capacity(n);
    let mut adj: Vec<Vec<usize>> = Vec::with_capacity(n);
    for _ in 0..MAX_ATTEMPTS {
        let p = geom::scale(unit(rng), 1.5 * rng.random::<f64>());
        let e = pick_element(&LIGAND_MIX, rng);
        if fits(p, e) {
            coords.push(p);
            els.push(e);
            adj.push(Vec::new());
            break;
        }
    }
    if coords.is_empty() {
        return None;
    }
    let max_degree = |e: Element| e.max_valence().min(3);
    'grow: while coords.len() < n {
        for _ in 0..MAX_ATTEMPTS {
            let open: Vec<usize> = (0..coords.len()).filter(|&i| adj[i].len() < max_degree(els[i])).collect();
            if open.is_empty() {
                return None;
            }
            let last = *open.last().unwrap();
            let parent = if rng.random::<f64>() < branchiness { open[rng.random_range(0..open.len())] } else { last };
            let e = pick_element(&LIGAND_MIX, rng);
            if adj[parent].len() + 1 > max_degree(els[parent]) {
                continue;
            }
            let dir = unit(rng);
            let ok_angle = adj[parent].iter().all(|&k| {
                let a = geom::angle_deg(geom::add(coords[parent], dir), coords[parent], coords[k]);
                (105.0..=125.0).contains(&a)
            });
            if !ok_angle {
                continue;
            }
            let p = geom::add(coords[parent], geom::scale(dir, rng.random_range(1.35..1.55)));
            // 1-3 neighbours must stay unbonded, everything else further away
            let clear = coords.iter().enumerate().all(|(k, &q)| {
                if k == parent {
                    return true;
                }
                let d = geom::dist(p, q);
                let bond_cut = e.covalent_radius() + els[k].covalent_radius() + molsys::DEFAULT_BOND_TOLERANCE + 0.05;
                let floor = if adj[parent].contains(&k) { bond_cut } else { bond_cut.max(2.7) };
                d >= floor
            });
            if !clear || !fits(p, e) {
                continue;
            }
            let idx = coords.len();
            coords.push(p);
            els.push(e);
            adj.push(vec![parent]);
            adj[parent].push(idx);
            continue 'grow;
        }
        return None;
    }
    Some((coords, els))
}

/// Rigid translational descent on the repulsion term only.
fn relax(pocket: &AtomCloud, ligand: &mut AtomCloud, params: &OracleParams, steps: usize) {
    for _ in 0..steps {
        let (_, grad) = pair_sum(pocket, ligand, params, true);
        let mut g = [0.0; 3];
        for gi in &grad {
            g = geom::add(g, *gi);
        }
        let n = geom::norm(g);
        if n < 1e-9 {
            break;
        }
        let step = geom::scale(g, -(0.1f64).min(0.05 * n) / n);
        for x in &mut ligand.coords {
            *x = geom::add(*x, step);
        }
    }
}

/// Pushes the ligand towards a pocket atom until the affinity turns positive.
fn force_clash<R: Rng + ?Sized>(pocket: &PocketCloud, ligand: &mut AtomCloud, params: &OracleParams, rng: &mut R) {
    let target = pocket.coords[rng.random_range(0..pocket.len())];
    let dir = geom::normalize(geom::sub(target, ligand.centroid()));
    for _ in 0..80 {
        if score(pocket, ligand, params) > 0.0 {
            return;
        }
        for x in &mut ligand.coords {
            *x = geom::add(*x, geom::scale(dir, 0.25));
        }
    }
}

fn to_types(els: &[Element], vocab: &Vocab) -> Vec<usize> {
    els.iter().map(|&e| vocab.index_of(e).expect("generator elements are in the default vocabulary")).collect()
}

fn generate_record(seed: u64, index: usize, cfg: &GenConfig, params: &OracleParams) -> ComplexRecord {
    let mut rng = stream_rng(seed, index as u64);
    let vocab = Vocab::default();
    let clash = rng.random::<f64>() < cfg.clash_fraction;
    let mut attempt = 0usize;
    loop {
        attempt += 1;
        if attempt > 1 {
            log::debug!("record {index}: resampling (attempt {attempt})");
        }
        let Some((pc, pe, radius)) = grow_pocket(cfg, &mut rng) else { continue };
        let n_lig = rng.random_range(cfg.ligand_atoms.0..=cfg.ligand_atoms.1);
        let Some((lc, le)) = grow_ligand(&pc, &pe, radius, n_lig, cfg.surface_gap, params, &mut rng) else { continue };

        let rot = geom::random_rotation(&mut rng);
        let shift: Vec3 = std::array::from_fn(|_| rng.random_range(-cfg.placement_box..=cfg.placement_box));
        let place = |p: Vec3| geom::add(geom::rotate(&rot, p), shift);
        let pocket_cloud = AtomCloud::new(pc.into_iter().map(place).collect(), to_types(&pe, &vocab), vocab.clone())
            .expect("generated pocket is well formed");
        let mut lig = AtomCloud::new(lc.into_iter().map(place).collect(), to_types(&le, &vocab), vocab.clone())
            .expect("generated ligand is well formed");
        relax(&pocket_cloud, &mut lig, params, cfg.relax_steps);
        if cfg.pose_jitter > 0.0 {
            let d: Vec3 = std::array::from_fn(|_| cfg.pose_jitter * rng.sample::<f64, _>(rand_distr::StandardNormal));
            for x in &mut lig.coords {
                *x = geom::add(*x, d);
            }
        }
        let pocket = PocketCloud::from_cloud(quantize_cloud(pocket_cloud));
        if clash {
            force_clash(&pocket, &mut lig, params, &mut rng);
        }
        let lig = quantize_cloud(lig);
        let labels = labels(&pocket, &lig, params);
        if !clash && labels.delta_g >= 0.0 {
            continue;
        }
        return ComplexRecord { id: format!("c{index:05}"), pocket, ligand: MoleculeCloud(lig), labels };
    }
}

fn quantize_cloud(mut c: AtomCloud) -> AtomCloud {
    for p in &mut c.coords {
        *p = geom::quantize(*p);
    }
    c
}

/// Seeded synthetic complexes. Record `i` depends only on `(seed, i)`.
pub fn generate_dataset(seed: u64, n_complexes: usize, cfg: &GenConfig, params: &OracleParams) -> Result<Vec<ComplexRecord>> {
    if n_complexes == 0 {
        return Err(Error::Config("n_complexes must be at least 1".into()));
    }
    cfg.validate()?;
    params.validate()?;
    Ok((0..n_complexes).into_par_iter().map(|i| generate_record(seed, i, cfg, params)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(el_l: Element, el_p: Element, d: f64) -> (PocketCloud, AtomCloud) {
        let v = Vocab::full();
        let p = PocketCloud::new(vec![[0.0; 3]], vec![v.index_of(el_p).unwrap()], v.clone()).unwrap();
        let l = AtomCloud::new(vec![[d, 0.0, 0.0]], vec![v.index_of(el_l).unwrap()], v).unwrap();
        (p, l)
    }

    #[test]
    fn contact_pair_matches_hand_substitution() {
        let mut params = OracleParams::default();
        params.scale = 1.0;
        let (p, l) = single(Element::C, Element::C, 3.8);
        let e = score(&p, &l, &params);
        let expected = -0.035 + -0.005 * (-2.25f64).exp();
        assert!((e - expected).abs() < 1e-15, "{e} vs {expected}");
    }

    #[test]
    fn far_ligand_scores_zero() {
        let (p, l) = single(Element::N, Element::O, 100.0);
        let a = pseudo_affinity(&p, &l, &OracleParams::default());
        assert_eq!(a.delta_g, 0.0);
        assert_eq!(a.grad, vec![[0.0; 3]]);
    }

    #[test]
    fn energy_is_c1_across_taper_edges() {
        let params = OracleParams::default();
        for edge in [params.cutoff - params.taper, params.cutoff] {
            let e = |d: f64| {
                let (p, l) = single(Element::C, Element::C, d);
                pseudo_affinity(&p, &l, &params)
            };
            let (lo, hi) = (e(edge - 1e-9), e(edge + 1e-9));
            assert!((lo.delta_g - hi.delta_g).abs() < 1e-10);
            assert!((lo.grad[0][0] - hi.grad[0][0]).abs() < 1e-8);
        }
    }

    #[test]
    fn deltag_from_k_values() {
        assert_eq!(deltaG_from_K(1.0, 298.15).unwrap(), 0.0);
        let g6 = deltaG_from_K(1e-6, 298.15).unwrap();
        let independent = 1.98720425864e-3 * 298.15 * (-6.0 * std::f64::consts::LN_10);
        assert!((g6 - independent).abs() < 1e-12);
        assert!((g6 + 8.186).abs() < 0.005);
        let g9 = deltaG_from_K(1e-9, 298.15).unwrap();
        assert!((g9 / g6 - 1.5).abs() < 1e-12);
        assert!(deltaG_from_K(0.0, 298.15).is_err());
        assert!(deltaG_from_K(-1.0, 298.15).is_err());
    }

    #[test]
    fn single_atom_proxies_hit_boundaries() {
        let (_, l) = single(Element::C, Element::C, 0.0);
        assert_eq!(qed_proxy(&l), 0.0);
        assert_eq!(sa_proxy(&l), 1.0);
    }

    #[test]
    fn proxies_stay_in_unit_interval() {
        let v = Vocab::default();
        let chain = AtomCloud::new((0..15).map(|i| [1.5 * i as f64, 0.0, 0.0]).collect(), vec![0, 1, 2, 0, 0, 0, 3, 0, 0, 1, 0, 0, 0, 2, 0], v)
            .unwrap();
        for q in [qed_proxy(&chain), sa_proxy(&chain)] {
            assert!((0.0..=1.0).contains(&q));
        }
        assert_eq!(sa_proxy(&chain), 1.0);
    }

    #[test]
    fn params_round_trip_and_validate() {
        let p = OracleParams::default();
        p.validate().unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"Cl\":1.8"));
        let back: OracleParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let mut bad = p.clone();
        bad.radii.remove(&Element::S);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic_and_labelled() {
        let cfg = GenConfig::default();
        let params = OracleParams::default();
        let a = generate_dataset(11, 12, &cfg, &params).unwrap();
        let b = generate_dataset(11, 12, &cfg, &params).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert!(r.ligand.len() >= cfg.ligand_atoms.0 && r.ligand.len() <= cfg.ligand_atoms.1);
            assert!(r.pocket.len() >= cfg.pocket_atoms.0 && r.pocket.len() <= cfg.pocket_atoms.1);
            assert_eq!(r.labels, labels(&r.pocket, &r.ligand, &params));
        }
    }
}
