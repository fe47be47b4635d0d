//! Evaluation metrics: fingerprint diversity, off-target specificity,
//! bond-geometry divergences, steric clashes and valence validity.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom;
use crate::molsys::{self, AtomCloud, Bond, Element, PocketCloud};

pub const FINGERPRINT_BITS: usize = 1024;
const FP_DIST_BIN: f64 = 0.2;
const FP_ANGLE_BIN: f64 = 15.0;

/// Fixed-width bit vector of hashed bond-environment features.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    width: usize,
}

impl Fingerprint {
    pub fn empty(width: usize) -> Self {
        Fingerprint { words: vec![0; width.div_ceil(64)], width }
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn element_code(e: Element) -> u8 {
    Element::ALL.iter().position(|&x| x == e).unwrap() as u8
}

pub fn fingerprint(m: &AtomCloud) -> Fingerprint {
    fingerprint_with_width(m, FINGERPRINT_BITS)
}

/// Hashes bonded pairs `(e_i, e_j, distance bin)` and bonded angle triples
/// `(e_i, e_center, e_k, angle bin)` into `width` bits.
pub fn fingerprint_with_width(m: &AtomCloud, width: usize) -> Fingerprint {
    let mut fp = Fingerprint::empty(width);
    let bonds = molsys::infer_bonds(m, molsys::DEFAULT_BOND_TOLERANCE);
    for b in &bonds {
        let (a, c) = ordered(element_code(m.element(b.i)), element_code(m.element(b.j)));
        let bin = (geom::dist(m.coords[b.i], m.coords[b.j]) / FP_DIST_BIN).floor() as u32;
        let mut key = vec![1u8, a, c];
        key.extend_from_slice(&bin.to_le_bytes());
        fp.set((fnv1a(&key) % width as u64) as usize);
    }
    let adj = molsys::adjacency(m.len(), &bonds);
    for (center, nbrs) in adj.iter().enumerate() {
        for x in 0..nbrs.len() {
            for y in x + 1..nbrs.len() {
                let (i, k) = (nbrs[x], nbrs[y]);
                let (a, c) = ordered(element_code(m.element(i)), element_code(m.element(k)));
                let angle = geom::angle_deg(m.coords[i], m.coords[center], m.coords[k]);
                let bin = (angle / FP_ANGLE_BIN).floor() as u32;
                let mut key = vec![2u8, a, element_code(m.element(center)), c];
                key.extend_from_slice(&bin.to_le_bytes());
                fp.set((fnv1a(&key) % width as u64) as usize);
            }
        }
    }
    fp
}

fn ordered(a: u8, b: u8) -> (u8, u8) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// `|a ∧ b| / |a ∨ b|`, and 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.width != b.width {
        return Err(Error::ShapeMismatch(format!("fingerprint widths {} and {}", a.width, b.width)));
    }
    let (mut and, mut or) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        and += (x & y).count_ones();
        or += (x | y).count_ones();
    }
    Ok(if or == 0 { 1.0 } else { and as f64 / or as f64 })
}

/// Mean of `1 - tanimoto` over unordered pairs.
pub fn diversity_of(fps: &[Fingerprint]) -> Result<f64> {
    let n = fps.len();
    if n < 2 {
        return Err(Error::Singleton);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += 1.0 - tanimoto(&fps[i], &fps[j])?;
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

pub fn diversity(mols: &[AtomCloud]) -> Result<f64> {
    diversity_of(&mols.iter().map(fingerprint).collect::<Vec<_>>())
}

/// On-target pocket, its top-ranked ligands and the chosen off-target pockets.
pub struct SpecificityGroup<'a> {
    pub pocket: &'a PocketCloud,
    pub ligands: Vec<&'a AtomCloud>,
    pub off_targets: Vec<&'a PocketCloud>,
}

/// Moves `ligand` from `from` to `to`, keeping its offset to the pocket centroid.
pub fn transplant(ligand: &AtomCloud, from: &PocketCloud, to: &PocketCloud) -> AtomCloud {
    ligand.translated(geom::sub(to.centroid(), from.centroid()))
}

/// Mean of `ΔG_on - ΔG_off` over every ligand and valid off-target
/// placement. Off-target scores `>= 0` are discarded; groups left without
/// any valid placement are skipped. `None` when nothing remains.
pub fn specificity_score(groups: &[SpecificityGroup], scorer: &dyn Fn(&PocketCloud, &AtomCloud) -> f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (g_idx, g) in groups.iter().enumerate() {
        let mut group_terms = 0usize;
        for lig in &g.ligands {
            let on = scorer(g.pocket, lig);
            if !on.is_finite() {
                continue;
            }
            for off in &g.off_targets {
                let placed = transplant(lig, g.pocket, off);
                let s = scorer(off, &placed);
                if s.is_finite() && s < 0.0 {
                    sum += on - s;
                    count += 1;
                    group_terms += 1;
                }
            }
        }
        if group_terms == 0 {
            log::warn!("specificity: group {g_idx} has no valid off-target score, skipped");
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// `k` distinct pocket indices other than `own`, chosen uniformly.
pub fn pick_off_targets<R: Rng + ?Sized>(n_pockets: usize, own: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let others = n_pockets.saturating_sub(1);
    index::sample(rng, others, k.min(others)).into_iter().map(|i| if i >= own { i + 1 } else { i }).collect()
}

/// Fixed-bin histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, width: f64) -> Self {
        let bins = ((hi - lo) / width).round() as usize;
        Histogram { lo, width, counts: vec![0; bins] }
    }

    /// Values outside the range are clamped into the edge bins.
    pub fn add(&mut self, x: f64) {
        let b = ((x - self.lo) / self.width).floor();
        let idx = if b < 0.0 { 0 } else { (b as usize).min(self.counts.len() - 1) };
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn normalized(&self) -> Result<Vec<f64>> {
        let z = self.total();
        if z == 0 {
            return Err(Error::EmptyHistogram);
        }
        Ok(self.counts.iter().map(|&c| c as f64 / z as f64).collect())
    }
}

pub const BOND_LENGTH_RANGE: (f64, f64, f64) = (0.0, 3.0, 0.02);
pub const BOND_ANGLE_RANGE: (f64, f64, f64) = (0.0, 180.0, 2.0);

fn bonds_of(m: &AtomCloud) -> Vec<Bond> {
    molsys::infer_bonds(m, molsys::DEFAULT_BOND_TOLERANCE)
}

/// Bond lengths whose (unordered) element pair matches `pair`, or all bonds.
pub fn bond_length_hist(mols: &[AtomCloud], pair: Option<(Element, Element)>) -> Result<Histogram> {
    let (lo, hi, w) = BOND_LENGTH_RANGE;
    let mut h = Histogram::new(lo, hi, w);
    for m in mols {
        for b in bonds_of(m) {
            let (a, c) = (m.element(b.i), m.element(b.j));
            if pair.is_none_or(|(x, y)| (a, c) == (x, y) || (a, c) == (y, x)) {
                h.add(geom::dist(m.coords[b.i], m.coords[b.j]));
            }
        }
    }
    if h.total() == 0 {
        return Err(Error::EmptyHistogram);
    }
    Ok(h)
}

/// Bond angles at a center atom whose `(end, center, end)` elements match
/// `triple` in either end order, or all angles.
pub fn bond_angle_hist(mols: &[AtomCloud], triple: Option<(Element, Element, Element)>) -> Result<Histogram> {
    let (lo, hi, w) = BOND_ANGLE_RANGE;
    let mut h = Histogram::new(lo, hi, w);
    for m in mols {
        let adj = molsys::adjacency(m.len(), &bonds_of(m));
        for (center, nbrs) in adj.iter().enumerate() {
            for x in 0..nbrs.len() {
                for y in x + 1..nbrs.len() {
                    let (i, k) = (nbrs[x], nbrs[y]);
                    let (a, c, e) = (m.element(i), m.element(center), m.element(k));
                    let matches = triple.is_none_or(|(p, q, r)| c == q && ((a, e) == (p, r) || (a, e) == (r, p)));
                    if matches {
                        h.add(geom::angle_deg(m.coords[i], m.coords[center], m.coords[k]));
                    }
                }
            }
        }
    }
    if h.total() == 0 {
        return Err(Error::EmptyHistogram);
    }
    Ok(h)
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch(format!("histograms with {} and {} bins", p.len(), q.len())));
    }
    let (zp, zq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if zp <= 0.0 || zq <= 0.0 {
        return Err(Error::EmptyHistogram);
    }
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / zp, b / zq);
        let m = 0.5 * (a + b);
        acc += 0.5 * term(a, m) + 0.5 * term(b, m);
    }
    Ok(acc.clamp(0.0, 1.0))
}

pub fn jsd_hist(p: &Histogram, q: &Histogram) -> Result<f64> {
    jsd(&p.normalized()?, &q.normalized()?)
}

pub const DEFAULT_CLASH_TOLERANCE: f64 = 0.5;

/// Ligand-pocket and non-bonded ligand-ligand pairs closer than the sum of
/// van der Waals radii minus `tolerance`.
pub fn clash_score(pocket: &PocketCloud, m: &AtomCloud, tolerance: f64) -> usize {
    let mut count = 0;
    for i in 0..m.len() {
        let ri = m.element(i).vdw_radius();
        for j in 0..pocket.len() {
            if geom::dist(m.coords[i], pocket.coords[j]) < ri + pocket.element(j).vdw_radius() - tolerance {
                count += 1;
            }
        }
    }
    let bonds = bonds_of(m);
    let adj = molsys::adjacency(m.len(), &bonds);
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            if adj[i].contains(&j) {
                continue;
            }
            if geom::dist(m.coords[i], m.coords[j]) < m.element(i).vdw_radius() + m.element(j).vdw_radius() - tolerance {
                count += 1;
            }
        }
    }
    count
}

/// Valence proxy for chemical sanity: no atom exceeds its maximum valence,
/// and molecules with two or more atoms have at least one bond.
pub fn validity(m: &AtomCloud) -> bool {
    if m.len() <= 1 {
        return true;
    }
    let bonds = bonds_of(m);
    if bonds.is_empty() {
        return false;
    }
    let adj = molsys::adjacency(m.len(), &bonds);
    adj.iter().enumerate().all(|(i, a)| a.len() <= m.element(i).max_valence())
}

/// One evaluated molecule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeRow {
    pub id: String,
    pub pocket_id: String,
    pub delta_g: f64,
    pub qed: f64,
    pub sa: f64,
    pub clash: usize,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Option<Self> {
        (!xs.is_empty()).then(|| Summary { mean: crate::stats::mean(xs), median: crate::stats::median(xs) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_molecules: usize,
    pub delta_g: Option<Summary>,
    pub qed: Option<Summary>,
    pub sa: Option<Summary>,
    pub clash: Option<Summary>,
    pub validity: f64,
    /// Mean within-pocket diversity over pockets with at least two molecules.
    pub diversity: Option<f64>,
    pub specificity: Option<f64>,
    /// Pattern name to JSD against the reference; absent when either side
    /// has no matching bonds.
    pub jsd: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub molecules: Vec<MoleculeRow>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,pocket_id,delta_g,qed,sa,clash,valid\n");
        for r in &self.molecules {
            writeln!(out, "{},{},{:.6},{:.6},{:.6},{},{}", r.id, r.pocket_id, r.delta_g, r.qed, r.sa, r.clash, r.valid).unwrap();
        }
        out
    }
}

/// Element patterns compared between generated and reference sets.
pub fn length_patterns() -> Vec<(String, Option<(Element, Element)>)> {
    use Element::*;
    vec![("len:all".into(), None), ("len:C-C".into(), Some((C, C))), ("len:C-N".into(), Some((C, N))), ("len:C-O".into(), Some((C, O)))]
}

pub fn angle_patterns() -> Vec<(String, Option<(Element, Element, Element)>)> {
    use Element::*;
    vec![
        ("ang:all".into(), None),
        ("ang:CCC".into(), Some((C, C, C))),
        ("ang:CCO".into(), Some((C, C, O))),
        ("ang:CNC".into(), Some((C, N, C))),
    ]
}

/// Named histograms of every pattern; patterns without bonds are omitted.
pub fn geometry_histograms(mols: &[AtomCloud]) -> BTreeMap<String, Histogram> {
    let mut out = BTreeMap::new();
    for (name, pair) in length_patterns() {
        if let Ok(h) = bond_length_hist(mols, pair) {
            out.insert(name, h);
        }
    }
    for (name, triple) in angle_patterns() {
        if let Ok(h) = bond_angle_hist(mols, triple) {
            out.insert(name, h);
        }
    }
    out
}

pub fn jsd_table(generated: &BTreeMap<String, Histogram>, reference: &BTreeMap<String, Histogram>) -> BTreeMap<String, f64> {
    generated
        .iter()
        .filter_map(|(k, h)| reference.get(k).and_then(|r| jsd_hist(h, r).ok()).map(|v| (k.clone(), v)))
        .collect()
}
