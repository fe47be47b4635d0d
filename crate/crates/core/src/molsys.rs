//! Pocket and ligand point clouds, labelled complexes, and the geometric
//! preprocessing shared by training, sampling and evaluation.

use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::geom::{self, Rot3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
}

impl Element {
    pub const ALL: [Element; 7] = [Element::C, Element::N, Element::O, Element::F, Element::P, Element::S, Element::Cl];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.into_iter().find(|e| e.symbol().eq_ignore_ascii_case(s))
    }

    /// Single-bond covalent radius in Å.
    pub fn covalent_radius(self) -> f64 {
        match self {
            Element::C => 0.76,
            Element::N => 0.71,
            Element::O => 0.66,
            Element::F => 0.57,
            Element::P => 1.07,
            Element::S => 1.05,
            Element::Cl => 1.02,
        }
    }

    /// Bondi van der Waals radius in Å.
    pub fn vdw_radius(self) -> f64 {
        match self {
            Element::C => 1.70,
            Element::N => 1.55,
            Element::O => 1.52,
            Element::F => 1.47,
            Element::P => 1.80,
            Element::S => 1.80,
            Element::Cl => 1.75,
        }
    }

    pub fn max_valence(self) -> usize {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::F | Element::Cl => 1,
            Element::P => 5,
            Element::S => 6,
        }
    }
}

impl std::fmt::Display for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Ordered element vocabulary; atom types are indices into it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocab(Vec<Element>);

impl Default for Vocab {
    fn default() -> Self {
        Vocab(vec![Element::C, Element::N, Element::O, Element::S])
    }
}

impl Vocab {
    pub fn new(elements: Vec<Element>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Config("element vocabulary is empty".into()));
        }
        for (i, e) in elements.iter().enumerate() {
            if elements[..i].contains(e) {
                return Err(Error::Config(format!("duplicate element {e} in vocabulary")));
            }
        }
        Ok(Vocab(elements))
    }

    pub fn full() -> Self {
        Vocab(Element::ALL.to_vec())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn element(&self, i: usize) -> Element {
        self.0[i]
    }

    pub fn index_of(&self, e: Element) -> Option<usize> {
        self.0.iter().position(|&x| x == e)
    }

    pub fn elements(&self) -> &[Element] {
        &self.0
    }
}

/// Coordinates (Å) with one element index per atom.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomCloud {
    pub coords: Vec<Vec3>,
    pub types: Vec<usize>,
    pub vocab: Vocab,
}

impl AtomCloud {
    pub fn new(coords: Vec<Vec3>, types: Vec<usize>, vocab: Vocab) -> Result<Self> {
        if coords.len() != types.len() {
            return Err(Error::ShapeMismatch(format!("{} coordinates vs {} types", coords.len(), types.len())));
        }
        if coords.is_empty() {
            return Err(Error::ShapeMismatch("cloud has no atoms".into()));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite coordinate".into()));
        }
        if let Some(&bad) = types.iter().find(|&&t| t >= vocab.len()) {
            return Err(Error::ShapeMismatch(format!("type index {bad} outside vocabulary of {}", vocab.len())));
        }
        Ok(AtomCloud { coords, types, vocab })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn element(&self, i: usize) -> Element {
        self.vocab.element(self.types[i])
    }

    pub fn one_hot(&self) -> Mat {
        one_hot(&self.types, self.vocab.len())
    }

    pub fn centroid(&self) -> Vec3 {
        geom::centroid(&self.coords).expect("cloud is nonempty")
    }

    pub fn translated(&self, by: Vec3) -> Self {
        AtomCloud { coords: self.coords.iter().map(|&p| geom::add(p, by)).collect(), ..self.clone() }
    }

    pub fn rotated(&self, r: &Rot3) -> Self {
        AtomCloud { coords: self.coords.iter().map(|&p| geom::rotate(r, p)).collect(), ..self.clone() }
    }

    /// Largest distance of any atom from the centroid.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        self.coords.iter().map(|&p| geom::dist(p, c)).fold(0.0, f64::max)
    }
}

pub fn one_hot(types: &[usize], k: usize) -> Mat {
    let mut m = Mat::zeros(types.len(), k);
    for (i, &t) in types.iter().enumerate() {
        m.data[i * k + t] = 1.0;
    }
    m
}

/// A ligand (or any mobile molecule).
#[derive(Clone, Debug, PartialEq)]
pub struct MoleculeCloud(pub AtomCloud);

/// A protein pocket; immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct PocketCloud(AtomCloud);

impl MoleculeCloud {
    pub fn new(coords: Vec<Vec3>, types: Vec<usize>, vocab: Vocab) -> Result<Self> {
        AtomCloud::new(coords, types, vocab).map(MoleculeCloud)
    }
}

impl PocketCloud {
    pub fn new(coords: Vec<Vec3>, types: Vec<usize>, vocab: Vocab) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyPocket);
        }
        AtomCloud::new(coords, types, vocab).map(PocketCloud)
    }

    pub fn from_cloud(cloud: AtomCloud) -> Self {
        PocketCloud(cloud)
    }

    pub fn cloud(&self) -> &AtomCloud {
        &self.0
    }

    pub fn translated(&self, by: Vec3) -> Self {
        PocketCloud(self.0.translated(by))
    }

    pub fn rotated(&self, r: &Rot3) -> Self {
        PocketCloud(self.0.rotated(r))
    }
}

impl MoleculeCloud {
    pub fn translated(&self, by: Vec3) -> Self {
        MoleculeCloud(self.0.translated(by))
    }

    pub fn rotated(&self, r: &Rot3) -> Self {
        MoleculeCloud(self.0.rotated(r))
    }
}

impl Deref for MoleculeCloud {
    type Target = AtomCloud;
    fn deref(&self) -> &AtomCloud {
        &self.0
    }
}

impl DerefMut for MoleculeCloud {
    fn deref_mut(&mut self) -> &mut AtomCloud {
        &mut self.0
    }
}

impl Deref for PocketCloud {
    type Target = AtomCloud;
    fn deref(&self) -> &AtomCloud {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    /// kcal/mol; positive values mark an invalid binding pose.
    pub delta_g: f64,
    pub qed: f64,
    pub sa: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexRecord {
    pub id: String,
    pub pocket: PocketCloud,
    pub ligand: MoleculeCloud,
    pub labels: Labels,
}

/// Translates both clouds so the pocket centroid sits at the origin.
/// Returns the shifted clouds and the removed offset.
pub fn center_complex(pocket: &PocketCloud, ligand: &MoleculeCloud) -> Result<(PocketCloud, MoleculeCloud, Vec3)> {
    let offset = geom::centroid(&pocket.coords).ok_or(Error::EmptyPocket)?;
    let neg = geom::scale(offset, -1.0);
    Ok((pocket.translated(neg), ligand.translated(neg), offset))
}

/// Pocket-only variant of [`center_complex`].
pub fn center_pocket(pocket: &PocketCloud) -> Result<(PocketCloud, Vec3)> {
    let offset = geom::centroid(&pocket.coords).ok_or(Error::EmptyPocket)?;
    Ok((pocket.translated(geom::scale(offset, -1.0)), offset))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    SingleLike,
    Short,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

pub const DEFAULT_BOND_TOLERANCE: f64 = 0.4;

/// Bonds shorter than this fraction of the covalent-radius sum are binned
/// as short (multiple-bond-like).
const SHORT_BOND_FRACTION: f64 = 0.92;

/// Distance-based bond perception: `i < j` bonded when
/// `d_ij < r_cov(i) + r_cov(j) + tolerance`.
pub fn infer_bonds(m: &AtomCloud, tolerance: f64) -> Vec<Bond> {
    let mut bonds = Vec::new();
    for i in 0..m.len() {
        let ri = m.element(i).covalent_radius();
        for j in i + 1..m.len() {
            let rsum = ri + m.element(j).covalent_radius();
            let d = geom::dist(m.coords[i], m.coords[j]);
            if d < rsum + tolerance {
                let order = if d < SHORT_BOND_FRACTION * rsum { BondOrder::Short } else { BondOrder::SingleLike };
                bonds.push(Bond { i, j, order });
            }
        }
    }
    bonds
}

/// Neighbour lists from a bond list.
pub fn adjacency(n: usize, bonds: &[Bond]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for b in bonds {
        adj[b.i].push(b.j);
        adj[b.j].push(b.i);
    }
    adj
}

/// Ligand atom-count distribution conditioned on pocket radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomCountPrior {
    /// Lower edge of the first radius bin, Å.
    pub radius_start: f64,
    pub bin_width: f64,
    pub n_min: usize,
    pub n_max: usize,
    /// `probs[bin][n - n_min]`
    pub probs: Vec<Vec<f64>>,
}

impl AtomCountPrior {
    pub fn point_mass(n: usize) -> Self {
        AtomCountPrior { radius_start: 0.0, bin_width: 1.0, n_min: n, n_max: n, probs: vec![vec![1.0]] }
    }

    /// Empirical histogram of `(pocket radius, ligand size)` pairs. Empty
    /// bins borrow the distribution of the nearest populated bin.
    pub fn from_observations(obs: &[(f64, usize)], bin_width: f64) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::Domain("atom-count prior needs observations".into()));
        }
        let rmin = obs.iter().map(|o| o.0).fold(f64::INFINITY, f64::min);
        let rmax = obs.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max);
        let n_min = obs.iter().map(|o| o.1).min().unwrap();
        let n_max = obs.iter().map(|o| o.1).max().unwrap();
        let radius_start = (rmin / bin_width).floor() * bin_width;
        let bins = (((rmax - radius_start) / bin_width).floor() as usize) + 1;
        let width = n_max - n_min + 1;
        let mut counts = vec![vec![0.0; width]; bins];
        for &(r, n) in obs {
            let b = (((r - radius_start) / bin_width).floor() as usize).min(bins - 1);
            counts[b][n - n_min] += 1.0;
        }
        let filled: Vec<usize> = (0..bins).filter(|&b| counts[b].iter().sum::<f64>() > 0.0).collect();
        let probs = (0..bins)
            .map(|b| {
                let src = *filled.iter().min_by_key(|&&f| (f as isize - b as isize).unsigned_abs()).unwrap();
                let row = &counts[src];
                let z: f64 = row.iter().sum();
                row.iter().map(|c| c / z).collect()
            })
            .collect();
        Ok(AtomCountPrior { radius_start, bin_width, n_min, n_max, probs })
    }

    pub fn from_records(records: &[ComplexRecord], bin_width: f64) -> Result<Self> {
        let obs: Vec<_> = records.iter().map(|r| (r.pocket.radius(), r.ligand.len())).collect();
        Self::from_observations(&obs, bin_width)
    }

    pub fn bin_for_radius(&self, radius: f64) -> usize {
        let b = ((radius - self.radius_start) / self.bin_width).floor();
        if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(self.probs.len() - 1)
        }
    }

    /// Draws a ligand size for `pocket`.
    pub fn sample<R: Rng + ?Sized>(&self, pocket: &PocketCloud, rng: &mut R) -> usize {
        let probs = &self.probs[self.bin_for_radius(pocket.radius())];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = k;
                break;
            }
        }
        (self.n_min + pick).clamp(self.n_min, self.n_max).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn carbon_chain(xs: &[f64]) -> MoleculeCloud {
        let coords = xs.iter().map(|&x| [x, 0.0, 0.0]).collect();
        MoleculeCloud::new(coords, vec![0; xs.len()], Vocab::default()).unwrap()
    }

    fn random_pocket(n: usize, seed: u64) -> PocketCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-10.0..10.0) + 3.0)).collect();
        let types = (0..n).map(|_| rng.random_range(0..4)).collect();
        PocketCloud::new(coords, types, Vocab::default()).unwrap()
    }

    #[test]
    fn centering_an_already_centered_pocket_is_identity() {
        let p = PocketCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], vec![0, 1], Vocab::default()).unwrap();
        let m = carbon_chain(&[0.3, 1.8]);
        let (p2, m2, off) = center_complex(&p, &m).unwrap();
        assert_eq!(off, [0.0; 3]);
        assert_eq!(p2, p);
        assert_eq!(m2, m);
    }

    #[test]
    fn single_atom_pocket_moves_to_origin() {
        let p = PocketCloud::new(vec![[1.0, 2.0, 3.0]], vec![0], Vocab::default()).unwrap();
        let m = carbon_chain(&[1.0]);
        let (p2, m2, off) = center_complex(&p, &m).unwrap();
        assert_eq!(off, [1.0, 2.0, 3.0]);
        assert_eq!(p2.coords[0], [0.0; 3]);
        assert_eq!(m2.coords[0], [0.0, -2.0, -3.0]);
    }

    #[test]
    fn random_pocket_centroid_is_zero_and_distances_preserved() {
        let p = random_pocket(50, 11);
        let m = carbon_chain(&[0.0, 1.5, 3.0]);
        let (p2, m2, _) = center_complex(&p, &m).unwrap();
        let c = geom::centroid(&p2.coords).unwrap();
        assert!(geom::norm(c) < 1e-9);
        for i in 0..p.len() {
            for j in 0..m.len() {
                let d0 = geom::dist(p.coords[i], m.coords[j]);
                let d1 = geom::dist(p2.coords[i], m2.coords[j]);
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_pocket_is_rejected() {
        assert!(matches!(PocketCloud::new(vec![], vec![], Vocab::default()), Err(Error::EmptyPocket)));
    }

    #[test]
    fn far_atoms_are_not_bonded() {
        assert!(infer_bonds(&carbon_chain(&[0.0, 10.0]), 0.4).is_empty());
    }

    #[test]
    fn close_carbons_bond() {
        // 1.5 < 0.76 + 0.76 + 0.4 = 1.92
        let b = infer_bonds(&carbon_chain(&[0.0, 1.5]), 0.4);
        assert_eq!(b.len(), 1);
        assert_eq!((b[0].i, b[0].j), (0, 1));
    }

    #[test]
    fn collinear_triple_has_two_bonds() {
        let m = carbon_chain(&[0.0, 1.4, 2.8]);
        let mut brute = Vec::new();
        for i in 0..3 {
            for j in i + 1..3 {
                if geom::dist(m.coords[i], m.coords[j]) < 1.92 {
                    brute.push((i, j));
                }
            }
        }
        let got: Vec<_> = infer_bonds(&m, 0.4).iter().map(|b| (b.i, b.j)).collect();
        assert_eq!(got, brute);
        assert_eq!(got, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn point_mass_prior_always_returns_its_count() {
        let prior = AtomCountPrior::point_mass(20);
        let p = random_pocket(30, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(prior.sample(&p, &mut rng), 20);
        }
    }

    #[test]
    fn radius_beyond_last_bin_uses_last_bin() {
        let obs = vec![(3.0, 10), (3.2, 10), (5.1, 20)];
        let prior = AtomCountPrior::from_observations(&obs, 1.0).unwrap();
        assert_eq!(prior.bin_for_radius(100.0), prior.probs.len() - 1);
        assert_eq!(prior.bin_for_radius(-5.0), 0);
        let far = PocketCloud::new(vec![[-50.0, 0.0, 0.0], [50.0, 0.0, 0.0]], vec![0, 0], Vocab::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(prior.sample(&far, &mut rng), 20);
        for row in &prior.probs {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
