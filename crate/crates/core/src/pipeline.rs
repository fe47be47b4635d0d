//! Glue between the stages: the run config, batched sampling over pockets
//! and scoring of generated ligands.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::RngNoise;
use crate::error::{Error, Result};
use crate::geom;
use crate::guidance::{self, GuidanceConfig, Model};
use crate::metrics::{self, MoleculeRow};
use crate::molsys::{AtomCloud, AtomCountPrior, ComplexRecord, MoleculeCloud, PocketCloud};
use crate::net::NetConfig;
use crate::oracle::{self, GenConfig, OracleParams};
use crate::rng::stream_rng;
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::training::TrainConfig;

/// Everything a run needs. Every field defaults, so `{}` is a valid config
/// for the desk-scale pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub denoiser: NetConfig,
    pub classifier: NetConfig,
    pub guidance: GuidanceConfig,
    pub training: TrainConfig,
    /// Classifier training settings; `None` reuses `training`.
    pub classifier_training: Option<TrainConfig>,
    pub oracle: OracleParams,
    pub generator: GenConfig,
    pub dataset: DatasetConfig,
    pub sampling: SamplingConfig,
    pub paths: Paths,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { n_train: 2000, n_test: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_per_pocket: usize,
    /// Fixed ligand size; `None` draws from the atom-count prior.
    pub n_atoms: Option<usize>,
    /// Radius bin width of the atom-count prior, Å.
    pub prior_bin_width: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { n_per_pocket: 100, n_atoms: None, prior_bin_width: 0.5 }
    }
}

/// Optional default locations; command-line arguments take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<String>,
    pub denoiser: Option<String>,
    pub classifier: Option<String>,
    /// Pocket files or dataset split directories to sample for.
    pub pockets: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let k = crate::molsys::Vocab::default().len();
        RunConfig {
            seed: 0,
            schedule: ScheduleConfig::desk(100),
            denoiser: NetConfig { layers: 2, hidden_dim: 32, k_pocket: 8, heads: 1, ..NetConfig::denoiser(k) },
            classifier: NetConfig { layers: 2, hidden_dim: 32, k_pocket: 8, heads: 1, ..NetConfig::regressor(k, 1) },
            guidance: GuidanceConfig::default(),
            training: TrainConfig { lr: 2e-3, epochs: 4, ..TrainConfig::default() },
            classifier_training: Some(TrainConfig { lr: 2e-3, epochs: 30, ..TrainConfig::default() }),
            oracle: OracleParams::default(),
            generator: GenConfig::default(),
            dataset: DatasetConfig::default(),
            sampling: SamplingConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.denoiser.validate()?;
        self.classifier.validate()?;
        self.guidance.validate()?;
        self.training.validate()?;
        if let Some(t) = &self.classifier_training {
            t.validate()?;
        }
        self.oracle.validate()?;
        self.generator.validate()?;
        if self.dataset.n_train == 0 {
            return Err(Error::Config("dataset.n_train must be at least 1".into()));
        }
        if self.sampling.n_per_pocket == 0 || self.sampling.n_atoms == Some(0) || !(self.sampling.prior_bin_width > 0.0) {
            return Err(Error::Config("sampling needs n_per_pocket >= 1, n_atoms >= 1 and a positive prior bin width".into()));
        }
        if self.denoiser.num_types != self.classifier.num_types {
            return Err(Error::Config("denoiser and classifier disagree on num_types".into()));
        }
        Ok(())
    }

    pub fn classifier_train_config(&self) -> TrainConfig {
        self.classifier_training.clone().unwrap_or_else(|| self.training.clone())
    }
}

/// Train records use stream `seed`, test records a disjoint derived seed.
pub fn generate_splits(cfg: &RunConfig) -> Result<(Vec<ComplexRecord>, Vec<ComplexRecord>)> {
    let train = oracle::generate_dataset(cfg.seed, cfg.dataset.n_train, &cfg.generator, &cfg.oracle)?;
    let test = if cfg.dataset.n_test == 0 {
        Vec::new()
    } else {
        let mut t = oracle::generate_dataset(cfg.seed ^ 0x7E57_0000_0000_0000, cfg.dataset.n_test, &cfg.generator, &cfg.oracle)?;
        for r in &mut t {
            r.id = format!("t{}", &r.id[1..]);
        }
        t
    };
    Ok((train, test))
}

/// One generated ligand with its provenance.
#[derive(Clone, Debug)]
pub struct Generated {
    pub pocket_id: String,
    pub pocket_index: usize,
    pub sample_index: usize,
    /// RNG stream of the chain under the run seed.
    pub chain_stream: u64,
    pub ligand: MoleculeCloud,
    /// Step the chain stopped at.
    pub t: usize,
}

impl Generated {
    pub fn id(&self) -> String {
        format!("{}_s{:04}", self.pocket_id, self.sample_index)
    }
}

/// Stream of chain `sample` for pocket `pocket`; shared across guidance
/// settings so runs differing only in guidance are paired draw-for-draw.
pub fn chain_stream(pocket: usize, sample: usize) -> u64 {
    (pocket as u64) << 32 | sample as u64
}

/// Size source for generated ligands.
#[derive(Clone, Debug)]
pub enum AtomCount {
    Fixed(usize),
    Prior(AtomCountPrior),
}

/// Runs `n_per_pocket` chains for every pocket in parallel. Chain `(p, j)`
/// draws its size and all its noise from `stream_rng(seed, chain_stream(p, j))`,
/// so results do not depend on thread count. Coordinates are rounded to
/// the file precision so in-memory and on-disk molecules agree.
#[allow(clippy::too_many_arguments)]
pub fn sample_pockets(
    denoiser: Model,
    classifier: Option<Model>,
    pockets: &[(String, PocketCloud)],
    sizes: &AtomCount,
    sched: &NoiseSchedule,
    guidance_cfg: &GuidanceConfig,
    seed: u64,
    n_per_pocket: usize,
) -> Result<Vec<Generated>> {
    let jobs: Vec<(usize, usize)> = (0..pockets.len()).flat_map(|p| (0..n_per_pocket).map(move |j| (p, j))).collect();
    jobs.par_iter()
        .map(|&(p, j)| {
            let (id, pocket) = &pockets[p];
            let stream = chain_stream(p, j);
            let mut rng = stream_rng(seed, stream);
            let n = match sizes {
                AtomCount::Fixed(n) => *n,
                AtomCount::Prior(prior) => prior.sample(pocket, &mut rng),
            };
            // decouple the size draw from the chain noise
            let mut noise = RngNoise(stream_rng(rng.random(), 0));
            let out = guidance::sample_guided(denoiser, classifier, pocket, n, sched, guidance_cfg, &mut noise, false)?;
            let mut cloud: AtomCloud = out.ligand.0;
            for c in &mut cloud.coords {
                *c = geom::quantize(*c);
            }
            Ok(Generated {
                pocket_id: id.clone(),
                pocket_index: p,
                sample_index: j,
                chain_stream: stream,
                ligand: MoleculeCloud(cloud),
                t: out.t,
            })
        })
        .collect()
}

/// Oracle scores, clash count and validity of one ligand in its pocket.
pub fn score_molecule(id: String, pocket_id: String, pocket: &PocketCloud, ligand: &AtomCloud, params: &OracleParams) -> MoleculeRow {
    let labels = oracle::labels(pocket, ligand, params);
    MoleculeRow {
        id,
        pocket_id,
        delta_g: labels.delta_g,
        qed: labels.qed,
        sa: labels.sa,
        clash: metrics::clash_score(pocket, ligand, metrics::DEFAULT_CLASH_TOLERANCE),
        valid: metrics::validity(ligand),
    }
}

pub fn score_generated(generated: &[Generated], pockets: &[(String, PocketCloud)], params: &OracleParams) -> Vec<MoleculeRow> {
    generated
        .par_iter()
        .map(|g| score_molecule(g.id(), g.pocket_id.clone(), &pockets[g.pocket_index].1, &g.ligand, params))
        .collect()
}

/// Per-pocket means of `f` over rows grouped in pocket order.
pub fn per_pocket_means(rows: &[MoleculeRow], pocket_ids: &[String], f: impl Fn(&MoleculeRow) -> f64) -> Vec<f64> {
    pocket_ids
        .iter()
        .map(|id| {
            let xs: Vec<f64> = rows.iter().filter(|r| &r.pocket_id == id).map(&f).collect();
            crate::stats::mean(&xs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"guidance": {"scale": 1}}"#).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.guidance.s = 12.5;
        c.sampling.n_atoms = Some(9);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn chain_streams_are_distinct() {
        assert_ne!(chain_stream(0, 1), chain_stream(1, 0));
        assert_eq!(chain_stream(2, 3), (2u64 << 32) | 3);
    }
}
