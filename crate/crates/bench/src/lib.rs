//! Fixtures shared by the benchmarks.

use pocketdiff::molsys::ComplexRecord;
use pocketdiff::net::{NetConfig, ParameterSet};
use pocketdiff::oracle::{self, GenConfig, OracleParams};
use pocketdiff::rng::stream_rng;

pub fn complexes(n: usize) -> Vec<ComplexRecord> {
    oracle::generate_dataset(7, n, &GenConfig::default(), &OracleParams::default()).expect("default generator config is valid")
}

/// The default run's network shapes with fresh weights.
pub fn network(cfg: NetConfig, seed: u64) -> (NetConfig, ParameterSet) {
    let params = ParameterSet::init(&cfg, &mut stream_rng(seed, 0));
    (cfg, params)
}
