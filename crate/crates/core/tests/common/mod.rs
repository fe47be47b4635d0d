#![allow(dead_code)]

use pocketdiff::molsys::ComplexRecord;
use pocketdiff::net::{NetConfig, ParameterSet};
use pocketdiff::oracle::{self, GenConfig, OracleParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn records(seed: u64, n: usize) -> Vec<ComplexRecord> {
    oracle::generate_dataset(seed, n, &GenConfig::default(), &OracleParams::default()).unwrap()
}

pub fn small_denoiser(cond: bool) -> NetConfig {
    let mut c = NetConfig::denoiser(4);
    c.layers = 2;
    c.hidden_dim = 16;
    c.k_pocket = 6;
    c.cond_channels = if cond { 2 } else { 0 };
    c
}

pub fn small_regressor(outputs: usize) -> NetConfig {
    let mut c = NetConfig::regressor(4, outputs);
    c.layers = 2;
    c.hidden_dim = 16;
    c.k_pocket = 6;
    c
}

pub fn init(cfg: &NetConfig, seed: u64) -> ParameterSet {
    ParameterSet::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}
