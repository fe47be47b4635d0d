//! Parameter gradients of the training losses against central differences.

mod common;

use pocketdiff::rng::stream_rng;
use pocketdiff::training::{classifier_batch_gradient, diffusion_loss, prepare, ConditionMode, TrainConfig};
use pocketdiff::ScheduleConfig;
use rand::Rng;

const H: f64 = 1e-6;

fn close(fd: f64, g: f64) -> bool {
    (fd - g).abs() <= 1e-4 * g.abs().max(1e-2)
}

#[test]
fn diffusion_loss_gradient_matches_central_differences() {
    let sched = ScheduleConfig::desk(100).build().unwrap();
    let data = prepare(&common::records(61, 4), 4).unwrap();
    for (inst, cond) in [(0u64, false), (1, false), (2, true)] {
        let cfg = common::small_denoiser(cond);
        let mut params = common::init(&cfg, 62 + inst);
        let train = TrainConfig { p_unconditional: 0.3, ..TrainConfig::default() };
        let mode = if cond { ConditionMode::Cfg } else { ConditionMode::Off };
        let batch = [inst as usize, 3];
        let loss = |p: &pocketdiff::net::ParameterSet| diffusion_loss(p, &cfg, &data, &batch, &sched, &train, mode, inst, false).unwrap().0;
        let (_, grad) = diffusion_loss(&params, &cfg, &data, &batch, &sched, &train, mode, inst, true).unwrap();
        let grad = grad.unwrap();
        let mut rng = stream_rng(63, inst);
        for _ in 0..12 {
            let j = rng.random_range(0..params.len());
            let orig = params.values[j];
            params.values[j] = orig + H;
            let up = loss(&params);
            params.values[j] = orig - H;
            let down = loss(&params);
            params.values[j] = orig;
            let fd = (up - down) / (2.0 * H);
            assert!(close(fd, grad[j]), "instance {inst} param {j}: fd {fd} analytic {}", grad[j]);
        }
    }
}

#[test]
fn classifier_loss_gradient_matches_central_differences() {
    let sched = ScheduleConfig::desk(100).build().unwrap();
    let data = prepare(&common::records(64, 6), 4).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    for inst in 0..3u64 {
        let cfg = common::small_regressor(if inst == 2 { 3 } else { 1 });
        let mut params = common::init(&cfg, 65 + inst);
        let train = TrainConfig::default();
        let loss = |p: &pocketdiff::net::ParameterSet| classifier_batch_gradient(p, &cfg, &data, &idx, &train, Some(&sched), inst).unwrap().0;
        let (_, grad, _) = classifier_batch_gradient(&params, &cfg, &data, &idx, &train, Some(&sched), inst).unwrap();
        let mut rng = stream_rng(66, inst);
        for _ in 0..12 {
            let j = rng.random_range(0..params.len());
            let orig = params.values[j];
            params.values[j] = orig + H;
            let up = loss(&params);
            params.values[j] = orig - H;
            let down = loss(&params);
            params.values[j] = orig;
            let fd = (up - down) / (2.0 * H);
            assert!(close(fd, grad[j]), "instance {inst} param {j}: fd {fd} analytic {}", grad[j]);
        }
    }
}
