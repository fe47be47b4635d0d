//! Monte-Carlo checks of the forward kernels and the categorical posterior.

use pocketdiff::diffusion::{categorical_posterior, perturb_coords, perturb_types, NoiseSource, RngNoise};
use pocketdiff::rng::stream_rng;
use pocketdiff::stats::{chi_square_gof, mean, variance};
use pocketdiff::ScheduleConfig;
use rand::Rng;

const DRAWS: usize = 10_000;

#[test]
fn forward_coordinate_moments_within_three_standard_errors() {
    let sched = ScheduleConfig::desk(100).build().unwrap();
    let x0 = [[1.5, -0.75, 3.0]];
    for (i, &t) in [1usize, 10, 50, 90, 100].iter().enumerate() {
        let mut noise = RngNoise(stream_rng(1, i as u64));
        let draws: Vec<[f64; 3]> = (0..DRAWS).map(|_| perturb_coords(&x0, &sched, t, &noise.normal3(1))[0]).collect();
        let ab = sched.alpha_bar(t);
        let var = 1.0 - ab;
        for d in 0..3 {
            let xs: Vec<f64> = draws.iter().map(|p| p[d]).collect();
            let m_se = (var / DRAWS as f64).sqrt();
            let m = mean(&xs);
            assert!((m - ab.sqrt() * x0[0][d]).abs() <= 3.0 * m_se, "t={t} d={d} mean {m} want {} se {m_se} var {var}", ab.sqrt() * x0[0][d]);
            let v_se = var * (2.0 / (DRAWS as f64 - 1.0)).sqrt();
            let v = variance(&xs);
            assert!((v - var).abs() <= 3.0 * v_se, "t={t} d={d} var {v} want {var}");
        }
    }
}

#[test]
fn gumbel_max_matches_forward_type_marginal() {
    let sched = ScheduleConfig::desk(100).build().unwrap();
    let k = 4;
    for (i, &t) in [5usize, 30, 60, 100].iter().enumerate() {
        let mut noise = RngNoise(stream_rng(12, i as u64));
        let mut counts = vec![0u64; k];
        for _ in 0..DRAWS {
            counts[perturb_types(&[2], k, &sched, t, &noise.gumbel(1, k))[0]] += 1;
        }
        let ab = sched.alpha_bar(t);
        let probs: Vec<f64> = (0..k).map(|c| ab * (c == 2) as u8 as f64 + (1.0 - ab) / k as f64).collect();
        let p = chi_square_gof(&counts, &probs);
        assert!(p > 0.01, "t={t} counts {counts:?} probs {probs:?} p={p}");
    }
}

#[test]
fn posterior_normalises_over_random_inputs() {
    let sched = ScheduleConfig::desk(100).build().unwrap();
    let mut rng = stream_rng(13, 0);
    for _ in 0..1000 {
        let k = rng.random_range(1..=8);
        let t = rng.random_range(1..=100);
        let mut v0: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let z: f64 = v0.iter().sum();
        v0.iter_mut().for_each(|x| *x /= z);
        let p = categorical_posterior(rng.random_range(0..k), &v0, &sched, t).unwrap();
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() <= 1e-12, "sum {s}");
        assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
