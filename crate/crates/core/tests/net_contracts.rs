use pocketdiff::autodiff::Mat;
use pocketdiff::geom::{self, Vec3};
use pocketdiff::molsys::{one_hot, PocketCloud, Vocab};
use pocketdiff::net::{
    denoiser_vjp, input_gradient, regressor_forward, regressor_param_gradient, score_forward, Condition, LigandInput,
    NetConfig, ParameterSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pocket(seed: u64, n: usize) -> PocketCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-6.0..6.0))).collect();
    let types = (0..n).map(|_| rng.random_range(0..4)).collect();
    PocketCloud::new(coords, types, Vocab::default()).unwrap()
}

fn ligand(seed: u64, n: usize) -> (Vec<Vec3>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-2.5..2.5))).collect();
    let t = (0..n).map(|_| rng.random_range(0..4)).collect();
    (x, t)
}

fn denoiser_cfg(cond: bool) -> NetConfig {
    let mut c = NetConfig::denoiser(4);
    c.hidden_dim = 24;
    c.layers = 3;
    c.k_nn = 8;
    c.cond_channels = if cond { 2 } else { 0 };
    c
}

fn regressor_cfg(outputs: usize) -> NetConfig {
    let mut c = NetConfig::regressor(4, outputs);
    c.hidden_dim = 24;
    c.k_nn = 10;
    c
}

fn max_abs(a: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn denoiser_is_se3_equivariant() {
    for seed in 0..3u64 {
        let cfg = denoiser_cfg(seed == 2);
        let params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let p = pocket(seed + 10, 40);
        let (x, t) = ligand(seed + 20, 12);
        let v = one_hot(&t, 4);
        let cond = (seed == 2).then(|| Condition::target(-9.0));
        let (x0, logits) = score_forward(&params, &cfg, &p, &LigandInput { x: &x, v: &v, time: 0.3, cond }).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        let r = geom::random_rotation(&mut rng);
        let u = [3.0, -1.5, 7.25];
        let move_pt = |q: Vec3| geom::add(geom::rotate(&r, q), u);
        let p2 = p.rotated(&r).translated(u);
        let x2: Vec<Vec3> = x.iter().map(|&q| move_pt(q)).collect();
        let (x0b, logits_b) = score_forward(&params, &cfg, &p2, &LigandInput { x: &x2, v: &v, time: 0.3, cond }).unwrap();
        let dx = max_abs(x0.iter().zip(&x0b).flat_map(|(a, b)| {
            let e = move_pt(*a);
            (0..3).map(move |d| e[d] - b[d])
        }));
        let dl = max_abs(logits.data.iter().zip(&logits_b.data).map(|(a, b)| a - b));
        assert!(dx <= 1e-8, "coordinate equivariance error {dx}");
        assert!(dl <= 1e-8, "logit invariance error {dl}");
    }
}

#[test]
fn regressor_is_invariant_to_rigid_motion_and_permutation() {
    let cfg = regressor_cfg(1);
    let params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
    let p = pocket(1, 35);
    let (x, t) = ligand(2, 10);
    let v = one_hot(&t, 4);
    let y = regressor_forward(&params, &cfg, &p, &LigandInput { x: &x, v: &v, time: 0.0, cond: None }).unwrap();

    let shift = [5.0, 5.0, 5.0];
    let xs: Vec<Vec3> = x.iter().map(|&q| geom::add(q, shift)).collect();
    let ys = regressor_forward(&params, &cfg, &p.translated(shift), &LigandInput { x: &xs, v: &v, time: 0.0, cond: None }).unwrap();
    assert!((y[0] - ys[0]).abs() <= 1e-8);

    let r = geom::random_rotation(&mut ChaCha8Rng::seed_from_u64(8));
    let xr: Vec<Vec3> = x.iter().map(|&q| geom::rotate(&r, q)).collect();
    let yr = regressor_forward(&params, &cfg, &p.rotated(&r), &LigandInput { x: &xr, v: &v, time: 0.0, cond: None }).unwrap();
    assert!((y[0] - yr[0]).abs() <= 1e-8);

    // permute ligand atoms and pocket atoms
    let perm: Vec<usize> = (0..x.len()).rev().collect();
    let xp: Vec<Vec3> = perm.iter().map(|&i| x[i]).collect();
    let tp: Vec<usize> = perm.iter().map(|&i| t[i]).collect();
    let vp = one_hot(&tp, 4);
    let pperm: Vec<usize> = (0..p.len()).map(|i| (i * 11) % p.len()).collect();
    let pp = PocketCloud::new(
        pperm.iter().map(|&i| p.coords[i]).collect(),
        pperm.iter().map(|&i| p.types[i]).collect(),
        Vocab::default(),
    )
    .unwrap();
    let yp = regressor_forward(&params, &cfg, &pp, &LigandInput { x: &xp, v: &vp, time: 0.0, cond: None }).unwrap();
    assert!((y[0] - yp[0]).abs() <= 1e-10, "permutation changed output by {}", (y[0] - yp[0]).abs());
}

/// Squared error against a fixed target, as used for guidance.
fn sq_loss(target: f64) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
    move |y: &[f64]| ((y[0] - target).powi(2), vec![2.0 * (y[0] - target)])
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn input_gradient_matches_central_differences() {
    for seed in 0..3u64 {
        let cfg = regressor_cfg(1);
        let params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let p = pocket(seed + 3, 30);
        let (x, t) = ligand(seed + 5, 9);
        let v = one_hot(&t, 4);
        let loss = sq_loss(-7.0);
        let g = input_gradient(&params, &cfg, &p, &LigandInput { x: &x, v: &v, time: 0.0, cond: None }, &loss).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
        let h = 1e-5;
        for _ in 0..5 {
            let (i, d) = (rng.random_range(0..x.len()), rng.random_range(0..3));
            let eval = |delta: f64| {
                let mut xx = x.clone();
                xx[i][d] += delta;
                let y = regressor_forward(&params, &cfg, &p, &LigandInput { x: &xx, v: &v, time: 0.0, cond: None }).unwrap();
                loss(&y).0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(rel_err(fd, g.grad[i][d]) <= 1e-4, "seed {seed} atom {i} axis {d}: {} vs fd {fd}", g.grad[i][d]);
        }
    }
}

#[test]
fn input_gradient_rotates_with_the_inputs() {
    let cfg = regressor_cfg(1);
    let params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
    let p = pocket(2, 30);
    let (x, t) = ligand(3, 9);
    let v = one_hot(&t, 4);
    let loss = sq_loss(-5.0);
    let g = input_gradient(&params, &cfg, &p, &LigandInput { x: &x, v: &v, time: 0.0, cond: None }, &loss).unwrap();
    let r = geom::random_rotation(&mut ChaCha8Rng::seed_from_u64(12));
    let xr: Vec<Vec3> = x.iter().map(|&q| geom::rotate(&r, q)).collect();
    let gr = input_gradient(&params, &cfg, &p.rotated(&r), &LigandInput { x: &xr, v: &v, time: 0.0, cond: None }, &loss).unwrap();
    for (a, b) in g.grad.iter().zip(&gr.grad) {
        let ra = geom::rotate(&r, *a);
        for d in 0..3 {
            assert!((ra[d] - b[d]).abs() <= 1e-8 * (1.0 + b[d].abs()));
        }
    }
}

#[test]
fn parameter_gradient_matches_central_differences() {
    for seed in 0..3u64 {
        let cfg = regressor_cfg(3);
        let params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let p = pocket(seed + 3, 30);
        let (x, t) = ligand(seed + 5, 9);
        let v = one_hot(&t, 4);
        let target = [0.6, 0.4, 0.7];
        let loss = move |y: &[f64]| {
            let val = y.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
            (val, y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect())
        };
        let lig = LigandInput { x: &x, v: &v, time: 0.0, cond: None };
        let (_, g) = regressor_param_gradient(&params, &cfg, &p, &lig, &loss).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let h = 1e-5;
        for _ in 0..10 {
            let k = rng.random_range(0..params.len());
            let eval = |delta: f64| {
                let mut q = params.clone();
                q.values[k] += delta;
                loss(&regressor_forward(&q, &cfg, &p, &lig).unwrap()).0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            if fd.abs() < 1e-9 && g[k].abs() < 1e-9 {
                continue;
            }
            assert!(rel_err(fd, g[k]) <= 1e-4, "seed {seed} param {k}: {} vs fd {fd}", g[k]);
        }
    }
}

#[test]
fn batch_gradient_is_sum_of_example_gradients() {
    let cfg = regressor_cfg(1);
    let params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let p = pocket(3, 30);
    let loss = sq_loss(-4.0);
    let mut sum = params.zeros_like();
    let mut sum_loss = 0.0;
    for s in 0..3 {
        let (x, t) = ligand(s, 8);
        let v = one_hot(&t, 4);
        let (l, g) = regressor_param_gradient(&params, &cfg, &p, &LigandInput { x: &x, v: &v, time: 0.0, cond: None }, &loss).unwrap();
        sum_loss += l;
        for (a, b) in sum.iter_mut().zip(&g) {
            *a += b;
        }
    }
    // gradient of the summed loss via finite differences on a few coordinates
    let h = 1e-5;
    for k in [0usize, 17, params.len() - 1] {
        let eval = |delta: f64| {
            let mut q = params.clone();
            q.values[k] += delta;
            (0..3)
                .map(|s| {
                    let (x, t) = ligand(s, 8);
                    let v = one_hot(&t, 4);
                    loss(&regressor_forward(&q, &cfg, &p, &LigandInput { x: &x, v: &v, time: 0.0, cond: None }).unwrap()).0
                })
                .sum::<f64>()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(rel_err(fd, sum[k]) <= 1e-4);
    }
    assert!(sum_loss.is_finite());
}

#[test]
fn zero_head_bias_gradient_vanishes_at_optimum() {
    let cfg = regressor_cfg(1);
    let mut params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    params.block_mut("readout2.w").unwrap().fill(0.0);
    params.block_mut("readout2.b").unwrap().fill(0.0);
    let p = pocket(3, 30);
    let (x, t) = ligand(1, 8);
    let v = one_hot(&t, 4);
    let lig = LigandInput { x: &x, v: &v, time: 0.0, cond: None };
    let (o, n) = params.offset_of("readout2.b").unwrap();
    let (_, g) = regressor_param_gradient(&params, &cfg, &p, &lig, &sq_loss(0.0)).unwrap();
    assert!(g[o..o + n].iter().all(|&v| v == 0.0));
    let (_, g) = regressor_param_gradient(&params, &cfg, &p, &lig, &sq_loss(1.0)).unwrap();
    assert!(g[o..o + n].iter().all(|&v| v != 0.0));
}

#[test]
fn denoiser_vjp_matches_central_differences() {
    let cfg = denoiser_cfg(false);
    let params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
    let p = pocket(6, 30);
    let (x, t) = ligand(7, 8);
    let v = one_hot(&t, 4);
    let seed_vec: Vec<Vec3> = (0..x.len()).map(|i| [0.3 * i as f64, -0.2, 0.5]).collect();
    let lig = LigandInput { x: &x, v: &v, time: 0.5, cond: None };
    let g = denoiser_vjp(&params, &cfg, &p, &lig, &seed_vec).unwrap();
    let h = 1e-5;
    for (i, d) in [(0usize, 0usize), (3, 1), (7, 2), (5, 0), (2, 2)] {
        let eval = |delta: f64| {
            let mut xx = x.clone();
            xx[i][d] += delta;
            let (x0, _) = score_forward(&params, &cfg, &p, &LigandInput { x: &xx, v: &v, time: 0.5, cond: None }).unwrap();
            x0.iter().zip(&seed_vec).map(|(a, b)| geom::dot(*a, *b)).sum::<f64>()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(rel_err(fd, g[i][d]) <= 1e-4, "atom {i} axis {d}: {} vs {fd}", g[i][d]);
    }
}

#[test]
fn simplex_types_are_accepted() {
    let cfg = denoiser_cfg(false);
    let params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
    let p = pocket(6, 30);
    let (x, _) = ligand(7, 8);
    let v = Mat::from_vec(8, 4, vec![0.25; 32]);
    assert!(score_forward(&params, &cfg, &p, &LigandInput { x: &x, v: &v, time: 1.0, cond: None }).is_ok());
}
