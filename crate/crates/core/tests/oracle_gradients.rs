//! The oracle's analytic gradient against central differences.

mod common;

use pocketdiff::oracle::{pseudo_affinity, score, OracleParams};
use pocketdiff::AtomCloud;

const H: f64 = 1e-5;

#[test]
fn analytic_gradient_matches_central_differences() {
    let params = OracleParams::default();
    let recs = common::records(31, 6);
    let mut checked = 0;
    for rec in &recs {
        let lig = &rec.ligand.0;
        let a = pseudo_affinity(&rec.pocket, lig, &params);
        assert_eq!(a.delta_g, score(&rec.pocket, lig, &params));
        for i in 0..lig.len() {
            for d in 0..3 {
                let shifted = |h: f64| {
                    let mut c = lig.coords.clone();
                    c[i][d] += h;
                    let m = AtomCloud::new(c, lig.types.clone(), lig.vocab.clone()).unwrap();
                    score(&rec.pocket, &m, &params)
                };
                let fd = (shifted(H) - shifted(-H)) / (2.0 * H);
                let g = a.grad[i][d];
                assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0), "{} atom {i} dim {d}: fd {fd} analytic {g}", rec.id);
            }
        }
        checked += 1;
    }
    assert!(checked >= 3);
}

#[test]
fn translating_the_complex_leaves_the_score_unchanged() {
    let params = OracleParams::default();
    for rec in common::records(32, 4) {
        let u = [4.0, -2.5, 1.25];
        let a = score(&rec.pocket, &rec.ligand.0, &params);
        let b = score(&rec.pocket.translated(u), &rec.ligand.0.translated(u), &params);
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        assert!((a - rec.labels.delta_g).abs() <= 1e-9 * a.abs().max(1.0));
    }
}
