//! Hypothesis tests used by the statistical checks and the benchmark report.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pearson goodness-of-fit: p-value of observed counts against expected
/// probabilities (categories with zero expected mass must have zero counts).
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                return 0.0;
            }
            continue;
        }
        let e = p * n as f64;
        stat += (c as f64 - e).powi(2) / e;
        dof += 1;
    }
    if dof < 2 {
        return 1.0;
    }
    let dist = ChiSquared::new((dof - 1) as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Two-sample chi-square homogeneity test on paired category counts.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> f64 {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let n = (na + nb) as f64;
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let tot = (x + y) as f64;
        if tot == 0.0 {
            continue;
        }
        let ea = tot * na as f64 / n;
        let eb = tot * nb as f64 / n;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
        dof += 1;
    }
    if dof < 2 {
        return 1.0;
    }
    1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
}

/// One-sided two-sample Kolmogorov–Smirnov test of the alternative
/// "`lower` is stochastically smaller than `higher`", i.e. the empirical CDF
/// of `lower` lies above that of `higher`. Returns `(D+, p)` using the
/// asymptotic `exp(-2 n_eff D^2)` tail.
pub fn ks_one_sided_less(lower: &[f64], higher: &[f64]) -> (f64, f64) {
    let mut a = lower.to_vec();
    let mut b = higher.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max(i as f64 / n as f64 - j as f64 / m as f64);
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    (d, (-2.0 * ne * d * d).exp().min(1.0))
}

/// One-sided paired t-test of `mean(a - b) < 0`.
pub fn paired_t_less(a: &[f64], b: &[f64]) -> f64 {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let se = (variance(&diffs) / n).sqrt();
    if se == 0.0 {
        return if mean(&diffs) < 0.0 { 0.0 } else { 1.0 };
    }
    let t = mean(&diffs) / se;
    StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t)
}

/// One-sided sign test that `a < b` more often than not; ties are dropped.
pub fn sign_test_less(a: &[f64], b: &[f64]) -> f64 {
    let mut wins = 0u64;
    let mut trials = 0u64;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            wins += 1;
            trials += 1;
        } else if x > y {
            trials += 1;
        }
    }
    if trials == 0 {
        return 1.0;
    }
    // P(W >= wins) under Binomial(trials, 1/2)
    let bin = Binomial::new(0.5, trials).unwrap();
    if wins == 0 {
        1.0
    } else {
        1.0 - bin.cdf(wins - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_accepts_exact_counts() {
        assert!(chi_square_gof(&[250, 250, 500], &[0.25, 0.25, 0.5]) > 0.99);
        assert!(chi_square_gof(&[400, 100, 500], &[0.25, 0.25, 0.5]) < 1e-6);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        let (d, p) = ks_one_sided_less(&a, &b);
        assert!((d - 0.3).abs() < 0.01);
        assert!(p < 1e-6);
        let (_, p_rev) = ks_one_sided_less(&b, &a);
        assert!(p_rev > 0.5);
    }

    #[test]
    fn sign_test_all_wins() {
        let a = [1.0; 10];
        let b = [2.0; 10];
        assert!((sign_test_less(&a, &b) - 0.5f64.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn paired_t_direction() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 3.1, 3.9, 5.2];
        assert!(paired_t_less(&a, &b) < 0.01);
        assert!(paired_t_less(&b, &a) > 0.99);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
