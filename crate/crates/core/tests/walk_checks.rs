use glauber_core::rng::replica_rng;
use glauber_core::stats::mean_se;
use glauber_core::walks::{occupation_time_sample, srw_heat_kernel, srw_heat_kernel_row, ssep_vs_independent};
use statrs::stats_tests::chisquare::chisquare;

#[test]
fn kernel_tends_to_uniform() {
    for y in 0..8 {
        let p = srw_heat_kernel(8, 1.0, 1e3, 0, y).unwrap();
        assert!((p - 0.125).abs() < 1e-9);
    }
    assert_eq!(srw_heat_kernel(12, 2.0, 0.0, 5, 5).unwrap(), 1.0);
}

#[test]
fn occupation_mean_matches_kernel_integral() {
    let (n, horizon, replicas) = (64, 100.0, 10_000u64);
    // Simpson's rule on ∫₀ᵀ p_s(0, 0) ds for the rate-2 walk
    let steps = 4000;
    let h = horizon / steps as f64;
    let f = |s: f64| srw_heat_kernel(n, 2.0, s, 0, 0).unwrap();
    let integral = h / 3.0
        * (0..=steps)
            .map(|i| {
                let w = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * f(i as f64 * h)
            })
            .sum::<f64>();
    let samples: Vec<f64> = (0..replicas)
        .map(|r| occupation_time_sample(n, horizon, &mut replica_rng(31, r)))
        .collect();
    let (mean, se) = mean_se(&samples);
    assert!((mean - integral).abs() < 3.0 * se, "{mean} ± {se} vs {integral}");
}

/// Pearson test of observed site counts against expected probabilities,
/// pooling sparse cells.
fn chisquare_pvalue(counts: &[usize], probs: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    let (mut obs, mut exp) = (Vec::new(), Vec::new());
    let (mut rest_obs, mut rest_exp) = (0usize, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * total as f64;
        if e >= 5.0 {
            obs.push(c);
            exp.push(e);
        } else {
            rest_obs += c;
            rest_exp += e;
        }
    }
    if rest_exp > 0.0 {
        obs.push(rest_obs);
        exp.push(rest_exp);
    }
    chisquare(&obs, Some(&exp), None).unwrap().1
}

#[test]
fn shadow_walks_have_random_walk_marginals() {
    let n = 16;
    let starts = [3usize, 4];
    let replicas = 10_000u64;
    for t in [1.0, 5.0] {
        let mut counts = vec![vec![0usize; n]; 2];
        for r in 0..replicas {
            let run = ssep_vs_independent(n, &starts, t, &mut replica_rng(32, r)).unwrap();
            for (i, c) in counts.iter_mut().enumerate() {
                c[run.ensemble.shadow_site(i)] += 1;
            }
        }
        let row = srw_heat_kernel_row(n, 1.0, t).unwrap();
        for (i, &s) in starts.iter().enumerate() {
            let probs: Vec<f64> = (0..n).map(|y| row[(y + n - s) % n]).collect();
            let p = chisquare_pvalue(&counts[i], &probs);
            assert!(p > 0.01, "t={t}, particle {i}: p={p}");
        }
    }
}

#[test]
fn lone_particle_never_separates() {
    let mut rng = replica_rng(33, 0);
    for _ in 0..100 {
        assert_eq!(
            ssep_vs_independent(32, &[7], 50.0, &mut rng).unwrap().max_displacement,
            0
        );
    }
}
