use glauber_core::experiments::{
    dkw_epsilon, lower_witness, magnetization_variance, mix_scan, ExperimentConfig, StationarySource, Tolerances,
};
use glauber_core::oracle::{build_generator, total_variation, transition_distribution};
use glauber_core::output::run_and_write;
use glauber_core::rates::make_dmfl;

#[test]
fn constant_rule_variance_closed_form() {
    let rule = make_dmfl(0.0).unwrap();
    let (var, se) = magnetization_variance(&rule, 64, 1.0, 4000, 41).unwrap();
    let want = (1.0 - (-4.0f64).exp()) / 64.0;
    assert!((var - want).abs() < 3.0 * se, "{var} ± {se} vs {want}");
    let (var0, _) = magnetization_variance(&rule, 64, 0.0, 1000, 41).unwrap();
    assert_eq!(var0, 0.0);
}

#[test]
fn witness_never_exceeds_exact_distance() {
    let rule = make_dmfl(0.25).unwrap();
    let n = 6;
    let gen = build_generator(&rule, n).unwrap();
    let source = StationarySource::exact(&rule, n).unwrap();
    let times: Vec<f64> = (0..20).map(|i| 0.1 * i as f64).collect();
    let replicas = 5000;
    let curve = lower_witness(&rule, n, &times, replicas, &source, 42, 0.25).unwrap();
    let band = dkw_epsilon(replicas, 0.05);
    for row in &curve.rows {
        let d = total_variation(
            &transition_distribution(&gen, (1 << n) - 1, row.t).unwrap(),
            gen.stationary(),
        );
        assert!(row.lower_bound <= d + 1e-12, "t={}: {} > {d}", row.t, row.lower_bound);
        assert!(row.witness <= d + band);
    }
    let pi_all_plus = gen.stationary()[(1 << n) - 1];
    assert!((curve.rows[0].witness - (1.0 - pi_all_plus)).abs() < 1e-12);
}

fn binomial_upper_tails(n: usize, p: f64) -> Vec<f64> {
    let mut c = 1.0;
    let pmf: Vec<f64> = (0..=n)
        .map(|k| {
            let v = c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
            c = c * (n - k) as f64 / (k + 1) as f64;
            v
        })
        .collect();
    let mut tail = vec![0.0; n + 1];
    let mut acc = 0.0;
    for k in (0..=n).rev() {
        acc += pmf[k];
        tail[k] = acc;
    }
    tail
}

/// Witness for independent flips: the largest gap between the upper tails of
/// Bin(n, (1 + e^{-2t})/2) and Bin(n, 1/2).
fn independent_flip_witness(n: usize, t: f64) -> f64 {
    let a = binomial_upper_tails(n, 0.5 * (1.0 + (-2.0 * t).exp()));
    let b = binomial_upper_tails(n, 0.5);
    a.iter().zip(&b).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn constant_rule_witness_matches_closed_form() {
    let rule = make_dmfl(0.0).unwrap();
    let n = 64;
    let ln = (n as f64).ln();
    let (replicas, samples) = (2000, 2000);
    let source = StationarySource::auto(&rule, n, samples, 43).unwrap();
    let times = [0.25 * ln, 2.0 * ln];
    let curve = lower_witness(&rule, n, &times, replicas, &source, 43, 0.25).unwrap();
    let band = dkw_epsilon(replicas, 0.025) + dkw_epsilon(samples, 0.025);
    for (row, &t) in curve.rows.iter().zip(&times) {
        let exact = independent_flip_witness(n, t);
        assert!((row.witness - exact).abs() <= band, "t={t}: {} vs {exact}", row.witness);
    }
    assert!(independent_flip_witness(n, 2.0 * ln) <= 0.05);
}

#[test]
fn constant_rule_mix_slope_near_one_half() {
    let rule = make_dmfl(0.0).unwrap();
    let scan = mix_scan(&rule, &[16, 32, 64, 128], 0.25, 2000, 44, None, &Tolerances::default()).unwrap();
    let slope = scan.fit.unwrap().slope;
    assert!((0.35..=0.65).contains(&slope), "slope {slope}");
    assert_eq!(scan.pass, Some(true));
}

#[test]
fn identical_configs_reproduce_identical_csv() {
    let cfg = ExperimentConfig::from_toml(
        r#"
kind = "mix-scan"
rule = "dmfl:0.25"
n = [8, 12, 16]
replicas = 40
seed = 45
"#,
    )
    .unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, files_a) = run_and_write(&cfg, a.path()).unwrap();
    let (_, files_b) = run_and_write(&cfg, b.path()).unwrap();
    assert_eq!(files_a.len(), files_b.len());
    let mut compared = 0;
    for (fa, fb) in files_a.iter().zip(&files_b) {
        assert_eq!(fa.file_name(), fb.file_name());
        if fa.extension().is_some_and(|e| e == "csv") {
            assert_eq!(
                std::fs::read(fa).unwrap(),
                std::fs::read(fb).unwrap(),
                "{}",
                fa.display()
            );
            compared += 1;
        }
    }
    assert!(compared >= 2);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 45);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}
