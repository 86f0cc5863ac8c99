//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any
//! failure.

use std::process::ExitCode;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use glauber_core::experiments::{appendix_diag, hydro_sweep, mix_scan, witness_scan, Tolerances};
use glauber_core::oracle::{build_generator, total_variation, transition_distribution};
use glauber_core::pde::Rho0Spec;
use glauber_core::rates::{make_chafee_infante, make_dmfl, make_dmfl_field, reaction_profile, LocalRule};
use glauber_core::rng::replica_rng;
use glauber_core::sim::{coalescence_times, simulate_with_rng};
use glauber_core::walks::{replacement_defect, srw_heat_kernel};
use glauber_core::SpinConfig;
use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::distribution::ContinuousCDF;
use statrs::statistics::{Max, Min};
use statrs::stats_tests::ks_test::{ks_onesample, KSOneSampleAlternativeMethod};
use statrs::stats_tests::NaNPolicy;

static VIOLATIONS: AtomicU64 = AtomicU64::new(0);
static COUPLED_RUNS: AtomicU64 = AtomicU64::new(0);

fn record_coupled(runs: usize, violations: u64) {
    COUPLED_RUNS.fetch_add(runs as u64, Ordering::Relaxed);
    VIOLATIONS.fetch_add(violations, Ordering::Relaxed);
}

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn coeff_error(got: &[f64], want: &[f64]) -> f64 {
    let len = got.len().max(want.len());
    (0..len)
        .map(|k| (got.get(k).copied().unwrap_or(0.0) - want.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

fn reaction_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let check =
        |rule: &LocalRule, want: [f64; 4]| -> f64 { coeff_error(reaction_profile(rule).reaction.coeffs(), &want) };
    for g in [0.0, 0.1, 0.25, 0.4, 0.7] {
        worst = worst.max(check(&make_dmfl(g)?, [0.0, -2.0 * (1.0 - 2.0 * g), 0.0, -2.0 * g * g]));
        for mu in [0.3, 0.8] {
            if mu < 2.0 * (1.0 - g) * (1.0 - g) {
                worst = worst.max(check(
                    &make_dmfl_field(g, mu)?,
                    [mu, -2.0 * (1.0 - 2.0 * g), 0.0, -2.0 * g * g],
                ));
            }
        }
    }
    for (a0, a1, a2) in [(9.0, 1.0, 3.0), (5.0, 1.0, 2.0), (2.0, 2.0, 2.0)] {
        let want = [0.0, 0.5 * (a0 - 3.0 * a1 - 2.0 * a2), 0.0, -0.5 * (a0 + a1 - 2.0 * a2)];
        worst = worst.max(check(&make_chafee_infante(a0, a1, a2)?, want));
    }
    let mut kappa_err: f64 = 0.0;
    for g in [0.0, 0.1, 0.25, 0.4] {
        let k = reaction_profile(&make_dmfl(g)?).kappa.unwrap_or(f64::NAN);
        kappa_err = kappa_err.max((k - 2.0 * (1.0 - 2.0 * g)).abs());
    }
    let pass = worst <= 1e-12 && kappa_err <= 1e-12;
    Ok((
        pass,
        format!("max coefficient error {worst:.2e}, max kappa error {kappa_err:.2e}"),
    ))
}

fn oracle_equivalence() -> Outcome {
    let rule = make_dmfl(0.3)?;
    let n = 6;
    let gen = build_generator(&rule, n)?;
    let replicas = 100_000u64;
    let mut details = Vec::new();
    let mut pass = true;
    for (start, t, seed) in [(0b000111u64, 0.2, 11u64), (0b000111, 0.5, 12), (0b101101, 0.5, 13)] {
        let init = SpinConfig::from_mask(n, start)?;
        let counts = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(seed, r);
                simulate_with_rng(&rule, &init, t, &mut rng).map(|(c, _)| c.mask() as usize)
            })
            .try_fold(
                || vec![0usize; 1 << n],
                |mut acc, m| {
                    acc[m?] += 1;
                    Ok::<_, glauber_core::Error>(acc)
                },
            )
            .try_reduce(
                || vec![0usize; 1 << n],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    Ok(a)
                },
            )?;
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / replicas as f64).collect();
        let exact = transition_distribution(&gen, start as usize, t)?;
        let tv = total_variation(&empirical, &exact);
        pass &= tv <= 0.03;
        details.push(format!("start {start:#08b} t={t}: tv {tv:.4}"));
    }
    Ok((pass, details.join("; ")))
}

/// Law of the maximum of `n` independent rate-2 exponential clocks.
struct MaxOfExponentials {
    n: i32,
}

impl Min<f64> for MaxOfExponentials {
    fn min(&self) -> f64 {
        0.0
    }
}

impl Max<f64> for MaxOfExponentials {
    fn max(&self) -> f64 {
        f64::INFINITY
    }
}

impl ContinuousCDF<f64, f64> for MaxOfExponentials {
    fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (-(-2.0 * t).exp_m1()).powi(self.n)
        }
    }
}

fn analytic_coupling_law() -> Outcome {
    let rule = make_dmfl(0.0)?;
    let small = coalescence_times(&rule, 4, 20_000, 21, 30.0)?;
    record_coupled(small.len(), small.iter().map(|s| s.violations).sum());
    let taus: Vec<f64> = small.iter().map(|s| s.tau.unwrap_or(f64::INFINITY)).collect();
    let (mean, se) = glauber_core::stats::mean_se(&taus);
    let want = 25.0 / 24.0;
    let z = (mean - want) / se;

    let big = coalescence_times(&rule, 64, 2_000, 22, 30.0)?;
    record_coupled(big.len(), big.iter().map(|s| s.violations).sum());
    let taus: Vec<f64> = big.iter().map(|s| s.tau.unwrap_or(f64::INFINITY)).collect();
    let timeouts = taus.iter().filter(|t| !t.is_finite()).count();
    let (stat, p) = ks_onesample(
        taus,
        &MaxOfExponentials { n: 64 },
        KSOneSampleAlternativeMethod::TwoSidedAsymptotic,
        NaNPolicy::Error,
    )?;
    let pass = z.abs() <= 3.0 && p >= 0.01 && timeouts == 0;
    Ok((
        pass,
        format!("n=4 mean {mean:.4} vs {want:.4} ({z:+.2} se); n=64 KS D={stat:.4} p={p:.3}"),
    ))
}

fn monotonicity_invariant() -> Outcome {
    let v = VIOLATIONS.load(Ordering::Relaxed);
    let runs = COUPLED_RUNS.load(Ordering::Relaxed);
    Ok((
        v == 0 && runs > 0,
        format!("{v} ordering violations over {runs} coupled runs"),
    ))
}

fn upper_bound_scaling() -> Outcome {
    let rule = make_dmfl(0.25)?;
    let scan = mix_scan(&rule, &[32, 64, 128, 256], 0.25, 500, 51, None, &Tolerances::default())?;
    for est in &scan.estimates {
        record_coupled(est.replicas, est.violations);
    }
    let quantiles: Vec<String> = scan.rows.iter().map(|r| format!("{}:{:.3}", r.n, r.quantile)).collect();
    let Some(fit) = scan.fit else {
        return Ok((false, format!("no fit (quantiles {})", quantiles.join(" "))));
    };
    Ok((
        scan.pass == Some(true),
        format!(
            "slope {:.3} (bound {:.2}), intercept {:.3}; quantiles {}",
            fit.slope,
            scan.slope_bound.unwrap_or(f64::NAN),
            fit.intercept,
            quantiles.join(" ")
        ),
    ))
}

fn lower_bound_scaling() -> Outcome {
    let rule = make_dmfl(0.25)?;
    let times: Vec<f64> = (0..=160).map(|i| i as f64 * 0.05).collect();
    let scan = witness_scan(&rule, &[32, 64, 128], &times, 1000, 2000, 61, &Tolerances::default())?;
    let crossings: Vec<String> = scan
        .curves
        .iter()
        .map(|c| match c.crossing {
            Some(t) => format!("{}:{t:.3}", c.n),
            None => format!("{}:none", c.n),
        })
        .collect();
    let slope = scan.fit.as_ref().map_or(f64::NAN, |f| f.slope);
    Ok((
        scan.pass == Some(true),
        format!(
            "crossings {}; slope {slope:.3}, 95% lower limit {:.3}",
            crossings.join(" "),
            scan.slope_lower.unwrap_or(f64::NAN)
        ),
    ))
}

fn hydrodynamic_limit() -> Outcome {
    let rule = make_dmfl(0.25)?;
    let sweep = hydro_sweep(
        &rule,
        &[64, 256],
        &Rho0Spec::Cos(0.8),
        16,
        0.25,
        200,
        71,
        &Tolerances::default(),
    )?;
    let errs: Vec<String> = sweep
        .runs
        .iter()
        .map(|r| format!("n={} linf {:.4}", r.n, r.linf))
        .collect();
    Ok((sweep.pass == Some(true), errs.join(", ")))
}

fn appendix_conformance() -> Outcome {
    let report = appendix_diag(512, 4, 1e4, 0.1, 1000, 81)?;
    let mut parts: Vec<String> = report
        .tails
        .iter()
        .map(|c| format!("{} {:.3}<={:.3}+{:.3}", c.name, c.frequency, c.bound, c.slack))
        .collect();
    parts.extend(
        report
            .constants
            .iter()
            .map(|c| format!("{} C={:.3} holdout {:.3}", c.name, c.c_fit, c.holdout_ratio)),
    );
    Ok((report.pass(), parts.join("; ")))
}

fn kernel_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 3..=16usize {
        for lambda in [1.0, 2.0] {
            let mut q = DMatrix::<f64>::zeros(n, n);
            for x in 0..n {
                q[(x, (x + 1) % n)] += lambda / 2.0;
                q[(x, (x + n - 1) % n)] += lambda / 2.0;
                q[(x, x)] -= lambda;
            }
            for t in [0.1, 1.0, 10.0] {
                let p = (q.clone() * t).exp();
                for x in 0..n {
                    for y in 0..n {
                        let k = srw_heat_kernel(n, lambda, t, x as i64, y as i64)?;
                        worst = worst.max((k - p[(x, y)]).abs());
                    }
                }
            }
        }
    }
    Ok((worst <= 1e-10, format!("max entry error {worst:.2e}")))
}

/// `E η(z_1(T)) η(z_2(T)) − E η(z_1(T)) E η(z_2(T))` for two labelled
/// particles stirred at rate ½ per bond, by matrix exponential over ordered
/// pairs of distinct sites.
fn two_particle_defect(cfg: &SpinConfig, a: usize, b: usize, t: f64) -> f64 {
    let n = cfg.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|x| (0..n).map(move |y| (x, y)))
        .filter(|(x, y)| x != y)
        .collect();
    let index = |p: (usize, usize)| pairs.iter().position(|&q| q == p).expect("distinct sites");
    let mut q = DMatrix::<f64>::zeros(pairs.len(), pairs.len());
    for (i, &(x, y)) in pairs.iter().enumerate() {
        for s in 0..n {
            let s1 = (s + 1) % n;
            let swap = |z: usize| {
                if z == s {
                    s1
                } else if z == s1 {
                    s
                } else {
                    z
                }
            };
            let next = (swap(x), swap(y));
            if next != (x, y) {
                let j = index(next);
                q[(i, j)] += 0.5;
                q[(i, i)] -= 0.5;
            }
        }
    }
    let p = (q * t).exp();
    let row = index((a, b));
    let (mut joint, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (j, &(x, y)) in pairs.iter().enumerate() {
        let (sx, sy) = (cfg.spin(x) as f64, cfg.spin(y) as f64);
        joint += p[(row, j)] * sx * sy;
        m1 += p[(row, j)] * sx;
        m2 += p[(row, j)] * sy;
    }
    joint - m1 * m2
}

fn replacement_defect_check() -> Outcome {
    let alternating = SpinConfig::from_spins(&[1, -1, 1, -1, 1, -1])?;
    let t = 1.0;
    let mut pass = true;
    let mut parts = Vec::new();
    for (sites, seed) in [([0usize, 1usize], 91u64), ([0, 3], 92)] {
        let est = replacement_defect(&alternating, &sites, t, 200_000, seed)?;
        let exact = two_particle_defect(&alternating, sites[0], sites[1], t);
        let z = (est.delta - exact) / est.se;
        pass &= z.abs() <= 3.0;
        parts.push(format!(
            "sites {sites:?}: {:.4} vs exact {exact:.4} ({z:+.2} se)",
            est.delta
        ));
    }
    let single = replacement_defect(&alternating, &[2], t, 1000, 93)?;
    let ones = replacement_defect(&SpinConfig::all_plus(6)?, &[0, 1], t, 1000, 94)?;
    pass &= single.delta == 0.0 && ones.delta == 0.0;
    parts.push(format!("k=1 {:.1e}, all-plus {:.1e}", single.delta, ones.delta));
    Ok((pass, parts.join("; ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "reaction-term exactness", reaction_exactness),
        (2, "oracle equivalence", oracle_equivalence),
        (3, "analytic coupling law", analytic_coupling_law),
        (5, "upper-bound scaling", upper_bound_scaling),
        (6, "lower-bound scaling", lower_bound_scaling),
        (7, "hydrodynamic limit", hydrodynamic_limit),
        (8, "appendix conformance", appendix_conformance),
        (9, "kernel exactness", kernel_exactness),
        (10, "replacement defect", replacement_defect_check),
        (4, "monotonicity invariant", monotonicity_invariant),
    ];
    let mut results = Vec::new();
    for (id, name, f) in criteria {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let line = format!(
            "criterion {id:>2}: {} {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        println!("{line}");
        results.push((id, pass, line));
    }
    results.sort_by_key(|r| r.0);
    println!("\nsummary");
    for (_, _, line) in &results {
        println!("{line}");
    }
    if results.iter().all(|r| r.1) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
