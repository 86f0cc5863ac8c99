//! Scaling studies built on the simulator: coalescence-quantile scans, the
//! magnetization lower-bound witness, the variance probe, hydrodynamic sweeps
//! and random-walk tail diagnostics.

use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SpinConfig;
use crate::error::{Error, Result};
use crate::oracle::{build_generator, DEFAULT_MAX_SITES};
use crate::pde::{hydro_compare, HydroComparison, Rho0Spec};
use crate::rates::{reaction_profile, LocalRule, RuleSpec};
use crate::rng::{derive_seed, replica_rng};
use crate::sim::{coalescence_quantile, simulate_observed, QuantileEstimate};
use crate::stats::{linear_fit, mean_se, variance_se, weighted_linear_fit, LinearFit, TailCheck};
use crate::walks::{
    local_averages, max_displacement_sample, occupation_time_sample, srw_heat_kernel_row, ssep_vs_independent,
    torus_distance, walk_position,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MixScan,
    LowerWitness,
    VarianceProbe,
    HydroSweep,
    AppendixDiag,
}

/// Pass/fail thresholds applied to experiment outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// mix-scan passes when the fitted slope is at most `factor / κ`.
    pub mix_slope_factor: f64,
    /// TV level whose crossing time the witness scan tracks.
    pub witness_level: f64,
    /// One-sided confidence for a positive witness slope.
    pub witness_confidence: f64,
    /// variance-probe passes when the fitted exponent is at most this.
    pub variance_exponent_max: f64,
    /// hydro-sweep passes when the L∞ error at the largest n is at most this.
    pub hydro_linf_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mix_slope_factor: 1.15,
            witness_level: 0.25,
            witness_confidence: 0.95,
            variance_exponent_max: -0.5,
            hydro_linf_max: 0.1,
        }
    }
}

/// A complete, serializable experiment description (TOML on disk).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub rule: RuleSpec,
    pub n: Vec<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Observation grid (witness times, or hydro output time as its last entry).
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Coupling timeout; defaults from `κ` when absent.
    #[serde(default)]
    pub t_max: Option<f64>,
    /// `ε` for the variance probe and the appendix diagnostics.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub rho0: Option<Rho0Spec>,
    /// Number of density blocks for hydro sweeps.
    #[serde(default)]
    pub m: Option<usize>,
    /// Horizon `T` (appendix) or macroscopic time (hydro).
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Marked particles for the displacement diagnostic.
    #[serde(default)]
    pub k: Option<usize>,
    /// Stationary samples for the witness when no exact law is available.
    #[serde(default)]
    pub stationary_samples: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_delta() -> f64 {
    0.25
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn epsilon_or(&self, default: f64) -> f64 {
        self.epsilon.unwrap_or(default)
    }
}

// ---------------------------------------------------------------------------
// mix scan

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixScanRow {
    pub n: usize,
    pub log_n: f64,
    pub quantile: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub half_width: f64,
    pub exceed_low: f64,
    pub exceed_high: f64,
    pub timeouts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixScan {
    pub delta: f64,
    pub rows: Vec<MixScanRow>,
    /// Affine fit of the quantile against `log n`; `None` with fewer than
    /// three distinct sizes.
    pub fit: Option<LinearFit>,
    pub inverse_kappa: Option<f64>,
    pub slope_bound: Option<f64>,
    pub pass: Option<bool>,
    pub warning: Option<String>,
    #[serde(skip)]
    pub estimates: Vec<QuantileEstimate>,
}

/// Coalescence quantiles over a range of lattice sizes with an affine fit
/// against `log n`.
pub fn mix_scan(
    rule: &LocalRule,
    ns: &[usize],
    delta: f64,
    replicas: usize,
    seed: u64,
    t_max: Option<f64>,
    tol: &Tolerances,
) -> Result<MixScan> {
    let kappa = reaction_profile(rule).kappa;
    let mut rows = Vec::with_capacity(ns.len());
    let mut estimates = Vec::with_capacity(ns.len());
    let mut warning = None;
    for &n in ns {
        let est = coalescence_quantile(rule, n, delta, replicas, derive_seed(seed, n as u64), t_max)?;
        warning = warning.or(est.warning.clone());
        rows.push(MixScanRow {
            n,
            log_n: (n as f64).ln(),
            quantile: est.quantile,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            half_width: est.half_width,
            exceed_low: est.exceedance_ci.0,
            exceed_high: est.exceedance_ci.1,
            timeouts: est.timeouts,
        });
        estimates.push(est);
    }
    let mut distinct: Vec<usize> = ns.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let fit = if distinct.len() >= 3 && rows.iter().all(|r| r.quantile.is_finite()) {
        let x: Vec<f64> = rows.iter().map(|r| r.log_n).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.quantile).collect();
        Some(linear_fit(&x, &y)?)
    } else {
        None
    };
    let inverse_kappa = kappa.map(|k| 1.0 / k);
    let slope_bound = inverse_kappa.map(|ik| ik * tol.mix_slope_factor);
    let pass = match (&fit, slope_bound) {
        (Some(f), Some(b)) => Some(f.slope <= b),
        _ => None,
    };
    Ok(MixScan {
        delta,
        rows,
        fit,
        inverse_kappa,
        slope_bound,
        pass,
        warning,
        estimates,
    })
}

// ---------------------------------------------------------------------------
// lower witness

/// Minimum number of stationary samples for the two-sample witness.
pub const MIN_STATIONARY_SAMPLES: usize = 1000;

/// Law of the number of `+` spins under `π_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StationarySource {
    /// Exact probabilities of each `+` count `0..=n`.
    Exact(Vec<f64>),
    /// `+` counts sampled along one long trajectory.
    Samples(Vec<usize>),
}

impl StationarySource {
    /// Exact law from the oracle.
    pub fn exact(rule: &LocalRule, n: usize) -> Result<Self> {
        let gen = build_generator(rule, n)?;
        let mut law = vec![0.0; n + 1];
        for (s, p) in gen.stationary().iter().enumerate() {
            law[(s as u64).count_ones() as usize] += p;
        }
        Ok(StationarySource::Exact(law))
    }

    /// Thinned samples from one trajectory started at `𝟙`: burn-in of ten
    /// times the `δ = 1/4` coalescence quantile, then one sample per `δ = 1/2`
    /// quantile.
    pub fn long_run(rule: &LocalRule, n: usize, samples: usize, seed: u64) -> Result<Self> {
        let est = coalescence_quantile(rule, n, 0.25, 200, derive_seed(seed, 0x5747), None)?;
        let burn = 10.0 * est.quantile;
        let gap = est.quantile_at(0.5);
        if !(burn.is_finite() && gap.is_finite() && gap > 0.0) {
            return Err(Error::Invalid(
                "coalescence quantile timed out; cannot set burn-in".into(),
            ));
        }
        let times: Vec<f64> = (0..samples).map(|i| burn + gap * i as f64).collect();
        let mut out = Vec::with_capacity(samples);
        let mut rng = replica_rng(derive_seed(seed, 0x5354), 0);
        simulate_observed(rule, &SpinConfig::all_plus(n)?, &times, &mut rng, |_, _, c| {
            out.push(c.count_plus())
        })?;
        Ok(StationarySource::Samples(out))
    }

    /// Exact when `n` is small enough for the oracle, sampled otherwise.
    pub fn auto(rule: &LocalRule, n: usize, samples: usize, seed: u64) -> Result<Self> {
        if n <= DEFAULT_MAX_SITES {
            Self::exact(rule, n)
        } else {
            Self::long_run(rule, n, samples, seed)
        }
    }

    fn tail(&self, n: usize) -> Vec<f64> {
        match self {
            StationarySource::Exact(law) => upper_tail_from_law(law),
            StationarySource::Samples(s) => upper_tail_from_counts(s, n),
        }
    }

    fn sample_count(&self) -> Option<usize> {
        match self {
            StationarySource::Exact(_) => None,
            StationarySource::Samples(s) => Some(s.len()),
        }
    }
}

/// `P(count ≥ j)` for `j = 0..=n`.
fn upper_tail_from_law(law: &[f64]) -> Vec<f64> {
    let mut tail = vec![0.0; law.len()];
    let mut acc = 0.0;
    for j in (0..law.len()).rev() {
        acc += law[j];
        tail[j] = acc;
    }
    tail
}

fn upper_tail_from_counts(counts: &[usize], n: usize) -> Vec<f64> {
    let mut hist = vec![0.0; n + 1];
    for &c in counts {
        hist[c] += 1.0;
    }
    let total = counts.len() as f64;
    upper_tail_from_law(&hist.iter().map(|h| h / total).collect::<Vec<_>>())
}

/// DKW half-width at confidence `1 - alpha` for `m` samples.
pub fn dkw_epsilon(m: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * m as f64)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessRow {
    pub t: f64,
    /// `max_a P̂_𝟙(S_t ≥ a) − π̂(S ≥ a)`.
    pub witness: f64,
    /// Witness minus the DKW band (95%), clipped at zero.
    pub lower_bound: f64,
    /// Magnetization level attaining the maximum.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessCurve {
    pub n: usize,
    pub replicas: usize,
    pub stationary_samples: Option<usize>,
    pub rows: Vec<WitnessRow>,
    pub level: f64,
    /// First time the witness drops to `level` (linear interpolation).
    pub crossing: Option<f64>,
    /// Bootstrap standard error of the crossing time.
    pub crossing_se: Option<f64>,
}

const BOOTSTRAP_ROUNDS: usize = 200;

fn witness_at(plus_counts: &[u32], n: usize, stat_tail: &[f64]) -> (f64, usize) {
    let mut hist = vec![0usize; n + 1];
    for &c in plus_counts {
        hist[c as usize] += 1;
    }
    let r = plus_counts.len() as f64;
    let mut acc = 0usize;
    let mut best = (0.0, 0usize);
    for j in (0..=n).rev() {
        acc += hist[j];
        let gap = acc as f64 / r - stat_tail[j];
        if gap > best.0 {
            best = (gap, j);
        }
    }
    best
}

fn crossing_time(times: &[f64], w: &[f64], level: f64) -> Option<f64> {
    let i = w.iter().position(|&v| v <= level)?;
    if i == 0 {
        return Some(times[0]);
    }
    let (t0, t1, w0, w1) = (times[i - 1], times[i], w[i - 1], w[i]);
    Some(t0 + (t1 - t0) * (w0 - level) / (w0 - w1))
}

/// Magnetization witness for the distance to stationarity from `𝟙`:
/// `d(t) ≥ max_a P_𝟙(S_t ≥ a) − π_N(S ≥ a)`, with `a` over all achievable
/// magnetization levels.
pub fn lower_witness(
    rule: &LocalRule,
    n: usize,
    times: &[f64],
    replicas: usize,
    source: &StationarySource,
    seed: u64,
    level: f64,
) -> Result<WitnessCurve> {
    if let Some(m) = source.sample_count() {
        if m < MIN_STATIONARY_SAMPLES {
            return Err(Error::TooFewStationarySamples {
                min: MIN_STATIONARY_SAMPLES,
                got: m,
            });
        }
    }
    if replicas < 2 {
        return Err(Error::TooFewReplicas { min: 2, got: replicas });
    }
    let start = SpinConfig::all_plus(n)?;
    // paths[r][i] = number of + spins of replica r at times[i]
    let paths: Vec<Vec<u32>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let mut path = Vec::with_capacity(times.len());
            simulate_observed(rule, &start, times, &mut rng, |_, _, c| {
                path.push(c.count_plus() as u32)
            })?;
            Ok(path)
        })
        .collect::<Result<_>>()?;
    let stat_tail = source.tail(n);
    let alpha = 0.05;
    let band = match source.sample_count() {
        None => dkw_epsilon(replicas, alpha),
        Some(m) => dkw_epsilon(replicas, alpha / 2.0) + dkw_epsilon(m, alpha / 2.0),
    };
    let column = |paths: &[&Vec<u32>], i: usize| -> Vec<u32> { paths.iter().map(|p| p[i]).collect() };
    let all: Vec<&Vec<u32>> = paths.iter().collect();
    let rows: Vec<WitnessRow> = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let (w, j) = witness_at(&column(&all, i), n, &stat_tail);
            WitnessRow {
                t,
                witness: w,
                lower_bound: (w - band).max(0.0),
                threshold: (2.0 * j as f64 - n as f64) / n as f64,
            }
        })
        .collect();
    let ws: Vec<f64> = rows.iter().map(|r| r.witness).collect();
    let crossing = crossing_time(times, &ws, level);

    let crossing_se = crossing.map(|_| {
        let boots: Vec<f64> = (0..BOOTSTRAP_ROUNDS as u64)
            .into_par_iter()
            .filter_map(|b| {
                let mut rng = replica_rng(derive_seed(seed, 0xB007), b);
                let pick: Vec<&Vec<u32>> = (0..replicas).map(|_| all.choose(&mut rng).copied().unwrap()).collect();
                let tail = match source {
                    StationarySource::Exact(_) => stat_tail.clone(),
                    StationarySource::Samples(s) => {
                        let re: Vec<usize> = (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).collect();
                        upper_tail_from_counts(&re, n)
                    }
                };
                let w: Vec<f64> = (0..times.len())
                    .map(|i| witness_at(&column(&pick, i), n, &tail).0)
                    .collect();
                crossing_time(times, &w, level)
            })
            .collect();
        let (_, se) = mean_se(&boots);
        se * (boots.len() as f64).sqrt()
    });

    Ok(WitnessCurve {
        n,
        replicas,
        stationary_samples: source.sample_count(),
        rows,
        level,
        crossing,
        crossing_se,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessScan {
    pub curves: Vec<WitnessCurve>,
    /// Weighted affine fit of crossing time against `log n`.
    pub fit: Option<LinearFit>,
    /// One-sided lower confidence limit for the slope.
    pub slope_lower: Option<f64>,
    pub pass: Option<bool>,
}

/// Witness curves over several sizes and the slope of the crossing time
/// in `log n`.
pub fn witness_scan(
    rule: &LocalRule,
    ns: &[usize],
    times: &[f64],
    replicas: usize,
    stationary_samples: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<WitnessScan> {
    let mut curves = Vec::with_capacity(ns.len());
    for &n in ns {
        let s = derive_seed(seed, n as u64);
        let source = StationarySource::auto(rule, n, stationary_samples, s)?;
        curves.push(lower_witness(rule, n, times, replicas, &source, s, tol.witness_level)?);
    }
    let pts: Vec<(f64, f64, f64)> = curves
        .iter()
        .filter_map(|c| Some(((c.n as f64).ln(), c.crossing?, c.crossing_se?.max(1e-9))))
        .collect();
    let (fit, slope_lower, pass) = if pts.len() >= 2 && pts.len() == curves.len() {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let s: Vec<f64> = pts.iter().map(|p| p.2).collect();
        let fit = weighted_linear_fit(&x, &y, &s)?;
        let z = crate::stats::normal_quantile(tol.witness_confidence);
        let lower = fit.slope - z * fit.slope_se;
        let increasing = y.windows(2).all(|w| w[1] > w[0]);
        (Some(fit), Some(lower), Some(lower > 0.0 && increasing))
    } else {
        (None, None, None)
    };
    Ok(WitnessScan {
        curves,
        fit,
        slope_lower,
        pass,
    })
}

// ---------------------------------------------------------------------------
// variance probe

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: usize,
    pub t_star: f64,
    pub variance: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceProbe {
    pub epsilon: f64,
    pub rows: Vec<VarianceRow>,
    /// Fit of `log Var` against `log n`; the slope is the decay exponent.
    pub fit: Option<LinearFit>,
    pub pass: Option<bool>,
}

pub const MIN_VARIANCE_REPLICAS: usize = 1000;

/// Sample variance of `S(η_t)` from `𝟙` at `t = ε log n`.
pub fn magnetization_variance(rule: &LocalRule, n: usize, t: f64, replicas: usize, seed: u64) -> Result<(f64, f64)> {
    let start = SpinConfig::all_plus(n)?;
    let s: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let (c, _) = crate::sim::simulate_with_rng(rule, &start, t, &mut rng)?;
            Ok(c.magnetization())
        })
        .collect::<Result<_>>()?;
    Ok(variance_se(&s))
}

pub fn variance_probe(
    rule: &LocalRule,
    ns: &[usize],
    epsilon: f64,
    replicas: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<VarianceProbe> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if replicas < MIN_VARIANCE_REPLICAS {
        return Err(Error::TooFewReplicas {
            min: MIN_VARIANCE_REPLICAS,
            got: replicas,
        });
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let t_star = epsilon * (n as f64).ln();
        let (variance, se) = magnetization_variance(rule, n, t_star, replicas, derive_seed(seed, n as u64))?;
        rows.push(VarianceRow {
            n,
            t_star,
            variance,
            se,
        });
    }
    let fit = if rows.len() >= 2 && rows.iter().all(|r| r.variance > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.variance.ln()).collect();
        Some(linear_fit(&x, &y)?)
    } else {
        None
    };
    let pass = fit.as_ref().map(|f| f.slope <= tol.variance_exponent_max);
    Ok(VarianceProbe {
        epsilon,
        rows,
        fit,
        pass,
    })
}

// ---------------------------------------------------------------------------
// hydro sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroSweep {
    pub runs: Vec<HydroComparison>,
    /// L∞ error at the largest `n` within tolerance and below the smallest `n`.
    pub pass: Option<bool>,
}

#[allow(clippy::too_many_arguments)]
pub fn hydro_sweep(
    rule: &LocalRule,
    ns: &[usize],
    rho0: &Rho0Spec,
    m: usize,
    t: f64,
    replicas: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<HydroSweep> {
    let profile = rho0.resolve()?;
    let runs = ns
        .iter()
        .map(|&n| hydro_compare(rule, &profile, n, m, t, replicas, derive_seed(seed, n as u64)))
        .collect::<Result<Vec<_>>>()?;
    let pass = match (runs.iter().min_by_key(|r| r.n), runs.iter().max_by_key(|r| r.n)) {
        (Some(lo), Some(hi)) if lo.n < hi.n => Some(hi.linf <= tol.hydro_linf_max && hi.linf < lo.linf),
        _ => None,
    };
    Ok(HydroSweep { runs, pass })
}

// ---------------------------------------------------------------------------
// appendix diagnostics

/// Fitted constant of a bound `value ≤ C · scale`, trained on one grid and
/// checked on a held-out grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedConstant {
    pub name: String,
    pub c_fit: f64,
    /// Largest `value / scale` on the held-out grid.
    pub holdout_ratio: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixReport {
    pub n: usize,
    pub horizon: f64,
    pub epsilon: f64,
    pub replicas: usize,
    pub tails: Vec<TailCheck>,
    pub constants: Vec<FittedConstant>,
}

impl AppendixReport {
    pub fn pass(&self) -> bool {
        self.tails.iter().all(|c| c.pass) && self.constants.iter().all(|c| c.pass)
    }
}

/// `P(max_{t≤T} |w(t)| ≥ T^{1/2+ε})` against `3 exp(−(λ/6) T^{2ε})`, `λ = 1`.
pub fn maximal_inequality_check(n: usize, horizon: f64, eps: f64, replicas: usize, seed: u64) -> TailCheck {
    let lambda = 1.0;
    let thr = horizon.powf(0.5 + eps);
    let hits = (0..replicas as u64)
        .into_par_iter()
        .filter(|&r| max_displacement_sample(n, lambda, horizon, &mut replica_rng(seed, r)) as f64 >= thr)
        .count();
    let bound = (3.0 * (-(lambda / 6.0) * horizon.powf(2.0 * eps)).exp()).min(1.0);
    TailCheck::new("maximal inequality", hits, replicas, bound)
}

/// `P(θ(T) ≥ 2 T^{1/2+2ε})` against `exp(−T^{ε/4})` for the rate-2 walk.
pub fn occupation_check(n: usize, horizon: f64, eps: f64, replicas: usize, seed: u64) -> TailCheck {
    let thr = 2.0 * horizon.powf(0.5 + 2.0 * eps);
    let hits = (0..replicas as u64)
        .into_par_iter()
        .filter(|&r| occupation_time_sample(n, horizon, &mut replica_rng(seed, r)) >= thr)
        .count();
    TailCheck::new("occupation time", hits, replicas, (-horizon.powf(eps / 4.0)).exp())
}

/// `P(D ≥ k T^{1/4+3ε})` against `4 k² exp(−T^{ε/4})` for `k` marked
/// particles started on consecutive sites.
pub fn displacement_check(n: usize, k: usize, horizon: f64, eps: f64, replicas: usize, seed: u64) -> Result<TailCheck> {
    let starts: Vec<usize> = (0..k).collect();
    let thr = k as f64 * horizon.powf(0.25 + 3.0 * eps);
    let hits = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let run = ssep_vs_independent(n, &starts, horizon, &mut replica_rng(seed, r))?;
            Ok((run.max_displacement as f64 >= thr) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let bound = (4.0 * (k * k) as f64 * (-horizon.powf(eps / 4.0)).exp()).min(1.0);
    Ok(TailCheck::new("coupled displacement", hits, replicas, bound))
}

/// Smoothing of local averages: `|Φ_x(η,t) − Φ_y(η,t)| ≤ C |x−y| / √t`. `C`
/// is the largest ratio over random configurations on the training times;
/// the held-out times must not exceed it.
pub fn smoothing_check(
    ns: &[usize],
    train: &[f64],
    holdout: &[f64],
    configs: usize,
    seed: u64,
) -> Result<FittedConstant> {
    let ratio = |ts: &[f64], tag: u64| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &n in ns {
            let mut rng = replica_rng(derive_seed(seed, tag), n as u64);
            for _ in 0..configs {
                let spins: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
                let cfg = SpinConfig::from_spins(&spins)?;
                for &t in ts {
                    let phi = local_averages(&cfg, t)?;
                    for x in 0..n {
                        for y in x + 1..n {
                            let d = torus_distance(x as i64, y as i64, n) as f64;
                            worst = worst.max((phi[x] - phi[y]).abs() * t.sqrt() / d);
                        }
                    }
                }
            }
        }
        Ok(worst)
    };
    let c_fit = ratio(train, 1)?;
    let holdout_ratio = ratio(holdout, 2)?;
    Ok(FittedConstant {
        name: "local-average smoothing".into(),
        c_fit,
        holdout_ratio,
        pass: holdout_ratio <= c_fit,
    })
}

/// Local-limit avoidance: `P(|w(s_T) − y| ≤ T^{1/2−2ε}) ≤ C / T^{ε/2}` with
/// `s_T = T − T^{1/2+3ε}`, uniformly over targets `y`. Probabilities come from
/// the exact kernel; `C` is fitted on `train` horizons and checked on
/// `holdout`, and a Monte Carlo frequency at the last held-out horizon is
/// tested against the fitted bound.
pub fn local_limit_check(
    n: usize,
    eps: f64,
    train: &[f64],
    holdout: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<(FittedConstant, TailCheck)> {
    let s_of = |t: f64| (t - t.powf(0.5 + 3.0 * eps)).max(0.0);
    let window_prob = |row: &[f64], y: usize, r: u64| -> f64 {
        (0..n)
            .filter(|&z| torus_distance(z as i64, y as i64, n) <= r)
            .map(|z| row[z])
            .sum()
    };
    let worst = |ts: &[f64]| -> Result<(f64, usize)> {
        let mut best = (0.0, 0);
        for &t in ts {
            let row = srw_heat_kernel_row(n, 1.0, s_of(t))?;
            let r = t.powf(0.5 - 2.0 * eps).floor() as u64;
            for y in 0..n {
                let v = window_prob(&row, y, r) * t.powf(eps / 2.0);
                if v > best.0 {
                    best = (v, y);
                }
            }
        }
        Ok(best)
    };
    let (c_fit, _) = worst(train)?;
    let (holdout_ratio, _) = worst(holdout)?;
    let constant = FittedConstant {
        name: "local-limit avoidance".into(),
        c_fit,
        holdout_ratio,
        pass: holdout_ratio <= c_fit,
    };
    let t = *holdout.last().unwrap_or(&1.0);
    let r = t.powf(0.5 - 2.0 * eps).floor() as u64;
    let hits = (0..replicas as u64)
        .into_par_iter()
        .filter(|&i| {
            let w = walk_position(1.0, s_of(t), &mut replica_rng(seed, i));
            torus_distance(w, 0, n) <= r
        })
        .count();
    let tail = TailCheck::new(
        "local-limit avoidance (sampled, y = 0)",
        hits,
        replicas,
        (c_fit / t.powf(eps / 2.0)).min(1.0),
    );
    Ok((constant, tail))
}

pub fn appendix_diag(n: usize, k: usize, horizon: f64, eps: f64, replicas: usize, seed: u64) -> Result<AppendixReport> {
    let mut tails = vec![
        maximal_inequality_check(n, horizon, eps, replicas, derive_seed(seed, 1)),
        occupation_check(n, horizon, eps, replicas, derive_seed(seed, 2)),
        displacement_check(n, k, horizon, eps, replicas, derive_seed(seed, 3))?,
    ];
    let smoothing = smoothing_check(
        &[64, 128],
        &[4.0, 16.0, 64.0],
        &[256.0, 1024.0],
        4,
        derive_seed(seed, 4),
    )?;
    let (llt, llt_tail) = local_limit_check(n, eps, &[1e2, 1e3], &[horizon], replicas, derive_seed(seed, 5))?;
    tails.push(llt_tail);
    Ok(AppendixReport {
        n,
        horizon,
        epsilon: eps,
        replicas,
        tails,
        constants: vec![smoothing, llt],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let text = r#"
kind = "mix-scan"
rule = "dmfl:0.25"
n = [32, 64]
replicas = 50
seed = 7

[tolerances]
mix_slope_factor = 1.2
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::MixScan);
        assert_eq!(cfg.delta, 0.25);
        assert_eq!(cfg.tolerances.mix_slope_factor, 1.2);
        assert_eq!(cfg.tolerances.witness_level, 0.25);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_toml("kind = \"mix-scan\"\nbogus = 1").is_err());
    }

    #[test]
    fn crossing_interpolates() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(crossing_time(&t, &[1.0, 0.5, 0.0], 0.25), Some(1.5));
        assert_eq!(crossing_time(&t, &[0.1, 0.0, 0.0], 0.25), Some(0.0));
        assert_eq!(crossing_time(&t, &[1.0, 0.9, 0.8], 0.25), None);
    }

    #[test]
    fn witness_at_start_is_point_mass_distance() {
        let law = vec![0.1, 0.2, 0.3, 0.4];
        let tail = upper_tail_from_law(&law);
        let (w, j) = witness_at(&[3, 3, 3], 3, &tail);
        assert!((w - 0.6).abs() < 1e-12);
        assert_eq!(j, 3);
    }

    #[test]
    fn single_size_scan_reports_without_fit() {
        let rule = crate::rates::make_dmfl(0.0).unwrap();
        let scan = mix_scan(&rule, &[8], 0.25, 20, 1, None, &Tolerances::default()).unwrap();
        assert!(scan.fit.is_none());
        assert_eq!(scan.rows.len(), 1);
        assert!(scan.rows[0].quantile > 0.0);
    }

    #[test]
    fn stationary_sample_minimum() {
        let rule = crate::rates::make_dmfl(0.25).unwrap();
        let src = StationarySource::Samples(vec![4; 10]);
        assert!(matches!(
            lower_witness(&rule, 8, &[0.0], 10, &src, 0, 0.25),
            Err(Error::TooFewStationarySamples { .. })
        ));
    }
}
