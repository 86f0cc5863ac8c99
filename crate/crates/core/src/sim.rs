//! Event-driven simulation of the Glauber-Exclusion process and of the
//! monotone two-chain coupling.
//!
//! Time is macroscopic: every bond exchanges at rate `n²/2`, and flip
//! candidates arrive at rate `λ_max` per site (rate `2 λ_max` in the coupled
//! chain, where a discordant site can move in two directions). A candidate at
//! site `x` with uniform mark `U` is accepted by thinning against the actual
//! rate, which reproduces the inhomogeneous flip rates exactly.
//!
//! Between two consecutive flip candidates the number of exchange events is
//! Poisson with mean `(n³/2) Δt`, and each exchange picks a uniform bond.
//! Exchanges on a bond whose two spins agree (in both chains) are identity
//! transitions and cost only the bond draw.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SpinConfig;
use crate::error::{Error, Result};
use crate::rates::{check_attractive, reaction_profile, LocalRule};
use crate::rng::{replica_rng, SimRng};
use crate::stats::{order_statistic, wilson_interval};

/// Default number of points on the geometric ξ-trace grid.
pub const TRACE_POINTS: usize = 64;

/// Minimum replica count accepted by [`coalescence_quantile`].
pub const MIN_REPLICAS: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub flip_candidates: u64,
    pub flips: u64,
    pub exchanges: u64,
}

impl EventCounts {
    pub fn total(&self) -> u64 {
        self.flip_candidates + self.exchanges
    }
}

/// Total exchange rate `n · n²/2` of the speeded-up exclusion part.
pub fn exchange_rate(n: usize) -> f64 {
    let n = n as f64;
    n * n * n / 2.0
}

fn poisson_count<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let p = Poisson::new(mean).expect("finite positive Poisson mean");
    p.sample(rng) as u64
}

/// Uniform draws from `0..n`, two per 64-bit word, by multiply-and-reject.
struct SiteSampler {
    n: u32,
    threshold: u32,
    buf: u64,
    have: bool,
}

impl SiteSampler {
    fn new(n: usize) -> Self {
        let n = u32::try_from(n).expect("lattice size fits in u32");
        Self {
            n,
            threshold: n.wrapping_neg() % n,
            buf: 0,
            have: false,
        }
    }

    #[inline]
    fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        loop {
            let x = if self.have {
                self.have = false;
                (self.buf >> 32) as u32
            } else {
                self.buf = rng.next_u64();
                self.have = true;
                self.buf as u32
            };
            let m = x as u64 * self.n as u64;
            if m as u32 >= self.threshold {
                return (m >> 32) as usize;
            }
        }
    }
}

#[inline]
fn run_exchanges<R: Rng + ?Sized>(cfg: &mut SpinConfig, count: u64, sites: &mut SiteSampler, rng: &mut R) {
    let n = cfg.len();
    for _ in 0..count {
        let b = sites.sample(rng);
        cfg.swap_bits(b, if b + 1 == n { 0 } else { b + 1 });
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::BadTime(t));
    }
    Ok(())
}

/// Samples `η_{t_end}` started from `initial`.
pub fn simulate(rule: &LocalRule, initial: &SpinConfig, t_end: f64, seed: u64) -> Result<SpinConfig> {
    let mut rng = replica_rng(seed, 0);
    simulate_with_rng(rule, initial, t_end, &mut rng).map(|(c, _)| c)
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    rule: &LocalRule,
    initial: &SpinConfig,
    t_end: f64,
    rng: &mut R,
) -> Result<(SpinConfig, EventCounts)> {
    simulate_observed(rule, initial, &[t_end], rng, |_, _, _| {})
}

/// Runs from `initial` through the non-decreasing `times`, calling
/// `observe(i, t_i, η_{t_i})` at each, and returns the state at the last time.
pub fn simulate_observed<R, F>(
    rule: &LocalRule,
    initial: &SpinConfig,
    times: &[f64],
    rng: &mut R,
    mut observe: F,
) -> Result<(SpinConfig, EventCounts)>
where
    R: Rng + ?Sized,
    F: FnMut(usize, f64, &SpinConfig),
{
    let n = initial.len();
    rule.check_fits(n)?;
    for w in times.windows(2) {
        if w[1] < w[0] {
            return Err(Error::Invalid("observation times must be sorted".into()));
        }
    }
    for &t in times {
        check_time(t)?;
    }
    let lambda = rule.lambda_max();
    let flip_clock = Exp::new(n as f64 * lambda).expect("positive flip clock rate");
    let exch_rate = exchange_rate(n);
    let mut cfg = initial.clone();
    let mut sites = SiteSampler::new(n);
    let mut counts = EventCounts::default();
    let mut t = 0.0;
    let mut next_flip = if times.iter().any(|&s| s > 0.0) {
        flip_clock.sample(rng)
    } else {
        f64::INFINITY
    };
    for (i, &target) in times.iter().enumerate() {
        while next_flip <= target {
            let k = poisson_count(rng, exch_rate * (next_flip - t));
            run_exchanges(&mut cfg, k, &mut sites, rng);
            counts.exchanges += k;
            t = next_flip;
            let x = sites.sample(rng);
            let u: f64 = rng.random();
            counts.flip_candidates += 1;
            if rule.rate_at(&cfg, x) >= lambda * u {
                cfg.toggle(x);
                counts.flips += 1;
            }
            next_flip = t + flip_clock.sample(rng);
        }
        let k = poisson_count(rng, exch_rate * (target - t));
        run_exchanges(&mut cfg, k, &mut sites, rng);
        counts.exchanges += k;
        t = target;
        observe(i, t, &cfg);
    }
    Ok((cfg, counts))
}

/// Magnetization of `η_t` at each of the sorted `times`.
pub fn magnetization_path<R: Rng + ?Sized>(
    rule: &LocalRule,
    initial: &SpinConfig,
    times: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(times.len());
    simulate_observed(rule, initial, times, rng, |_, _, c| out.push(c.magnetization()))?;
    Ok(out)
}

/// Ordered pair `(η⁺, η⁻)` with incremental discordance tracking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoupledPair {
    upper: SpinConfig,
    lower: SpinConfig,
    discordant: usize,
    violations: u64,
}

impl CoupledPair {
    pub fn new(upper: SpinConfig, lower: SpinConfig) -> Result<Self> {
        if !upper.dominates(&lower)? {
            return Err(Error::NotOrdered);
        }
        let discordant = upper.excess_over(&lower);
        Ok(Self {
            upper,
            lower,
            discordant,
            violations: 0,
        })
    }

    /// The extremal pair `(𝟙, -𝟙)`.
    pub fn extremal(n: usize) -> Result<Self> {
        Self::new(SpinConfig::all_plus(n)?, SpinConfig::all_minus(n)?)
    }

    pub fn upper(&self) -> &SpinConfig {
        &self.upper
    }

    pub fn lower(&self) -> &SpinConfig {
        &self.lower
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of sites with `η⁺ = +1`, `η⁻ = -1`, maintained incrementally.
    pub fn discordant_count(&self) -> usize {
        self.discordant
    }

    /// Full recount of the discordant sites.
    pub fn recount(&self) -> usize {
        self.upper.excess_over(&self.lower)
    }

    /// `ξ = S(η⁺) - S(η⁻)`.
    pub fn xi(&self) -> f64 {
        2.0 * self.discordant as f64 / self.len() as f64
    }

    pub fn is_coalesced(&self) -> bool {
        self.discordant == 0
    }

    /// Ordering violations observed so far (always zero for attractive rules).
    pub fn violations(&self) -> u64 {
        self.violations
    }

    #[inline]
    fn check_site(&mut self, x: usize) {
        let ok = self.upper.bit(x) || !self.lower.bit(x);
        debug_assert!(ok, "monotone coupling lost its order at site {x}");
        if !ok {
            self.violations += 1;
        }
    }

    #[inline]
    fn exchange(&mut self, b: usize) {
        let c = if b + 1 == self.len() { 0 } else { b + 1 };
        self.upper.swap_bits(b, c);
        self.lower.swap_bits(b, c);
        let bad = |x: usize| (!self.upper.bit(x) & self.lower.bit(x)) as u64;
        let v = bad(b) + bad(c);
        debug_assert_eq!(v, 0, "monotone coupling lost its order on bond {b}");
        self.violations += v;
    }

    /// Coupled flip candidate at `x` with mark `u ∈ [0, 2 λ_max)`. Returns
    /// whether either chain changed.
    #[inline]
    fn flip_candidate(&mut self, rule: &LocalRule, x: usize, u: f64) -> bool {
        let cu = rule.rate_at(&self.upper, x);
        let cl = rule.rate_at(&self.lower, x);
        let changed = match (self.upper.bit(x), self.lower.bit(x)) {
            // (+,+): to (-,-) at c(η⁺), to (+,-) at c(η⁻) - c(η⁺)
            (true, true) => {
                if u < cu {
                    self.upper.toggle(x);
                    self.lower.toggle(x);
                    true
                } else if u < cl {
                    self.lower.toggle(x);
                    self.discordant += 1;
                    true
                } else {
                    false
                }
            }
            // (-,-): to (+,+) at c(η⁻), to (+,-) at c(η⁺) - c(η⁻)
            (false, false) => {
                if u < cl {
                    self.upper.toggle(x);
                    self.lower.toggle(x);
                    true
                } else if u < cu {
                    self.upper.toggle(x);
                    self.discordant += 1;
                    true
                } else {
                    false
                }
            }
            // (+,-): to (-,-) at c(η⁺), to (+,+) at c(η⁻)
            (true, false) => {
                if u < cu {
                    self.upper.toggle(x);
                    self.discordant -= 1;
                    true
                } else if u < cu + cl {
                    self.lower.toggle(x);
                    self.discordant -= 1;
                    true
                } else {
                    false
                }
            }
            (false, true) => {
                self.violations += 1;
                false
            }
        };
        if changed {
            self.check_site(x);
        }
        changed
    }
}

fn check_coupling_preconditions(rule: &LocalRule, pair: &CoupledPair) -> Result<()> {
    rule.check_fits(pair.len())?;
    if !check_attractive(rule) {
        return Err(Error::NotAttractive);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub xi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupleOutcome {
    /// Coalescence time, `None` on timeout.
    pub tau: Option<f64>,
    pub t_max: f64,
    pub trace: Vec<TracePoint>,
    pub events: EventCounts,
    pub violations: u64,
}

impl CoupleOutcome {
    pub fn timed_out(&self) -> bool {
        self.tau.is_none()
    }

    /// `τ` with timeouts mapped to `+∞`.
    pub fn tau_or_inf(&self) -> f64 {
        self.tau.unwrap_or(f64::INFINITY)
    }
}

/// `points` geometrically spaced times from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![hi];
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo * (ratio * i as f64).exp()
            }
        })
        .collect()
}

/// Default ξ-trace grid: 64 geometric points on `[t_max/1000, t_max]`.
pub fn default_trace_grid(t_max: f64) -> Vec<f64> {
    geometric_grid(t_max * 1e-3, t_max, TRACE_POINTS)
}

/// Default timeout: `(8/κ) log n` when `κ` exists, else `50 log n`.
pub fn default_t_max(kappa: Option<f64>, n: usize) -> f64 {
    let ln = (n as f64).ln();
    match kappa {
        Some(k) => 8.0 / k * ln,
        None => 50.0 * ln,
    }
}

/// Runs the monotone coupling from `(upper0, lower0)` until coalescence or
/// `t_max`, recording `ξ` on the default geometric grid.
pub fn couple(
    rule: &LocalRule,
    upper0: &SpinConfig,
    lower0: &SpinConfig,
    t_max: f64,
    seed: u64,
) -> Result<CoupleOutcome> {
    let pair = CoupledPair::new(upper0.clone(), lower0.clone())?;
    let mut rng = replica_rng(seed, 0);
    couple_with(rule, pair, t_max, &default_trace_grid(t_max), &mut rng)
}

pub fn couple_with<R: Rng + ?Sized>(
    rule: &LocalRule,
    pair: CoupledPair,
    t_max: f64,
    trace_times: &[f64],
    rng: &mut R,
) -> Result<CoupleOutcome> {
    check_time(t_max)?;
    check_coupling_preconditions(rule, &pair)?;
    let mut trace_times: Vec<f64> = trace_times
        .iter()
        .copied()
        .filter(|&t| (0.0..=t_max).contains(&t))
        .collect();
    trace_times.sort_by(f64::total_cmp);
    let (pair, tau, events, trace) = run_coupled(rule, pair, &trace_times, t_max, true, rng);
    Ok(CoupleOutcome {
        tau,
        t_max,
        trace,
        events,
        violations: pair.violations,
    })
}

/// Evolves the coupled pair to time `t` without stopping at coalescence.
pub fn evolve_pair<R: Rng + ?Sized>(
    rule: &LocalRule,
    pair: CoupledPair,
    t: f64,
    rng: &mut R,
) -> Result<(CoupledPair, EventCounts)> {
    check_time(t)?;
    check_coupling_preconditions(rule, &pair)?;
    let (pair, _, events, _) = run_coupled(rule, pair, &[], t, false, rng);
    Ok((pair, events))
}

fn run_coupled<R: Rng + ?Sized>(
    rule: &LocalRule,
    mut pair: CoupledPair,
    trace_times: &[f64],
    t_end: f64,
    stop_at_coalescence: bool,
    rng: &mut R,
) -> (CoupledPair, Option<f64>, EventCounts, Vec<TracePoint>) {
    let n = pair.len();
    let bound = 2.0 * rule.lambda_max();
    let flip_clock = Exp::new(n as f64 * bound).expect("positive flip clock rate");
    let exch_rate = exchange_rate(n);
    let mut sites = SiteSampler::new(n);
    let mut counts = EventCounts::default();
    let mut trace = Vec::with_capacity(trace_times.len());
    let mut t = 0.0;
    if stop_at_coalescence && pair.is_coalesced() {
        trace.extend(trace_times.iter().map(|&t| TracePoint { t, xi: 0.0 }));
        return (pair, Some(0.0), counts, trace);
    }
    let mut tau = None;
    let mut next_flip = flip_clock.sample(rng);
    let checkpoints = trace_times.iter().copied().chain(std::iter::once(t_end));
    'outer: for target in checkpoints {
        while next_flip <= target {
            let k = poisson_count(rng, exch_rate * (next_flip - t));
            for _ in 0..k {
                let b = sites.sample(rng);
                pair.exchange(b);
            }
            counts.exchanges += k;
            t = next_flip;
            let x = sites.sample(rng);
            let u = bound * rng.random::<f64>();
            counts.flip_candidates += 1;
            if pair.flip_candidate(rule, x, u) {
                counts.flips += 1;
                if stop_at_coalescence && pair.is_coalesced() {
                    tau = Some(t);
                    break 'outer;
                }
            }
            next_flip = t + flip_clock.sample(rng);
        }
        let k = poisson_count(rng, exch_rate * (target - t));
        for _ in 0..k {
            let b = sites.sample(rng);
            pair.exchange(b);
        }
        counts.exchanges += k;
        t = target;
        if trace.len() < trace_times.len() {
            trace.push(TracePoint { t, xi: pair.xi() });
        }
    }
    if tau.is_some() {
        while trace.len() < trace_times.len() {
            trace.push(TracePoint {
                t: trace_times[trace.len()],
                xi: 0.0,
            });
        }
    }
    (pair, tau, counts, trace)
}

/// One replica's coalescence result, as written to the τ CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSample {
    pub replica: u64,
    pub tau: Option<f64>,
    pub trace: Vec<TracePoint>,
    pub violations: u64,
}

/// Runs the coupling from `(𝟙, -𝟙)` for `replicas` independent streams.
pub fn coalescence_times(rule: &LocalRule, n: usize, replicas: usize, seed: u64, t_max: f64) -> Result<Vec<TauSample>> {
    let pair = CoupledPair::extremal(n)?;
    check_coupling_preconditions(rule, &pair)?;
    let grid = default_trace_grid(t_max);
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng: SimRng = replica_rng(seed, r);
            let out = couple_with(rule, pair.clone(), t_max, &grid, &mut rng)?;
            Ok(TauSample {
                replica: r,
                tau: out.tau,
                trace: out.trace,
                violations: out.violations,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub n: usize,
    pub delta: f64,
    pub replicas: usize,
    /// 1-based rank `ceil((1-δ) R)` of the reported order statistic.
    pub rank: usize,
    /// Empirical `(1-δ)`-quantile of `τ` (`+∞` if it falls among timeouts).
    pub quantile: f64,
    /// 95% distribution-free interval for the quantile.
    pub ci_low: f64,
    pub ci_high: f64,
    pub half_width: f64,
    /// 95% Wilson interval for `P(τ > quantile)`.
    pub exceedance_ci: (f64, f64),
    pub timeouts: usize,
    pub t_max: f64,
    pub violations: u64,
    pub warning: Option<String>,
    #[serde(skip)]
    pub samples: Vec<TauSample>,
}

impl QuantileEstimate {
    /// Sorted coalescence times with timeouts as `+∞`.
    pub fn sorted_taus(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.samples.iter().map(|s| s.tau.unwrap_or(f64::INFINITY)).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Order statistic for another `δ` on the same sample.
    pub fn quantile_at(&self, delta: f64) -> f64 {
        order_statistic(&self.sorted_taus(), 1.0 - delta).value
    }
}

/// Empirical `(1-δ)`-quantile of the coalescence time from `(𝟙, -𝟙)`: an
/// upper-bound estimator for the mixing time `t_mix(δ)`.
pub fn coalescence_quantile(
    rule: &LocalRule,
    n: usize,
    delta: f64,
    replicas: usize,
    seed: u64,
    t_max: Option<f64>,
) -> Result<QuantileEstimate> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::BadDelta(delta));
    }
    if replicas < MIN_REPLICAS {
        return Err(Error::TooFewReplicas {
            min: MIN_REPLICAS,
            got: replicas,
        });
    }
    let kappa = reaction_profile(rule).kappa;
    let warning = kappa
        .is_none()
        .then(|| "reaction potential is not strictly convex (no kappa); estimate is exploratory".to_string());
    let t_max = t_max.unwrap_or_else(|| default_t_max(kappa, n));
    let samples = coalescence_times(rule, n, replicas, seed, t_max)?;
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.tau.unwrap_or(f64::INFINITY)).collect();
    sorted.sort_by(f64::total_cmp);
    let os = order_statistic(&sorted, 1.0 - delta);
    let exceed = sorted.iter().filter(|&&t| t > os.value).count();
    Ok(QuantileEstimate {
        n,
        delta,
        replicas,
        rank: os.rank,
        quantile: os.value,
        ci_low: os.ci_low,
        ci_high: os.ci_high,
        half_width: (os.value - os.ci_low).max(os.ci_high - os.value),
        exceedance_ci: wilson_interval(exceed, replicas, 1.96),
        timeouts: samples.iter().filter(|s| s.tau.is_none()).count(),
        t_max,
        violations: samples.iter().map(|s| s.violations).sum(),
        warning,
        samples,
    })
}
