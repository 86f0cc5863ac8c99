//! Exact analysis of the Glauber-Exclusion chain on small tori.
//!
//! States are bit masks: bit `x` set means spin `+1` at site `x`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::config::{SpinConfig, MIN_SITES};
use crate::error::{Error, Result};
use crate::rates::LocalRule;

/// Default largest lattice handled exactly (`2^12 = 4096` states).
pub const DEFAULT_MAX_SITES: usize = 12;

/// Total-mass truncation tolerance of the uniformization series.
pub const TRUNCATION_TOL: f64 = 1e-10;

/// Sparse CTMC generator of the Glauber-Exclusion chain together with its
/// stationary distribution.
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    n: usize,
    /// CSR row offsets into `targets`/`rates`.
    offsets: Vec<usize>,
    targets: Vec<u32>,
    rates: Vec<f64>,
    exit: Vec<f64>,
    uniform_rate: f64,
    stationary: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// Off-diagonal transitions `(target, rate)` out of `state`.
    pub fn transitions(&self, state: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[state]..self.offsets[state + 1];
        self.targets[r.clone()]
            .iter()
            .zip(&self.rates[r])
            .map(|(&t, &q)| (t as usize, q))
    }

    /// Off-diagonal rate `q(from → to)` (zero if no single event connects them).
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.transitions(from).filter(|&(t, _)| t == to).map(|(_, q)| q).sum()
    }

    /// Total exit rate `-L(η, η)`.
    pub fn exit_rate(&self, state: usize) -> f64 {
        self.exit[state]
    }

    /// Uniformization constant `Λ = max_η exit(η)`.
    pub fn uniform_rate(&self) -> f64 {
        self.uniform_rate
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Row sums of the generator (all zero up to rounding).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|s| self.transitions(s).map(|(_, q)| q).sum::<f64>() - self.exit[s])
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for s in 0..d {
            for (t, q) in self.transitions(s) {
                m[(s, t)] += q;
            }
            m[(s, s)] -= self.exit[s];
        }
        m
    }

    /// `p ↦ p L`.
    pub fn apply_left(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (s, &ps) in p.iter().enumerate() {
            if ps == 0.0 {
                continue;
            }
            out[s] -= ps * self.exit[s];
            for (t, q) in self.transitions(s) {
                out[t] += ps * q;
            }
        }
        out
    }

    /// One step of the uniformized kernel `K = I + L/Λ`.
    fn kernel_step(&self, p: &[f64], out: &mut [f64]) {
        let inv = 1.0 / self.uniform_rate;
        for (s, &ps) in p.iter().enumerate() {
            out[s] = ps * (1.0 - self.exit[s] * inv);
        }
        for (s, &ps) in p.iter().enumerate() {
            if ps == 0.0 {
                continue;
            }
            let w = ps * inv;
            for (t, q) in self.transitions(s) {
                out[t] += w * q;
            }
        }
    }

    /// `p e^{t L}` by uniformization.
    pub fn propagate(&self, p: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::BadTime(t));
        }
        if t == 0.0 {
            return Ok(p.to_vec());
        }
        let mean = self.uniform_rate * t;
        let budget = term_budget(mean);
        let mut acc = vec![0.0; p.len()];
        let mut cur = p.to_vec();
        let mut next = vec![0.0; p.len()];
        let mut mass = 0.0;
        let ln_mean = mean.ln();
        let mut k = 0usize;
        loop {
            let w = (-mean + k as f64 * ln_mean - ln_gamma(k as f64 + 1.0)).exp();
            if w > 0.0 {
                mass += w;
                for (a, c) in acc.iter_mut().zip(&cur) {
                    *a += w * c;
                }
            }
            if 1.0 - mass <= TRUNCATION_TOL && k as f64 >= mean {
                break;
            }
            if k >= budget {
                return Err(Error::TruncationBudget { budget, mass });
            }
            self.kernel_step(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            k += 1;
        }
        Ok(acc)
    }
}

fn term_budget(mean: f64) -> usize {
    (mean + 20.0 * mean.sqrt() + 200.0).ceil() as usize
}

/// Builds the exact generator and solves for `π_N`, for `3 ≤ n ≤ 12`.
pub fn build_generator(rule: &LocalRule, n: usize) -> Result<GeneratorMatrix> {
    build_generator_with_max(rule, n, DEFAULT_MAX_SITES)
}

pub fn build_generator_with_max(rule: &LocalRule, n: usize, max_sites: usize) -> Result<GeneratorMatrix> {
    if n < MIN_SITES || n > max_sites || n > 24 {
        return Err(Error::OracleSize { n, max: max_sites });
    }
    rule.check_fits(n)?;
    let dim = 1usize << n;
    let bond_rate = (n * n) as f64 / 2.0;
    let mut offsets = Vec::with_capacity(dim + 1);
    let mut targets = Vec::with_capacity(dim * 2 * n);
    let mut rates = Vec::with_capacity(dim * 2 * n);
    let mut exit = Vec::with_capacity(dim);
    offsets.push(0);
    for s in 0..dim {
        let cfg = SpinConfig::from_mask(n, s as u64)?;
        let mut total = 0.0;
        for x in 0..n {
            let c = rule.rate_at(&cfg, x);
            targets.push((s ^ (1 << x)) as u32);
            rates.push(c);
            total += c;
        }
        for x in 0..n {
            let y = (x + 1) % n;
            if (s >> x) & 1 != (s >> y) & 1 {
                targets.push((s ^ (1 << x) ^ (1 << y)) as u32);
                rates.push(bond_rate);
                total += bond_rate;
            }
        }
        exit.push(total);
        offsets.push(targets.len());
    }
    let uniform_rate = exit.iter().copied().fold(0.0, f64::max);
    let mut gen = GeneratorMatrix {
        n,
        offsets,
        targets,
        rates,
        exit,
        uniform_rate,
        stationary: Vec::new(),
    };
    gen.stationary = solve_stationary(&gen)?;
    Ok(gen)
}

/// Solves `π L = 0`, `Σ π = 1` with the last balance equation replaced by
/// the normalization row.
fn solve_stationary(gen: &GeneratorMatrix) -> Result<Vec<f64>> {
    let d = gen.dim();
    // rows of Lᵀ are the balance equations
    let mut a = gen.to_dense().transpose();
    for j in 0..d {
        a[(d - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(d);
    b[d - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(Error::SingularGenerator)?;
    let mut pi: Vec<f64> = pi.iter().copied().collect();
    if pi.iter().any(|&v| !v.is_finite() || v < -1e-12) {
        return Err(Error::SingularGenerator);
    }
    for v in &mut pi {
        *v = v.max(0.0);
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    Ok(pi)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Distribution of `η_t` started from the state with bit mask `start`.
pub fn transition_distribution(gen: &GeneratorMatrix, start: usize, t: f64) -> Result<Vec<f64>> {
    if start >= gen.dim() {
        return Err(Error::Invalid(format!("state {start} out of range")));
    }
    let mut p = vec![0.0; gen.dim()];
    p[start] = 1.0;
    gen.propagate(&p, t)
}

/// Smallest mask in each rotation orbit. The dynamics commute with
/// rotations of the torus, so the worst-case distance is attained on these.
pub fn rotation_representatives(n: usize) -> Vec<usize> {
    let full = (1usize << n) - 1;
    let rot = |s: usize| ((s << 1) | (s >> (n - 1))) & full;
    (0..=full)
        .filter(|&s| {
            let mut r = s;
            for _ in 1..n {
                r = rot(r);
                if r < s {
                    return false;
                }
            }
            true
        })
        .collect()
}

/// Worst-case distance to stationarity tracked incrementally over time.
struct WorstCase<'a> {
    gen: &'a GeneratorMatrix,
    time: f64,
    dists: Vec<Vec<f64>>,
}

impl<'a> WorstCase<'a> {
    fn new(gen: &'a GeneratorMatrix) -> Self {
        let d = gen.dim();
        let dists = rotation_representatives(gen.n)
            .into_iter()
            .map(|s| {
                let mut p = vec![0.0; d];
                p[s] = 1.0;
                p
            })
            .collect();
        Self { gen, time: 0.0, dists }
    }

    fn distance(dists: &[Vec<f64>], pi: &[f64]) -> f64 {
        dists.iter().map(|p| total_variation(p, pi)).fold(0.0, f64::max)
    }

    fn current(&self) -> f64 {
        Self::distance(&self.dists, self.gen.stationary())
    }

    fn advanced(&self, dt: f64) -> Result<Vec<Vec<f64>>> {
        self.dists.par_iter().map(|p| self.gen.propagate(p, dt)).collect()
    }

    fn advance_to(&mut self, t: f64) -> Result<()> {
        if t > self.time {
            self.dists = self.advanced(t - self.time)?;
            self.time = t;
        }
        Ok(())
    }
}

/// `d(t) = max_η ‖P_η(t) − π_N‖_TV` at each of the sorted `times`.
pub fn tv_curve(gen: &GeneratorMatrix, times: &[f64]) -> Result<Vec<f64>> {
    for &t in times {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::BadTime(t));
        }
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Invalid("times must be sorted".into()));
    }
    let mut wc = WorstCase::new(gen);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        wc.advance_to(t)?;
        out.push(wc.current());
    }
    Ok(out)
}

/// Time resolution of [`exact_tmix`].
pub const TMIX_TOL: f64 = 1e-4;

/// `inf { t : d(t) ≤ δ }`, by doubling and then bisection on the monotone
/// curve `d`.
pub fn exact_tmix(gen: &GeneratorMatrix, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::BadDelta(delta));
    }
    let mut lo = WorstCase::new(gen);
    if lo.current() <= delta {
        return Ok(0.0);
    }
    let mut step = 1.0 / gen.uniform_rate;
    let mut hi_t;
    loop {
        let cand = lo.advanced(step)?;
        let d = WorstCase::distance(&cand, gen.stationary());
        if d <= delta {
            hi_t = lo.time + step;
            break;
        }
        lo.dists = cand;
        lo.time += step;
        step *= 2.0;
    }
    while hi_t - lo.time > TMIX_TOL {
        let mid = 0.5 * (lo.time + hi_t);
        let cand = lo.advanced(mid - lo.time)?;
        if WorstCase::distance(&cand, gen.stationary()) <= delta {
            hi_t = mid;
        } else {
            lo.dists = cand;
            lo.time = mid;
        }
    }
    Ok(hi_t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetailedBalance {
    /// Largest `|π(η) q(η→ζ) − π(ζ) q(ζ→η)|` over flip edges.
    pub flip_residual: f64,
    /// Same over exchange edges.
    pub exchange_residual: f64,
}

impl DetailedBalance {
    pub fn max(&self) -> f64 {
        self.flip_residual.max(self.exchange_residual)
    }
}

pub fn detailed_balance_residual(gen: &GeneratorMatrix) -> DetailedBalance {
    let pi = gen.stationary();
    let mut out = DetailedBalance {
        flip_residual: 0.0,
        exchange_residual: 0.0,
    };
    for s in 0..gen.dim() {
        for (t, q) in gen.transitions(s) {
            if t < s {
                continue;
            }
            let r = (pi[s] * q - pi[t] * gen.rate(t, s)).abs();
            if (s ^ t).count_ones() == 1 {
                out.flip_residual = out.flip_residual.max(r);
            } else {
                out.exchange_residual = out.exchange_residual.max(r);
            }
        }
    }
    out
}
