//! Random walks and marked exclusion on `Z_n` with a microscopic clock.
//!
//! A walk "with rate `λ`" jumps at total rate `λ`, to each neighbour with
//! probability ½. The marked exclusion process exchanges each bond at rate ½,
//! so a lone particle moves like a rate-1 walk.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SpinConfig;
use crate::error::{Error, Result};
use crate::rng::replica_rng;

/// Shortest-arc distance between two lifted positions on `Z_n`.
pub fn torus_distance(a: i64, b: i64, n: usize) -> u64 {
    let n = n as i64;
    let d = (a - b).rem_euclid(n);
    d.min(n - d) as u64
}

fn check_kernel_args(lambda: f64, t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::BadTime(t));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Invalid(format!("walk rate must be positive, got {lambda}")));
    }
    Ok(())
}

/// `p_t(x, y)` of the rate-`λ` walk on `Z_n`, by the circulant spectral sum.
pub fn srw_heat_kernel(n: usize, lambda: f64, t: f64, x: i64, y: i64) -> Result<f64> {
    check_kernel_args(lambda, t)?;
    let d = (x - y).rem_euclid(n as i64) as f64;
    let nf = n as f64;
    let s: f64 = (0..n)
        .map(|k| {
            let th = 2.0 * PI * k as f64 / nf;
            (-lambda * t * (1.0 - th.cos())).exp() * (th * d).cos()
        })
        .sum();
    Ok(s / nf)
}

/// The row `y ↦ p_t(0, y)`; rows for other starts are rotations of it.
pub fn srw_heat_kernel_row(n: usize, lambda: f64, t: f64) -> Result<Vec<f64>> {
    check_kernel_args(lambda, t)?;
    let nf = n as f64;
    let decay: Vec<f64> = (0..n)
        .map(|k| (-lambda * t * (1.0 - (2.0 * PI * k as f64 / nf).cos())).exp())
        .collect();
    Ok((0..n)
        .map(|d| {
            decay
                .iter()
                .enumerate()
                .map(|(k, e)| e * (2.0 * PI * ((k * d) % n) as f64 / nf).cos())
                .sum::<f64>()
                / nf
        })
        .collect())
}

/// `Φ_x(η, t) = Σ_y p_t(x, y) η(y)` with the rate-1 kernel.
pub fn local_average(cfg: &SpinConfig, x: i64, t: f64) -> Result<f64> {
    let row = srw_heat_kernel_row(cfg.len(), 1.0, t)?;
    Ok(local_average_with_row(cfg, x, &row))
}

/// `Φ_x` for every site at once.
pub fn local_averages(cfg: &SpinConfig, t: f64) -> Result<Vec<f64>> {
    let row = srw_heat_kernel_row(cfg.len(), 1.0, t)?;
    Ok((0..cfg.len() as i64)
        .map(|x| local_average_with_row(cfg, x, &row))
        .collect())
}

fn local_average_with_row(cfg: &SpinConfig, x: i64, row: &[f64]) -> f64 {
    row.iter()
        .enumerate()
        .map(|(d, p)| p * cfg.spin_at(x + d as i64) as f64)
        .sum()
}

/// Lifted position at time `t` of a rate-`λ` walk started at 0.
pub fn walk_position<R: Rng + ?Sized>(lambda: f64, t: f64, rng: &mut R) -> i64 {
    let jumps = if lambda * t > 0.0 {
        Poisson::new(lambda * t).expect("positive mean").sample(rng) as u64
    } else {
        0
    };
    let mut pos = 0i64;
    for _ in 0..jumps {
        pos += if rng.random::<bool>() { 1 } else { -1 };
    }
    pos
}

/// `max_{s ≤ T} |w(s)|` (shortest arc) for a rate-`λ` walk on `Z_n` from 0.
pub fn max_displacement_sample<R: Rng + ?Sized>(n: usize, lambda: f64, t_total: f64, rng: &mut R) -> u64 {
    let jumps = if lambda * t_total > 0.0 {
        Poisson::new(lambda * t_total).expect("positive mean").sample(rng) as u64
    } else {
        0
    };
    let mut pos = 0i64;
    let mut best = 0;
    for _ in 0..jumps {
        pos += if rng.random::<bool>() { 1 } else { -1 };
        best = best.max(torus_distance(pos, 0, n));
    }
    best
}

/// Time spent at 0 during `[0, T]` by the rate-2 walk on `Z_n` from 0.
pub fn occupation_time_sample<R: Rng + ?Sized>(n: usize, t_total: f64, rng: &mut R) -> f64 {
    let hold = Exp::<f64>::new(2.0).expect("positive rate");
    let n = n as i64;
    let mut t = 0.0;
    let mut pos = 0i64;
    let mut theta = 0.0;
    while t < t_total {
        let dt = hold.sample(rng).min(t_total - t);
        if pos == 0 {
            theta += dt;
        }
        t += dt;
        pos = (pos + if rng.random::<bool>() { 1 } else { -1 }).rem_euclid(n);
    }
    theta
}

fn check_sites(n: usize, sites: &[usize]) -> Result<()> {
    if sites.is_empty() {
        return Err(Error::Invalid("at least one marked particle is required".into()));
    }
    if sites.len() > n {
        return Err(Error::Invalid(format!(
            "{} particles do not fit on {n} sites",
            sites.len()
        )));
    }
    for (i, &s) in sites.iter().enumerate() {
        if s >= n {
            return Err(Error::SiteOutOfRange { site: s, n });
        }
        if sites[..i].contains(&s) {
            return Err(Error::DuplicateSites);
        }
    }
    Ok(())
}

/// Marked exclusion particles `z` with their coupled independent walks `z⁰`.
/// Positions are lifts to `Z`; the torus site is the residue mod `n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkEnsemble {
    n: usize,
    positions: Vec<i64>,
    shadow_positions: Vec<i64>,
}

impl WalkEnsemble {
    pub fn new(n: usize, starts: &[usize]) -> Result<Self> {
        check_sites(n, starts)?;
        let p: Vec<i64> = starts.iter().map(|&s| s as i64).collect();
        Ok(Self {
            n,
            positions: p.clone(),
            shadow_positions: p,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[i64] {
        &self.positions
    }

    pub fn shadow_positions(&self) -> &[i64] {
        &self.shadow_positions
    }

    /// Torus site of particle `i`.
    pub fn site(&self, i: usize) -> usize {
        self.positions[i].rem_euclid(self.n as i64) as usize
    }

    pub fn shadow_site(&self, i: usize) -> usize {
        self.shadow_positions[i].rem_euclid(self.n as i64) as usize
    }

    /// Shortest-arc distance `|z_i − z⁰_i|`.
    pub fn gap(&self, i: usize) -> u64 {
        torus_distance(self.positions[i], self.shadow_positions[i], self.n)
    }

    fn occupant(&self, site: usize) -> Option<usize> {
        (0..self.k()).find(|&j| self.site(j) == site)
    }

    /// Selects the bond next to particle `i` on side `dir` and reports the
    /// other particle on it, if any.
    fn neighbour(&self, i: usize, dir: i64) -> Option<usize> {
        let target = (self.positions[i] + dir).rem_euclid(self.n as i64) as usize;
        self.occupant(target)
    }

    /// One double arrow with mark `mark` on the bond between particle `i`
    /// and the site on side `dir`. Returns the particles whose gap may have
    /// changed.
    fn double_arrow(&mut self, i: usize, dir: i64, mark: bool) -> [Option<usize>; 2] {
        match self.neighbour(i, dir) {
            None => {
                if mark {
                    self.positions[i] += dir;
                    self.shadow_positions[i] += dir;
                }
                [Some(i), None]
            }
            Some(j) => {
                let (lo, lo_dir, hi) = if i < j { (i, dir, j) } else { (j, -dir, i) };
                if mark {
                    self.positions[lo] += lo_dir;
                    self.positions[hi] -= lo_dir;
                    self.shadow_positions[lo] += lo_dir;
                } else {
                    self.shadow_positions[hi] -= lo_dir;
                }
                [Some(lo), Some(hi)]
            }
        }
    }

    /// Exclusion move at rate ½ per bond: particle `i` attempts the bond on
    /// side `dir`, exchanging with an occupant or moving to an empty site.
    fn exclusion_move(&mut self, i: usize, dir: i64) {
        match self.neighbour(i, dir) {
            None => self.positions[i] += dir,
            Some(j) => {
                self.positions[i] += dir;
                self.positions[j] -= dir;
            }
        }
    }
}

/// Result of one run of the exclusion/independent-walk coupling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRun {
    /// `max_j max_{t ≤ T} |z_j(t) − z⁰_j(t)|`.
    pub max_displacement: u64,
    pub ensemble: WalkEnsemble,
}

/// Runs the marked exclusion process from `starts` for time `t_total`
/// together with independent rate-1 walks routed by the arrow marks:
/// double arrows ring at rate 1 per bond with independent fair marks; a mark
/// 1 exchanges the bond. A lone particle's walk follows it on mark 1. With
/// two particles `i < j` on the bond, mark 1 moves `z⁰_i` with `z_i` and mark
/// 0 moves `z⁰_j` across the bond.
pub fn ssep_vs_independent<R: Rng + ?Sized>(
    n: usize,
    starts: &[usize],
    t_total: f64,
    rng: &mut R,
) -> Result<CouplingRun> {
    if !(t_total.is_finite() && t_total >= 0.0) {
        return Err(Error::BadTime(t_total));
    }
    let mut ens = WalkEnsemble::new(n, starts)?;
    let k = ens.k();
    // each particle carries rate 1 per adjacent bond; a bond shared by two
    // particles is offered twice and thinned by ½
    let offers = poisson(rng, 2.0 * k as f64 * t_total);
    let mut best = 0;
    for _ in 0..offers {
        let i = rng.random_range(0..k);
        let dir = if rng.random::<bool>() { 1 } else { -1 };
        if ens.neighbour(i, dir).is_some() && rng.random::<bool>() {
            continue;
        }
        let mark = rng.random::<bool>();
        for p in ens.double_arrow(i, dir, mark).into_iter().flatten() {
            best = best.max(ens.gap(p));
        }
    }
    Ok(CouplingRun {
        max_displacement: best,
        ensemble: ens,
    })
}

/// Positions of the marked exclusion process (rate ½ per bond) at `t_total`.
pub fn marked_ssep<R: Rng + ?Sized>(n: usize, starts: &[usize], t_total: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(t_total.is_finite() && t_total >= 0.0) {
        return Err(Error::BadTime(t_total));
    }
    let mut ens = WalkEnsemble::new(n, starts)?;
    let k = ens.k();
    let offers = poisson(rng, k as f64 * t_total);
    for _ in 0..offers {
        let i = rng.random_range(0..k);
        let dir = if rng.random::<bool>() { 1 } else { -1 };
        if ens.neighbour(i, dir).is_some() && rng.random::<bool>() {
            continue;
        }
        ens.exclusion_move(i, dir);
    }
    Ok((0..k).map(|i| ens.site(i)).collect())
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    } else {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectEstimate {
    /// `Ê Π_i η(z_i(T)) − Π_i Ê η(z_i(T))`.
    pub delta: f64,
    /// Delta-method standard error using the joint sample covariance.
    pub se: f64,
    pub product_mean: f64,
    pub replicas: usize,
}

/// Monte Carlo estimate of the replacement defect
/// `Δ_T(η) = E Π_i η(z_i(T)) − Π_i E η(z_i(T))` for the marked exclusion
/// process started from `sites`.
pub fn replacement_defect(
    cfg: &SpinConfig,
    sites: &[usize],
    t_total: f64,
    replicas: usize,
    seed: u64,
) -> Result<DefectEstimate> {
    let n = cfg.len();
    check_sites(n, sites)?;
    if replicas < 2 {
        return Err(Error::TooFewReplicas { min: 2, got: replicas });
    }
    let k = sites.len();
    // per replica: product, then the k single-site values
    let rows: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let z = marked_ssep(n, sites, t_total, &mut rng)?;
            let vals: Vec<f64> = z.iter().map(|&s| cfg.spin(s) as f64).collect();
            let mut row = Vec::with_capacity(k + 1);
            row.push(vals.iter().product());
            row.extend(vals);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let rf = replicas as f64;
    let dim = k + 1;
    let means: Vec<f64> = (0..dim).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / rf).collect();
    let prod_marg: f64 = means[1..].iter().product();
    // gradient of (m_0, m_1..m_k) ↦ m_0 − Π m_i
    let mut grad = vec![1.0; dim];
    for (i, g) in grad.iter_mut().enumerate().skip(1) {
        *g = -means[1..]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j + 1 != i)
            .map(|(_, m)| m)
            .product::<f64>();
    }
    let var: f64 = rows
        .iter()
        .map(|r| {
            let s: f64 = (0..dim).map(|c| grad[c] * (r[c] - means[c])).sum();
            s * s
        })
        .sum::<f64>()
        / (rf - 1.0);
    Ok(DefectEstimate {
        delta: means[0] - prod_marg,
        se: (var / rf).sqrt(),
        product_mean: means[0],
        replicas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_limits() {
        assert_eq!(srw_heat_kernel(8, 1.0, 0.0, 3, 3).unwrap(), 1.0);
        assert!(srw_heat_kernel(8, 1.0, 0.0, 3, 4).unwrap().abs() < 1e-15);
        for y in 0..8 {
            assert!((srw_heat_kernel(8, 1.0, 1e3, 0, y).unwrap() - 0.125).abs() < 1e-9);
        }
        let row = srw_heat_kernel_row(11, 2.0, 0.7).unwrap();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p >= 0.0));
        for (d, &p) in row.iter().enumerate() {
            assert!((p - srw_heat_kernel(11, 2.0, 0.7, 4, 4 + d as i64).unwrap()).abs() < 1e-14);
        }
        assert!(srw_heat_kernel(8, 0.0, 1.0, 0, 0).is_err());
    }

    #[test]
    fn local_average_basics() {
        let plus = SpinConfig::all_plus(10).unwrap();
        assert!((local_average(&plus, 3, 2.5).unwrap() - 1.0).abs() < 1e-12);
        let cfg: SpinConfig = "+--+-++---".parse().unwrap();
        for x in 0..10 {
            assert!((local_average(&cfg, x, 0.0).unwrap() - cfg.spin(x as usize) as f64).abs() < 1e-12);
            assert!((local_average(&cfg, x, 1e3).unwrap() - cfg.magnetization()).abs() < 1e-9);
        }
    }

    #[test]
    fn torus_distances() {
        assert_eq!(torus_distance(0, 7, 8), 1);
        assert_eq!(torus_distance(-3, 3, 8), 2);
        assert_eq!(torus_distance(12, 0, 8), 4);
    }

    #[test]
    fn duplicate_and_bad_sites() {
        let cfg = SpinConfig::all_plus(6).unwrap();
        assert!(matches!(
            replacement_defect(&cfg, &[1, 1], 1.0, 10, 0),
            Err(Error::DuplicateSites)
        ));
        assert!(matches!(
            ssep_vs_independent(6, &[0, 6], 1.0, &mut replica_rng(0, 0)),
            Err(Error::SiteOutOfRange { .. })
        ));
    }

    #[test]
    fn single_particle_tracks_its_walk() {
        let mut rng = replica_rng(3, 0);
        for _ in 0..50 {
            let run = ssep_vs_independent(16, &[5], 20.0, &mut rng).unwrap();
            assert_eq!(run.max_displacement, 0);
            assert_eq!(run.ensemble.positions(), run.ensemble.shadow_positions());
        }
    }

    #[test]
    fn first_particle_coincides_and_exclusion_holds() {
        let mut rng = replica_rng(4, 0);
        for _ in 0..50 {
            let run = ssep_vs_independent(7, &[0, 1, 2, 4], 5.0, &mut rng).unwrap();
            let e = &run.ensemble;
            assert_eq!(e.positions()[0], e.shadow_positions()[0]);
            let mut sites: Vec<usize> = (0..e.k()).map(|i| e.site(i)).collect();
            sites.sort();
            sites.dedup();
            assert_eq!(sites.len(), 4);
        }
    }

    #[test]
    fn trivial_defects_vanish() {
        let cfg: SpinConfig = "+-+--+".parse().unwrap();
        let one = replacement_defect(&cfg, &[2], 3.0, 200, 1).unwrap();
        assert!(one.delta.abs() < 1e-12);
        let plus = SpinConfig::all_plus(6).unwrap();
        let d = replacement_defect(&plus, &[0, 3], 3.0, 200, 1).unwrap();
        assert_eq!(d.delta, 0.0);
        assert_eq!(d.se, 0.0);
    }

    #[test]
    fn occupation_time_bounds() {
        let mut rng = replica_rng(9, 0);
        assert_eq!(occupation_time_sample(16, 0.0, &mut rng), 0.0);
        for _ in 0..20 {
            let th = occupation_time_sample(16, 10.0, &mut rng);
            assert!((0.0..=10.0).contains(&th));
        }
    }
}
